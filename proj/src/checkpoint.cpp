#include "lse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lse/errors.hpp"

namespace lse {

namespace {

constexpr char kMagic[4] = {'L', 'S', 'E', '1'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        static_assert(std::is_integral_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i)
            out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
    template <class T>
    T le(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const char* what) const {
        require(pos_ + n <= b_.size(), ErrorKind::data,
                std::string("checkpoint truncated while reading ") + what);
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const noexcept {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    const NamedTensor* t = find(name);
    require(t != nullptr, ErrorKind::data, "checkpoint has no tensor named " + name);
    return t->value;
}

void Checkpoint::add(std::string name, Tensor value, DType dtype) {
    require(find(name) == nullptr, ErrorKind::usage, "duplicate checkpoint tensor " + name);
    tensors.push_back({std::move(name), dtype, std::move(value)});
}

void Checkpoint::add_params(const ParamSet& params, const std::string& prefix) {
    for (const auto& p : params) add(prefix + p->name, p->value);
}

void Checkpoint::load_params(ParamSet& params, const std::string& prefix) const {
    for (auto& p : params) {
        const Tensor& src = at(prefix + p->name);
        require(src.same_shape(p->value), ErrorKind::shape,
                "checkpoint tensor " + prefix + p->name + " has shape " + src.shape_str() +
                    ", model expects " + p->value.shape_str());
        p->value = src;
    }
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.le<std::uint32_t>(Checkpoint::kVersion);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.config.size()));
    w.bytes(ckpt.config.data(), ckpt.config.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.le<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
        w.le<std::uint8_t>(2);
        w.le<std::uint64_t>(t.value.rows());
        w.le<std::uint64_t>(t.value.cols());
        for (std::size_t i = 0; i < t.value.size(); ++i) {
            if (t.dtype == DType::f32)
                w.f32(static_cast<float>(t.value[i]));
            else
                w.f64(t.value[i]);
        }
    }
    return w.take();
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    const std::string magic = r.str(4, "magic");
    require(magic == std::string(kMagic, 4), ErrorKind::data, "not a checkpoint (bad magic)");
    const auto version = r.le<std::uint32_t>("version");
    require(version == Checkpoint::kVersion, ErrorKind::unsupported_format,
            "unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const auto clen = r.le<std::uint32_t>("config length");
    ck.config = r.str(clen, "config block");
    const auto count = r.le<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto nlen = r.le<std::uint32_t>("tensor name length");
        NamedTensor t;
        t.name = r.str(nlen, "tensor name");
        const auto dtype = r.le<std::uint8_t>("dtype");
        require(dtype <= 1, ErrorKind::unsupported_format,
                "tensor " + t.name + ": unsupported dtype code " + std::to_string(dtype));
        t.dtype = static_cast<DType>(dtype);
        const auto ndim = r.le<std::uint8_t>("ndim");
        require(ndim >= 1 && ndim <= 2, ErrorKind::unsupported_format,
                "tensor " + t.name + ": unsupported rank " + std::to_string(ndim));
        std::uint64_t rows = 1, cols = r.le<std::uint64_t>("dims");
        if (ndim == 2) {
            rows = cols;
            cols = r.le<std::uint64_t>("dims");
        }
        const std::size_t elem = t.dtype == DType::f32 ? 4 : 8;
        r.need(rows * cols * elem, "tensor data");
        Tensor v(rows, cols);
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (t.dtype == DType::f32)
                v[k] = std::bit_cast<float>(r.le<std::uint32_t>("f32"));
            else
                v[k] = std::bit_cast<double>(r.le<std::uint64_t>("f64"));
        }
        t.value = std::move(v);
        ck.tensors.push_back(std::move(t));
    }
    require(r.done(), ErrorKind::data, "trailing bytes after checkpoint tensor table");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), ErrorKind::io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::io, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    try {
        return deserialize(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace lse
