#include "lse/params.hpp"

#include <cmath>

#include "lse/errors.hpp"

namespace lse {

Param& ParamSet::add(std::string name, Tensor init, bool decay) {
    require(!index_.count(name), ErrorKind::usage, "duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->value = std::move(init);
    p->decay = decay;
    Param* raw = p.get();
    index_.emplace(raw->name, raw);
    params_.push_back(std::move(p));
    return *raw;
}

Param* ParamSet::find(const std::string& name) noexcept {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
}

const Param* ParamSet::find(const std::string& name) const noexcept {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
}

Param& ParamSet::at(const std::string& name) {
    Param* p = find(name);
    require(p != nullptr, ErrorKind::data, "missing parameter: " + name);
    return *p;
}

const Param& ParamSet::at(const std::string& name) const {
    const Param* p = find(name);
    require(p != nullptr, ErrorKind::data, "missing parameter: " + name);
    return *p;
}

std::size_t ParamSet::num_scalars() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

std::size_t ParamSet::copy_from(const ParamSet& src, const std::string& src_prefix,
                                const std::string& dst_prefix) {
    std::size_t copied = 0;
    for (const auto& p : src.params_) {
        if (p->name.compare(0, src_prefix.size(), src_prefix) != 0) continue;
        const std::string dst_name = dst_prefix + p->name.substr(src_prefix.size());
        Param* d = find(dst_name);
        if (!d) continue;
        require(d->value.same_shape(p->value), ErrorKind::shape,
                "copy " + p->name + " -> " + dst_name + ": " + p->value.shape_str() + " vs " +
                    d->value.shape_str());
        d->value = p->value;
        ++copied;
    }
    return copied;
}

void accumulate(Grads& into, const Grads& from, double scale) {
    for (const auto& [param, g] : from) {
        auto it = into.find(param);
        if (it == into.end()) {
            Tensor t = g;
            if (scale != 1.0) t *= scale;
            into.emplace(param, std::move(t));
        } else {
            Tensor& dst = it->second;
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
        }
    }
}

double global_norm(const ParamSet& params, const Grads& grads) {
    double s = 0.0;
    for (const auto& p : params) {
        auto it = grads.find(p.get());
        if (it != grads.end()) s += it->second.squared_norm();
    }
    return std::sqrt(s);
}

Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

Tensor fan_in_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    return uniform_init(rows, cols, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace lse
