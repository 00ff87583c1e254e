#include "lse/rvq.hpp"

#include <algorithm>
#include <cmath>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

void Waveform::validate() const {
    require(sample_rate > 0, ErrorKind::data, "waveform sample rate must be positive");
    require(!samples.empty(), ErrorKind::length, "waveform is empty");
    for (std::size_t i = 0; i < samples.size(); ++i)
        require(std::isfinite(samples[i]), ErrorKind::data,
                "waveform sample " + std::to_string(i) + " is not finite");
}

void CodebookSet::validate() const {
    require(!stages.empty(), ErrorKind::config, "codebook set needs at least one stage");
    const std::size_t k = stages[0].rows(), l = stages[0].cols();
    require(k >= 2 && l >= 1, ErrorKind::config, "codebooks need K >= 2 and L >= 1");
    for (std::size_t n = 0; n < stages.size(); ++n) {
        const Tensor& c = stages[n];
        require(c.rows() == k && c.cols() == l, ErrorKind::shape,
                "codebook stage " + std::to_string(n) + " has shape " + c.shape_str());
        require(c.all_finite(), ErrorKind::numerical,
                "codebook stage " + std::to_string(n) + " has non-finite entries");
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j)
                require(!std::equal(c.row(i).begin(), c.row(i).end(), c.row(j).begin()),
                        ErrorKind::data,
                        "codebook stage " + std::to_string(n) + ": codewords " + std::to_string(i) +
                            " and " + std::to_string(j) + " are identical");
    }
}

void CodebookSet::validate_tokens(const TokenGrid& tokens) const {
    require(tokens.stages() == num_stages(), ErrorKind::shape,
            "token grid has " + std::to_string(tokens.stages()) + " stages, codebooks have " +
                std::to_string(num_stages()));
    const int k = static_cast<int>(codebook_size());
    for (int v : tokens.raw())
        require(v >= 0 && v < k, ErrorKind::index,
                "token " + std::to_string(v) + " outside codebook of size " + std::to_string(k));
}

Nearest nearest_codeword(std::span<const double> v, const Tensor& codebook) {
    require(v.size() == codebook.cols(), ErrorKind::shape,
            "nearest_codeword: vector of " + std::to_string(v.size()) + " vs codebook " +
                codebook.shape_str());
    require(codebook.rows() > 0, ErrorKind::shape, "empty codebook");
    for (double x : v) require(std::isfinite(x), ErrorKind::numerical, "non-finite latent vector");
    thread_local std::vector<double> dist;
    dist.resize(codebook.rows());
    kernels::sq_dist(v.data(), codebook.data(), codebook.rows(), codebook.cols(), dist.data());
    Nearest best{0, dist[0]};
    for (std::size_t k = 1; k < dist.size(); ++k)
        if (dist[k] < best.sq_distance) best = {k, dist[k]};
    return best;
}

QuantizeResult rvq_quantize_prefix(const LatentSeq& latent, const CodebookSet& cb,
                                   std::size_t stages) {
    require(latent.latent_dim() == cb.dim(), ErrorKind::shape,
            "rvq_quantize: latent dim " + std::to_string(latent.latent_dim()) +
                " vs codeword dim " + std::to_string(cb.dim()));
    require(stages >= 1 && stages <= cb.num_stages(), ErrorKind::config, "bad stage count");
    const std::size_t frames = latent.num_frames(), dim = latent.latent_dim();
    QuantizeResult out{TokenGrid(cb.num_stages(), frames), LatentSeq{Tensor(frames, dim)}};
    std::vector<double> residual(dim);
    for (std::size_t t = 0; t < frames; ++t) {
        auto src = latent.values.row(t);
        std::copy(src.begin(), src.end(), residual.begin());
        auto recon = out.reconstruction.values.row(t);
        for (std::size_t n = 0; n < stages; ++n) {
            const Tensor& book = cb.stages[n];
            const Nearest pick = nearest_codeword(residual, book);
            out.tokens.at(n, t) = static_cast<int>(pick.index);
            auto cw = book.row(pick.index);
            for (std::size_t i = 0; i < dim; ++i) {
                residual[i] -= cw[i];
                recon[i] += cw[i];
            }
        }
    }
    return out;
}

QuantizeResult rvq_quantize(const LatentSeq& latent, const CodebookSet& cb) {
    return rvq_quantize_prefix(latent, cb, cb.num_stages());
}

LatentSeq rvq_dequantize(const TokenGrid& tokens, const CodebookSet& cb) {
    cb.validate_tokens(tokens);
    const std::size_t frames = tokens.frames(), dim = cb.dim();
    LatentSeq out{Tensor(frames, dim)};
    // Same accumulation order as rvq_quantize so the two agree bit for bit.
    for (std::size_t t = 0; t < frames; ++t) {
        auto recon = out.values.row(t);
        for (std::size_t n = 0; n < tokens.stages(); ++n) {
            auto cw = cb.stages[n].row(static_cast<std::size_t>(tokens.at(n, t)));
            for (std::size_t i = 0; i < dim; ++i) recon[i] += cw[i];
        }
    }
    return out;
}

std::vector<double> soft_labels(std::span<const double> v, const Tensor& codebook,
                                const SoftLabelOptions& opts) {
    require(opts.temperature > 0.0, ErrorKind::config, "soft-label temperature must be positive");
    require(v.size() == codebook.cols(), ErrorKind::shape, "soft_labels: dimension mismatch");
    for (double x : v) require(std::isfinite(x), ErrorKind::numerical, "non-finite latent vector");
    std::vector<double> p(codebook.rows());
    kernels::sq_dist(v.data(), codebook.data(), codebook.rows(), codebook.cols(), p.data());
    double mx = -1e300;
    for (double& z : p) {
        z = -(opts.squared_distance ? z : std::sqrt(z)) / opts.temperature;
        mx = std::max(mx, z);
    }
    double s = 0.0;
    for (double& z : p) {
        z = std::exp(z - mx);
        s += z;
    }
    for (double& z : p) z /= s;
    return p;
}

}  // namespace lse
