#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lse/tensor.hpp"

namespace lse {

struct Param {
    std::string name;
    Tensor value;
    // Decoupled weight decay applies to weight matrices only (not biases, gains or start vectors).
    bool decay = true;
};

// Owns named parameters with stable addresses. Iteration order is insertion
// order and is what the optimizer and checkpoints use.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet&) = delete;
    ParamSet& operator=(const ParamSet&) = delete;
    ParamSet(ParamSet&&) = default;
    ParamSet& operator=(ParamSet&&) = default;

    Param& add(std::string name, Tensor init, bool decay = true);
    Param* find(const std::string& name) noexcept;
    const Param* find(const std::string& name) const noexcept;
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t num_scalars() const noexcept;
    Param& operator[](std::size_t i) { return *params_[i]; }
    const Param& operator[](std::size_t i) const { return *params_[i]; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    // Copies every parameter of `src` whose name (with `src_prefix` replaced by
    // `dst_prefix`) exists here. Shapes must agree. Returns the number copied.
    std::size_t copy_from(const ParamSet& src, const std::string& src_prefix = "",
                          const std::string& dst_prefix = "");

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, Param*> index_;
};

// Gradient accumulator keyed by parameter identity.
using Grads = std::unordered_map<const Param*, Tensor>;

void accumulate(Grads& into, const Grads& from, double scale = 1.0);
double global_norm(const ParamSet& params, const Grads& grads);

// Seeded initializers.
using Rng = std::mt19937_64;

Tensor uniform_init(std::size_t rows, std::size_t cols, double bound, Rng& rng);
// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);
Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

// Derives an independent stream from a base seed and a tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) noexcept;

}  // namespace lse
