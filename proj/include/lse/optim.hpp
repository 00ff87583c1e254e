#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lse/checkpoint.hpp"
#include "lse/params.hpp"

namespace lse {

// Linear warm-up from 0 to max_lr over `warmup_steps`, then cosine decay to 0
// at `total_steps`. Requires 0 <= step <= total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                   double max_lr);

// Scales grads in place so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(Grads& grads, const ParamSet& params, double max_norm);

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Adam with decoupled weight decay. Moments are kept per parameter in the
// ParamSet's order.
class AdamW {
public:
    AdamW(ParamSet& params, AdamWOptions opts);

    void step(const Grads& grads, double lr);
    // Parameters whose name starts with `prefix` are skipped by step() (moments
    // and values untouched) while frozen.
    void set_frozen(const std::string& prefix, bool frozen);
    std::size_t steps() const noexcept { return steps_; }
    const AdamWOptions& options() const noexcept { return opts_; }

    void save(Checkpoint& ck, const std::string& prefix = "opt.") const;
    void load(const Checkpoint& ck, const std::string& prefix = "opt.");

private:
    ParamSet* params_;
    AdamWOptions opts_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::vector<char> frozen_;
    std::size_t steps_ = 0;
};

}  // namespace lse
