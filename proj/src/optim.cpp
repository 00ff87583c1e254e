#include "lse/optim.hpp"

#include <cmath>
#include <numbers>

#include "lse/errors.hpp"

namespace lse {

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                   double max_lr) {
    require(step <= total_steps, ErrorKind::usage,
            "lr_schedule: step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
    require(warmup_steps < total_steps, ErrorKind::config, "warm-up must be shorter than training");
    if (step <= warmup_steps) {
        if (warmup_steps == 0) return max_lr;
        return max_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_global_norm(Grads& grads, const ParamSet& params, double max_norm) {
    const double norm = global_norm(params, grads);
    require(std::isfinite(norm), ErrorKind::numerical, "gradient norm is not finite");
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [p, g] : grads) g *= s;
    }
    return norm;
}

AdamW::AdamW(ParamSet& params, AdamWOptions opts) : params_(&params), opts_(opts) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
    frozen_.assign(params.size(), 0);
}

void AdamW::set_frozen(const std::string& prefix, bool frozen) {
    for (std::size_t i = 0; i < params_->size(); ++i)
        if ((*params_)[i].name.starts_with(prefix)) frozen_[i] = frozen;
}

void AdamW::step(const Grads& grads, double lr) {
    ++steps_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_->size(); ++i) {
        if (frozen_[i]) continue;
        Param& p = (*params_)[i];
        auto it = grads.find(&p);
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const double wd = p.decay ? opts_.weight_decay : 0.0;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = it == grads.end() ? 0.0 : it->second[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + opts_.eps) + wd * p.value[k];
            p.value[k] -= lr * update;
        }
    }
}

void AdamW::save(Checkpoint& ck, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_->size(); ++i) {
        ck.add(prefix + "m." + (*params_)[i].name, m_[i]);
        ck.add(prefix + "v." + (*params_)[i].name, v_[i]);
    }
    ck.add(prefix + "steps", Tensor(1, 1, static_cast<double>(steps_)));
}

void AdamW::load(const Checkpoint& ck, const std::string& prefix) {
    for (std::size_t i = 0; i < params_->size(); ++i) {
        const Tensor& m = ck.at(prefix + "m." + (*params_)[i].name);
        const Tensor& v = ck.at(prefix + "v." + (*params_)[i].name);
        require(m.same_shape(m_[i]) && v.same_shape(v_[i]), ErrorKind::shape,
                "optimizer state shape mismatch for " + (*params_)[i].name);
        m_[i] = m;
        v_[i] = v;
    }
    steps_ = static_cast<std::size_t>(ck.at(prefix + "steps")[0]);
}

}  // namespace lse
