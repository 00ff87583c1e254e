#include "lse/flops.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "lse/errors.hpp"
#include "lse/kernels.hpp"

namespace lse {

namespace {

using u64 = std::uint64_t;

ConformerConfig depth_cfg(const ModelConfig& c) {
    ConformerConfig d = c.stack(c.depth_layers, true);
    d.conv_module = false;
    d.macaron = false;
    return d;
}

std::string stack_formula(const ConformerConfig& c) {
    std::string f = std::to_string(c.num_layers) + "*[" + (c.macaron ? "2*" : "") + "2qHF + 4qH^2 + 2qkH";
    if (c.conv_module) f += " + 3qH^2 + qKH";
    return f + "]";
}

}  // namespace

std::string_view cost_mode_name(CostMode m) noexcept {
    return m == CostMode::kv_reuse ? "kv-reuse" : "recompute";
}

std::uint64_t FlopReport::macs() const noexcept {
    u64 s = 0;
    for (const auto& t : terms) s += t.macs;
    return s;
}

std::uint64_t stack_macs(const ConformerConfig& c, std::size_t q, std::size_t k) {
    const u64 H = c.hidden_dim, F = c.ff_expansion * H, K = c.conv_kernel_size;
    u64 per = (c.macaron ? 2 : 1) * 2 * q * H * F;
    per += 4 * q * H * H;
    per += 2 * q * k * H;
    if (c.conv_module) per += 3 * q * H * H + q * K * H;
    return c.num_layers * per;
}

FlopReport flops_count(Variant v, const ModelConfig& mc, const CodecConfig& cc, double seconds,
                       CostMode mode) {
    mc.validate();
    cc.validate();
    require(seconds > 0 && std::isfinite(seconds), ErrorKind::config, "flops_count: seconds must be positive");
    FlopReport r;
    r.variant = v;
    r.mode = mode;
    r.seconds = seconds;
    const u64 samples = static_cast<u64>(std::llround(seconds * cc.sample_rate));
    const u64 T = samples / cc.downsample_factor();
    require(T >= 1, ErrorKind::length, "flops_count: shorter than one frame");
    r.frames = T;
    const u64 H = mc.hidden_dim, N = cc.num_stages, K = cc.codebook_size, L = cc.latent_dim;
    const bool reuse = mode == CostMode::kv_reuse;
    auto term = [&](std::string name, u64 macs, std::string formula) {
        r.terms.push_back({std::move(name), macs, std::move(formula)});
    };
    const ConformerConfig nar = mc.stack(mc.nar_layers, false);

    switch (v) {
        case Variant::d_ar: {
            const ConformerConfig noisy = mc.stack(mc.noisy_layers, false);
            const ConformerConfig temporal = mc.stack(mc.temporal_layers, true);
            const ConformerConfig depth = depth_cfg(mc);
            u64 tm = 0, dm = 0;
            for (u64 t = 0; t < T; ++t) tm += reuse ? stack_macs(temporal, 1, t + 1) : stack_macs(temporal, t + 1, t + 1);
            for (u64 n = 0; n < N; ++n) dm += reuse ? stack_macs(depth, 1, n + 1) : stack_macs(depth, n + 1, n + 1);
            if (reuse) {
                term("noisy stack", stack_macs(noisy, T, T), stack_formula(noisy) + " with q=k=T");
                term("temporal stack", tm, "sum_t " + stack_formula(temporal) + " with q=1, k=t+1");
                term("depth stack", T * dm, "T * sum_n " + stack_formula(depth) + " with q=1, k=n+1");
            } else {
                term("noisy stack", T * N * stack_macs(noisy, T, T), "T*N * " + stack_formula(noisy) + " with q=k=T");
                term("temporal stack", N * tm, "N * sum_t " + stack_formula(temporal) + " with q=k=t+1");
                term("depth stack", T * dm, "T * sum_n " + stack_formula(depth) + " with q=k=n+1");
            }
            term("heads", T * N * H * K, "T*N*H*K");
            break;
        }
        case Variant::d_nar:
            term("nar stack", stack_macs(nar, T, T), stack_formula(nar) + " with q=k=T");
            term("heads", T * N * H * K, "T*N*H*K");
            break;
        case Variant::d_nar_star:
            term("input projection", T * L * H, "T*L*H");
            term("nar stack", stack_macs(nar, T, T), stack_formula(nar) + " with q=k=T");
            term("heads", T * N * H * K, "T*N*H*K");
            break;
        case Variant::c_ar: {
            const ConformerConfig ar = mc.stack(mc.ar_layers, true);
            if (reuse) {
                term("noisy projection", T * L * H, "T*L*H");
                term("feedback projection", (T - 1) * L * H, "(T-1)*L*H");
                u64 sm = stack_macs(ar, T, T);
                for (u64 t = 0; t < T; ++t) sm += stack_macs(ar, 1, T + t + 1);
                term("causal stack", sm, stack_formula(ar) + " with q=k=T, then sum_t q=1, k=T+t+1");
            } else {
                term("noisy projection", T * T * L * H, "T*T*L*H");
                term("feedback projection", T * (T - 1) / 2 * L * H, "T(T-1)/2*L*H");
                u64 sm = 0;
                for (u64 t = 0; t < T; ++t) sm += stack_macs(ar, T + t + 1, T + t + 1);
                term("causal stack", sm, "sum_t " + stack_formula(ar) + " with q=k=T+t+1");
            }
            term("output projection", T * H * L, "T*H*L");
            term("feedback quantization", (T - 1) * N * K * L, "(T-1)*N*K*L");
            break;
        }
        case Variant::c_nar:
        case Variant::c_nar_ft:
            term("input projection", T * L * H, "T*L*H");
            term("nar stack", stack_macs(nar, T, T), stack_formula(nar) + " with q=k=T");
            term("output projection", T * H * L, "T*H*L");
            break;
        case Variant::c_ft:
        case Variant::d_ft:
            term("model", 0, "encoder and quantizer only; excluded");
            break;
    }
    return r;
}

std::uint64_t measured_macs(const SeModel& m, const Codec& codec, const Waveform& noisy, CostMode mode) {
    EnhanceOptions opts;
    opts.kv_cache = mode == CostMode::kv_reuse;
    kernels::MacCounterScope scope;
    enhance(noisy, m, codec, nullptr, opts);
    return scope.count();
}

void write_flops_csv(std::ostream& os, const std::vector<FlopReport>& reports) {
    os << "variant,mode,seconds,frames,term,macs,flops,formula\n";
    for (const auto& r : reports) {
        for (const auto& t : r.terms)
            os << variant_name(r.variant) << ',' << cost_mode_name(r.mode) << ',' << r.seconds << ',' << r.frames
               << ',' << t.name << ',' << t.macs << ',' << 2 * t.macs << ",\"" << t.formula << "\"\n";
        os << variant_name(r.variant) << ',' << cost_mode_name(r.mode) << ',' << r.seconds << ',' << r.frames
           << ",total," << r.macs() << ',' << 2 * r.macs() << ",\"sum of terms\"\n";
    }
}

void print_flops_table(std::ostream& os, const std::vector<FlopReport>& reports) {
    os << "# 1 MAC = 2 FLOPs; codec encoder/decoder excluded; attention scores and aggregation counted\n";
    os << std::left << std::setw(12) << "variant" << std::setw(11) << "mode" << std::setw(24) << "term"
       << std::right << std::setw(16) << "MFLOPs" << "  formula\n";
    for (const auto& r : reports) {
        for (const auto& t : r.terms)
            os << std::left << std::setw(12) << variant_name(r.variant) << std::setw(11) << cost_mode_name(r.mode)
               << std::setw(24) << t.name << std::right << std::setw(16) << std::fixed << std::setprecision(3)
               << 2e-6 * static_cast<double>(t.macs) << "  " << t.formula << '\n';
        os << std::left << std::setw(12) << variant_name(r.variant) << std::setw(11) << cost_mode_name(r.mode)
           << std::setw(24) << "total" << std::right << std::setw(16) << 2e-6 * static_cast<double>(r.macs())
           << "  per second of audio: " << std::setprecision(3) << 1e-6 * r.flops_per_second() << " MFLOPs\n";
    }
    os.unsetf(std::ios::floatfield);
}

}  // namespace lse
