#pragma once

// Inference cost accounting for the enhancement models, excluding the codec
// encoder and decoder. One multiply-accumulate counts as two FLOPs; both the
// attention scores and the value aggregation are counted, normalisation and
// activations are not.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lse/codec.hpp"
#include "lse/config.hpp"
#include "lse/se_models.hpp"

namespace lse {

// kv_reuse: autoregressive steps attend to cached keys/values and only the
// new row is computed. recompute: every generated token re-runs the stacks
// over its whole prefix.
enum class CostMode { kv_reuse, recompute };
std::string_view cost_mode_name(CostMode m) noexcept;

struct FlopTerm {
    std::string name;
    std::uint64_t macs = 0;
    std::string formula;
};

struct FlopReport {
    Variant variant = Variant::c_nar;
    CostMode mode = CostMode::recompute;
    double seconds = 0.0;
    std::size_t frames = 0;
    std::vector<FlopTerm> terms;

    std::uint64_t macs() const noexcept;
    double flops() const noexcept { return 2.0 * static_cast<double>(macs()); }
    double flops_per_second() const noexcept { return seconds > 0 ? flops() / seconds : 0.0; }
};

// MACs of one pass of a stack where `queries` new rows attend to `keys` rows.
std::uint64_t stack_macs(const ConformerConfig& cfg, std::size_t queries, std::size_t keys);

FlopReport flops_count(Variant v, const ModelConfig& model, const CodecConfig& codec, double seconds,
                       CostMode mode = CostMode::recompute);

// Counts the multiply-accumulates actually executed by enhance() on `noisy`.
std::uint64_t measured_macs(const SeModel& m, const Codec& codec, const Waveform& noisy,
                            CostMode mode = CostMode::recompute);

// CSV with one row per term and a total row per report.
void write_flops_csv(std::ostream& os, const std::vector<FlopReport>& reports);
void print_flops_table(std::ostream& os, const std::vector<FlopReport>& reports);

}  // namespace lse
