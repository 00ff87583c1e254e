#pragma once

// Supervised training of the enhancement variants on paired segments.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lse/codec.hpp"
#include "lse/config.hpp"
#include "lse/dataset.hpp"
#include "lse/flops.hpp"
#include "lse/metrics.hpp"
#include "lse/se_models.hpp"

namespace lse {

// An utterance with its codec-domain views precomputed once.
struct PreparedUtterance {
    Waveform noisy;
    Waveform clean;
    LatentSeq noisy_latent;
    LatentSeq clean_latent;
    TokenGrid noisy_tokens;
    TokenGrid clean_tokens;

    std::size_t frames() const noexcept { return clean_latent.num_frames(); }
};

std::vector<PreparedUtterance> prepare_utterances(const std::vector<Mixture>& pairs, const Codec& codec);

struct Example {
    ModelInput input;
    ModelTarget target;
};

// Frames [first, first + count) of an utterance, with the matching waveform
// samples for the fine-tuning variants.
Example make_example(const PreparedUtterance& u, std::size_t first, std::size_t count, std::size_t factor);
Example whole_example(const PreparedUtterance& u, std::size_t factor);

struct LossValue {
    double nll = 0.0;
    double mse_or_ce = 0.0;
};

// Mean loss of `m` over whole utterances (no gradient).
LossValue evaluate_loss(const SeModel& m, const Codec& codec, const std::vector<PreparedUtterance>& set);
// Mean loss over explicit examples.
LossValue evaluate_loss(const SeModel& m, const Codec& codec, const std::vector<Example>& set);

struct TrainLogRow {
    std::size_t epoch = 0;
    std::string split;  // "train" or "validation"
    double nll = 0.0;
    double mse_or_ce = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    void write_csv(std::ostream& os) const;
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainOptions {
    // Stop after this many optimizer steps (0 runs every epoch).
    std::size_t max_steps = 0;
    // When set, "best.ckpt" and "last.ckpt" are written here after every epoch.
    std::filesystem::path checkpoint_dir;
    // Continue from checkpoint_dir/last.ckpt when it exists.
    bool resume = false;
    // Stop after this many epochs of this call (0 = no limit); for interrupted runs.
    std::size_t stop_after_epochs = 0;
    ProgressFn progress;
};

struct TrainResult {
    SeModel model;       // parameters after the last step
    SeModel best_model;  // lowest validation NLL
    TrainLog log;
    std::vector<double> step_losses;  // per optimizer step, batch mean of mse_or_ce
    std::size_t steps = 0;
    std::size_t best_epoch = 0;
    double best_validation_nll = 0.0;
};

SeModel clone_model(const SeModel& m);

// The last ceil(validation_fraction * n) utterances are held out. Each epoch
// visits every training utterance once in a seeded order, taking one random
// segment of segment_seconds from it.
TrainResult train(const SeModel& init, const Codec& codec, const std::vector<PreparedUtterance>& data,
                  const TrainConfig& cfg, const RunConfig& run, std::uint64_t seed,
                  const TrainOptions& opts = {});

// Enhances every noisy test signal and scores it against its clean reference
// over the overlapping prefix. Utterances are spread over `jobs` threads; the
// report does not depend on `jobs`.
MetricReport evaluate_enhancement(const SeModel& m, const Codec& codec, const std::vector<Mixture>& test,
                                  std::size_t jobs = 1, CostMode mode = CostMode::recompute);

}  // namespace lse
