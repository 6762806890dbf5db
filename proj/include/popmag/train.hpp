#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "popmag/model.hpp"

namespace popmag {

// Adam moment estimates, keyed like the parameter map. `t` counts completed
// optimizer steps.
struct AdamState {
    ParamMap m, v;
    long t = 0;
};

struct TrainConfig {
    long steps = 2000;       // optimizer steps; one (condition, target) piece each
    double lr_scale = 1.0;   // multiplies the inverse-square-root schedule
    long warmup = 400;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    uint64_t seed = 1;       // dropout stream
    double target_ppl = 0.0; // early stop when teacher-forced PPL drops below (0 = off)
    long check_every = 100;  // PPL probe cadence for early stopping
    bool verbose = false;    // progress lines on stderr
};

struct TrainResult {
    std::vector<double> loss_curve;  // mean step loss per optimizer step
    long steps_run = 0;
    double final_ppl = 0.0;  // teacher-forced perplexity over the corpus (no dropout)
};

// Learning rate after `t` completed steps (t >= 1).
double lr_at(const TrainConfig& c, int d_model, long t);

// Exponentiated mean per-step total loss over the corpus, dropout disabled.
double corpus_ppl(const Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data);

// Streams pieces in order, cycling; one Adam update per piece. Resumes from
// `state` when it already carries moments. Throws non_finite_loss if a step
// loss stops being finite.
TrainResult train(Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data,
                  const TrainConfig& c, AdamState& state);

}  // namespace popmag
