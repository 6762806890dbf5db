#pragma once

#include <cstdint>

#include "popmag/model.hpp"

namespace popmag {

// Raised in unmasked mode when a step keeps sampling structurally illegal
// tokens; carries the index of the offending generation step.
class retry_exhausted : public model_error {
  public:
    size_t at_step;
    explicit retry_exhausted(size_t step);
};

struct SamplingConfig {
    int top_k = 8;              // <= 0 keeps the whole distribution
    double temperature = 1.0;   // <= 0 collapses to argmax
    int max_bars = 32;          // cap on generated Bar tokens
    size_t max_tokens = 8192;   // overall length cap
    bool grammar_mask = true;   // restrict sampling to structurally legal ids
    int max_retries = 16;       // unmasked mode: resamples before giving up
    uint64_t seed = 0;
};

// Autoregressive generation of a target sequence accompanying `condition`
// (already-encoded tokens; its chords steer the decoder through cross
// attention). Deterministic for a fixed model, condition and config.
TokenSeq generate(const Model& m, const TokenSeq& condition, const SamplingConfig& sc);

}  // namespace popmag
