#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "popmag/tensor.hpp"
#include "popmag/vocab.hpp"

namespace popmag {

class model_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Raised when a training loss stops being finite; carries the step index.
class non_finite_loss : public model_error {
  public:
    long step;
    explicit non_finite_loss(long at_step);
};

struct ModelConfig {
    int d_model = 512;
    int enc_layers = 4;
    int dec_layers = 8;
    int heads = 8;
    int ffn_size = 2048;
    double dropout = 0.1;
    int max_bars = 32;      // rows in the bar-embedding table; later bars share the last row
    int enc_mem_len = 512;  // segment-level memory caps (rows of cached hidden states)
    int dec_mem_len = 512;
    int v1 = kV1Size;
    int v2 = kV2Size;
    int v3 = kV3Size;
    // Off by default: bar/position/tempo embeddings carry all location
    // information. When set, a fixed sinusoidal table over the absolute token
    // index is added to every step.
    bool sinusoidal_pos = false;

    void validate() const;  // throws model_error on inconsistent values
    bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const std::string& j);

// Deterministic closed-form parameter count with a per-block breakdown
// ("embeddings", "encoder", "decoder", "heads", "total").
std::map<std::string, long long> param_breakdown(const ModelConfig& c);
long long param_count(const ModelConfig& c);

// Per predicting step: primary-head cross entropy plus, on steps whose target
// is a note, the velocity/duration head terms.
struct StepLoss {
    double h1 = 0.0;
    double h2 = 0.0;
    double h3 = 0.0;
    bool note = false;
    double total() const { return note ? h1 + h2 + h3 : h1; }
};

double mean_loss(const std::vector<StepLoss>& losses);

struct HeadLogits {
    std::vector<double> h1, h2, h3;
};

// Encoder outputs grouped per condition bar (each [steps-in-bar x d_model]).
struct EncodedCondition {
    std::vector<Tensor> bars;
    std::vector<int> mem_rows_after;  // encoder memory rows after each segment
};

using ParamMap = std::map<std::string, Tensor>;

class Model {
  public:
    ModelConfig cfg;
    ParamMap params;

    explicit Model(ModelConfig config);
    void init_params(uint64_t seed);

    // Zero-filled gradient map matching `params` shapes.
    ParamMap make_grad_map() const;

    // Teacher-forced segment-recurrent pass over a (condition, target) pair,
    // one segment per bar with capped memories. Returns the loss of every
    // predicting step. When `grads` is given, accumulates d(mean total loss)
    // into it. `dropout_rng` enables dropout (ignored when cfg.dropout == 0).
    std::vector<StepLoss> teacher_forced_pass(const PreparedSeq& cond, const PreparedSeq& tgt,
                                              ParamMap* grads = nullptr,
                                              std::mt19937_64* dropout_rng = nullptr) const;

    // Same quantity computed as one full-context causal pass with no segment
    // memory (equivalence oracle for the recurrent pass). No gradients.
    std::vector<StepLoss> full_context_pass(const PreparedSeq& cond, const PreparedSeq& tgt) const;

    // Test hook for the stop-gradient contract: like teacher_forced_pass, but
    // all segment memories are produced by `mem_source` (same architecture)
    // while this model computes everything else. Training gradients are the
    // partial derivative w.r.t. this model's parameters with the memory side
    // held fixed; finite differences over that split validate the contract.
    // With mem_source == *this it reproduces the normal pass exactly.
    std::vector<StepLoss> pass_with_frozen_memory(const Model& mem_source, const PreparedSeq& cond,
                                                  const PreparedSeq& tgt) const;

    // Segment-recurrent forward only, exposing the head logits of every
    // target step (row t predicts step t+1). No gradients, no dropout.
    struct ForwardDetail {
        std::vector<StepLoss> losses;
        Tensor h1_logits, h2_logits, h3_logits;
    };
    ForwardDetail forward_detail(const PreparedSeq& cond, const PreparedSeq& tgt) const;

    // Encoder-only pass over all condition bars (for generation).
    EncodedCondition encode_condition(const PreparedSeq& cond) const;

    // Step-by-step decoder used by the sampler. Feed the step that was just
    // appended to the target sequence; the returned logits score the next
    // step. Bar changes close the running segment and roll decoder memory.
    class IncrementalDecoder {
      public:
        IncrementalDecoder(const Model& m, EncodedCondition cond, TempoClass tempo);
        ~IncrementalDecoder();
        IncrementalDecoder(IncrementalDecoder&&) noexcept;
        HeadLogits step(int v1, int v2, int v3, int bar, int posrow);

      private:
        struct Impl;
        std::unique_ptr<Impl> impl;
    };

  private:
    struct Passes;  // shared forward/backward machinery (model.cpp)
    friend struct Passes;
};

}  // namespace popmag
