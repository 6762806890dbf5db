#pragma once

#include <string>
#include <utility>
#include <vector>

#include "popmag/chords.hpp"
#include "popmag/model.hpp"
#include "popmag/score.hpp"
#include "popmag/vocab.hpp"

namespace popmag {

// A (track, bar) cell holds no event for the requested feature.
class empty_cell : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Densities evaluated on different grids cannot be overlapped.
class grid_mismatch : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Compared scores disagree on bar count (or a lane is too short).
class shape_mismatch : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Per-note features measured inside one (track, bar) cell. P is the pitch
// class (12 classes); V, D and IOI use the 32 quantization levels.
enum class Feature { P, V, D, IOI };

int feature_classes(Feature f);  // 12 for P, 32 otherwise
std::string_view feature_name(Feature f);

// Chord-accuracy cell grid: one chord per half bar (the corpus annotation
// granularity) or one per bar (first-half symbol).
enum class ChordGranularity { HalfBar, Bar };

// Token-wise perplexity readings: per_step averages the heads present within
// a step, per_head counts every present head as one token.
enum class PplMode { PerStep, PerHead };

// Smoothed class histogram on a uniform grid of 8 intervals per class over
// [0.5, K + 0.5]; density is trapezoid-normalized to integrate to 1.
struct ClassPdf {
    int classes = 0;
    std::vector<double> grid;
    std::vector<double> density;
};

struct EvalReport {
    double ca = 0.0;
    double ppl = 0.0;
    double d_p = 0.0;
    double d_v = 0.0;
    double d_d = 0.0;
    double d_ioi = 0.0;
    long skipped_cells = 0;
};
std::string report_to_json(const EvalReport& r);

// Fraction of (non-drum track, chord cell) pairs whose chord — inferred from
// that track alone — matches the conditional lane. Throws empty_input when no
// non-drum track has notes, shape_mismatch when the lane is shorter than the
// score.
double chord_accuracy(const Score& gen, const ChordLane& lane,
                      ChordGranularity granularity = ChordGranularity::HalfBar);

// Teacher-forced perplexity over (condition, target) pairs. Throws
// non_finite_loss (carrying the piece index) if any pass degenerates and
// empty_input when the corpus has no predicting steps.
double perplexity(const Model& m, const std::vector<std::pair<PreparedSeq, PreparedSeq>>& data,
                  PplMode mode = PplMode::PerStep);

// Event counts of `feature` for notes of `track` whose onset lies in `bar`.
// IOI measures onset gaps of consecutive notes across the whole track,
// attributes each gap to the bar of the earlier onset and clamps it to
// [1, 32]. Throws empty_cell when nothing falls in the cell.
std::vector<long> feature_histogram(const Score& s, Feature f, Role track, int bar);

// Gaussian-smoothed density of a class histogram: the piecewise-constant
// histogram convolved with a normal kernel, bandwidth max(0.5, n^{-1/5} *
// sigma) unless overridden (> 0), clipped to the grid and renormalized.
ClassPdf kde_pdf(const std::vector<long>& counts, double bandwidth_override = 0.0);

// Overlapped area: trapezoid integral of min(p, q) over the shared grid.
double overlapped_area(const ClassPdf& p, const ClassPdf& q);

// Mean overlapped area over (track, bar) cells where both scores have at
// least one event; cells failing that are skipped and counted.
struct DistanceCells {
    double oa_sum = 0.0;
    long cells = 0;
    long skipped = 0;
};
DistanceCells distribution_cells(const Score& gen, const Score& ref, Feature f);
double distribution_distance(const Score& gen, const Score& ref, Feature f);

// Pools every report metric over aligned (generated, reference) piece lists.
// The chord reference for a generated track is the reference's chord
// annotations when it carries any (the conditional lane); otherwise the solo
// inference on the same reference track when present — which makes
// self-evaluation of chordless pieces score exactly 1 — else a full-score
// inference. PPL is the teacher-forced perplexity of the generated pieces
// conditioned on the encoded references when a model is supplied, else the
// neutral 1.0. Throws shape_mismatch on misaligned lists or bar counts,
// empty_input when a metric ends up with zero cells.
EvalReport evaluate_dataset(const std::vector<Score>& gen, const std::vector<Score>& ref,
                            const Model* model = nullptr, PplMode ppl_mode = PplMode::PerStep,
                            ChordGranularity granularity = ChordGranularity::HalfBar);

}  // namespace popmag
