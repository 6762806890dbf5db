#pragma once

#include <array>
#include <vector>

#include "popmag/codec.hpp"
#include "popmag/score.hpp"

namespace popmag {

// One chord symbol per half-bar, length 2 * bars.
using ChordLane = std::vector<ChordSymbol>;

// Hidden Markov model over chord states plus a trailing NoChord state.
// Emissions are multinomial log-likelihoods of a frame's pitch-class
// histogram under per-state templates; transitions depend only on whether
// the state changes.
struct ChordHmm {
    std::vector<ChordSymbol> chords;  // state i < chords.size() is chords[i]
    std::vector<std::array<double, 12>> log_templates;  // chords + NoChord (uniform)
    double stay_logit = 0.0;
    double switch_logit = -2.0;

    // All 84 chords in dense index order (root-major blocks of 7 qualities).
    ChordHmm();
    // Reduced state set (used by the exhaustive-search tests).
    explicit ChordHmm(std::vector<ChordSymbol> states, double stay = 0.0,
                      double switch_lg = -2.0);

    int num_states() const { return int(chords.size()) + 1; }
    int nochord_state() const { return int(chords.size()); }

    double emission(int state, const std::array<double, 12>& hist) const;

    // Most probable state path; silent (all-zero) frames are forced to
    // NoChord. Ties resolve to the lexicographically smallest index path.
    std::vector<int> viterbi(const std::vector<std::array<double, 12>>& frames) const;
};

// Half-bar (16-step) duration-weighted pitch-class histograms across all
// non-drum tracks. Notes crossing frame boundaries contribute their overlap
// to each frame.
std::vector<std::array<double, 12>> frame_histograms(const Score& s);

// Viterbi chord recognition over half-bar frames. NoChord frames inherit the
// previous chord (C major when there is none). Throws empty_input when the
// score has no melodic (non-drum) notes.
ChordLane infer_chords(const Score& s);
ChordLane infer_chords(const Score& s, const ChordHmm& hmm);

}  // namespace popmag
