#pragma once

#include <vector>

#include "popmag/codec.hpp"
#include "popmag/token.hpp"

namespace popmag {

// Primary-head vocabulary layout. Pitched and drum notes occupy separate
// symbol ranges so the same MIDI number maps to different ids per family.
inline constexpr int kV1Bar = 0;
inline constexpr int kV1PosBase = 1;      // Pos_k -> k            (1..32)
inline constexpr int kV1TrackBase = 33;   // Track roles           (33..38)
inline constexpr int kV1ChordBase = 39;   // chord index           (39..122)
inline constexpr int kV1PitchBase = 123;  // pitch 1..128          (123..250)
inline constexpr int kV1DrumBase = 251;   // drum 1..128           (251..378)
inline constexpr int kV1Size = 379;
inline constexpr int kV2Size = 32;  // velocity levels
inline constexpr int kV3Size = 32;  // duration steps

inline bool is_note_id(int v1) { return v1 >= kV1PitchBase; }
inline bool is_drum_id(int v1) { return v1 >= kV1DrumBase; }

// Notes need the enclosing track's role to choose the pitch/drum family.
int v1_id(const Token& t, Role current_track);

struct V1Symbol {
    TokenKind kind;
    int value;  // Pos: k; Track: role; Chord: dense chord index; Note: pitch_or_drum
};
V1Symbol v1_symbol(int id);

// A token sequence resolved for the model: per-step symbol ids, attribute
// ids (-1 on non-note steps), 1-based bar numbers, position-embedding rows
// (0 = the before-any-position index) and per-bar segment boundaries.
struct PreparedSeq {
    TempoClass tempo = TempoClass::Mid;
    std::vector<int> v1;
    std::vector<int> v2, v3;
    std::vector<int> bar;
    std::vector<int> posrow;
    std::vector<int> seg_start;

    int steps() const { return int(v1.size()); }
    int bars() const { return int(seg_start.size()); }
    // Step range [begin, end) of 0-based bar i.
    std::pair<int, int> segment(int i) const {
        return {seg_start[i], i + 1 < bars() ? seg_start[i + 1] : steps()};
    }
};

// Validates the sequence against the structural grammar while resolving it.
PreparedSeq prepare_sequence(const TokenSeq& t);

}  // namespace popmag
