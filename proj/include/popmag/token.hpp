#pragma once

#include <cstdint>

#include "popmag/score.hpp"

namespace popmag {

enum class TokenKind : uint8_t { Bar = 0, Pos, Track, Chord, Note };

// One sequence element. A Note carries all three attributes in a single
// token; the payload slots a/b/c are interpreted per kind.
struct Token {
    TokenKind kind = TokenKind::Bar;
    int16_t a = 0;  // Pos: k (1..32) | Track: role | Chord: root | Note: pitch_or_drum
    int16_t b = 0;  // Chord: quality | Note: vel_level
    int16_t c = 0;  // Note: dur_steps

    static Token bar() { return {}; }
    static Token pos(int k) { return {TokenKind::Pos, int16_t(k), 0, 0}; }
    static Token track(Role r) { return {TokenKind::Track, int16_t(r), 0, 0}; }
    static Token chord(ChordSymbol s) {
        return {TokenKind::Chord, int16_t(s.root), int16_t(s.quality), 0};
    }
    static Token note(int pitch_or_drum, int vel_level, int dur_steps) {
        return {TokenKind::Note, int16_t(pitch_or_drum), int16_t(vel_level), int16_t(dur_steps)};
    }

    int pos_k() const { return a; }
    Role track_role() const { return Role(a); }
    ChordSymbol chord_symbol() const { return ChordSymbol{a, ChordQuality(b)}; }
    int pitch_or_drum() const { return a; }
    int vel_level() const { return b; }
    int dur_steps() const { return c; }

    auto operator<=>(const Token&) const = default;
};

struct TokenSeq {
    TempoClass tempo_class = TempoClass::Mid;
    std::vector<Token> tokens;
    bool operator==(const TokenSeq&) const = default;
};

}  // namespace popmag
