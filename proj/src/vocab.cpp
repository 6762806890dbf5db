#include "popmag/vocab.hpp"

#include <stdexcept>

namespace popmag {

int v1_id(const Token& t, Role current_track) {
    switch (t.kind) {
        case TokenKind::Bar:
            return kV1Bar;
        case TokenKind::Pos:
            return kV1PosBase + t.pos_k() - 1;
        case TokenKind::Track:
            return kV1TrackBase + int(t.track_role());
        case TokenKind::Chord:
            return kV1ChordBase + t.chord_symbol().index();
        case TokenKind::Note: {
            const int base = current_track == Role::Drum ? kV1DrumBase : kV1PitchBase;
            return base + t.pitch_or_drum() - 1;
        }
    }
    throw std::logic_error("v1_id: bad token kind");
}

V1Symbol v1_symbol(int id) {
    if (id == kV1Bar) return {TokenKind::Bar, 0};
    if (id < kV1TrackBase) return {TokenKind::Pos, id - kV1PosBase + 1};
    if (id < kV1ChordBase) return {TokenKind::Track, id - kV1TrackBase};
    if (id < kV1PitchBase) return {TokenKind::Chord, id - kV1ChordBase};
    if (id < kV1DrumBase) return {TokenKind::Note, id - kV1PitchBase + 1};
    if (id < kV1Size) return {TokenKind::Note, id - kV1DrumBase + 1};
    throw std::out_of_range("v1_symbol: id out of range");
}

PreparedSeq prepare_sequence(const TokenSeq& t) {
    PreparedSeq p;
    p.tempo = t.tempo_class;
    p.v1.reserve(t.tokens.size());
    p.v2.reserve(t.tokens.size());
    p.v3.reserve(t.tokens.size());
    p.bar.reserve(t.tokens.size());
    p.posrow.reserve(t.tokens.size());

    GrammarState g;
    int bar = 0;
    int posrow = 0;
    for (size_t i = 0; i < t.tokens.size(); ++i) {
        const Token& tok = t.tokens[i];
        g.check(tok, i);
        if (tok.kind == TokenKind::Bar) {
            ++bar;
            posrow = 0;
            p.seg_start.push_back(int(i));
        } else if (tok.kind == TokenKind::Pos) {
            posrow = tok.pos_k();
        }
        g.advance(tok);
        // g.track is >= 0 whenever a Note is legal; other kinds ignore it.
        const Role family = tok.kind == TokenKind::Note ? Role(g.track) : Role::Melody;
        p.v1.push_back(v1_id(tok, family));
        if (tok.kind == TokenKind::Note) {
            p.v2.push_back(tok.vel_level() - 1);
            p.v3.push_back(tok.dur_steps() - 1);
        } else {
            p.v2.push_back(-1);
            p.v3.push_back(-1);
        }
        p.bar.push_back(bar);
        p.posrow.push_back(posrow);
    }
    if (!g.can_end()) throw grammar_error(t.tokens.size(), "a complete sequence");
    return p;
}

}  // namespace popmag
