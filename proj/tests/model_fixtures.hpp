#pragma once

// Small model configurations and hand-built pieces shared by the model,
// training and sampling tests.

#include "popmag/model.hpp"

namespace modelfix {

// Finite-difference scale: memory lengths 0 keep the loss free of the
// stop-gradient memory path, so numeric and analytic gradients coincide.
inline popmag::ModelConfig tiny_cfg(int mem_len = 0) {
    popmag::ModelConfig c;
    c.d_model = 8;
    c.heads = 2;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.ffn_size = 16;
    c.dropout = 0.0;
    c.max_bars = 32;
    c.enc_mem_len = mem_len;
    c.dec_mem_len = mem_len;
    return c;
}

inline popmag::ModelConfig small_cfg() {
    popmag::ModelConfig c;
    c.d_model = 16;
    c.heads = 4;
    c.enc_layers = 2;
    c.dec_layers = 2;
    c.ffn_size = 32;
    c.dropout = 0.0;
    c.max_bars = 32;
    c.enc_mem_len = 512;
    c.dec_mem_len = 512;
    return c;
}

// Two condition bars: chords at both half-bar anchors plus piano notes.
inline popmag::TokenSeq fd_condition() {
    using namespace popmag;
    TokenSeq s;
    s.tempo_class = TempoClass::Mid;
    s.tokens = {
        Token::bar(),
        Token::pos(1),
        Token::chord({0, ChordQuality::Major}),
        Token::track(Role::Piano),
        Token::note(61, 17, 8),
        Token::pos(16),
        Token::chord({7, ChordQuality::Major}),
        Token::track(Role::Piano),
        Token::note(68, 17, 8),
        Token::bar(),
        Token::pos(1),
        Token::chord({5, ChordQuality::Minor7}),
        Token::track(Role::Piano),
        Token::note(66, 18, 4),
    };
    return s;
}

// Three target bars (one more than the condition, so the last bar runs on the
// all-zero cross-attention fallback) touching drum and pitched families.
inline popmag::TokenSeq fd_target() {
    using namespace popmag;
    TokenSeq s;
    s.tempo_class = TempoClass::Mid;
    s.tokens = {
        Token::bar(),
        Token::pos(1),
        Token::track(Role::Drum),
        Token::note(36, 32, 1),
        Token::note(42, 20, 1),
        Token::track(Role::Bass),
        Token::note(37, 9, 16),
        Token::bar(),
        Token::pos(1),
        Token::track(Role::Bass),
        Token::note(42, 10, 8),
        Token::pos(17),
        Token::track(Role::Bass),
        Token::note(44, 11, 8),
        Token::bar(),
        Token::pos(1),
        Token::track(Role::Piano),
        Token::note(61, 17, 8),
    };
    return s;
}

}  // namespace modelfix
