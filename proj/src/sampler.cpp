#include "popmag/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace popmag {

namespace {

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1p-53; }

// Top-k / temperature sampling by inverse CDF. `legal` (when given) must
// admit at least one id. Ties keep the smallest id so runs are reproducible.
int sample_id(const std::vector<double>& logits, const std::vector<char>* legal, int top_k,
              double temperature, std::mt19937_64& rng) {
    std::vector<int> cand;
    cand.reserve(logits.size());
    for (int i = 0; i < int(logits.size()); ++i)
        if (!legal || (*legal)[i]) cand.push_back(i);
    if (top_k > 0 && top_k < int(cand.size())) {
        std::stable_sort(cand.begin(), cand.end(),
                         [&](int a, int b) { return logits[a] > logits[b]; });
        cand.resize(top_k);
        std::sort(cand.begin(), cand.end());
    }
    int best = cand[0];
    for (int i : cand)
        if (logits[i] > logits[best]) best = i;
    if (temperature <= 0.0) return best;
    double total = 0.0;
    std::vector<double> w(cand.size());
    for (size_t i = 0; i < cand.size(); ++i) {
        w[i] = std::exp((logits[cand[i]] - logits[best]) / temperature);
        total += w[i];
    }
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (size_t i = 0; i < cand.size(); ++i) {
        acc += w[i];
        if (u < acc) return cand[i];
    }
    return cand.back();
}

// Builds the token a primary-head id denotes.
Token realize(int id) {
    const V1Symbol s = v1_symbol(id);
    switch (s.kind) {
        case TokenKind::Bar:
            return Token::bar();
        case TokenKind::Pos:
            return Token::pos(s.value);
        case TokenKind::Track:
            return Token::track(Role(s.value));
        case TokenKind::Chord:
            return Token::chord(ChordSymbol::from_index(s.value));
        case TokenKind::Note:
            return Token::note(s.value, 1, 1);  // attributes filled by the other heads
    }
    return Token::bar();  // unreachable
}

// A primary id is placeable iff its token passes the strict grammar and, for
// notes, its family matches the open track. Chords are never sampled: they
// belong to the condition side of a piece.
bool placeable(int id, const GrammarState& g) {
    const V1Symbol s = v1_symbol(id);
    if (s.kind == TokenKind::Chord) return false;
    if (s.kind == TokenKind::Note) {
        if (g.ctx != GrammarState::Ctx::Track && g.ctx != GrammarState::Ctx::Note) return false;
        const bool drum_track = Role(g.track) == Role::Drum;
        if (is_drum_id(id) != drum_track) return false;
    }
    return g.accepts(realize(id));
}

}  // namespace

retry_exhausted::retry_exhausted(size_t step)
    : model_error("sampling gave up after repeated illegal tokens at step " +
                  std::to_string(step)),
      at_step(step) {}

TokenSeq generate(const Model& m, const TokenSeq& condition, const SamplingConfig& sc) {
    const PreparedSeq cond = prepare_sequence(condition);
    Model::IncrementalDecoder dec(m, m.encode_condition(cond), condition.tempo_class);
    std::mt19937_64 rng(sc.seed);

    TokenSeq out;
    out.tempo_class = condition.tempo_class;
    GrammarState g;
    int bars = 1;  // the seed Bar below opens bar 1
    int posrow = 0;
    size_t safe_len = 0;  // longest prefix that may legally end

    g.advance(Token::bar());
    out.tokens.push_back(Token::bar());
    safe_len = 1;
    HeadLogits logits = dec.step(kV1Bar, -1, -1, 1, 0);

    while (out.tokens.size() < sc.max_tokens) {
        int id = -1;
        if (sc.grammar_mask) {
            std::vector<char> legal(size_t(m.cfg.v1), 0);
            for (int i = 0; i < m.cfg.v1 && i < kV1Size; ++i) legal[i] = placeable(i, g);
            id = sample_id(logits.h1, &legal, sc.top_k, sc.temperature, rng);
        } else {
            for (int attempt = 0; attempt <= sc.max_retries; ++attempt) {
                const int pick = sample_id(logits.h1, nullptr, sc.top_k, sc.temperature, rng);
                if (pick < kV1Size && placeable(pick, g)) {
                    id = pick;
                    break;
                }
            }
            if (id < 0) throw retry_exhausted(out.tokens.size());
        }

        if (id == kV1Bar) {
            if (bars >= sc.max_bars) break;  // one more Bar would exceed the cap
            ++bars;
            posrow = 0;
        } else if (v1_symbol(id).kind == TokenKind::Pos) {
            posrow = v1_symbol(id).value;
        }

        Token tok = realize(id);
        int v2 = -1, v3 = -1;
        if (tok.kind == TokenKind::Note) {
            v2 = sample_id(logits.h2, nullptr, sc.top_k, sc.temperature, rng);
            v3 = sample_id(logits.h3, nullptr, sc.top_k, sc.temperature, rng);
            tok = Token::note(tok.pitch_or_drum(), v2 + 1, v3 + 1);
        }
        g.advance(tok);
        out.tokens.push_back(tok);
        if (g.can_end()) safe_len = out.tokens.size();
        logits = dec.step(id, v2, v3, bars, posrow);
    }

    out.tokens.resize(safe_len);  // never end inside a dangling Track
    return out;
}

}  // namespace popmag
