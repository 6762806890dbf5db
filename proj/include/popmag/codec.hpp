#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "popmag/midi.hpp"
#include "popmag/token.hpp"

namespace popmag {

class codec_error : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Token at `position` is structurally misplaced; `expected` names the set of
// kinds that would have been legal there.
class grammar_error : public codec_error {
  public:
    size_t position;
    std::string expected;
    grammar_error(size_t pos, std::string expected_set);
};
class chord_placement_error : public codec_error {
  public:
    size_t position;
    explicit chord_placement_error(size_t pos);
};
class note_outside_track : public codec_error {
  public:
    size_t position;
    explicit note_outside_track(size_t pos);
};
class invariant_violation : public codec_error {
    using codec_error::codec_error;
};
class empty_input : public codec_error {
    using codec_error::codec_error;
};
class empty_condition : public codec_error {
    using codec_error::codec_error;
};

// Structural automaton shared by decode() and the sampler's legality mask.
// decode() uses the tolerant rules only (structure, not ordering); the
// sampler additionally restricts to strictly advancing positions/tracks via
// the fields kept here.
struct GrammarState {
    enum class Ctx : uint8_t { Start, Bar, Pos, Chord, Track, Note };
    Ctx ctx = Ctx::Start;
    int bar = -1;    // 0-based index of the current bar (-1 before first Bar)
    int pos = 0;     // current position k, 0 when no Pos seen in this bar
    int track = -1;  // current role as int, -1 when no Track at this position

    // Tolerant structural check; throws grammar_error / chord_placement_error /
    // note_outside_track with `position` when the token cannot follow.
    void check(const Token& t, size_t position) const;
    // Strict check used when sampling: additionally requires strictly
    // ascending positions within a bar, strictly ascending roles within a
    // position, and no empty position groups.
    bool accepts(const Token& t) const;
    void advance(const Token& t);  // pre: t passes check()
    // True when the sequence may legally end here (not inside a dangling Track).
    bool can_end() const { return ctx != Ctx::Track; }
};

// --- Score <-> tokens ---------------------------------------------------

// Snap a raw MIDI performance to the 32-steps-per-bar grid. role_assignment
// maps raw track indices to roles; unmapped tracks are dropped; tracks
// sharing a role are merged. Throws empty_input if nothing remains.
Score quantize(const midi::RawMidi& raw, const std::map<size_t, Role>& role_assignment);

TokenSeq encode(const Score& s);          // throws invariant_violation
Score decode(const TokenSeq& t);          // returns a normalized Score

enum class BaselineStyle { MidiLike, Remi };

// Token count of the equivalent baseline sequence (for length comparisons).
size_t encode_baseline(const Score& s, BaselineStyle style);

// Split into (condition, target): condition keeps condition_roles plus all
// chords, target keeps the remaining roles and no chords. Throws
// empty_condition when the condition side carries no content tokens.
std::pair<TokenSeq, TokenSeq> split_condition_target(const Score& s,
                                                     const std::set<Role>& condition_roles);

// Union of two scores over disjoint role sets (inverse of the split).
// Conflicting chord entries or tempo classes raise invariant_violation.
Score merge_scores(const Score& a, const Score& b);

// --- JSONL --------------------------------------------------------------

// One piece per line: {"tempo":"low|mid|high","tokens":[["bar"],["pos",k],
// ["track","piano"],["chord","C","major"],["note",p,v,d],...]}.
std::string to_jsonl(const TokenSeq& t);
TokenSeq from_jsonl(const std::string& line);  // throws invariant_violation on bad shape

}  // namespace popmag
