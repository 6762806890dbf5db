#include "popmag/codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include <json.hpp>

namespace popmag {

using ordered_json = nlohmann::ordered_json;

grammar_error::grammar_error(size_t pos, std::string expected_set)
    : codec_error("grammar error at token " + std::to_string(pos) + ", expected " + expected_set),
      position(pos),
      expected(std::move(expected_set)) {}

chord_placement_error::chord_placement_error(size_t pos)
    : codec_error("chord at token " + std::to_string(pos) +
                  " is not immediately after Pos(1) or Pos(16)"),
      position(pos) {}

note_outside_track::note_outside_track(size_t pos)
    : codec_error("note at token " + std::to_string(pos) + " has no enclosing track group"),
      position(pos) {}

void GrammarState::check(const Token& t, size_t position) const {
    switch (t.kind) {
        case TokenKind::Bar:
            if (ctx == Ctx::Track) throw grammar_error(position, "Note");
            return;
        case TokenKind::Pos:
            if (ctx == Ctx::Start) throw grammar_error(position, "Bar");
            if (ctx == Ctx::Track) throw grammar_error(position, "Note");
            return;
        case TokenKind::Chord:
            if (ctx != Ctx::Pos || (pos != 1 && pos != 16)) throw chord_placement_error(position);
            return;
        case TokenKind::Track:
            if (ctx == Ctx::Start) throw grammar_error(position, "Bar");
            if (ctx == Ctx::Bar) throw grammar_error(position, "Pos or Bar");
            if (ctx == Ctx::Track) throw grammar_error(position, "Note");
            return;
        case TokenKind::Note:
            if (ctx != Ctx::Track && ctx != Ctx::Note) throw note_outside_track(position);
            return;
    }
}

bool GrammarState::accepts(const Token& t) const {
    switch (t.kind) {
        case TokenKind::Bar:
            return ctx == Ctx::Start || ctx == Ctx::Bar || ctx == Ctx::Chord || ctx == Ctx::Note;
        case TokenKind::Pos:
            if (t.a < 1 || t.a > kStepsPerBar) return false;
            if (ctx == Ctx::Bar) return true;
            if (ctx == Ctx::Chord || ctx == Ctx::Note) return t.a > pos;
            return false;
        case TokenKind::Chord:
            return ctx == Ctx::Pos && (pos == 1 || pos == 16);
        case TokenKind::Track:
            if (t.a < 0 || t.a >= kNumRoles) return false;
            if (ctx == Ctx::Pos || ctx == Ctx::Chord) return true;
            if (ctx == Ctx::Note) return t.a > track;
            return false;
        case TokenKind::Note:
            return ctx == Ctx::Track || ctx == Ctx::Note;
    }
    return false;
}

void GrammarState::advance(const Token& t) {
    switch (t.kind) {
        case TokenKind::Bar:
            ctx = Ctx::Bar;
            ++bar;
            pos = 0;
            track = -1;
            break;
        case TokenKind::Pos:
            ctx = Ctx::Pos;
            pos = t.a;
            track = -1;
            break;
        case TokenKind::Chord:
            ctx = Ctx::Chord;
            break;
        case TokenKind::Track:
            ctx = Ctx::Track;
            track = t.a;
            break;
        case TokenKind::Note:
            ctx = Ctx::Note;
            break;
    }
}

namespace {

void check_note_ranges(int p, int v, int d, const std::string& where) {
    if (p < 1 || p > 128) throw invariant_violation(where + ": pitch_or_drum out of [1,128]");
    if (v < 1 || v > 32) throw invariant_violation(where + ": vel_level out of [1,32]");
    if (d < 1 || d > 32) throw invariant_violation(where + ": dur_steps out of [1,32]");
}

void check_token_ranges(const Token& t, size_t i) {
    const std::string where = "token " + std::to_string(i);
    switch (t.kind) {
        case TokenKind::Bar:
            break;
        case TokenKind::Pos:
            if (t.a < 1 || t.a > kStepsPerBar)
                throw invariant_violation(where + ": position out of [1,32]");
            break;
        case TokenKind::Track:
            if (t.a < 0 || t.a >= kNumRoles) throw invariant_violation(where + ": unknown role");
            break;
        case TokenKind::Chord:
            if (t.a < 0 || t.a >= kNumRoots) throw invariant_violation(where + ": bad chord root");
            if (t.b < 0 || t.b >= kNumQualities)
                throw invariant_violation(where + ": bad chord quality");
            break;
        case TokenKind::Note:
            check_note_ranges(t.a, t.b, t.c, where);
            break;
    }
}

// Validates Score invariants; returns a normalized copy.
Score validated(const Score& s) {
    if (s.bars < 0) throw invariant_violation("negative bar count");
    Score sc = s;
    sc.normalize();
    for (const auto& [role, notes] : sc.tracks)
        for (const auto& n : notes) {
            if (n.onset_step < 0 || n.onset_step >= kStepsPerBar * sc.bars)
                throw invariant_violation("note onset outside the piece");
            check_note_ranges(n.pitch_or_drum, n.vel_level, n.dur_steps,
                              std::string(role_name(role)) + " note");
        }
    for (const auto& c : sc.chords) {
        if (c.bar < 0 || c.bar >= sc.bars) throw invariant_violation("chord bar outside the piece");
        if (c.half != 0 && c.half != 1) throw invariant_violation("chord half not in {0,1}");
        if (c.chord.root < 0 || c.chord.root >= kNumRoots)
            throw invariant_violation("bad chord root");
        if (int(c.chord.quality) >= kNumQualities) throw invariant_violation("bad chord quality");
    }
    return sc;
}

// Half-bar chords attach to fixed positions: first half at Pos(1), second
// half at Pos(16).
constexpr int kChordPos[2] = {1, 16};

}  // namespace

Score quantize(const midi::RawMidi& raw, const std::map<size_t, Role>& role_assignment) {
    Score s;
    s.tempo_class = tempo_class_of(raw.tempo_bpm);
    const double steps_per_tick = 8.0 / raw.ticks_per_beat;
    long max_step = -1;
    for (const auto& [idx, role] : role_assignment) {
        if (idx >= raw.tracks.size()) throw invariant_violation("role assignment index out of range");
        for (const auto& n : raw.tracks[idx].notes) {
            QNote q;
            q.onset_step = int(std::llround(n.onset_tick * steps_per_tick));
            if (q.onset_step < 0) q.onset_step = 0;
            q.pitch_or_drum = n.pitch + 1;
            q.vel_level = std::clamp(n.velocity / 4 + 1, 1, 32);
            q.dur_steps = std::clamp<long>(std::llround(n.duration_ticks * steps_per_tick), 1, 32);
            max_step = std::max<long>(max_step, q.onset_step);
            s.tracks[role].push_back(q);
        }
    }
    if (max_step < 0) throw empty_input("no notes after quantization");
    s.bars = int(max_step / kStepsPerBar) + 1;
    s.normalize();
    return s;
}

TokenSeq encode(const Score& s) {
    Score sc = validated(s);
    TokenSeq out;
    out.tempo_class = sc.tempo_class;

    // Bucket notes by (bar, position, role).
    std::vector<std::map<int, std::array<std::vector<QNote>, kNumRoles>>> by_bar(sc.bars);
    for (const auto& [role, notes] : sc.tracks)
        for (const auto& n : notes)
            by_bar[n.onset_step / kStepsPerBar][n.onset_step % kStepsPerBar + 1][int(role)]
                .push_back(n);
    std::vector<std::array<std::optional<ChordSymbol>, 2>> chord_by_bar(sc.bars);
    for (const auto& c : sc.chords) chord_by_bar[c.bar][c.half] = c.chord;

    for (int bar = 0; bar < sc.bars; ++bar) {
        out.tokens.push_back(Token::bar());
        auto& groups = by_bar[bar];
        for (int half = 0; half < 2; ++half)
            if (chord_by_bar[bar][half]) groups[kChordPos[half]];  // chord occupies its position
        for (auto& [k, roles] : groups) {
            out.tokens.push_back(Token::pos(k));
            for (int half = 0; half < 2; ++half)
                if (k == kChordPos[half] && chord_by_bar[bar][half])
                    out.tokens.push_back(Token::chord(*chord_by_bar[bar][half]));
            for (int r = 0; r < kNumRoles; ++r) {
                auto& notes = roles[r];
                if (notes.empty()) continue;
                out.tokens.push_back(Token::track(Role(r)));
                std::sort(notes.begin(), notes.end(), [](const QNote& a, const QNote& b) {
                    return std::tie(a.pitch_or_drum, a.dur_steps, a.vel_level) <
                           std::tie(b.pitch_or_drum, b.dur_steps, b.vel_level);
                });
                for (const auto& n : notes)
                    out.tokens.push_back(Token::note(n.pitch_or_drum, n.vel_level, n.dur_steps));
            }
        }
    }
    return out;
}

Score decode(const TokenSeq& t) {
    Score s;
    s.tempo_class = t.tempo_class;
    GrammarState g;
    for (size_t i = 0; i < t.tokens.size(); ++i) {
        const Token& tok = t.tokens[i];
        check_token_ranges(tok, i);
        g.check(tok, i);
        switch (tok.kind) {
            case TokenKind::Chord:
                s.chords.push_back(ChordEntry{g.bar, g.pos == 1 ? 0 : 1, tok.chord_symbol()});
                break;
            case TokenKind::Note:
                s.tracks[Role(g.track)].push_back(
                    QNote{g.bar * kStepsPerBar + g.pos - 1, tok.a, tok.b, tok.c});
                break;
            default:
                break;
        }
        g.advance(tok);
    }
    if (!g.can_end()) throw grammar_error(t.tokens.size(), "Note");
    s.bars = g.bar + 1;
    s.normalize();
    return s;
}

size_t encode_baseline(const Score& s, BaselineStyle style) {
    Score sc = validated(s);
    size_t n_notes = 0;
    for (const auto& [role, notes] : sc.tracks) n_notes += notes.size();

    if (style == BaselineStyle::Remi) {
        // Bar markers, one Position per occupied timestep, one token per
        // chord, and Track + Pitch + Duration + Velocity per note.
        std::set<long> occupied;
        for (const auto& [role, notes] : sc.tracks)
            for (const auto& n : notes) occupied.insert(n.onset_step);
        for (const auto& c : sc.chords)
            occupied.insert(long(c.bar) * kStepsPerBar + kChordPos[c.half] - 1);
        return size_t(sc.bars) + occupied.size() + sc.chords.size() + 4 * n_notes;
    }

    // MidiLike: bar markers; chord root + quality events; Track + NoteOn +
    // NoteOff per note; SetVelocity on every change of the running stream
    // velocity; TimeShift events covering up to 4 timesteps each.
    struct Ev {
        long step;
        int role, pitch, dur, vel;
        auto operator<=>(const Ev&) const = default;
    };
    std::vector<Ev> ons;
    std::vector<std::set<long>> times(sc.bars);
    const long piece_end = long(sc.bars) * kStepsPerBar;
    // An off falling exactly on a bar boundary belongs to the earlier bar;
    // offs past the final bar clamp to the piece end.
    auto add_off_time = [&](long t) {
        t = std::min(t, piece_end);
        long bar = (t % kStepsPerBar == 0) ? t / kStepsPerBar - 1 : t / kStepsPerBar;
        times[bar].insert(t);
    };
    for (const auto& [role, notes] : sc.tracks)
        for (const auto& n : notes) {
            ons.push_back(Ev{n.onset_step, int(role), n.pitch_or_drum, n.dur_steps, n.vel_level});
            times[n.onset_step / kStepsPerBar].insert(n.onset_step);
            add_off_time(n.onset_step + n.dur_steps);
        }
    for (const auto& c : sc.chords)
        times[c.bar].insert(long(c.bar) * kStepsPerBar + kChordPos[c.half] - 1);

    std::sort(ons.begin(), ons.end());
    size_t set_velocity = 0;
    int stream_vel = -1;
    for (const auto& e : ons)
        if (e.vel != stream_vel) {
            ++set_velocity;
            stream_vel = e.vel;
        }
    size_t shifts = 0;
    for (int bar = 0; bar < sc.bars; ++bar) {
        long cursor = long(bar) * kStepsPerBar;
        for (long t : times[bar]) {
            shifts += size_t((t - cursor + 3) / 4);
            cursor = t;
        }
    }
    return size_t(sc.bars) + 2 * sc.chords.size() + 3 * n_notes + set_velocity + shifts;
}

std::pair<TokenSeq, TokenSeq> split_condition_target(const Score& s,
                                                     const std::set<Role>& condition_roles) {
    Score sc = validated(s);
    Score cond, target;
    cond.tempo_class = target.tempo_class = sc.tempo_class;
    cond.bars = target.bars = sc.bars;
    cond.chords = sc.chords;
    for (const auto& [role, notes] : sc.tracks)
        (condition_roles.count(role) ? cond : target).tracks[role] = notes;
    TokenSeq cond_seq = encode(cond);
    TokenSeq target_seq = encode(target);
    bool has_content = std::any_of(cond_seq.tokens.begin(), cond_seq.tokens.end(),
                                   [](const Token& t) { return t.kind != TokenKind::Bar; });
    if (!has_content) throw empty_condition("condition side carries no notes or chords");
    return {std::move(cond_seq), std::move(target_seq)};
}

Score merge_scores(const Score& a, const Score& b) {
    if (a.tempo_class != b.tempo_class)
        throw invariant_violation("cannot merge scores with different tempo classes");
    Score m;
    m.tempo_class = a.tempo_class;
    m.bars = std::max(a.bars, b.bars);
    m.tracks = a.tracks;
    for (const auto& [role, notes] : b.tracks) {
        auto& dst = m.tracks[role];
        dst.insert(dst.end(), notes.begin(), notes.end());
    }
    std::map<std::pair<int, int>, ChordSymbol> chord_at;
    for (const auto& c : a.chords) chord_at[{c.bar, c.half}] = c.chord;
    for (const auto& c : b.chords) {
        auto [it, inserted] = chord_at.try_emplace({c.bar, c.half}, c.chord);
        if (!inserted && it->second != c.chord)
            throw invariant_violation("conflicting chord entries while merging");
    }
    m.chords.clear();
    for (const auto& [key, sym] : chord_at)
        m.chords.push_back(ChordEntry{key.first, key.second, sym});
    m.normalize();
    return m;
}

std::string to_jsonl(const TokenSeq& t) {
    ordered_json j;
    j["tempo"] = std::string(tempo_class_name(t.tempo_class));
    ordered_json arr = ordered_json::array();
    for (const Token& tok : t.tokens) {
        switch (tok.kind) {
            case TokenKind::Bar:
                arr.push_back(ordered_json::array({"bar"}));
                break;
            case TokenKind::Pos:
                arr.push_back(ordered_json::array({"pos", tok.a}));
                break;
            case TokenKind::Track:
                arr.push_back(
                    ordered_json::array({"track", std::string(role_name(tok.track_role()))}));
                break;
            case TokenKind::Chord:
                arr.push_back(ordered_json::array({"chord", std::string(root_name(tok.a)),
                                                   std::string(quality_name(ChordQuality(tok.b)))}));
                break;
            case TokenKind::Note:
                arr.push_back(ordered_json::array({"note", tok.a, tok.b, tok.c}));
                break;
        }
    }
    j["tokens"] = std::move(arr);
    return j.dump();
}

TokenSeq from_jsonl(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const std::exception& e) {
        throw invariant_violation(std::string("bad JSONL line: ") + e.what());
    }
    if (!j.is_object() || !j.contains("tempo") || !j.contains("tokens"))
        throw invariant_violation("JSONL line must be {\"tempo\":..., \"tokens\":[...]}");
    TokenSeq out;
    if (!j["tempo"].is_string())
        throw invariant_violation("tempo must be a string");
    auto tempo = tempo_class_from_name(j["tempo"].get<std::string>());
    if (!tempo) throw invariant_violation("tempo must be one of low/mid/high");
    out.tempo_class = *tempo;
    if (!j["tokens"].is_array()) throw invariant_violation("tokens must be an array");
    size_t i = 0;
    for (const auto& e : j["tokens"]) {
        const std::string where = "token " + std::to_string(i);
        if (!e.is_array() || e.empty() || !e[0].is_string())
            throw invariant_violation(where + ": token must be a tagged array");
        const std::string tag = e[0].get<std::string>();
        auto want_int = [&](size_t idx) {
            if (idx >= e.size() || !e[idx].is_number_integer())
                throw invariant_violation(where + ": expected integer field");
            long v = e[idx].get<long>();
            if (v < INT16_MIN || v > INT16_MAX)
                throw invariant_violation(where + ": integer out of range");
            return int(v);
        };
        auto want_str = [&](size_t idx) {
            if (idx >= e.size() || !e[idx].is_string())
                throw invariant_violation(where + ": expected string field");
            return e[idx].get<std::string>();
        };
        Token tok;
        if (tag == "bar" && e.size() == 1) {
            tok = Token::bar();
        } else if (tag == "pos" && e.size() == 2) {
            tok = Token::pos(want_int(1));
        } else if (tag == "track" && e.size() == 2) {
            auto role = role_from_name(want_str(1));
            if (!role) throw invariant_violation(where + ": unknown role name");
            tok = Token::track(*role);
        } else if (tag == "chord" && e.size() == 3) {
            auto root = root_from_name(want_str(1));
            auto quality = quality_from_name(want_str(2));
            if (!root || !quality) throw invariant_violation(where + ": unknown chord name");
            tok = Token::chord(ChordSymbol{*root, *quality});
        } else if (tag == "note" && e.size() == 4) {
            tok = Token::note(want_int(1), want_int(2), want_int(3));
        } else {
            throw invariant_violation(where + ": unknown token tag or arity");
        }
        check_token_ranges(tok, i);
        out.tokens.push_back(tok);
        ++i;
    }
    return out;
}

}  // namespace popmag
