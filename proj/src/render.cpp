#include "popmag/render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "popmag/codec.hpp"
#include "popmag/pipeline.hpp"

namespace popmag {
namespace {

constexpr int kTicksPerStep = 60;  // 480 ticks/beat, 8 timesteps/beat
constexpr const char* kChordTrackName = "chords";

int program_for(Role r) {
    switch (r) {
        case Role::Guitar: return 25;
        case Role::Bass: return 33;
        case Role::String: return 48;
        case Role::Melody: return 73;
        case Role::Piano:
        case Role::Drum: break;
    }
    return 0;
}

double bpm_for(TempoClass t) {
    switch (t) {
        case TempoClass::Low: return 80.0;
        case TempoClass::High: return 170.0;
        case TempoClass::Mid: break;
    }
    return 120.0;
}

std::string canonical_name(const std::string& name) {
    std::string out;
    for (unsigned char c : name)
        if (!std::isspace(c)) out.push_back(char(std::tolower(c)));
    return out;
}

}  // namespace

midi::RawMidi render_score_to_midi(const Score& s) {
    midi::RawMidi m;
    m.ticks_per_beat = 480;
    m.tempo_bpm = bpm_for(s.tempo_class);
    m.time_signatures = {{0, 4, 4}};
    for (const auto& [role, notes] : s.tracks) {
        if (notes.empty()) continue;
        midi::RawTrack t;
        t.name = std::string(role_name(role));
        t.program = program_for(role);
        t.is_drum = role == Role::Drum;
        for (const QNote& n : notes)
            t.notes.push_back({int64_t(n.onset_step) * kTicksPerStep, n.pitch_or_drum - 1,
                               4 * (n.vel_level - 1) + 2, int64_t(n.dur_steps) * kTicksPerStep});
        m.tracks.push_back(std::move(t));
    }
    if (!s.chords.empty()) {
        midi::RawTrack t;
        t.name = kChordTrackName;
        for (const ChordEntry& c : s.chords)
            t.notes.push_back({int64_t(c.bar * kStepsPerBar + c.half * kStepsPerHalfBar) *
                                   kTicksPerStep,
                               c.chord.root, int(c.chord.quality) + 1,
                               int64_t(kStepsPerHalfBar) * kTicksPerStep});
        m.tracks.push_back(std::move(t));
    }
    return m;
}

Score score_from_midi(const midi::RawMidi& raw) {
    std::map<size_t, Role> assignment;
    const midi::RawTrack* chord_track = nullptr;
    const auto melody_idx = extract_melody(raw);
    for (size_t i = 0; i < raw.tracks.size(); ++i) {
        const auto& t = raw.tracks[i];
        const std::string name = canonical_name(t.name);
        if (name == kChordTrackName) {
            if (!chord_track) chord_track = &t;
            continue;
        }
        if (auto r = role_from_name(name)) {
            assignment.emplace(i, *r);
        } else if (t.is_drum) {
            assignment.emplace(i, Role::Drum);
        } else if (melody_idx && *melody_idx == i) {
            assignment.emplace(i, Role::Melody);
        } else {
            assignment.emplace(i, role_for_program(t.program));
        }
    }

    Score s = quantize(raw, assignment);
    if (chord_track) {
        const double steps_per_tick = 8.0 / raw.ticks_per_beat;
        for (const auto& n : chord_track->notes) {
            const int step = std::max<int>(0, int(std::llround(n.onset_tick * steps_per_tick)));
            const ChordSymbol sym{n.pitch % 12,
                                  ChordQuality(std::clamp(n.velocity - 1, 0, 6))};
            const ChordEntry entry{step / kStepsPerBar, (step % kStepsPerBar) / kStepsPerHalfBar,
                                   sym};
            s.chords.push_back(entry);
            s.bars = std::max(s.bars, entry.bar + 1);
        }
        s.normalize();
    }
    return s;
}

}  // namespace popmag
