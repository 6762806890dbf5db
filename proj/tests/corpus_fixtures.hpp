#pragma once

// Synthetic SMF corpora for pipeline and end-to-end tests: a deterministic
// band arrangement generator plus the five canonical reject files (garbage
// bytes, missing melody, non-4/4 meter, too-thin tracks, too few tracks).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "popmag/midi.hpp"

namespace corpusfix {

using popmag::midi::RawMidi;
using popmag::midi::RawNote;
using popmag::midi::RawTrack;

inline RawTrack make_track(std::string name, int program, bool is_drum,
                           std::vector<RawNote> notes) {
    RawTrack t;
    t.name = std::move(name);
    t.program = program;
    t.is_drum = is_drum;
    t.notes = std::move(notes);
    return t;
}

// `count` notes on a regular grid starting at start_tick.
inline std::vector<RawNote> grid_notes(int count, int64_t start_tick, int64_t step_ticks,
                                       int pitch, int velocity = 64, int64_t dur = 240) {
    std::vector<RawNote> notes;
    for (int i = 0; i < count; ++i)
        notes.push_back({start_tick + i * step_ticks, pitch, velocity, dur});
    return notes;
}

// A full six-track arrangement that survives every pipeline stage:
// 4-8 bars at 480 ticks/beat, each track comfortably above 20 notes.
inline RawMidi valid_raw(std::mt19937_64& rng) {
    const int bars = 4 + int(rng() % 5);
    const int64_t bar_ticks = 4 * 480;
    const double tempos[] = {85.0, 120.0, 165.0};  // one per tempo class
    RawMidi m;
    m.ticks_per_beat = 480;
    m.tempo_bpm = tempos[rng() % 3];
    m.time_signatures = {{0, 4, 4}};

    struct Part {
        const char* name;
        int program;
        bool drum;
        int pitch_lo, pitch_hi;
    };
    const Part parts[] = {
        {"melody", 73, false, 72, 84}, {"piano", 0, false, 60, 72},
        {"bass", 33, false, 36, 48},   {"guitar", 25, false, 55, 67},
        {"strings", 48, false, 64, 76}, {"drums", 0, true, 35, 50},
    };
    for (const Part& p : parts) {
        std::vector<RawNote> notes;
        // one note every 4 timesteps (240 ticks) keeps every track >= 32 notes
        for (int64_t tick = 0; tick < bars * bar_ticks; tick += 240) {
            const int pitch = p.pitch_lo + int(rng() % uint64_t(p.pitch_hi - p.pitch_lo + 1));
            const int vel = 30 + int(rng() % 70);
            const int64_t dur = 60 * (1 + int64_t(rng() % 8));
            notes.push_back({tick, pitch, vel, dur});
        }
        m.tracks.push_back(make_track(p.name, p.program, p.drum, notes));
    }
    return m;
}

inline void write_file(const std::filesystem::path& p, const std::vector<uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// Writes n_valid survivable files plus five files that each trip a distinct
// pipeline stage. Deterministic for a given n_valid.
inline void write_corpus(const std::filesystem::path& dir, int n_valid) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::mt19937_64 rng(424242);
    for (int i = 0; i < n_valid; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "piece_%02d.mid", i);
        write_file(dir / name, popmag::midi::write_smf(valid_raw(rng)));
    }

    {  // not an SMF at all
        const std::string junk = "this is not a midi file";
        write_file(dir / "reject_garbage.mid", {junk.begin(), junk.end()});
    }
    {  // no melody name and no flute program
        RawMidi m;
        m.time_signatures = {{0, 4, 4}};
        m.tracks = {make_track("piano", 0, false, grid_notes(30, 0, 240, 60)),
                    make_track("bass", 33, false, grid_notes(30, 0, 240, 40)),
                    make_track("drums", 0, true, grid_notes(30, 0, 240, 38))};
        write_file(dir / "reject_no_melody.mid", popmag::midi::write_smf(m));
    }
    {  // 3/4 throughout: no 4/4 segment survives
        RawMidi m;
        m.time_signatures = {{0, 3, 4}};
        m.tracks = {make_track("melody", 73, false, grid_notes(30, 0, 240, 76)),
                    make_track("piano", 0, false, grid_notes(30, 0, 240, 60)),
                    make_track("bass", 33, false, grid_notes(30, 0, 240, 40))};
        write_file(dir / "reject_waltz.mid", popmag::midi::write_smf(m));
    }
    {  // accompaniment tracks below the 20-note threshold
        RawMidi m;
        m.time_signatures = {{0, 4, 4}};
        m.tracks = {make_track("melody", 73, false, grid_notes(25, 0, 240, 76)),
                    make_track("piano", 0, false, grid_notes(8, 0, 240, 60)),
                    make_track("bass", 33, false, grid_notes(9, 0, 240, 40))};
        write_file(dir / "reject_thin.mid", popmag::midi::write_smf(m));
    }
    {  // melody plus a single accompaniment: fewer than 3 tracks
        RawMidi m;
        m.time_signatures = {{0, 4, 4}};
        m.tracks = {make_track("melody", 73, false, grid_notes(30, 0, 240, 76)),
                    make_track("piano", 0, false, grid_notes(30, 0, 240, 60))};
        write_file(dir / "reject_duet.mid", popmag::midi::write_smf(m));
    }
}

}  // namespace corpusfix
