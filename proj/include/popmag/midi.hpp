#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace popmag::midi {

/// A matched note: onset in ticks, MIDI pitch/velocity, duration in ticks.
struct RawNote {
    int64_t onset_tick = 0;
    int pitch = 0;        // 0..127
    int velocity = 0;     // 1..127
    int64_t duration_ticks = 1;

    bool operator==(const RawNote&) const = default;
    auto operator<=>(const RawNote&) const = default;
};

struct RawTrack {
    std::string name;
    int program = 0;      // GM program, 0..127
    bool is_drum = false; // channel-10 flag
    std::vector<RawNote> notes;

    bool operator==(const RawTrack&) const = default;
};

struct TimeSignature {
    int64_t tick = 0;
    int numerator = 4;
    int denominator = 4;

    bool operator==(const TimeSignature&) const = default;
};

/// Unquantized multi-track piece, the common ground between SMF bytes and
/// the tokenizer. Immutable by convention once built.
struct RawMidi {
    int ticks_per_beat = 480;
    double tempo_bpm = 120.0;                  // first set-tempo event, 120 if absent
    std::vector<TimeSignature> time_signatures; // sorted strictly by tick
    std::vector<RawTrack> tracks;

    bool operator==(const RawMidi&) const = default;
};

struct midi_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct malformed_header : midi_error {
    using midi_error::midi_error;
};
struct unsupported_division : midi_error {
    using midi_error::midi_error;
};
struct truncated_chunk : midi_error {
    using midi_error::midi_error;
};
struct running_status_violation : midi_error {
    using midi_error::midi_error;
};
struct invalid_input : midi_error {
    using midi_error::midi_error;
};

/// Parses an SMF (format 0 or 1, tick division). Note-on/off pairs are matched
/// into RawNotes; a note-on with velocity 0 counts as note-off; unmatched
/// note-ons are closed at end of track. Each (chunk, channel) pair with notes
/// becomes one RawTrack, so format-0 files split per channel. Only the first
/// set-tempo event defines tempo_bpm.
RawMidi parse_smf(std::span<const uint8_t> bytes);

/// Serializes to SMF format 1: a conductor track carrying tempo and time
/// signatures, then one chunk per RawTrack. Drum tracks go to channel 9,
/// others round-robin over the remaining channels. The exact tempo_bpm is
/// also stored in a sequencer-specific meta event so that parse_smf
/// round-trips it bit-exactly (the standard 3-byte tempo field only holds
/// integer microseconds per beat).
std::vector<uint8_t> write_smf(const RawMidi& m);

/// Attaches a free-form text payload (meta 0x01 on the conductor track) to an
/// already-serialized file. Used by the CLI to embed run configuration.
std::vector<uint8_t> write_smf(const RawMidi& m, const std::string& text_meta);

}  // namespace popmag::midi
