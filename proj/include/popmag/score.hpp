#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

namespace popmag {

// Instrument roles in canonical sequence order. Within one position group the
// encoder always emits track groups in this order.
enum class Role : uint8_t { Melody = 0, Drum, Piano, String, Guitar, Bass };

inline constexpr std::array<Role, 6> kRoles = {Role::Melody, Role::Drum,   Role::Piano,
                                               Role::String, Role::Guitar, Role::Bass};
inline constexpr int kNumRoles = 6;

// Whole-piece tempo class (boundaries: < 90 low, 90..160 mid, > 160 high).
enum class TempoClass : uint8_t { Low = 0, Mid, High };

enum class ChordQuality : uint8_t {
    Major = 0,
    Minor,
    Diminished,
    Augmented,
    Major7,
    Minor7,
    HalfDiminished
};
inline constexpr int kNumQualities = 7;
inline constexpr int kNumRoots = 12;
inline constexpr int kNumChords = kNumRoots * kNumQualities;  // 84

struct ChordSymbol {
    int root = 0;  // 0 = C .. 11 = B
    ChordQuality quality = ChordQuality::Major;

    // Dense index in [0, 84): root-major blocks of 7 qualities.
    constexpr int index() const { return root * kNumQualities + int(quality); }
    static constexpr ChordSymbol from_index(int i) {
        return ChordSymbol{i / kNumQualities, ChordQuality(i % kNumQualities)};
    }
    auto operator<=>(const ChordSymbol&) const = default;
};

// Pitch-class offsets from the root for each quality.
const std::vector<int>& quality_intervals(ChordQuality q);

// A quantized note. onset_step is global: bar = onset_step / 32,
// in-bar position = onset_step % 32 + 1.
struct QNote {
    int onset_step = 0;
    int pitch_or_drum = 1;  // 1..128 (MIDI pitch + 1; drum sound index for Drum role)
    int vel_level = 1;      // 1..32
    int dur_steps = 1;      // 1..32
    auto operator<=>(const QNote&) const = default;
};

// Chord annotation: one symbol per half-bar (half 0 covers steps 0..15,
// half 1 covers steps 16..31).
struct ChordEntry {
    int bar = 0;
    int half = 0;  // 0 or 1
    ChordSymbol chord;
    auto operator<=>(const ChordEntry&) const = default;
};

struct Score {
    TempoClass tempo_class = TempoClass::Mid;
    int bars = 0;
    std::map<Role, std::vector<QNote>> tracks;
    std::vector<ChordEntry> chords;

    // Canonical form: notes sorted, empty roles dropped, chords sorted by
    // (bar, half) keeping the last entry on duplicates.
    void normalize();
    bool operator==(const Score&) const = default;
};

inline constexpr int kStepsPerBar = 32;
inline constexpr int kStepsPerHalfBar = 16;

std::string_view role_name(Role r);                          // "melody", "drum", ...
std::optional<Role> role_from_name(std::string_view name);   // lowercase names
std::string_view quality_name(ChordQuality q);               // "major", "half_diminished", ...
std::optional<ChordQuality> quality_from_name(std::string_view name);
std::string_view root_name(int root);                        // "C", "C#", ..., "B"
std::optional<int> root_from_name(std::string_view name);
std::string_view tempo_class_name(TempoClass t);             // "low", "mid", "high"
std::optional<TempoClass> tempo_class_from_name(std::string_view name);

TempoClass tempo_class_of(double bpm);

}  // namespace popmag
