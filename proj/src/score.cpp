#include "popmag/score.hpp"

#include <algorithm>

namespace popmag {

namespace {
constexpr std::string_view kRoleNames[] = {"melody", "drum", "piano", "string", "guitar", "bass"};
constexpr std::string_view kQualityNames[] = {"major",  "minor",  "diminished",     "augmented",
                                              "major7", "minor7", "half_diminished"};
constexpr std::string_view kRootNames[] = {"C", "C#", "D", "D#", "E",  "F",
                                           "F#", "G", "G#", "A", "A#", "B"};
constexpr std::string_view kTempoNames[] = {"low", "mid", "high"};
}  // namespace

const std::vector<int>& quality_intervals(ChordQuality q) {
    static const std::vector<int> tables[kNumQualities] = {
        {0, 4, 7},      // major
        {0, 3, 7},      // minor
        {0, 3, 6},      // diminished
        {0, 4, 8},      // augmented
        {0, 4, 7, 11},  // major7
        {0, 3, 7, 10},  // minor7
        {0, 3, 6, 10},  // half_diminished
    };
    return tables[int(q)];
}

void Score::normalize() {
    for (auto it = tracks.begin(); it != tracks.end();) {
        if (it->second.empty()) {
            it = tracks.erase(it);
        } else {
            std::sort(it->second.begin(), it->second.end());
            ++it;
        }
    }
    std::stable_sort(chords.begin(), chords.end(),
                     [](const ChordEntry& a, const ChordEntry& b) {
                         return std::tie(a.bar, a.half) < std::tie(b.bar, b.half);
                     });
    std::vector<ChordEntry> deduped;
    for (const auto& c : chords) {
        if (!deduped.empty() && deduped.back().bar == c.bar && deduped.back().half == c.half)
            deduped.back() = c;
        else
            deduped.push_back(c);
    }
    chords = std::move(deduped);
}

std::string_view role_name(Role r) { return kRoleNames[int(r)]; }

std::optional<Role> role_from_name(std::string_view name) {
    for (int i = 0; i < kNumRoles; ++i)
        if (kRoleNames[i] == name) return Role(i);
    return std::nullopt;
}

std::string_view quality_name(ChordQuality q) { return kQualityNames[int(q)]; }

std::optional<ChordQuality> quality_from_name(std::string_view name) {
    for (int i = 0; i < kNumQualities; ++i)
        if (kQualityNames[i] == name) return ChordQuality(i);
    return std::nullopt;
}

std::string_view root_name(int root) { return kRootNames[root]; }

std::optional<int> root_from_name(std::string_view name) {
    for (int i = 0; i < kNumRoots; ++i)
        if (kRootNames[i] == name) return i;
    return std::nullopt;
}

std::string_view tempo_class_name(TempoClass t) { return kTempoNames[int(t)]; }

std::optional<TempoClass> tempo_class_from_name(std::string_view name) {
    for (int i = 0; i < 3; ++i)
        if (kTempoNames[i] == name) return TempoClass(i);
    return std::nullopt;
}

TempoClass tempo_class_of(double bpm) {
    if (bpm < 90.0) return TempoClass::Low;
    if (bpm <= 160.0) return TempoClass::Mid;
    return TempoClass::High;
}

}  // namespace popmag
