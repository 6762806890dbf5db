#include "popmag/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "popmag/chords.hpp"

namespace popmag {
namespace {

bool name_contains_melody(const std::string& name) {
    std::string lower(name.size(), '\0');
    std::transform(name.begin(), name.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return lower.find("melody") != std::string::npos;
}

double tempo_centre_bpm(TempoClass t) {
    switch (t) {
        case TempoClass::Low: return 80.0;
        case TempoClass::High: return 170.0;
        case TempoClass::Mid: break;
    }
    return 120.0;
}

// One contiguous stretch governed by a single time signature.
struct MeterRegion {
    int64_t lo = 0;
    int64_t hi = std::numeric_limits<int64_t>::max();
    int numerator = 4;
    int denominator = 4;
};

std::vector<MeterRegion> meter_regions(const midi::RawMidi& raw) {
    std::vector<MeterRegion> regions;
    int64_t cursor = 0;
    int num = 4, den = 4;  // SMF default meter before any event
    for (const auto& ts : raw.time_signatures) {
        if (ts.numerator == num && ts.denominator == den) continue;  // not a change
        if (ts.tick > cursor) regions.push_back({cursor, ts.tick, num, den});
        cursor = std::max<int64_t>(cursor, ts.tick);
        num = ts.numerator;
        den = ts.denominator;
    }
    regions.push_back({cursor, std::numeric_limits<int64_t>::max(), num, den});
    return regions;
}

}  // namespace

Role role_for_program(int program) {
    if (program >= 32 && program <= 39) return Role::Bass;
    if (program >= 24 && program <= 31) return Role::Guitar;
    if (program >= 0 && program <= 7) return Role::Piano;
    return Role::String;
}

std::optional<size_t> extract_melody(const midi::RawMidi& raw) {
    for (size_t i = 0; i < raw.tracks.size(); ++i)
        if (name_contains_melody(raw.tracks[i].name)) return i;
    for (size_t i = 0; i < raw.tracks.size(); ++i)
        if (!raw.tracks[i].is_drum && raw.tracks[i].program == 73) return i;
    return std::nullopt;
}

Score compress_tracks(const midi::RawMidi& raw, size_t melody_idx) {
    std::map<size_t, Role> assignment;
    size_t best_bass = raw.tracks.size();
    for (size_t i = 0; i < raw.tracks.size(); ++i) {
        const auto& t = raw.tracks[i];
        Role role;
        if (i == melody_idx) {
            role = Role::Melody;
        } else if (t.is_drum) {
            role = Role::Drum;
        } else {
            role = role_for_program(t.program);
        }
        if (role == Role::Bass) {
            if (best_bass == raw.tracks.size() ||
                t.notes.size() > raw.tracks[best_bass].notes.size())
                best_bass = i;
            continue;  // decided after the scan; losers stay unmapped
        }
        assignment.emplace(i, role);
    }
    if (best_bass < raw.tracks.size()) assignment.emplace(best_bass, Role::Bass);
    return quantize(raw, assignment);
}

bool filter_piece(Score& s) {
    std::erase_if(s.tracks, [](const auto& kv) { return kv.second.size() < 20; });
    const bool has_melody = s.tracks.contains(Role::Melody);
    const bool has_accomp =
        std::any_of(s.tracks.begin(), s.tracks.end(),
                    [](const auto& kv) { return kv.first != Role::Melody; });
    return s.tracks.size() >= 3 && has_melody && has_accomp;
}

std::vector<midi::RawMidi> segment(const midi::RawMidi& raw) {
    std::vector<midi::RawMidi> out;
    for (const MeterRegion& r : meter_regions(raw)) {
        if (r.numerator != 4 || r.denominator != 4) continue;
        midi::RawMidi seg;
        seg.ticks_per_beat = raw.ticks_per_beat;
        seg.tempo_bpm = raw.tempo_bpm;
        seg.time_signatures = {{0, 4, 4}};
        for (const auto& t : raw.tracks) {
            midi::RawTrack st;
            st.name = t.name;
            st.program = t.program;
            st.is_drum = t.is_drum;
            for (const auto& n : t.notes) {
                if (n.onset_tick < r.lo || n.onset_tick >= r.hi) continue;
                midi::RawNote sn = n;
                sn.onset_tick = n.onset_tick - r.lo;
                if (r.hi != std::numeric_limits<int64_t>::max())
                    sn.duration_ticks = std::min(n.duration_ticks, r.hi - n.onset_tick);
                st.notes.push_back(sn);
            }
            seg.tracks.push_back(std::move(st));
        }
        out.push_back(std::move(seg));
    }
    return out;
}

PipelineResult run_pipeline(const std::filesystem::path& corpus_dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(corpus_dir))
        for (const auto& e : fs::directory_iterator(corpus_dir))
            if (e.is_regular_file()) files.push_back(e.path());
    if (files.empty())
        throw empty_corpus("no input files in " + corpus_dir.string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) {
                  return a.filename().string() < b.filename().string();
              });

    PipelineResult result;
    for (const auto& path : files) {
        FileLogEntry entry;
        entry.file = path.filename().string();
        std::string skip_reason;
        auto note_skip = [&](const std::string& why) {
            if (skip_reason.empty()) skip_reason = why;
        };
        try {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw midi::invalid_input("cannot open file");
            std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                       std::istreambuf_iterator<char>()};
            const midi::RawMidi raw = midi::parse_smf(bytes);
            const auto segments = segment(raw);
            if (segments.empty()) note_skip("no 4/4 segment");
            for (const auto& seg : segments) {
                const auto melody_idx = extract_melody(seg);
                if (!melody_idx) {
                    note_skip("no melody track");
                    continue;
                }
                Score score;
                try {
                    score = compress_tracks(seg, *melody_idx);
                } catch (const empty_input&) {
                    note_skip("no notes after quantization");
                    continue;
                }
                if (!filter_piece(score)) {
                    note_skip("filtered out (thin or missing tracks)");
                    continue;
                }
                const ChordLane lane = infer_chords(score);
                score.chords.clear();
                for (size_t i = 0; i < lane.size(); ++i)
                    score.chords.push_back(
                        {static_cast<int>(i / 2), static_cast<int>(i % 2), lane[i]});
                score.normalize();
                result.pairs.push_back(split_condition_target(score, {Role::Melody}));
                ++entry.pieces;
                result.stats.bars += score.bars;
                result.stats.hours += score.bars * (240.0 / tempo_centre_bpm(score.tempo_class)) / 3600.0;
            }
        } catch (const std::exception& e) {
            note_skip(e.what());
        }
        entry.detail = entry.pieces > 0 ? "ok" : skip_reason;
        result.log.push_back(std::move(entry));
    }
    result.stats.pieces = static_cast<long>(result.pairs.size());
    if (result.pairs.empty())
        throw empty_corpus("no piece survived preprocessing (" +
                           std::to_string(files.size()) + " files examined)");
    return result;
}

void write_dataset(const PipelineResult& r, const std::filesystem::path& out_dir,
                   const std::string& header_json) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream cond(out_dir / "condition.jsonl", std::ios::binary);
        std::ofstream tgt(out_dir / "target.jsonl", std::ios::binary);
        if (!header_json.empty()) {
            cond << header_json << '\n';
            tgt << header_json << '\n';
        }
        for (const auto& [c, t] : r.pairs) {
            cond << to_jsonl(c) << '\n';
            tgt << to_jsonl(t) << '\n';
        }
    }
    {
        nlohmann::ordered_json j;
        if (!header_json.empty()) j = nlohmann::ordered_json::parse(header_json);
        j["pieces"] = r.stats.pieces;
        j["bars"] = r.stats.bars;
        j["hours"] = r.stats.hours;
        std::ofstream out(out_dir / "stats.json", std::ios::binary);
        out << j.dump(2) << '\n';
    }
    {
        std::ofstream out(out_dir / "files.log", std::ios::binary);
        if (!header_json.empty()) out << "# " << header_json << '\n';
        for (const auto& e : r.log)
            out << e.file << '\t' << e.pieces << '\t' << e.detail << '\n';
    }
}

std::vector<std::pair<TokenSeq, TokenSeq>> load_dataset(const std::filesystem::path& shard_dir) {
    std::ifstream cond(shard_dir / "condition.jsonl", std::ios::binary);
    std::ifstream tgt(shard_dir / "target.jsonl", std::ios::binary);
    if (!cond || !tgt)
        throw empty_corpus("missing shard files under " + shard_dir.string());
    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
    std::string cline, tline;
    bool first = true;
    while (std::getline(cond, cline)) {
        if (cline.empty()) continue;
        if (first) {
            first = false;
            // both shards may open with a provenance header line
            if (cline.find("\"format_version\"") != std::string::npos &&
                cline.find("\"tokens\"") == std::string::npos) {
                std::getline(tgt, tline);
                continue;
            }
        }
        if (!std::getline(tgt, tline))
            throw shard_error("target.jsonl is shorter than condition.jsonl");
        try {
            pairs.emplace_back(from_jsonl(cline), from_jsonl(tline));
        } catch (const std::exception& e) {
            throw shard_error("bad shard line " + std::to_string(pairs.size() + 1) + ": " +
                              e.what());
        }
    }
    if (std::getline(tgt, tline) && !tline.empty())
        throw shard_error("target.jsonl is longer than condition.jsonl");
    if (pairs.empty()) throw empty_corpus("empty shards under " + shard_dir.string());
    return pairs;
}

}  // namespace popmag
