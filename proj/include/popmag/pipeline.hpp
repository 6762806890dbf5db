#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "popmag/codec.hpp"
#include "popmag/midi.hpp"
#include "popmag/score.hpp"

namespace popmag {

// Raised by run_pipeline when no piece survives preprocessing, and by
// load_dataset when the shard files are absent or empty.
struct empty_corpus : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by load_dataset on malformed or inconsistent shard files.
struct shard_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Index of the melody track: the first track whose name contains "melody"
// (case-insensitive), else the first non-drum track with GM program 73
// (flute), else nullopt.
std::optional<size_t> extract_melody(const midi::RawMidi& raw);

// GM family of a melodic program: 32-39 Bass, 24-31 Guitar, 0-7 Piano,
// everything else String.
Role role_for_program(int program);

// Maps raw tracks onto the six roles and quantizes. melody_idx becomes
// Melody; drum channels become Drum; GM programs 32-39 Bass, 24-31 Guitar,
// 0-7 Piano, all other melodic programs String. When several tracks land on
// Bass only the one with the most notes is kept (lowest index on ties);
// other same-role tracks merge by note union inside quantize.
Score compress_tracks(const midi::RawMidi& raw, size_t melody_idx);

// Drops tracks with fewer than 20 notes from s, then reports whether the
// piece is usable: at least 3 tracks remain, Melody among them, and at
// least one non-melody track present.
bool filter_piece(Score& s);

// Splits at every time-signature change and keeps the 4/4 stretches. Note
// onsets are rebased to the segment start; notes sustaining across a
// boundary are truncated there; notes starting outside 4/4 stretches are
// dropped. A file without time-signature events counts as 4/4 throughout.
std::vector<midi::RawMidi> segment(const midi::RawMidi& raw);

struct CorpusStats {
    long pieces = 0;
    long bars = 0;
    double hours = 0.0;  // bar length taken from the tempo-class centre bpm
};

// One line of the preprocessing log: what happened to each input file.
struct FileLogEntry {
    std::string file;
    long pieces = 0;      // pairs this file contributed
    std::string detail;   // "ok" or the reason nothing survived
};

struct PipelineResult {
    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;  // (condition, target)
    std::vector<FileLogEntry> log;                     // sorted by file name
    CorpusStats stats;
};

// Runs parse -> segment -> melody extraction -> track compression ->
// filtration -> chord inference -> condition/target split over every
// regular file in corpus_dir (sorted by name). Files that fail any stage
// are logged and skipped. Throws empty_corpus when the directory holds no
// files or no piece survives.
PipelineResult run_pipeline(const std::filesystem::path& corpus_dir);

// Writes condition.jsonl, target.jsonl, stats.json and files.log under
// out_dir (created if needed). A non-empty header_json (one-line JSON object
// carrying provenance) leads both JSONL files, is merged into stats.json and
// opens files.log as a comment. Output bytes depend only on the arguments.
void write_dataset(const PipelineResult& r, const std::filesystem::path& out_dir,
                   const std::string& header_json = "");

// Reads condition.jsonl + target.jsonl back from a shard directory,
// skipping leading header lines.
std::vector<std::pair<TokenSeq, TokenSeq>> load_dataset(const std::filesystem::path& shard_dir);

}  // namespace popmag
