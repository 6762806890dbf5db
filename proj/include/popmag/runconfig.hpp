#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "popmag/metrics.hpp"
#include "popmag/model.hpp"
#include "popmag/sampler.hpp"
#include "popmag/token.hpp"
#include "popmag/train.hpp"

namespace popmag {

// Version string stamped into every artifact next to the run config.
inline constexpr const char* kFormatVersion = "popmag-v1";

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything that determines a run's output. Serialized verbatim into each
// artifact (JSON/JSONL headers, SMF text meta, checkpoint run metadata) so
// results stay reproducible from the artifact alone.
struct RunConfig {
    uint64_t seed = 0;
    std::string command;              // subcommand, for provenance
    std::vector<std::string> inputs;  // positional arguments as given
    std::string out_path;
    ModelConfig model{};
    TrainConfig train{};
    SamplingConfig sampling{};
    PplMode ppl_mode = PplMode::PerStep;
    ChordGranularity ca_granularity = ChordGranularity::HalfBar;
};

std::string runconfig_to_json(const RunConfig& c);
RunConfig runconfig_from_json(const std::string& text);  // throws config_error

// One-line JSON object {"format_version": ..., "run_config": ...} placed at
// the head of JSONL artifacts and embedded into JSON reports.
std::string artifact_header(const RunConfig& c);

// Writes a header line followed by one piece per line.
void write_jsonl_file(const std::filesystem::path& path, const std::vector<TokenSeq>& pieces,
                      const RunConfig& c);

// Reads pieces back, skipping a leading artifact header if present. Throws
// config_error with the file name and line number on malformed lines.
std::vector<TokenSeq> read_jsonl_file(const std::filesystem::path& path);

}  // namespace popmag
