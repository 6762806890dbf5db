#include "popmag/runconfig.hpp"

#include <fstream>

#include <json.hpp>

#include "popmag/codec.hpp"

namespace popmag {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string_view ppl_mode_name(PplMode m) {
    return m == PplMode::PerHead ? "per_head" : "per_step";
}

std::string_view granularity_name(ChordGranularity g) {
    return g == ChordGranularity::Bar ? "bar" : "half_bar";
}

}  // namespace

std::string runconfig_to_json(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["command"] = c.command;
    j["inputs"] = c.inputs;
    j["out"] = c.out_path;
    j["model"] = json::parse(config_to_json(c.model));
    j["train"] = {{"steps", c.train.steps},
                  {"lr_scale", c.train.lr_scale},
                  {"warmup", c.train.warmup},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"seed", c.train.seed},
                  {"target_ppl", c.train.target_ppl},
                  {"check_every", c.train.check_every}};
    j["sampling"] = {{"top_k", c.sampling.top_k},
                     {"temperature", c.sampling.temperature},
                     {"max_bars", c.sampling.max_bars},
                     {"max_tokens", c.sampling.max_tokens},
                     {"grammar_mask", c.sampling.grammar_mask},
                     {"max_retries", c.sampling.max_retries},
                     {"seed", c.sampling.seed}};
    j["metrics"] = {{"ppl_mode", ppl_mode_name(c.ppl_mode)},
                    {"ca_granularity", granularity_name(c.ca_granularity)}};
    return j.dump();
}

RunConfig runconfig_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw config_error("run config must be a JSON object");
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.command = j.value("command", c.command);
        c.inputs = j.value("inputs", c.inputs);
        c.out_path = j.value("out", c.out_path);
        if (j.contains("model")) c.model = config_from_json(j.at("model").dump());
        if (j.contains("train")) {
            const json& t = j.at("train");
            c.train.steps = t.value("steps", c.train.steps);
            c.train.lr_scale = t.value("lr_scale", c.train.lr_scale);
            c.train.warmup = t.value("warmup", c.train.warmup);
            c.train.beta1 = t.value("beta1", c.train.beta1);
            c.train.beta2 = t.value("beta2", c.train.beta2);
            c.train.eps = t.value("eps", c.train.eps);
            c.train.seed = t.value("seed", c.train.seed);
            c.train.target_ppl = t.value("target_ppl", c.train.target_ppl);
            c.train.check_every = t.value("check_every", c.train.check_every);
        }
        if (j.contains("sampling")) {
            const json& s = j.at("sampling");
            c.sampling.top_k = s.value("top_k", c.sampling.top_k);
            c.sampling.temperature = s.value("temperature", c.sampling.temperature);
            c.sampling.max_bars = s.value("max_bars", c.sampling.max_bars);
            c.sampling.max_tokens = s.value("max_tokens", c.sampling.max_tokens);
            c.sampling.grammar_mask = s.value("grammar_mask", c.sampling.grammar_mask);
            c.sampling.max_retries = s.value("max_retries", c.sampling.max_retries);
            c.sampling.seed = s.value("seed", c.sampling.seed);
        }
        if (j.contains("metrics")) {
            const json& m = j.at("metrics");
            const std::string pm = m.value("ppl_mode", std::string("per_step"));
            if (pm == "per_step") {
                c.ppl_mode = PplMode::PerStep;
            } else if (pm == "per_head") {
                c.ppl_mode = PplMode::PerHead;
            } else {
                throw config_error("unknown ppl_mode: " + pm);
            }
            const std::string g = m.value("ca_granularity", std::string("half_bar"));
            if (g == "half_bar") {
                c.ca_granularity = ChordGranularity::HalfBar;
            } else if (g == "bar") {
                c.ca_granularity = ChordGranularity::Bar;
            } else {
                throw config_error("unknown ca_granularity: " + g);
            }
        }
    } catch (const json::exception& e) {
        throw config_error(std::string("run config field has the wrong type: ") + e.what());
    }
    return c;
}

std::string artifact_header(const RunConfig& c) {
    ordered_json j;
    j["format_version"] = kFormatVersion;
    j["run_config"] = json::parse(runconfig_to_json(c));
    return j.dump();
}

void write_jsonl_file(const std::filesystem::path& path, const std::vector<TokenSeq>& pieces,
                      const RunConfig& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open " + path.string() + " for writing");
    out << artifact_header(c) << '\n';
    for (const TokenSeq& p : pieces) out << to_jsonl(p) << '\n';
}

std::vector<TokenSeq> read_jsonl_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open " + path.string());
    std::vector<TokenSeq> pieces;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            // a leading artifact header has no "tokens" field
            try {
                const json j = json::parse(line);
                if (j.is_object() && !j.contains("tokens") && j.contains("format_version"))
                    continue;
            } catch (const json::exception&) {
                // fall through: let from_jsonl report the malformed line
            }
        }
        try {
            pieces.push_back(from_jsonl(line));
        } catch (const std::exception& e) {
            throw config_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return pieces;
}

}  // namespace popmag
