// popmag: command-line front end for the preprocessing pipeline, the MuMIDI
// codec, model training, accompaniment generation and objective evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 data error. The environment
// variable POPMAG_SEED overrides --seed. Every artifact embeds the run
// configuration and a format-version string; given the same inputs and seed,
// every subcommand writes identical bytes.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "popmag/checkpoint.hpp"
#include "popmag/chords.hpp"
#include "popmag/codec.hpp"
#include "popmag/metrics.hpp"
#include "popmag/midi.hpp"
#include "popmag/model.hpp"
#include "popmag/pipeline.hpp"
#include "popmag/render.hpp"
#include "popmag/runconfig.hpp"
#include "popmag/sampler.hpp"
#include "popmag/train.hpp"
#include "popmag/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace popmag;

namespace {

constexpr int kOk = 0;
constexpr int kUsageError = 1;
constexpr int kDataError = 2;

std::vector<uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw config_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<uint8_t>& bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw config_error("cannot open " + p.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// Condition sequences from either a MuMIDI JSONL file or an SMF. A MIDI file
// is quantized and reduced to its melody + chord condition side.
std::vector<TokenSeq> load_conditions(const fs::path& p) {
    if (p.extension() == ".jsonl") return read_jsonl_file(p);
    const midi::RawMidi raw = midi::parse_smf(read_bytes(p));
    Score s = score_from_midi(raw);
    if (s.chords.empty()) {
        const ChordLane lane = infer_chords(s);
        for (size_t i = 0; i < lane.size(); ++i)
            s.chords.push_back({int(i / 2), int(i % 2), lane[i]});
        s.normalize();
    }
    return {split_condition_target(s, {Role::Melody}).first};
}

int cmd_preprocess(const RunConfig& cfg) {
    const PipelineResult r = run_pipeline(cfg.inputs.at(0));
    write_dataset(r, cfg.out_path, artifact_header(cfg));
    ordered_json j = ordered_json::parse(artifact_header(cfg));
    j["pieces"] = r.stats.pieces;
    j["bars"] = r.stats.bars;
    j["hours"] = r.stats.hours;
    std::cout << j.dump() << '\n';
    return kOk;
}

int cmd_encode(const RunConfig& cfg) {
    const fs::path in = cfg.inputs.at(0);
    const fs::path out =
        cfg.out_path.empty() ? fs::path(in).replace_extension(".jsonl") : fs::path(cfg.out_path);
    const Score s = score_from_midi(midi::parse_smf(read_bytes(in)));
    write_jsonl_file(out, {encode(s)}, cfg);
    return kOk;
}

int cmd_decode(const RunConfig& cfg) {
    const fs::path in = cfg.inputs.at(0);
    const fs::path out =
        cfg.out_path.empty() ? fs::path(in).replace_extension(".mid") : fs::path(cfg.out_path);
    const std::vector<TokenSeq> pieces = read_jsonl_file(in);
    if (pieces.empty()) throw config_error(in.string() + ": no pieces to decode");
    for (size_t i = 0; i < pieces.size(); ++i) {
        fs::path target = out;
        if (pieces.size() > 1) {
            char suffix[16];
            std::snprintf(suffix, sizeof suffix, "_%03zu", i);
            target = out.parent_path() / (out.stem().string() + suffix + out.extension().string());
        }
        const midi::RawMidi m = render_score_to_midi(decode(pieces[i]));
        write_bytes(target, midi::write_smf(m, artifact_header(cfg)));
    }
    return kOk;
}

int cmd_stats(const RunConfig& cfg) {
    const auto pairs = load_dataset(cfg.inputs.at(0));
    double mumidi = 0.0, remi = 0.0, midilike = 0.0;
    for (const auto& [cond, tgt] : pairs) {
        const Score s = decode(tgt);
        mumidi += double(tgt.tokens.size());
        remi += double(encode_baseline(s, BaselineStyle::Remi));
        midilike += double(encode_baseline(s, BaselineStyle::MidiLike));
    }
    const double n = double(pairs.size());
    ordered_json j = ordered_json::parse(artifact_header(cfg));
    j["pieces"] = pairs.size();
    j["mean_target_len"] = {{"mumidi", mumidi / n},
                            {"remi", remi / n},
                            {"midi_like", midilike / n}};
    j["ratio"] = {{"mumidi_over_remi", mumidi / remi},
                  {"mumidi_over_midi_like", mumidi / midilike}};
    std::cout << j.dump() << '\n';
    return kOk;
}

int cmd_train(RunConfig cfg, const std::string& resume) {
    const auto raw_pairs = load_dataset(cfg.inputs.at(0));
    std::vector<std::pair<PreparedSeq, PreparedSeq>> data;
    data.reserve(raw_pairs.size());
    for (const auto& [c, t] : raw_pairs)
        data.emplace_back(prepare_sequence(c), prepare_sequence(t));

    Model m(cfg.model);
    AdamState state;
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        m = std::move(ck.model);
        state = std::move(ck.adam);
        cfg.model = m.cfg;  // provenance reflects the resumed architecture
    } else {
        m.init_params(cfg.seed);
    }
    const TrainResult result = train(m, data, cfg.train, state);
    const fs::path out = cfg.out_path.empty() ? fs::path("model.ckpt") : fs::path(cfg.out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_checkpoint(out.string(), m, &state, artifact_header(cfg));

    ordered_json j = ordered_json::parse(artifact_header(cfg));
    j["steps_run"] = result.steps_run;
    j["final_ppl"] = result.final_ppl;
    if (!result.loss_curve.empty()) {
        j["first_loss"] = result.loss_curve.front();
        j["last_loss"] = result.loss_curve.back();
    }
    std::cout << j.dump() << '\n';
    return kOk;
}

int cmd_generate(const RunConfig& cfg, int num) {
    const Checkpoint ck = load_checkpoint(cfg.inputs.at(0));
    const std::vector<TokenSeq> conditions = load_conditions(cfg.inputs.at(1));
    if (conditions.empty()) throw config_error(cfg.inputs.at(1) + ": no conditions");

    const fs::path stem = cfg.out_path.empty() ? fs::path("generated") : fs::path(cfg.out_path);
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

    std::vector<TokenSeq> outputs;
    const bool single = conditions.size() == 1 && num == 1;
    for (size_t i = 0; i < conditions.size(); ++i) {
        for (int j = 0; j < num; ++j) {
            SamplingConfig sc = cfg.sampling;
            sc.seed = cfg.seed + uint64_t(i) * uint64_t(num) + uint64_t(j);
            const TokenSeq tgt = generate(ck.model, conditions[i], sc);
            outputs.push_back(tgt);

            // listening render: condition and accompaniment merged
            const Score merged = merge_scores(decode(conditions[i]), decode(tgt));
            fs::path mid = stem;
            if (!single) {
                char suffix[24];
                std::snprintf(suffix, sizeof suffix, "_%03zu_%02d", i, j);
                mid += suffix;
            }
            mid += ".mid";
            write_bytes(mid, midi::write_smf(render_score_to_midi(merged), artifact_header(cfg)));
        }
    }
    fs::path jsonl = stem;
    jsonl += ".jsonl";
    write_jsonl_file(jsonl, outputs, cfg);
    return kOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& ckpt) {
    const std::vector<TokenSeq> gen_tok = read_jsonl_file(cfg.inputs.at(0));
    const std::vector<TokenSeq> ref_tok = read_jsonl_file(cfg.inputs.at(1));
    std::vector<Score> gen, ref;
    for (const TokenSeq& t : gen_tok) gen.push_back(decode(t));
    for (const TokenSeq& t : ref_tok) ref.push_back(decode(t));

    EvalReport report;
    if (!ckpt.empty()) {
        const Checkpoint ck = load_checkpoint(ckpt);
        report = evaluate_dataset(gen, ref, &ck.model, cfg.ppl_mode, cfg.ca_granularity);
    } else {
        report = evaluate_dataset(gen, ref, nullptr, cfg.ppl_mode, cfg.ca_granularity);
    }

    ordered_json j = ordered_json::parse(artifact_header(cfg));
    j.update(ordered_json::parse(report_to_json(report)));
    std::cout << j.dump() << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PopMAG-style multi-track accompaniment toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // --seed may follow the subcommand

    RunConfig cfg;
    app.add_option("--seed", cfg.seed, "Seed for every stochastic stage");

    std::string corpus_dir, shards_dir, in_file, ckpt_file, cond_file, gen_file, ref_file;
    std::string resume, eval_ckpt, config_file;
    int num = 1;

    auto* preprocess = app.add_subcommand("preprocess", "Turn an SMF corpus into JSONL shards");
    preprocess->add_option("dir", corpus_dir, "Corpus directory")->required();
    preprocess->add_option("--out", cfg.out_path, "Shard output directory")->required();

    auto* encode_cmd = app.add_subcommand("encode", "Quantize one SMF into MuMIDI JSONL");
    encode_cmd->add_option("midi", in_file, "Input .mid")->required();
    encode_cmd->add_option("--out", cfg.out_path, "Output .jsonl (default: input stem)");

    auto* decode_cmd = app.add_subcommand("decode", "Render MuMIDI JSONL back to SMF");
    decode_cmd->add_option("jsonl", in_file, "Input .jsonl")->required();
    decode_cmd->add_option("--out", cfg.out_path, "Output .mid (default: input stem)");

    auto* stats = app.add_subcommand("stats", "Average target lengths per representation");
    stats->add_option("shards", shards_dir, "Shard directory from preprocess")->required();

    auto* train_cmd = app.add_subcommand("train", "Teacher-forced training with checkpointing");
    train_cmd->add_option("shards", shards_dir, "Shard directory from preprocess")->required();
    train_cmd->add_option("--config", config_file, "RunConfig JSON file with model/train settings");
    train_cmd->add_option("--out", cfg.out_path, "Checkpoint path (default model.ckpt)");
    train_cmd->add_option("--resume", resume, "Continue from an existing checkpoint");
    train_cmd->add_option("--steps", cfg.train.steps, "Optimizer steps");
    train_cmd->add_option("--warmup", cfg.train.warmup, "Warmup steps");
    train_cmd->add_option("--lr-scale", cfg.train.lr_scale, "Learning-rate multiplier");
    train_cmd->add_option("--target-ppl", cfg.train.target_ppl, "Early-stop perplexity (0 = off)");
    train_cmd->add_option("--check-every", cfg.train.check_every, "Early-stop probe cadence");
    train_cmd->add_flag("--verbose", cfg.train.verbose, "Progress lines on stderr");
    train_cmd->add_option("--d-model", cfg.model.d_model, "Model width");
    train_cmd->add_option("--heads", cfg.model.heads, "Attention heads");
    train_cmd->add_option("--enc-layers", cfg.model.enc_layers, "Encoder layers");
    train_cmd->add_option("--dec-layers", cfg.model.dec_layers, "Decoder layers");
    train_cmd->add_option("--ffn-size", cfg.model.ffn_size, "Feed-forward width");
    train_cmd->add_option("--dropout", cfg.model.dropout, "Dropout rate");
    train_cmd->add_option("--mem-len", cfg.model.enc_mem_len, "Encoder memory rows");
    train_cmd->add_option("--dec-mem-len", cfg.model.dec_mem_len, "Decoder memory rows");
    train_cmd->add_option("--max-bars", cfg.model.max_bars, "Bar-embedding rows");

    auto* generate_cmd = app.add_subcommand("generate", "Sample accompaniments for a condition");
    generate_cmd->add_option("ckpt", ckpt_file, "Trained checkpoint")->required();
    generate_cmd->add_option("condition", cond_file, "Condition (.jsonl or .mid)")->required();
    generate_cmd->add_option("--out", cfg.out_path, "Output stem (default: generated)");
    generate_cmd->add_option("--num", num, "Samples per condition")->check(CLI::PositiveNumber);
    generate_cmd->add_option("--top-k", cfg.sampling.top_k, "Top-k cut (<= 0: full)");
    generate_cmd->add_option("--temperature", cfg.sampling.temperature,
                             "Softmax temperature (<= 0: argmax)");
    generate_cmd->add_option("--max-bars", cfg.sampling.max_bars, "Bar cap per sample");
    generate_cmd->add_option("--max-tokens", cfg.sampling.max_tokens, "Token cap per sample");
    generate_cmd->add_option("--max-retries", cfg.sampling.max_retries,
                             "Unmasked-mode resample budget");
    bool no_mask = false;
    generate_cmd->add_flag("--no-grammar-mask", no_mask, "Sample from unmasked distributions");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Objective metrics of generated pieces");
    evaluate_cmd->add_option("generated", gen_file, "Generated JSONL")->required();
    evaluate_cmd->add_option("reference", ref_file, "Reference JSONL")->required();
    evaluate_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint for the PPL column");
    evaluate_cmd
        ->add_option("--ppl-mode",
                     [&cfg](const CLI::results_t& vals) {
                         if (vals.at(0) == "per_step") {
                             cfg.ppl_mode = PplMode::PerStep;
                         } else if (vals.at(0) == "per_head") {
                             cfg.ppl_mode = PplMode::PerHead;
                         } else {
                             return false;
                         }
                         return true;
                     },
                     "per_step | per_head")
        ->expected(1);
    evaluate_cmd
        ->add_option("--ca-granularity",
                     [&cfg](const CLI::results_t& vals) {
                         if (vals.at(0) == "half_bar") {
                             cfg.ca_granularity = ChordGranularity::HalfBar;
                         } else if (vals.at(0) == "bar") {
                             cfg.ca_granularity = ChordGranularity::Bar;
                         } else {
                             return false;
                         }
                         return true;
                     },
                     "half_bar | bar")
        ->expected(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsageError;
    }

    // --config seeds the defaults; flags given explicitly on the line win.
    if (!config_file.empty()) {
        try {
            std::ifstream in(config_file);
            if (!in) throw config_error("cannot open " + config_file);
            const std::string text{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
            const RunConfig fc = runconfig_from_json(text);
            CLI::App& tc = *train_cmd;
            if (!tc.count("--steps")) cfg.train.steps = fc.train.steps;
            if (!tc.count("--warmup")) cfg.train.warmup = fc.train.warmup;
            if (!tc.count("--lr-scale")) cfg.train.lr_scale = fc.train.lr_scale;
            if (!tc.count("--target-ppl")) cfg.train.target_ppl = fc.train.target_ppl;
            if (!tc.count("--check-every")) cfg.train.check_every = fc.train.check_every;
            if (!tc.count("--d-model")) cfg.model.d_model = fc.model.d_model;
            if (!tc.count("--heads")) cfg.model.heads = fc.model.heads;
            if (!tc.count("--enc-layers")) cfg.model.enc_layers = fc.model.enc_layers;
            if (!tc.count("--dec-layers")) cfg.model.dec_layers = fc.model.dec_layers;
            if (!tc.count("--ffn-size")) cfg.model.ffn_size = fc.model.ffn_size;
            if (!tc.count("--dropout")) cfg.model.dropout = fc.model.dropout;
            if (!tc.count("--mem-len")) cfg.model.enc_mem_len = fc.model.enc_mem_len;
            if (!tc.count("--dec-mem-len")) cfg.model.dec_mem_len = fc.model.dec_mem_len;
            if (!tc.count("--max-bars")) cfg.model.max_bars = fc.model.max_bars;
            if (!app.count("--seed")) cfg.seed = fc.seed;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kDataError;
        }
    }

    if (const char* env = std::getenv("POPMAG_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            std::cerr << "error: POPMAG_SEED must be an unsigned integer, got \"" << env << "\"\n";
            return kUsageError;
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.sampling.seed = cfg.seed;
    cfg.sampling.grammar_mask = !no_mask;

    try {
        if (app.got_subcommand(preprocess)) {
            cfg.command = "preprocess";
            cfg.inputs = {corpus_dir};
            return cmd_preprocess(cfg);
        }
        if (app.got_subcommand(encode_cmd)) {
            cfg.command = "encode";
            cfg.inputs = {in_file};
            return cmd_encode(cfg);
        }
        if (app.got_subcommand(decode_cmd)) {
            cfg.command = "decode";
            cfg.inputs = {in_file};
            return cmd_decode(cfg);
        }
        if (app.got_subcommand(stats)) {
            cfg.command = "stats";
            cfg.inputs = {shards_dir};
            return cmd_stats(cfg);
        }
        if (app.got_subcommand(train_cmd)) {
            cfg.command = "train";
            cfg.inputs = {shards_dir};
            cfg.model.validate();
            return cmd_train(cfg, resume);
        }
        if (app.got_subcommand(generate_cmd)) {
            cfg.command = "generate";
            cfg.inputs = {ckpt_file, cond_file};
            return cmd_generate(cfg, num);
        }
        if (app.got_subcommand(evaluate_cmd)) {
            cfg.command = "evaluate";
            cfg.inputs = {gen_file, ref_file};
            return cmd_evaluate(cfg, eval_ckpt);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    std::cerr << "error: no subcommand selected\n";
    return kUsageError;
}
