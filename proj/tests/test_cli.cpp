// End-to-end checks of the popmag executable: every subcommand is exercised
// through a real process, artifacts are re-read with the library, and the
// exit-code contract (0 ok, 1 usage, 2 data) is pinned down.

#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "corpus_fixtures.hpp"
#include "generators.hpp"
#include "popmag/checkpoint.hpp"
#include "popmag/codec.hpp"
#include "popmag/midi.hpp"
#include "popmag/render.hpp"
#include "popmag/runconfig.hpp"
#include "popmag/score.hpp"

using namespace popmag;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("popmag_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CmdResult {
    int status = -1;
    std::string out;
    std::string err;
};

CmdResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const fs::path errfile =
        fs::temp_directory_path() / ("popmag_cli_err_" + std::to_string(counter++) + ".txt");
    std::string cmd = env.empty() ? "" : env + " ";
    cmd += std::string(POPMAG_CLI_PATH) + " " + args + " 2>" + errfile.string();

    CmdResult r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int rc = pclose(p);
    r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;

    std::ifstream in(errfile);
    r.err.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    fs::remove(errfile);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// SMF cannot carry two overlapping notes of the same pitch on one channel, so
// fixtures meant to survive byte-level trips drop the later note of any such
// pair first.
void strip_same_pitch_overlaps(Score& s) {
    for (auto& [role, notes] : s.tracks) {
        std::sort(notes.begin(), notes.end(), [](const QNote& a, const QNote& b) {
            return std::tie(a.pitch_or_drum, a.onset_step) <
                   std::tie(b.pitch_or_drum, b.onset_step);
        });
        std::vector<QNote> keep;
        for (const QNote& n : notes) {
            if (!keep.empty() && keep.back().pitch_or_drum == n.pitch_or_drum &&
                n.onset_step < keep.back().onset_step + keep.back().dur_steps)
                continue;
            keep.push_back(n);
        }
        notes = std::move(keep);
    }
    s.normalize();
}

}  // namespace

TEST_CASE("cli: preprocess writes deterministic shards and a stats line") {
    TempDir tmp;
    const fs::path corpus = tmp.path / "corpus";
    fs::create_directories(corpus);
    corpusfix::write_corpus(corpus, 6);

    const fs::path shards = tmp.path / "shards";
    const CmdResult r =
        run_cli("preprocess " + corpus.string() + " --out " + shards.string() + " --seed 3");
    REQUIRE(r.status == 0);

    const json j = json::parse(r.out);
    CHECK(j.at("format_version").get<std::string>() == kFormatVersion);
    CHECK(j.at("run_config").at("command").get<std::string>() == "preprocess");
    CHECK(j.at("pieces").get<int>() > 0);
    CHECK(j.at("bars").get<long>() > 0);
    CHECK(j.at("hours").get<double>() > 0.0);

    for (const char* name : {"condition.jsonl", "target.jsonl", "stats.json", "files.log"})
        CHECK(fs::exists(shards / name));

    // the shard header carries the same run config
    std::ifstream cond(shards / "condition.jsonl");
    std::string first;
    std::getline(cond, first);
    CHECK(json::parse(first).at("format_version").get<std::string>() == kFormatVersion);

    // byte-identical when the exact invocation is repeated
    std::map<std::string, std::string> first_bytes;
    for (const char* name : {"condition.jsonl", "target.jsonl", "stats.json", "files.log"})
        first_bytes[name] = slurp(shards / name);
    fs::remove_all(shards);
    const CmdResult r2 =
        run_cli("preprocess " + corpus.string() + " --out " + shards.string() + " --seed 3");
    REQUIRE(r2.status == 0);
    CHECK(r2.out == r.out);
    for (const auto& [name, bytes] : first_bytes) CHECK(slurp(shards / name) == bytes);
}

TEST_CASE("cli: encode and decode invert each other at the token level") {
    TempDir tmp;
    std::mt19937_64 rng(808);
    Score s = testgen::pop_score(rng, 4);
    strip_same_pitch_overlaps(s);

    const fs::path input = tmp.path / "piece.mid";
    {
        const std::vector<uint8_t> bytes = midi::write_smf(render_score_to_midi(s));
        std::ofstream out(input, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    const TokenSeq expect = encode(score_from_midi(midi::parse_smf(
        std::vector<uint8_t>{slurp(input).begin(), slurp(input).end()})));

    const fs::path enc = tmp.path / "piece.jsonl";
    REQUIRE(run_cli("encode " + input.string() + " --out " + enc.string()).status == 0);
    const std::vector<TokenSeq> encoded = read_jsonl_file(enc);
    REQUIRE(encoded.size() == 1);
    CHECK(encoded[0] == expect);

    const fs::path dec = tmp.path / "decoded.mid";
    REQUIRE(run_cli("decode " + enc.string() + " --out " + dec.string()).status == 0);
    const std::string bytes = slurp(dec);
    const TokenSeq back = encode(score_from_midi(
        midi::parse_smf(std::vector<uint8_t>{bytes.begin(), bytes.end()})));
    CHECK(back == encoded[0]);
}

TEST_CASE("cli: stats reports per-representation target lengths") {
    TempDir tmp;
    const fs::path corpus = tmp.path / "corpus";
    fs::create_directories(corpus);
    corpusfix::write_corpus(corpus, 5);
    const fs::path shards = tmp.path / "shards";
    REQUIRE(run_cli("preprocess " + corpus.string() + " --out " + shards.string()).status == 0);

    const CmdResult r = run_cli("stats " + shards.string());
    REQUIRE(r.status == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("pieces").get<int>() > 0);
    const double mumidi = j.at("mean_target_len").at("mumidi").get<double>();
    const double remi = j.at("mean_target_len").at("remi").get<double>();
    const double midi_like = j.at("mean_target_len").at("midi_like").get<double>();
    CHECK(mumidi > 0.0);
    CHECK(mumidi < remi);
    CHECK(mumidi < midi_like);
    CHECK(j.at("ratio").at("mumidi_over_remi").get<double>() ==
          doctest::Approx(mumidi / remi));
}

TEST_CASE("cli: train, generate and evaluate round out the workflow") {
    TempDir tmp;
    const fs::path corpus = tmp.path / "corpus";
    fs::create_directories(corpus);
    corpusfix::write_corpus(corpus, 4);
    const fs::path shards = tmp.path / "shards";
    REQUIRE(run_cli("preprocess " + corpus.string() + " --out " + shards.string()).status == 0);

    // --- train a deliberately tiny model for a few steps
    const fs::path ckpt = tmp.path / "tiny.ckpt";
    const std::string tiny =
        " --d-model 16 --heads 2 --enc-layers 1 --dec-layers 1 --ffn-size 32"
        " --mem-len 16 --dec-mem-len 16";
    const CmdResult tr = run_cli("train " + shards.string() + " --out " + ckpt.string() +
                                 " --steps 3 --warmup 2 --seed 5" + tiny);
    REQUIRE(tr.status == 0);
    const json tj = json::parse(tr.out);
    CHECK(tj.at("steps_run").get<int>() == 3);
    CHECK(tj.at("final_ppl").get<double>() > 1.0);

    const Checkpoint loaded = load_checkpoint(ckpt.string());
    CHECK(loaded.model.cfg.d_model == 16);
    CHECK(json::parse(loaded.run_json).at("format_version").get<std::string>() ==
          kFormatVersion);

    // --- one condition, two samples
    std::mt19937_64 rng(1234);
    Score cond_src = testgen::pop_score(rng, 3);
    strip_same_pitch_overlaps(cond_src);
    const TokenSeq condition = split_condition_target(cond_src, {Role::Melody}).first;
    const fs::path cond_path = tmp.path / "cond.jsonl";
    write_jsonl_file(cond_path, {condition}, RunConfig{});

    const fs::path stem = tmp.path / "gen" / "sample";
    const std::string gen_args = "generate " + ckpt.string() + " " + cond_path.string() +
                                 " --out " + stem.string() +
                                 " --num 2 --max-bars 4 --max-tokens 400";
    REQUIRE(run_cli(gen_args + " --seed 11").status == 0);

    const fs::path gen_jsonl = tmp.path / "gen" / "sample.jsonl";
    REQUIRE(fs::exists(gen_jsonl));
    CHECK(fs::exists(tmp.path / "gen" / "sample_000_00.mid"));
    CHECK(fs::exists(tmp.path / "gen" / "sample_000_01.mid"));

    const std::vector<TokenSeq> samples = read_jsonl_file(gen_jsonl);
    REQUIRE(samples.size() == 2);
    for (const TokenSeq& t : samples) {
        const Score g = decode(t);  // parses as a valid piece
        CHECK(g.bars <= 4);
        CHECK(g.chords.empty());  // pure model output: accompaniment only
    }

    // --- same seed, same bytes; env override beats the flag
    const std::string first_bytes = slurp(gen_jsonl);
    fs::remove_all(tmp.path / "gen");
    REQUIRE(run_cli(gen_args + " --seed 11").status == 0);
    CHECK(slurp(gen_jsonl) == first_bytes);

    fs::remove_all(tmp.path / "gen");
    REQUIRE(run_cli(gen_args + " --seed 22").status == 0);
    const std::string seed22_bytes = slurp(gen_jsonl);

    fs::remove_all(tmp.path / "gen");
    REQUIRE(run_cli(gen_args + " --seed 11", "POPMAG_SEED=22").status == 0);
    CHECK(slurp(gen_jsonl) == seed22_bytes);

    // --- a dataset evaluated against itself is perfect
    const CmdResult ev =
        run_cli("evaluate " + (shards / "target.jsonl").string() + " " +
                (shards / "target.jsonl").string());
    REQUIRE(ev.status == 0);
    const json ej = json::parse(ev.out);
    CHECK(ej.at("ca").get<double>() == 1.0);
    CHECK(ej.at("ppl").get<double>() == 1.0);
    for (const char* k : {"d_p", "d_v", "d_d", "d_ioi"})
        CHECK(ej.at(k).get<double>() == doctest::Approx(1.0).epsilon(1e-6));

    // --- with a checkpoint the PPL column is a real perplexity
    const CmdResult ev2 =
        run_cli("evaluate " + gen_jsonl.string() + " " + gen_jsonl.string() + " --ckpt " +
                ckpt.string() + " --ppl-mode per_head");
    REQUIRE(ev2.status == 0);
    CHECK(json::parse(ev2.out).at("ppl").get<double>() > 1.0);
}

TEST_CASE("cli: exit codes distinguish usage from data errors") {
    TempDir tmp;

    SUBCASE("missing required argument") {
        const CmdResult r = run_cli("encode");
        CHECK(r.status == 1);
        CHECK(r.err.find("midi") != std::string::npos);
    }
    SUBCASE("unknown flag names the offender") {
        const CmdResult r = run_cli("stats somewhere --frobnicate");
        CHECK(r.status == 1);
        CHECK(r.err.find("--frobnicate") != std::string::npos);
    }
    SUBCASE("bad seed value") {
        const CmdResult r = run_cli("--seed banana stats somewhere");
        CHECK(r.status == 1);
    }
    SUBCASE("bad env seed") {
        const CmdResult r = run_cli("stats somewhere", "POPMAG_SEED=banana");
        CHECK(r.status == 1);
        CHECK(r.err.find("POPMAG_SEED") != std::string::npos);
    }
    SUBCASE("missing input file is a data error") {
        CHECK(run_cli("encode " + (tmp.path / "absent.mid").string()).status == 2);
        CHECK(run_cli("stats " + (tmp.path / "absent_dir").string()).status == 2);
        CHECK(run_cli("decode " + (tmp.path / "absent.jsonl").string()).status == 2);
    }
    SUBCASE("corrupt midi is a data error with the file name") {
        const fs::path bad = tmp.path / "junk.mid";
        std::ofstream(bad) << "this is not midi";
        const CmdResult r = run_cli("encode " + bad.string());
        CHECK(r.status == 2);
        CHECK_FALSE(r.err.empty());
    }
}
