#include <doctest.h>

#include <cmath>
#include <random>

#include "chord_oracle.hpp"
#include "generators.hpp"
#include "popmag/chords.hpp"

using namespace popmag;
using testgen::pick;
using testgen::pick_in;

using chordfix::exhaustive_best_path;
using chordfix::lane_from_path;
using chordfix::random_chord_fixture;
using chordfix::reduced_hmm;
using chordfix::sustained_bar;

TEST_CASE("sustained C-E-G yields C major on both half-bars") {
    Score s = sustained_bar({60, 64, 67});
    ChordLane lane = infer_chords(s);
    REQUIRE(lane.size() == 2);
    CHECK(lane[0] == ChordSymbol{0, ChordQuality::Major});
    CHECK(lane[1] == ChordSymbol{0, ChordQuality::Major});
}

TEST_CASE("C-E-G then A-C-E decodes as C major, C major, A minor, A minor") {
    Score s = sustained_bar({60, 64, 67});
    s = sustained_bar({57, 60, 64}, 1, std::move(s));
    ChordLane lane = infer_chords(s);
    REQUIRE(lane.size() == 4);
    CHECK(lane[0] == ChordSymbol{0, ChordQuality::Major});
    CHECK(lane[1] == ChordSymbol{0, ChordQuality::Major});
    CHECK(lane[2] == ChordSymbol{9, ChordQuality::Minor});
    CHECK(lane[3] == ChordSymbol{9, ChordQuality::Minor});
}

TEST_CASE("emission matches the hand-computed multinomial log-likelihood") {
    ChordHmm hmm;
    std::array<double, 12> hist{};
    hist[0] = hist[4] = hist[7] = 16.0;  // C, E, G for 16 steps each
    // C major template: chord tones 1 + 1e-3, others 1e-3, normalized.
    const double denom = 3 * 1.001 + 9 * 0.001;
    const double expect = 48.0 * std::log(1.001 / denom);
    CHECK(hmm.emission(ChordSymbol{0, ChordQuality::Major}.index(), hist) ==
          doctest::Approx(expect).epsilon(1e-12));
    CHECK(hmm.emission(hmm.nochord_state(), hist) ==
          doctest::Approx(48.0 * std::log(1.0 / 12.0)).epsilon(1e-12));
    // Silent frames force NoChord.
    std::array<double, 12> zero{};
    CHECK(hmm.emission(hmm.nochord_state(), zero) == 0.0);
    CHECK(hmm.emission(0, zero) < -1e29);
}

TEST_CASE("default transition prior prefers staying on the same chord") {
    ChordHmm hmm;
    CHECK(hmm.stay_logit > hmm.switch_logit);
    CHECK(hmm.chords.size() == 84);
    for (const auto& lt : hmm.log_templates)
        for (double v : lt) CHECK(std::isfinite(v));
}

TEST_CASE("viterbi equals exhaustive path search on the reduced state set") {
    ChordHmm hmm = reduced_hmm();
    std::mt19937_64 rng(20260825);
    int done = 0;
    auto run_batch = [&](int count, int bars) {
        for (int i = 0; i < count; ++i, ++done) {
            Score s = random_chord_fixture(rng, bars);
            auto frames = frame_histograms(s);
            auto fast = hmm.viterbi(frames);
            auto slow = exhaustive_best_path(hmm, frames);
            REQUIRE(fast == slow);
            CHECK(infer_chords(s, hmm) == lane_from_path(hmm, slow));
        }
    };
    run_batch(130, 1);  // 2 frames
    run_batch(60, 2);   // 4 frames
    run_batch(10, 3);   // 6 frames
    CHECK(done == 200);
}

TEST_CASE("silent frames inherit the previous chord, defaulting to C major") {
    // First half-bar silent, second half G-B-D.
    Score s;
    s.bars = 1;
    for (int p : {67, 71, 74})
        s.tracks[Role::Piano].push_back(QNote{kStepsPerHalfBar, p + 1, 16, 16});
    s.normalize();
    ChordLane lane = infer_chords(s);
    REQUIRE(lane.size() == 2);
    CHECK(lane[0] == ChordSymbol{0, ChordQuality::Major});  // default before any chord
    CHECK(lane[1] == ChordSymbol{7, ChordQuality::Major});

    // D minor, a silent bar, then D minor again: the gap inherits D minor.
    Score gap = sustained_bar({62, 65, 69});
    gap = sustained_bar({62, 65, 69}, 2, std::move(gap));
    ChordLane lane2 = infer_chords(gap);
    REQUIRE(lane2.size() == 6);
    for (const auto& c : lane2) CHECK(c == ChordSymbol{2, ChordQuality::Minor});
}

TEST_CASE("augmented-triad symmetry resolves to the smallest chord index") {
    // {C, E, G#} supports C aug, E aug and G# aug with identical emissions;
    // the tie must resolve to the lexicographically smallest state path.
    Score s = sustained_bar({60, 64, 68});
    ChordLane lane = infer_chords(s);
    REQUIRE(lane.size() == 2);
    CHECK(lane[0] == ChordSymbol{0, ChordQuality::Augmented});
    CHECK(lane[1] == ChordSymbol{0, ChordQuality::Augmented});
}

TEST_CASE("chord inference rejects scores without melodic notes") {
    Score silent;
    silent.bars = 2;
    CHECK_THROWS_AS(infer_chords(silent), empty_input);

    Score drums_only;
    drums_only.bars = 1;
    drums_only.tracks[Role::Drum] = {{0, 37, 20, 2}, {8, 39, 20, 2}};
    CHECK_THROWS_AS(infer_chords(drums_only), empty_input);
}

TEST_CASE("chord lane always holds two entries per bar") {
    std::mt19937_64 rng(42);
    for (int iter = 0; iter < 20; ++iter) {
        Score s = testgen::pop_score(rng, 1 + int(pick(rng, 6)));
        CHECK(infer_chords(s).size() == size_t(2 * s.bars));
    }
}

TEST_CASE("frame histograms weight notes by overlap and skip drums") {
    Score s;
    s.bars = 1;
    s.tracks[Role::Piano] = {{12, 61, 16, 8}};   // C: 4 steps in frame 0, 4 in frame 1
    s.tracks[Role::Drum] = {{0, 37, 20, 16}};    // ignored
    auto frames = frame_histograms(s);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0][0] == 4.0);
    CHECK(frames[1][0] == 4.0);
    for (int pc = 1; pc < 12; ++pc) {
        CHECK(frames[0][pc] == 0.0);
        CHECK(frames[1][pc] == 0.0);
    }
}
