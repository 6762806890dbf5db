#include <doctest.h>

#include "popmag/vocab.hpp"

using namespace popmag;

TEST_CASE("primary vocabulary layout anchors") {
    CHECK(v1_id(Token::bar(), Role::Melody) == 0);
    CHECK(v1_id(Token::pos(1), Role::Melody) == 1);
    CHECK(v1_id(Token::pos(32), Role::Melody) == 32);
    CHECK(v1_id(Token::track(Role::Melody), Role::Melody) == 33);
    CHECK(v1_id(Token::track(Role::Bass), Role::Melody) == 38);
    CHECK(v1_id(Token::chord({0, ChordQuality::Major}), Role::Melody) == 39);
    CHECK(v1_id(Token::chord({11, ChordQuality::HalfDiminished}), Role::Melody) == 122);
    CHECK(v1_id(Token::note(1, 1, 1), Role::Piano) == 123);
    CHECK(v1_id(Token::note(128, 1, 1), Role::Piano) == 250);
    CHECK(v1_id(Token::note(1, 1, 1), Role::Drum) == 251);
    CHECK(v1_id(Token::note(128, 1, 1), Role::Drum) == 378);
    CHECK(kV1Size == 379);
}

TEST_CASE("every id survives a symbol roundtrip") {
    for (int id = 0; id < kV1Size; ++id) {
        const V1Symbol s = v1_symbol(id);
        Token t;
        Role family = Role::Piano;
        switch (s.kind) {
            case TokenKind::Bar:
                t = Token::bar();
                break;
            case TokenKind::Pos:
                t = Token::pos(s.value);
                break;
            case TokenKind::Track:
                t = Token::track(Role(s.value));
                break;
            case TokenKind::Chord:
                t = Token::chord(ChordSymbol::from_index(s.value));
                break;
            case TokenKind::Note:
                t = Token::note(s.value, 1, 1);
                family = is_drum_id(id) ? Role::Drum : Role::Piano;
                break;
        }
        CHECK(v1_id(t, family) == id);
    }
}

TEST_CASE("note family follows the enclosing track") {
    const Token n = Token::note(36, 8, 4);
    CHECK(v1_id(n, Role::Piano) == kV1PitchBase + 35);
    CHECK(v1_id(n, Role::Drum) == kV1DrumBase + 35);
}

TEST_CASE("prepare_sequence resolves steps, bars and positions") {
    TokenSeq seq;
    seq.tempo_class = TempoClass::High;
    seq.tokens = {
        Token::bar(),
        Token::pos(1),
        Token::chord({0, ChordQuality::Major}),
        Token::track(Role::Piano),
        Token::note(61, 17, 8),
        Token::note(65, 18, 4),
        Token::bar(),
        Token::pos(17),
        Token::track(Role::Drum),
        Token::note(36, 32, 1),
    };
    const PreparedSeq p = prepare_sequence(seq);
    CHECK(p.tempo == TempoClass::High);
    CHECK(p.steps() == 10);
    CHECK(p.bars() == 2);
    CHECK(p.seg_start == std::vector<int>{0, 6});
    CHECK(p.segment(0) == std::pair<int, int>{0, 6});
    CHECK(p.segment(1) == std::pair<int, int>{6, 10});

    CHECK(p.v1 == std::vector<int>{0, 1, 39, 33 + int(Role::Piano), 123 + 60, 123 + 64, 0, 17,
                                   33 + int(Role::Drum), 251 + 35});
    CHECK(p.v2 == std::vector<int>{-1, -1, -1, -1, 16, 17, -1, -1, -1, 31});
    CHECK(p.v3 == std::vector<int>{-1, -1, -1, -1, 7, 3, -1, -1, -1, 0});
    CHECK(p.bar == std::vector<int>{1, 1, 1, 1, 1, 1, 2, 2, 2, 2});
    CHECK(p.posrow == std::vector<int>{0, 1, 1, 1, 1, 1, 0, 17, 17, 17});
}

TEST_CASE("prepare_sequence rejects ungrammatical input") {
    TokenSeq seq;
    seq.tokens = {Token::pos(1)};
    CHECK_THROWS_AS(prepare_sequence(seq), grammar_error);
    seq.tokens = {Token::bar(), Token::pos(1), Token::track(Role::Bass)};
    CHECK_THROWS_AS(prepare_sequence(seq), grammar_error);  // may not end inside a track
    seq.tokens = {Token::bar(), Token::pos(2), Token::chord({0, ChordQuality::Major})};
    CHECK_THROWS_AS(prepare_sequence(seq), chord_placement_error);
}
