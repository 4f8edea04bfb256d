#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "steerlab/vocab.hpp"

using namespace steerlab;

namespace {

Vocabulary small_vocab() {
    return Vocabulary::from_words({"hello", "world", "that", "sounds", "really", "tough",
                                   ",", "!", ".", "a", "b"});
}

}  // namespace

TEST_CASE("punctuation splits into standalone tokens") {
    auto v = small_vocab();
    auto seq = tokenize("Hello, world!", v);
    std::vector<std::string> toks;
    for (int id : seq.ids) toks.push_back(v.token(id));
    CHECK(toks == std::vector<std::string>{"<bos>", "hello", ",", "world", "!"});
}

TEST_CASE("unknown words map to <unk>") {
    auto v = small_vocab();
    auto seq = tokenize("zqx", v);
    CHECK(seq.ids == std::vector<int>{Vocabulary::kBosId, Vocabulary::kUnkId});
}

TEST_CASE("seed contrastive text tokenizes by the stated rules") {
    auto v = small_vocab();
    auto seq = tokenize("That sounds really tough.", v);
    std::vector<std::string> toks;
    for (int id : seq.ids) toks.push_back(v.token(id));
    CHECK(toks ==
          std::vector<std::string>{"<bos>", "that", "sounds", "really", "tough", "."});
}

TEST_CASE("empty and overlong inputs are rejected") {
    auto v = small_vocab();
    CHECK_THROWS_AS(tokenize("   ", v), Error);
    CHECK_THROWS_AS(tokenize("a b a b a b", v, 4), Error);
    try {
        tokenize("  \t ", v);
    } catch (const Error& e) {
        CHECK(e.kind() == Err::EmptyText);
    }
}

TEST_CASE("ids are dense and lookup is a bijection") {
    auto v = small_vocab();
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
    CHECK(v.token(0) == "<unk>");
    CHECK(v.token(1) == "<bos>");
}

TEST_CASE("duplicate and reserved tokens are rejected") {
    CHECK_THROWS_AS(Vocabulary::from_words({"a", "a"}), Error);
    CHECK_THROWS_AS(Vocabulary::from_words({"<bos>"}), Error);
}

TEST_CASE("vocab file round trip") {
    auto v = small_vocab();
    std::string path = "vocab_roundtrip_test.txt";
    v.save(path);
    auto loaded = Vocabulary::load(path);
    CHECK(loaded.tokens() == v.tokens());
    std::remove(path.c_str());
}

TEST_CASE("vocab built from texts is sorted and deduplicated") {
    auto v = Vocabulary::from_texts({"b a", "a c"});
    CHECK(v.tokens() == std::vector<std::string>{"<unk>", "<bos>", "a", "b", "c"});
}
