#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "steerlab/model.hpp"

using namespace steerlab;

namespace {

ModelConfig tiny_config(int vocab) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_head = 8;
    cfg.max_seq_len = 16;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("zero training steps return the starting weights unchanged") {
    auto w = init_weights(tiny_config(8));
    TokenSequence seq;
    seq.ids = {1, 2, 3};
    auto res = train(w, {seq}, 0, 1e-2);
    CHECK(res.weights.fingerprint() == w.fingerprint());
    CHECK(res.loss_trace.empty());
}

TEST_CASE("initial loss sits near log vocab size") {
    auto w = init_weights(tiny_config(8));
    TokenSequence seq;
    seq.ids = {1, 2, 3, 4, 5};
    auto res = train(w, {seq}, 1, 1e-2);
    double expect = std::log(8.0);
    CHECK(res.loss_trace[0] > 0.8 * expect);
    CHECK(res.loss_trace[0] < 1.2 * expect);
}

TEST_CASE("a single repeated sequence is memorized") {
    auto v = Vocabulary::from_words({"a", "b", "c", "d"});
    auto w = init_weights(tiny_config(v.size()));
    auto seq = tokenize("a b c d", v);
    auto res = train(w, {seq}, 300, 1e-2);
    CHECK(res.loss_trace.back() < 0.1);
    CHECK(res.loss_trace.back() < res.loss_trace.front());

    TokenSequence prompt;
    prompt.ids = {Vocabulary::kBosId, v.id("a")};
    auto out = generate(res.weights, prompt, 3);
    REQUIRE(out.ids.size() == 5);
    CHECK(v.token(out.ids[2]) == "b");
    CHECK(v.token(out.ids[3]) == "c");
    CHECK(v.token(out.ids[4]) == "d");
}

TEST_CASE("training rejects empty and degenerate corpora") {
    auto w = init_weights(tiny_config(8));
    CHECK_THROWS_AS(train(w, {}, 1, 1e-2), Error);
    TokenSequence one;
    one.ids = {1};
    try {
        train(w, {one}, 1, 1e-2);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::DegenerateSequence);
    }
}

TEST_CASE("training is deterministic") {
    auto w = init_weights(tiny_config(8));
    TokenSequence seq;
    seq.ids = {1, 2, 3, 4};
    auto a = train(w, {seq}, 20, 1e-2);
    auto b = train(w, {seq}, 20, 1e-2);
    CHECK(a.weights.fingerprint() == b.weights.fingerprint());
    CHECK(a.loss_trace == b.loss_trace);
}

TEST_CASE("generation with a do-nothing hook matches plain generation") {
    auto w = init_weights(tiny_config(8));
    TokenSequence prompt;
    prompt.ids = {1, 2};
    ForwardHooks hooks;
    hooks.layer_edits.emplace_back(0, [](double*, int, int) {});
    auto plain = generate(w, prompt, 6);
    auto hooked = generate(w, prompt, 6, &hooks);
    CHECK(plain.ids == hooked.ids);
}

TEST_CASE("generation edge cases") {
    auto w = init_weights(tiny_config(8));
    TokenSequence prompt;
    prompt.ids = {1, 2};
    auto out = generate(w, prompt, 0);
    CHECK(out.ids == prompt.ids);
    CHECK_THROWS_AS(generate(w, prompt, 100), Error);
}

TEST_CASE("greedy ties break toward the lowest token id") {
    // zeroed final projection makes every logit equal
    auto w = init_weights(tiny_config(8));
    std::fill(w.unembed.begin(), w.unembed.end(), 0.0);
    TokenSequence prompt;
    prompt.ids = {1, 2};
    auto out = generate(w, prompt, 2);
    CHECK(out.ids[2] == 0);
    CHECK(out.ids[3] == 0);
}
