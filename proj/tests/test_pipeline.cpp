#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "steerlab/pipeline.hpp"

using namespace steerlab;

namespace {

std::string data_path(const std::string& rel) {
    return std::string(STEERLAB_DATA_DIR) + "/" + rel;
}

std::string write_temp(const std::string& name, const std::string& content) {
    std::ofstream out(name);
    out << content;
    return name;
}

EvalLexicons test_lexicons() {
    EvalLexicons lex;
    lex.emolex.add_word("happy", "joy");
    lex.emolex.add_word("happy", "positive");
    lex.emolex.add_word("awful", "negative");
    lex.emolex.add_word("awful", "sadness");
    lex.keywords.add_word("listen", "support");
    lex.keyword_categories = {"support"};
    lex.distress.add_word("anxious", kDistressKeywordCategory);
    return lex;
}

}  // namespace

TEST_CASE("bundled corpus ingests cleanly") {
    auto corpus = ingest(data_path("corpus.jsonl"));
    CHECK(corpus.dialogues.size() == 24);
    CHECK(corpus.excluded_short == 0);
    CHECK(corpus.malformed.empty());
    for (const auto& d : corpus.dialogues) CHECK(d.turns.size() >= size_t(kMinTurns));
}

TEST_CASE("ingest keeps six-turn dialogues, drops shorter, logs malformed lines") {
    std::string turns6, turns5;
    for (int i = 0; i < 6; ++i)
        turns6 += std::string(i ? "," : "") + R"({"speaker":"a","text":"turn )" +
                  std::to_string(i) + R"("})";
    for (int i = 0; i < 5; ++i)
        turns5 += std::string(i ? "," : "") + R"({"speaker":"a","text":"turn )" +
                  std::to_string(i) + R"("})";
    std::string path = write_temp("corpus_filter_test.jsonl",
                                  R"({"id":"keep","turns":[)" + turns6 + "]}\n" +
                                  R"({"id":"drop","turns":[)" + turns5 + "]}\n" +
                                  "this is not json\n" +
                                  R"({"id":"noturns"})" + "\n");
    auto corpus = ingest(path);
    CHECK(corpus.dialogues.size() == 1);
    CHECK(corpus.dialogues[0].id == "keep");
    CHECK(corpus.excluded_short == 1);
    REQUIRE(corpus.malformed.size() == 2);
    CHECK(corpus.malformed[0].find("line 3") != std::string::npos);
    CHECK(corpus.malformed[1].find("line 4") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("ingest rejects duplicate ids and fully filtered files") {
    std::string turns6;
    for (int i = 0; i < 6; ++i)
        turns6 += std::string(i ? "," : "") + R"({"speaker":"a","text":"t"})";
    std::string dup = write_temp("corpus_dup_test.jsonl",
                                 R"({"id":"x","turns":[)" + turns6 + "]}\n" +
                                 R"({"id":"x","turns":[)" + turns6 + "]}\n");
    CHECK_THROWS_AS(ingest(dup), Error);
    std::remove(dup.c_str());

    std::string empty = write_temp("corpus_empty_test.jsonl",
                                   R"({"id":"short","turns":[{"speaker":"a","text":"t"}]})"
                                   "\n");
    try {
        ingest(empty);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::EmptyAfterFilter);
    }
    std::remove(empty.c_str());
}

TEST_CASE("prompts use the last six turns and cue the other speaker") {
    Dialogue d;
    d.id = "x";
    for (int i = 0; i < 8; ++i)
        d.turns.push_back({i % 2 == 0 ? "sam" : "alex", "turn " + std::to_string(i)});
    std::string prompt = build_prompt(d);
    CHECK(prompt.find("turn 0") == std::string::npos);
    CHECK(prompt.find("turn 1") == std::string::npos);
    CHECK(prompt.find("sam: turn 2\n") == 0);
    CHECK(prompt.find("alex: turn 7\n") != std::string::npos);
    // last turn is alex's, so sam is cued to respond
    CHECK(prompt.rfind("sam:") == prompt.size() - 4);
}

TEST_CASE("response files round trip") {
    std::vector<GenerationRecord> recs = {{"d1", "p1", "r1"}, {"d2", "p2", "r2 with spaces"}};
    write_responses(recs, "responses_test.jsonl");
    auto loaded = load_responses("responses_test.jsonl");
    CHECK(loaded.size() == 2);
    CHECK(loaded.at("d1") == "r1");
    CHECK(loaded.at("d2") == "r2 with spaces");
    std::remove("responses_test.jsonl");
}

TEST_CASE("evaluating a set against itself finds nothing") {
    auto lex = test_lexicons();
    std::map<std::string, std::string> responses = {
        {"d1", "happy to listen today"},
        {"d2", "that is awful news"},
        {"d3", "the meeting moved to tuesday"},
        {"d4", "i am anxious about it"},
    };
    auto report = evaluate(responses, responses, lex, "reply");
    CHECK(report.rows.size() == 20);  // 10 emolex + pronoun + support + distress + 7 chi2
    for (const auto& row : report.rows) {
        CHECK(row.steered == row.unsteered);
        if (row.testable) {
            CHECK(row.statistic == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(row.raw_p == doctest::Approx(1.0).epsilon(1e-9));
        } else {
            CHECK(row.raw_p == 1.0);
            CHECK(row.adjusted_p == 1.0);
            CHECK(!row.note.empty());
        }
        CHECK(row.adjusted_p >= row.raw_p - 1e-15);
        CHECK(row.sig == "");
    }
}

TEST_CASE("evaluate wires the joy scores into welch correctly") {
    auto lex = test_lexicons();
    std::map<std::string, std::string> steered = {
        {"d1", "happy happy day"},   // joy 2/3
        {"d2", "happy day today"},   // joy 1/3
        {"d3", "happy happy happy"}, // joy 1
    };
    std::map<std::string, std::string> unsteered = {
        {"d1", "the day is long"},
        {"d2", "happy for you"},     // joy 1/3
        {"d3", "nothing new here"},
    };
    auto report = evaluate(steered, unsteered, lex, "reply");
    const ReportRow* joy = nullptr;
    for (const auto& row : report.rows)
        if (row.family == "emolex" && row.metric == "joy") joy = &row;
    REQUIRE(joy != nullptr);
    CHECK(joy->testable);
    CHECK(joy->steered == doctest::Approx((2.0 / 3 + 1.0 / 3 + 1.0) / 3).epsilon(1e-12));
    CHECK(joy->unsteered == doctest::Approx(1.0 / 9).epsilon(1e-12));
    auto oracle = welch_t({2.0 / 3, 1.0 / 3, 1.0}, {0.0, 1.0 / 3, 0.0});
    CHECK(joy->statistic == doctest::Approx(oracle.t_statistic).epsilon(1e-12));
    CHECK(joy->raw_p == doctest::Approx(oracle.p_value).epsilon(1e-12));
}

TEST_CASE("evaluate adjusts p-values within families only") {
    auto lex = test_lexicons();
    std::map<std::string, std::string> steered = {
        {"d1", "happy happy day"}, {"d2", "happy awful today"}, {"d3", "i am anxious now"}};
    std::map<std::string, std::string> unsteered = {
        {"d1", "the day is long"}, {"d2", "nothing new here"}, {"d3", "fine thanks friend"}};
    auto report = evaluate(steered, unsteered, lex, "reply");
    std::map<std::string, std::vector<double>> family_raw;
    for (const auto& row : report.rows)
        if (row.testable) family_raw[row.family].push_back(row.raw_p);
    for (const auto& row : report.rows) {
        if (!row.testable) continue;
        auto corr = bh_fdr(family_raw[row.family]);
        bool found = false;
        for (size_t i = 0; i < corr.raw.size(); ++i)
            if (corr.raw[i] == row.raw_p && std::abs(corr.adjusted[i] - row.adjusted_p) < 1e-12)
                found = true;
        CHECK(found);
    }
}

TEST_CASE("evaluate rejects mismatched response sets") {
    auto lex = test_lexicons();
    std::map<std::string, std::string> a = {{"d1", "x y"}, {"d2", "x y"}};
    std::map<std::string, std::string> b = {{"d1", "x y"}};
    CHECK_THROWS_AS(evaluate(a, b, lex, "reply"), Error);
    std::map<std::string, std::string> c = {{"d1", "x y"}, {"d9", "x y"}};
    CHECK_THROWS_AS(evaluate(a, c, lex, "reply"), Error);
}

TEST_CASE("significance stars follow the adjusted p thresholds") {
    CHECK(significance_stars(0.0005) == "***");
    CHECK(significance_stars(0.005) == "**");
    CHECK(significance_stars(0.03) == "*");
    CHECK(significance_stars(0.05) == "");
    CHECK(significance_stars(0.06) == "");
}

TEST_CASE("report json round trip is lossless") {
    Report r;
    r.context = "reply";
    r.seed = 7;
    r.config_hash = 42;
    r.q = 0.05;
    ReportRow row;
    row.family = "emolex";
    row.metric = "joy";
    row.context = "reply";
    row.test = "welch";
    row.steered = 0.25;
    row.unsteered = 0.125;
    row.statistic = 1.75;
    row.raw_p = 0.02;
    row.adjusted_p = 0.04;
    row.sig = "*";
    r.rows.push_back(row);
    ReportRow dead;
    dead.family = "politeness";
    dead.metric = "Hedges";
    dead.context = "reply";
    dead.test = "chi2";
    dead.testable = false;
    dead.note = "DegenerateTable";
    r.rows.push_back(dead);

    auto j = report_to_json(r);
    auto back = report_from_json(j);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.context == "reply");
    CHECK(back.seed == 7);
    CHECK(back.config_hash == 42);
    CHECK(back.rows[0].metric == "joy");
    CHECK(back.rows[0].statistic == 1.75);
    CHECK(back.rows[0].sig == "*");
    CHECK(back.rows[1].testable == false);
    CHECK(back.rows[1].note == "DegenerateTable");
    CHECK(back.rows[1].raw_p == 1.0);
}

TEST_CASE("report rendering writes every requested format") {
    auto lex = test_lexicons();
    std::map<std::string, std::string> steered = {{"d1", "happy happy day"},
                                                  {"d2", "i will listen"}};
    std::map<std::string, std::string> unsteered = {{"d1", "the day is long"},
                                                    {"d2", "nothing new here"}};
    auto report = evaluate(steered, unsteered, lex, "reply");
    std::string dir = "render_test_out";
    auto json_files = report_render(report, ReportFormat::Json, dir);
    auto csv_files = report_render(report, ReportFormat::Csv, dir);
    auto txt_files = report_render(report, ReportFormat::TextTable, dir);
    CHECK(json_files == std::vector<std::string>{dir + "/report.json"});
    CHECK(txt_files == std::vector<std::string>{dir + "/report.txt"});
    bool has_emolex = false, has_matrix = false;
    for (const auto& f : csv_files) {
        if (f == dir + "/report_emolex.csv") has_emolex = true;
        if (f == dir + "/mean_matrix.csv") has_matrix = true;
        CHECK(std::filesystem::exists(f));
    }
    CHECK(has_emolex);
    CHECK(has_matrix);
    std::filesystem::remove_all(dir);
}

TEST_CASE("span strings parse and print both forms") {
    auto s = parse_span("last:15");
    CHECK_FALSE(s.all_positions);
    CHECK(s.last_k == 15);
    CHECK(span_to_string(s) == "last:15");
    CHECK(parse_span("all").all_positions);
    CHECK(span_to_string(SteeringSpan::all()) == "all");
    CHECK_THROWS_AS(parse_span("last:0"), Error);
    CHECK_THROWS_AS(parse_span("first:3"), Error);
}

TEST_CASE("experiment config paths resolve relative to the config file") {
    std::filesystem::create_directories("cfgtest/sub");
    write_temp("cfgtest/sub/exp.json", R"({
        "weights": "toy_model",
        "vocab": "toy_vocab.txt",
        "emolex": "../lex/emolex.tsv",
        "corpus": "/abs/corpus.jsonl",
        "span": "last:10",
        "alpha": 2.5,
        "seed": 9
    })");
    auto c = load_experiment_config("cfgtest/sub/exp.json");
    CHECK(c.weights_path == "cfgtest/sub/toy_model");
    CHECK(c.vocab_path == "cfgtest/sub/toy_vocab.txt");
    CHECK(c.emolex_path == "cfgtest/lex/emolex.tsv");
    CHECK(c.corpus_path == "/abs/corpus.jsonl");
    CHECK(c.alpha == 2.5);
    CHECK(c.span.last_k == 10);
    CHECK(c.seed == 9);
    CHECK(config_hash(c) != 0);
    auto c2 = load_experiment_config("cfgtest/sub/exp.json");
    CHECK(config_hash(c) == config_hash(c2));
    std::filesystem::remove_all("cfgtest");
}
