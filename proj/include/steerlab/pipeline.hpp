#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/attribution.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model.hpp"
#include "steerlab/model_io.hpp"
#include "steerlab/stats.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/textmetrics.hpp"
#include "steerlab/vocab.hpp"

namespace steerlab {

// ---------------------------------------------------------------------------
// corpus

struct DialogueTurn {
    std::string speaker;
    std::string text;
};

struct Dialogue {
    std::string id;
    std::vector<DialogueTurn> turns;
};

struct DialogueCorpus {
    std::vector<Dialogue> dialogues;
    int excluded_short = 0;                 // dropped for < 6 turns
    std::vector<std::string> malformed;     // "line N: reason"
};

inline constexpr int kMinTurns = 6;

// JSON Lines, one dialogue per line; dialogues under 6 turns are dropped and
// counted, malformed lines recorded with their line numbers.
inline DialogueCorpus ingest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open corpus " + path);
    DialogueCorpus corpus;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            Dialogue d;
            d.id = j.at("id").get<std::string>();
            for (const auto& t : j.at("turns"))
                d.turns.push_back({t.at("speaker").get<std::string>(),
                                   t.at("text").get<std::string>()});
            if (!seen.insert(d.id).second)
                throw Error(Err::ParseError, "duplicate dialogue id " + d.id);
            if (static_cast<int>(d.turns.size()) < kMinTurns) {
                ++corpus.excluded_short;
                continue;
            }
            corpus.dialogues.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            corpus.malformed.push_back("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (corpus.dialogues.empty())
        throw Error(Err::EmptyAfterFilter, "no dialogues with >= 6 turns in " + path);
    return corpus;
}

// ---------------------------------------------------------------------------
// experiment config

struct ExperimentConfig {
    std::string weights_path;       // base path, no extension
    std::string vocab_path;
    std::string pairs_path;
    std::string contrastive_path;
    std::string contrastive_name;   // empty: first set in the file
    std::string emolex_path;
    std::map<std::string, std::string> keyword_lexicons;  // category -> path
    std::string distress_path;
    std::string corpus_path;
    std::string out_dir;
    double alpha = 2.0;
    bool use_grid_search = false;
    int layer = -1;                 // -1: take the set's target_layer
    SteeringSpan span = SteeringSpan::last(15);
    PositionMode position_mode = PositionMode::All;
    uint64_t seed = 0;
    int max_new = 40;
    std::string target_category = "support";  // grid-search objective lexicon category

    std::string raw_json;  // canonical text the config hash is computed over
};

inline SteeringSpan parse_span(const std::string& s) {
    if (s == "all") return SteeringSpan::all();
    if (s.rfind("last:", 0) == 0) return SteeringSpan::last(std::stoi(s.substr(5)));
    throw Error(Err::ParseError, "span must be 'all' or 'last:<k>', got " + s);
}

inline std::string span_to_string(const SteeringSpan& s) {
    return s.all_positions ? "all" : "last:" + std::to_string(s.last_k);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Err::ParseError, std::string("config: ") + e.what());
    }
    // paths in the config are resolved relative to the config file
    auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        return fp.is_absolute() ? p : (base / fp).lexically_normal().string();
    };
    ExperimentConfig c;
    c.weights_path = resolve(j.at("weights").get<std::string>());
    c.vocab_path = resolve(j.at("vocab").get<std::string>());
    c.pairs_path = resolve(j.value("diagnostic_pairs", ""));
    c.contrastive_path = resolve(j.value("contrastive_sets", ""));
    c.contrastive_name = j.value("contrastive_name", "");
    c.emolex_path = resolve(j.value("emolex", ""));
    if (j.contains("keyword_lexicons"))
        for (const auto& [cat, p] : j.at("keyword_lexicons").items())
            c.keyword_lexicons[cat] = resolve(p.get<std::string>());
    c.distress_path = resolve(j.value("distress_keywords", ""));
    c.corpus_path = resolve(j.value("corpus", ""));
    c.out_dir = resolve(j.value("out_dir", "out"));
    c.alpha = j.value("alpha", 2.0);
    c.use_grid_search = j.value("grid_search", false);
    c.layer = j.value("layer", -1);
    if (j.contains("span")) c.span = parse_span(j.at("span").get<std::string>());
    if (j.contains("position_mode"))
        c.position_mode = position_mode_from_name(j.at("position_mode").get<std::string>());
    c.seed = j.value("seed", uint64_t{0});
    c.max_new = j.value("max_new", 40);
    c.target_category = j.value("target_category", "support");
    c.raw_json = j.dump();
    return c;
}

inline uint64_t config_hash(const ExperimentConfig& c) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : c.raw_json) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// attribution run

struct AttributionRun {
    std::vector<std::pair<int, double>> layer_ranking;
    std::vector<std::string> heatmap_files;
    nlohmann::json summary;
};

inline AttributionRun run_attribution(const WeightStore& w, const Vocabulary& vocab,
                                      const std::vector<DiagnosticPair>& pairs,
                                      const SteeringSpan& span, const std::string& out_dir) {
    if (pairs.empty()) throw Error(Err::EmptyInput, "no diagnostic pairs");
    std::filesystem::create_directories(out_dir);
    AttributionRun run;
    std::vector<AttributionMap> layer_maps;
    nlohmann::json scenarios = nlohmann::json::array();
    for (const auto& pair : pairs) {
        AtpResult atp = atp_scores(w, vocab, pair);
        std::string layer_file = out_dir + "/atp_layer_" + pair.name + ".csv";
        std::string head_file = out_dir + "/atp_head_" + pair.name + ".csv";
        export_heatmap(atp.layer_map, layer_file);
        export_heatmap(atp.head_map, head_file);
        run.heatmap_files.push_back(layer_file);
        run.heatmap_files.push_back(head_file);

        auto pair_rank = rank_layers({atp.layer_map});
        scenarios.push_back({{"scenario", pair.name},
                             {"key_layer", pair_rank.front().first},
                             {"component", "layer_output"},
                             {"span", span_to_string(span)}});
        layer_maps.push_back(std::move(atp.layer_map));
    }
    run.layer_ranking = rank_layers(layer_maps);

    nlohmann::json ranking = nlohmann::json::array();
    for (const auto& [layer, score] : run.layer_ranking)
        ranking.push_back({{"layer", layer}, {"mean_abs_score", score}});
    run.summary = {{"scenarios", scenarios}, {"layer_ranking", ranking}};

    std::ofstream out(out_dir + "/attribution_summary.json");
    if (!out) throw Error(Err::IoFailure, "cannot write attribution summary");
    out << run.summary.dump(2) << "\n";
    return run;
}

// ---------------------------------------------------------------------------
// steering experiment

struct GenerationRecord {
    std::string id;
    std::string prompt;
    std::string response;
};

inline std::string build_prompt(const Dialogue& d) {
    const size_t n = d.turns.size();
    const size_t start = n > static_cast<size_t>(kMinTurns) ? n - kMinTurns : 0;
    std::string prompt;
    for (size_t i = start; i < n; ++i)
        prompt += d.turns[i].speaker + ": " + d.turns[i].text + "\n";
    // cue the speaker who is not the author of the last turn
    std::string next = d.turns.front().speaker;
    for (const auto& t : d.turns)
        if (t.speaker != d.turns.back().speaker) next = t.speaker;
    prompt += next + ":";
    return prompt;
}

inline void write_responses(const std::vector<GenerationRecord>& records,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(Err::IoFailure, "cannot write responses " + path);
    for (const auto& r : records) {
        nlohmann::json j = {{"id", r.id}, {"prompt", r.prompt}, {"response", r.response}};
        out << j.dump() << "\n";
    }
}

inline std::map<std::string, std::string> load_responses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::IoFailure, "cannot open responses " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = nlohmann::json::parse(line);
            out[j.at("id").get<std::string>()] = j.at("response").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(Err::ParseError,
                        path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

struct SteeringExperimentResult {
    std::vector<GenerationRecord> steered;
    std::vector<GenerationRecord> unsteered;
    std::vector<std::string> skipped;  // dialogue ids that overflowed the context
};

// One unsteered and one steered continuation per dialogue, equal max_new.
inline SteeringExperimentResult run_steering_experiment(const WeightStore& w,
                                                        const Vocabulary& vocab,
                                                        const DialogueCorpus& corpus,
                                                        const SteeringConfig& steer,
                                                        int max_new) {
    SteeringExperimentResult res;
    ForwardHooks hooks = steering_hooks(w, steer);
    for (const auto& d : corpus.dialogues) {
        std::string prompt_text = build_prompt(d);
        try {
            TokenSequence prompt = tokenize(prompt_text, vocab, w.cfg.max_seq_len - max_new);
            TokenSequence plain = generate(w, prompt, max_new);
            TokenSequence steered = generate(w, prompt, max_new, &hooks);
            res.unsteered.push_back(
                {d.id, prompt_text, detail::detokenize(plain, vocab, prompt.length())});
            res.steered.push_back(
                {d.id, prompt_text, detail::detokenize(steered, vocab, prompt.length())});
        } catch (const Error& e) {
            if (e.kind() == Err::ContextOverflow || e.kind() == Err::TooLong) {
                res.skipped.push_back(d.id);
                continue;
            }
            throw;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// evaluation report

struct ReportRow {
    std::string family;   // BH-FDR correction group
    std::string metric;
    std::string context;
    std::string test;     // "welch" or "chi2"
    double steered = 0.0;     // mean (continuous) or proportion (categorical)
    double unsteered = 0.0;
    double statistic = 0.0;
    double raw_p = 1.0;
    double adjusted_p = 1.0;
    std::string sig;
    bool testable = true;
    std::string note;
};

struct Report {
    std::vector<ReportRow> rows;
    std::string context;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    double q = 0.05;
};

inline std::string significance_stars(double adjusted_p) {
    if (adjusted_p < 0.001) return "***";
    if (adjusted_p < 0.01) return "**";
    if (adjusted_p < 0.05) return "*";
    return "";
}

struct EvalLexicons {
    Lexicon emolex;
    Lexicon keywords;
    std::vector<std::string> keyword_categories;
    Lexicon distress;
};

inline EvalLexicons load_eval_lexicons(const ExperimentConfig& c) {
    EvalLexicons lex;
    if (c.emolex_path.empty())
        throw Error(Err::InvalidConfig, "config has no emolex lexicon path");
    lex.emolex = load_lexicon(c.emolex_path, LexiconFormat::NrcTsv);
    for (const auto& [cat, path] : c.keyword_lexicons) {
        lex.keywords.merge(load_lexicon(path, LexiconFormat::KeywordList, cat));
        lex.keyword_categories.push_back(cat);
    }
    if (!c.distress_path.empty())
        lex.distress =
            load_lexicon(c.distress_path, LexiconFormat::KeywordList, kDistressKeywordCategory);
    return lex;
}

namespace detail {

inline UtteranceMetrics safe_metrics(const std::string& text, const EvalLexicons& lex) {
    if (split_words(text).empty()) {
        UtteranceMetrics m;
        for (const auto& cat : emolex_categories()) m.emotion.scores[cat] = 0.0;
        for (const auto& cat : lex.keyword_categories) m.keyword_scores[cat] = 0.0;
        return m;
    }
    return compute_utterance_metrics(text, lex.emolex, lex.keywords, lex.keyword_categories,
                                     lex.distress);
}

}  // namespace detail

inline Report evaluate(const std::map<std::string, std::string>& steered,
                       const std::map<std::string, std::string>& unsteered,
                       const EvalLexicons& lex, const std::string& context,
                       double q = 0.05) {
    if (steered.size() != unsteered.size())
        throw Error(Err::KeyMismatch, "steered and unsteered response sets differ in size");
    for (const auto& [id, _] : steered)
        if (!unsteered.count(id))
            throw Error(Err::KeyMismatch, "dialogue id " + id + " missing from unsteered set");

    std::vector<UtteranceMetrics> ms, mu;
    for (const auto& [id, text] : steered) ms.push_back(detail::safe_metrics(text, lex));
    for (const auto& [id, text] : unsteered) mu.push_back(detail::safe_metrics(text, lex));

    Report report;
    report.context = context;
    report.q = q;

    auto welch_row = [&](const std::string& family, const std::string& metric,
                         auto&& extract) {
        std::vector<double> a, b;
        for (const auto& m : ms) a.push_back(extract(m));
        for (const auto& m : mu) b.push_back(extract(m));
        ReportRow row;
        row.family = family;
        row.metric = metric;
        row.context = context;
        row.test = "welch";
        double sum_a = 0.0, sum_b = 0.0;
        for (double x : a) sum_a += x;
        for (double x : b) sum_b += x;
        row.steered = a.empty() ? 0.0 : sum_a / a.size();
        row.unsteered = b.empty() ? 0.0 : sum_b / b.size();
        try {
            TTestResult t = welch_t(a, b);
            row.statistic = t.t_statistic;
            row.raw_p = t.p_value;
        } catch (const Error& e) {
            if (e.kind() != Err::ZeroVarianceBoth && e.kind() != Err::TooFewSamples) throw;
            row.testable = false;
            row.note = err_name(e.kind());
        }
        report.rows.push_back(std::move(row));
    };

    for (const auto& cat : emolex_categories())
        welch_row("emolex", cat, [&](const UtteranceMetrics& m) { return m.emotion.get(cat); });
    welch_row("pronouns", "first_person",
              [&](const UtteranceMetrics& m) { return m.first_person; });
    for (const auto& cat : lex.keyword_categories)
        welch_row("keywords", cat, [&](const UtteranceMetrics& m) {
            auto it = m.keyword_scores.find(cat);
            return it == m.keyword_scores.end() ? 0.0 : it->second;
        });
    welch_row("distress", "distress", [&](const UtteranceMetrics& m) { return m.distress; });

    auto chi2_row = [&](const std::string& family, const std::string& metric, auto&& flag) {
        double s_yes = 0.0, u_yes = 0.0;
        for (const auto& m : ms) s_yes += flag(m) ? 1.0 : 0.0;
        for (const auto& m : mu) u_yes += flag(m) ? 1.0 : 0.0;
        double s_no = ms.size() - s_yes, u_no = mu.size() - u_yes;
        ReportRow row;
        row.family = family;
        row.metric = metric;
        row.context = context;
        row.test = "chi2";
        row.steered = ms.empty() ? 0.0 : s_yes / ms.size();
        row.unsteered = mu.empty() ? 0.0 : u_yes / mu.size();
        try {
            Chi2Result c = chi2_independence({{s_yes, s_no}, {u_yes, u_no}});
            row.statistic = c.statistic;
            row.raw_p = c.p_value;
        } catch (const Error& e) {
            if (e.kind() != Err::DegenerateTable) throw;
            row.testable = false;
            row.note = "DegenerateTable";
        }
        report.rows.push_back(std::move(row));
    };

    chi2_row("sentiment", "sentiment_positive",
             [](const UtteranceMetrics& m) { return m.sentiment == Sentiment::Positive; });
    chi2_row("politeness", "Apologizing",
             [](const UtteranceMetrics& m) { return m.politeness.flag_apologizing(); });
    chi2_row("politeness", "Gratitude",
             [](const UtteranceMetrics& m) { return m.politeness.flag_gratitude(); });
    chi2_row("politeness", "FirstPerson",
             [](const UtteranceMetrics& m) { return m.politeness.flag_first_person(); });
    chi2_row("politeness", "Hedges",
             [](const UtteranceMetrics& m) { return m.politeness.flag_hedges(); });
    chi2_row("politeness", "HasPositive",
             [](const UtteranceMetrics& m) { return m.politeness.flag_has_positive(); });
    chi2_row("politeness", "HasNegative",
             [](const UtteranceMetrics& m) { return m.politeness.flag_has_negative(); });

    // BH-FDR within each metric family
    std::map<std::string, std::vector<size_t>> families;
    for (size_t i = 0; i < report.rows.size(); ++i)
        if (report.rows[i].testable) families[report.rows[i].family].push_back(i);
    for (const auto& [family, idx] : families) {
        std::vector<double> raw;
        for (size_t i : idx) raw.push_back(report.rows[i].raw_p);
        CorrectedPValues corr = bh_fdr(raw, q);
        for (size_t k = 0; k < idx.size(); ++k) {
            report.rows[idx[k]].adjusted_p = corr.adjusted[k];
            report.rows[idx[k]].sig = significance_stars(corr.adjusted[k]);
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// report serialization

inline nlohmann::json report_to_json(const Report& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"family", row.family},
                        {"metric", row.metric},
                        {"context", row.context},
                        {"test", row.test},
                        {"steered", row.steered},
                        {"unsteered", row.unsteered},
                        {"statistic", row.statistic},
                        {"raw_p", row.raw_p},
                        {"adjusted_p", row.adjusted_p},
                        {"sig", row.sig},
                        {"testable", row.testable},
                        {"note", row.note}});
    return {{"context", r.context},
            {"seed", r.seed},
            {"config_hash", r.config_hash},
            {"q", r.q},
            {"rows", rows}};
}

inline Report report_from_json(const nlohmann::json& j) {
    Report r;
    r.context = j.at("context").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.config_hash = j.at("config_hash").get<uint64_t>();
    r.q = j.at("q").get<double>();
    for (const auto& row : j.at("rows")) {
        ReportRow rr;
        rr.family = row.at("family").get<std::string>();
        rr.metric = row.at("metric").get<std::string>();
        rr.context = row.at("context").get<std::string>();
        rr.test = row.at("test").get<std::string>();
        rr.steered = row.at("steered").get<double>();
        rr.unsteered = row.at("unsteered").get<double>();
        rr.statistic = row.at("statistic").get<double>();
        rr.raw_p = row.at("raw_p").get<double>();
        rr.adjusted_p = row.at("adjusted_p").get<double>();
        rr.sig = row.at("sig").get<std::string>();
        rr.testable = row.at("testable").get<bool>();
        rr.note = row.at("note").get<std::string>();
        r.rows.push_back(std::move(rr));
    }
    return r;
}

enum class ReportFormat { Csv, Json, TextTable };

inline std::vector<std::string> report_render(const Report& r, ReportFormat format,
                                              const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    char buf[64];
    auto fmt17 = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };

    if (format == ReportFormat::Json) {
        std::string path = out_dir + "/report.json";
        std::ofstream out(path);
        if (!out) throw Error(Err::IoFailure, "cannot write " + path);
        out << report_to_json(r).dump(2) << "\n";
        written.push_back(path);
    } else if (format == ReportFormat::Csv) {
        std::set<std::string> families;
        for (const auto& row : r.rows) families.insert(row.family);
        for (const auto& family : families) {
            std::string path = out_dir + "/report_" + family + ".csv";
            std::ofstream out(path);
            if (!out) throw Error(Err::IoFailure, "cannot write " + path);
            out << "metric,context,steered,unsteered,statistic,raw_p,adjusted_p,sig,testable\n";
            for (const auto& row : r.rows) {
                if (row.family != family) continue;
                out << row.metric << "," << row.context << "," << fmt17(row.steered) << ","
                    << fmt17(row.unsteered) << "," << fmt17(row.statistic) << ","
                    << fmt17(row.raw_p) << "," << fmt17(row.adjusted_p) << "," << row.sig
                    << "," << (row.testable ? "1" : "0") << "\n";
            }
            written.push_back(path);
        }
        // metric-by-condition mean matrix for heatmap plotting
        std::string mpath = out_dir + "/mean_matrix.csv";
        std::ofstream mout(mpath);
        if (!mout) throw Error(Err::IoFailure, "cannot write " + mpath);
        mout << "metric,steered,unsteered\n";
        for (const auto& row : r.rows)
            mout << row.family << ":" << row.metric << "," << fmt17(row.steered) << ","
                 << fmt17(row.unsteered) << "\n";
        written.push_back(mpath);
    } else {
        std::string path = out_dir + "/report.txt";
        std::ofstream out(path);
        if (!out) throw Error(Err::IoFailure, "cannot write " + path);
        out << std::left << std::setw(24) << "metric" << std::setw(12) << "context"
            << std::right << std::setw(10) << "steered" << std::setw(12) << "unsteered"
            << std::setw(10) << "stat" << std::setw(10) << "p" << std::setw(10) << "adj_p"
            << "  sig\n";
        for (const auto& row : r.rows) {
            out << std::left << std::setw(24) << (row.family + ":" + row.metric)
                << std::setw(12) << row.context << std::right << std::fixed
                << std::setprecision(4) << std::setw(10) << row.steered << std::setw(12)
                << row.unsteered;
            if (row.testable)
                out << std::setw(10) << row.statistic << std::setw(10) << row.raw_p
                    << std::setw(10) << row.adjusted_p << "  " << row.sig;
            else
                out << std::setw(10) << "-" << std::setw(10) << "-" << std::setw(10) << "-"
                    << "  (" << row.note << ")";
            out << "\n";
            out.unsetf(std::ios::fixed);
        }
        written.push_back(path);
    }
    return written;
}

}  // namespace steerlab
