// steerlab command-line front end: attribution runs, steering vector
// derivation, alpha sweeps, steered generation, evaluation and reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "steerlab/attribution.hpp"
#include "steerlab/model.hpp"
#include "steerlab/model_io.hpp"
#include "steerlab/pipeline.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/vocab.hpp"

namespace fs = std::filesystem;
using namespace steerlab;

namespace {

struct Overrides {
    std::optional<double> alpha;
    std::optional<int> layer;
    std::optional<std::string> span;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
};

ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
    ExperimentConfig cfg = load_experiment_config(path);
    if (ov.alpha) cfg.alpha = *ov.alpha;
    if (ov.layer) cfg.layer = *ov.layer;
    if (ov.span) cfg.span = parse_span(*ov.span);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out) cfg.out_dir = *ov.out;
    return cfg;
}

ContrastiveSet pick_set(const ExperimentConfig& cfg) {
    auto sets = load_contrastive_sets(cfg.contrastive_path);
    if (sets.empty()) throw Error(Err::EmptySet, "no contrastive sets in file");
    if (cfg.contrastive_name.empty()) return sets.front();
    for (auto& s : sets)
        if (s.name == cfg.contrastive_name) return s;
    throw Error(Err::EmptySet, "contrastive set not found: " + cfg.contrastive_name);
}

SteeringVector derive_for_config(const ExperimentConfig& cfg, const WeightStore& w,
                                 const Vocabulary& vocab) {
    ContrastiveSet set = pick_set(cfg);
    if (cfg.layer >= 0) set.target_layer = cfg.layer;
    EqualizedSet eq = equalize_lengths(set, vocab);
    return derive_vector(w, eq, cfg.position_mode);
}

SteeringVector vector_for_config(const ExperimentConfig& cfg, const WeightStore& w,
                                 const Vocabulary& vocab) {
    std::string path = cfg.out_dir + "/steering_vector.json";
    if (fs::exists(path)) return load_steering_vector(path);
    return derive_for_config(cfg, w, vocab);
}

std::vector<std::string> validation_prompts(const ExperimentConfig& cfg, int limit) {
    DialogueCorpus corpus = ingest(cfg.corpus_path);
    std::vector<std::string> prompts;
    for (const auto& d : corpus.dialogues) {
        prompts.push_back(build_prompt(d));
        if (static_cast<int>(prompts.size()) >= limit) break;
    }
    return prompts;
}

int cmd_train_toy(const std::string& data_dir, const std::string& out_base, int steps,
                  double lr, uint64_t seed) {
    // vocab from every bundled text source so fixtures tokenize without <unk>
    std::vector<std::string> texts;
    auto pairs = load_diagnostic_pairs(data_dir + "/diagnostic_pairs.json");
    for (const auto& p : pairs) {
        texts.push_back(p.clean_prompt + " " + p.target_token);
        texts.push_back(p.corrupted_prompt + " " + p.undesired_token);
    }
    auto sets = load_contrastive_sets(data_dir + "/contrastive_sets.json");
    for (const auto& s : sets) {
        for (const auto& t : s.positive_texts) texts.push_back(t);
        for (const auto& t : s.negative_texts) texts.push_back(t);
    }
    DialogueCorpus corpus = ingest(data_dir + "/corpus.jsonl");
    for (const auto& d : corpus.dialogues)
        for (const auto& t : d.turns) texts.push_back(t.speaker + " : " + t.text);
    Vocabulary vocab = Vocabulary::from_texts(texts);
    vocab.save(out_base + "_vocab.txt");

    ModelConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 32;
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.d_head = 8;
    cfg.max_seq_len = 160;
    cfg.norm_epsilon = 1e-6;
    cfg.seed = seed;
    WeightStore w = init_weights(cfg);

    // training set: diagnostic completions plus short dialogue exchanges
    std::vector<TokenSequence> train_corpus;
    for (const auto& p : pairs) {
        train_corpus.push_back(tokenize(p.clean_prompt + " " + p.target_token, vocab));
        train_corpus.push_back(tokenize(p.corrupted_prompt + " " + p.undesired_token, vocab));
    }
    for (const auto& s : sets) {
        for (const auto& t : s.positive_texts) train_corpus.push_back(tokenize(t, vocab));
        for (const auto& t : s.negative_texts) train_corpus.push_back(tokenize(t, vocab));
    }
    for (const auto& d : corpus.dialogues) {
        const auto& a = d.turns[d.turns.size() - 2];
        const auto& b = d.turns.back();
        train_corpus.push_back(
            tokenize(a.speaker + " : " + a.text + " " + b.speaker + " : " + b.text, vocab));
    }

    TrainResult res = train(w, train_corpus, steps, lr);
    save_weights(res.weights, out_base);
    std::cout << "trained " << steps << " steps, loss " << res.loss_trace.front() << " -> "
              << res.loss_trace.back() << "\n";
    std::cout << "vocab size " << vocab.size() << ", weights at " << out_base
              << ".{json,bin}\n";
    return 0;
}

int cmd_attribute(const ExperimentConfig& cfg) {
    WeightStore w = load_weights(cfg.weights_path);
    Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
    auto pairs = load_diagnostic_pairs(cfg.pairs_path);
    AttributionRun run = run_attribution(w, vocab, pairs, cfg.span, cfg.out_dir);
    for (const auto& [layer, score] : run.layer_ranking)
        std::cout << "layer " << layer << "  mean|score| " << score << "\n";
    std::cout << "summary: " << cfg.out_dir << "/attribution_summary.json\n";
    return 0;
}

int cmd_derive(const ExperimentConfig& cfg) {
    WeightStore w = load_weights(cfg.weights_path);
    Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
    SteeringVector v = derive_for_config(cfg, w, vocab);
    fs::create_directories(cfg.out_dir);
    std::string path = cfg.out_dir + "/steering_vector.json";
    save_steering_vector(v, path);
    std::cout << "derived vector for set '" << v.source_set << "' at layer " << v.layer
              << " -> " << path << "\n";
    return 0;
}

int cmd_sweep_alpha(const ExperimentConfig& cfg) {
    WeightStore w = load_weights(cfg.weights_path);
    Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
    SteeringVector v = vector_for_config(cfg, w, vocab);
    EvalLexicons lex = load_eval_lexicons(cfg);
    auto prompts = validation_prompts(cfg, 6);
    AlphaSweepResult sweep =
        alpha_grid_search(w, vocab, v, prompts, lex.keywords, cfg.target_category,
                          default_alpha_grid(), cfg.span, std::min(cfg.max_new, 16));
    fs::create_directories(cfg.out_dir);
    nlohmann::json table = nlohmann::json::array();
    for (const auto& d : sweep.table)
        table.push_back({{"alpha", d.alpha},
                         {"lexicon_delta", d.lexicon_delta},
                         {"perplexity_delta", d.perplexity_delta}});
    nlohmann::json j = {{"selected_alpha", sweep.selected_alpha},
                        {"no_feasible_alpha", sweep.no_feasible_alpha},
                        {"table", table}};
    std::ofstream out(cfg.out_dir + "/alpha_sweep.json");
    out << j.dump(2) << "\n";
    std::cout << "selected alpha " << sweep.selected_alpha
              << (sweep.no_feasible_alpha ? " (no feasible alpha, fell back to grid minimum)"
                                          : "")
              << "\n";
    return 0;
}

int cmd_generate(const ExperimentConfig& cfg) {
    WeightStore w = load_weights(cfg.weights_path);
    Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
    DialogueCorpus corpus = ingest(cfg.corpus_path);
    SteeringVector v = vector_for_config(cfg, w, vocab);
    SteeringConfig steer{v, cfg.alpha, cfg.span};
    SteeringExperimentResult res = run_steering_experiment(w, vocab, corpus, steer, cfg.max_new);
    fs::create_directories(cfg.out_dir);
    write_responses(res.steered, cfg.out_dir + "/steered.jsonl");
    write_responses(res.unsteered, cfg.out_dir + "/unsteered.jsonl");
    std::cout << res.steered.size() << " dialogue pairs generated";
    if (!res.skipped.empty()) std::cout << ", " << res.skipped.size() << " skipped (overflow)";
    std::cout << "\n";
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg) {
    auto steered = load_responses(cfg.out_dir + "/steered.jsonl");
    auto unsteered = load_responses(cfg.out_dir + "/unsteered.jsonl");
    EvalLexicons lex = load_eval_lexicons(cfg);
    std::string context = cfg.contrastive_name.empty() ? "default" : cfg.contrastive_name;
    Report report = evaluate(steered, unsteered, lex, context);
    report.seed = cfg.seed;
    report.config_hash = config_hash(cfg);
    report_render(report, ReportFormat::Json, cfg.out_dir);
    report_render(report, ReportFormat::Csv, cfg.out_dir);
    std::cout << report.rows.size() << " report rows -> " << cfg.out_dir << "/report.json\n";
    return 0;
}

int cmd_report(const ExperimentConfig& cfg, const std::string& format) {
    std::ifstream in(cfg.out_dir + "/report.json");
    if (!in) throw Error(Err::IoFailure, "no report.json in " + cfg.out_dir + "; run evaluate first");
    nlohmann::json j;
    in >> j;
    Report report = report_from_json(j);
    ReportFormat f = format == "json"  ? ReportFormat::Json
                     : format == "csv" ? ReportFormat::Csv
                                       : ReportFormat::TextTable;
    auto files = report_render(report, f, cfg.out_dir);
    for (const auto& p : files) std::cout << p << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"activation steering workbench"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    auto add_common = [&](CLI::App* sub, bool need_config = true) {
        auto* opt = sub->add_option("--config", config_path, "experiment config JSON");
        if (need_config) opt->required();
        sub->add_option("--alpha", [&](auto& v) { ov.alpha = std::stod(v[0]); return true; },
                        "steering scale override");
        sub->add_option("--layer", [&](auto& v) { ov.layer = std::stoi(v[0]); return true; },
                        "target layer override");
        sub->add_option("--span", [&](auto& v) { ov.span = v[0]; return true; },
                        "steering span: last:<k> or all");
        sub->add_option("--seed", [&](auto& v) { ov.seed = std::stoull(v[0]); return true; },
                        "seed override");
        sub->add_option("--out", [&](auto& v) { ov.out = v[0]; return true; },
                        "output directory override");
    };

    auto* attribute = app.add_subcommand("attribute", "attribution patching over diagnostic pairs");
    add_common(attribute);
    auto* derive = app.add_subcommand("derive", "derive a steering vector from a contrastive set");
    add_common(derive);
    auto* sweep = app.add_subcommand("sweep-alpha", "grid-search the steering scale");
    add_common(sweep);
    auto* generate = app.add_subcommand("generate", "steered and unsteered continuations");
    add_common(generate);
    auto* evaluate = app.add_subcommand("evaluate", "compare steered vs unsteered responses");
    add_common(evaluate);
    auto* report = app.add_subcommand("report", "render an existing report");
    add_common(report);
    std::string report_format = "text";
    report->add_option("--format", report_format, "csv | json | text");

    auto* train_toy = app.add_subcommand("train-toy", "build the bundled toy model");
    std::string data_dir = "data", out_base = "data/toy_model";
    int steps = 400;
    double lr = 1e-2;
    uint64_t seed = 7;
    train_toy->add_option("--data", data_dir, "fixture data directory");
    train_toy->add_option("--out", out_base, "output base path for weights + vocab");
    train_toy->add_option("--steps", steps, "training steps");
    train_toy->add_option("--lr", lr, "learning rate");
    train_toy->add_option("--seed", seed, "init seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_toy->parsed()) return cmd_train_toy(data_dir, out_base, steps, lr, seed);
        ExperimentConfig cfg = load_config(config_path, ov);
        if (attribute->parsed()) return cmd_attribute(cfg);
        if (derive->parsed()) return cmd_derive(cfg);
        if (sweep->parsed()) return cmd_sweep_alpha(cfg);
        if (generate->parsed()) return cmd_generate(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (report->parsed()) return cmd_report(cfg, report_format);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
