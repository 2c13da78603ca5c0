#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmswitch/eval.hpp"
#include "lmswitch/hmm.hpp"
#include "lmswitch/interpret.hpp"
#include "lmswitch/io.hpp"
#include "lmswitch/lm.hpp"
#include "lmswitch/search.hpp"
#include "lmswitch/switch.hpp"
#include "lmswitch/synthetic.hpp"
#include "lmswitch/transfer.hpp"

using namespace lmswitch;
using nlohmann::json;

namespace {

// Flags shared by every subcommand. Optional members override the config file.
struct Common {
    std::string config;
    std::string out;
    int threads = 0;
    std::optional<std::string> base_lm_dir;
    std::optional<std::string> switch_path;
    std::optional<double> eps0;
    std::optional<double> k;
    std::optional<double> top_p;
    std::optional<int> max_tokens;
    std::optional<int> num_samples;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scorer_mode;
    std::optional<std::string> scorer_url;
    std::optional<std::string> lexicon_path;
    bool lexicon_fallback = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "key=value run configuration file");
    sub->add_option("--out", c.out, "directory receiving all artifacts")->required();
    sub->add_option("--threads", c.threads, "worker thread cap (1 = bitwise deterministic)")->check(CLI::NonNegativeNumber);
    sub->add_option("--base-lm-dir", c.base_lm_dir, "base LM directory");
    sub->add_option("--switch", c.switch_path, "switch directory");
    sub->add_option("--eps0", c.eps0, "switch training magnitude");
    sub->add_option("--k", c.k, "switch multiplier for decoding");
    sub->add_option("--top-p", c.top_p, "nucleus mass");
    sub->add_option("--max-tokens", c.max_tokens, "tokens per sample");
    sub->add_option("--num-samples", c.num_samples, "samples per prompt");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--scorer-mode", c.scorer_mode, "lexicon or http");
    sub->add_option("--scorer-url", c.scorer_url, "http scorer endpoint");
    sub->add_option("--lexicon", c.lexicon_path, "token<TAB>weight lexicon file");
    sub->add_flag("--lexicon-fallback", c.lexicon_fallback, "score with the lexicon when the http scorer is down");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? parse_run_config("") : read_run_config(c.config);
    if (c.base_lm_dir) cfg.base_lm_dir = c.base_lm_dir;
    if (c.switch_path) cfg.switch_path = c.switch_path;
    if (c.eps0) cfg.eps0 = *c.eps0;
    if (c.k) cfg.k = *c.k;
    if (c.top_p) cfg.top_p = *c.top_p;
    if (c.max_tokens) cfg.max_tokens = *c.max_tokens;
    if (c.num_samples) cfg.num_samples = *c.num_samples;
    if (c.seed) cfg.seed = *c.seed;
    if (c.scorer_mode) cfg.scorer_mode = *c.scorer_mode;
    if (c.scorer_url) cfg.scorer_url = c.scorer_url;
    if (c.lexicon_path) cfg.lexicon_path = c.lexicon_path;
    if (!(cfg.eps0 > 0.0)) throw InputError("eps0 must be positive");
    if (cfg.scorer_mode != "lexicon" && cfg.scorer_mode != "http") throw InputError("scorer mode must be lexicon or http");
    return cfg;
}

fs::path out_dir(const Common& c) {
    const fs::path out(c.out);
    fs::create_directories(out);
    return out;
}

const std::string& need(const std::optional<std::string>& v, const char* what) {
    if (!v || v->empty()) throw InputError(std::string("missing ") + what);
    return *v;
}

SoftmaxLm need_lm(const RunConfig& cfg) { return load_lm(need(cfg.base_lm_dir, "base LM directory (--base-lm-dir or base_lm_dir)")); }

SwitchMatrix need_switch(const RunConfig& cfg, const SoftmaxLm& lm) {
    SwitchMatrix sw = load_switch(need(cfg.switch_path, "switch directory (--switch or switch_path)"), lm.vocab().fingerprint());
    if (sw.dim() != lm.dim()) throw InputError("switch dimension does not match the base LM");
    return sw;
}

Scorer make_scorer(const RunConfig& cfg, bool fallback) {
    std::map<std::string, double> lexicon;
    if (cfg.lexicon_path) lexicon = read_lexicon(*cfg.lexicon_path);
    if (cfg.scorer_mode == "lexicon") {
        if (!cfg.lexicon_path) throw InputError("lexicon scorer needs a lexicon file (--lexicon or lexicon_path)");
        return Scorer::from_lexicon(std::move(lexicon));
    }
    const auto url = resolve_scorer_url(cfg.scorer_url);
    if (!url) throw InputError(std::string("http scorer needs scorer_url or ") + kScorerUrlEnv);
    Scorer s = Scorer::from_endpoint(*url);
    if (fallback) {
        if (lexicon.empty()) throw InputError("--lexicon-fallback needs a lexicon file");
        s.lexicon = std::move(lexicon);
        s.lexicon_fallback = true;
    }
    return s;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<TokenSeq> prompts_of(const Vocab& v, const std::optional<std::string>& prompt,
                                 const std::optional<std::string>& prompts_file) {
    std::vector<TokenSeq> out;
    if (prompts_file) {
        for (const auto& line : read_lines(*prompts_file)) out.push_back(v.tokenize(line));
        if (out.empty()) throw InputError("prompt file " + *prompts_file + " is empty");
    } else {
        out.push_back(v.tokenize(prompt.value_or("")));
    }
    return out;
}

DecodeConfig decode_config(const RunConfig& cfg) {
    DecodeConfig dc;
    dc.k = cfg.k;
    dc.top_p = cfg.top_p;
    dc.max_tokens = cfg.max_tokens;
    dc.num_samples = cfg.num_samples;
    dc.seed = cfg.seed;
    dc.validate();
    return dc;
}

// train-base-lm

struct TrainLmOpts {
    std::optional<std::string> corpus;
    bool synthetic = false;
    int dim = BaseLmConfig{}.dim;
    int epochs = BaseLmConfig{}.epochs;
    double lr = BaseLmConfig{}.lr;
    double init_std = BaseLmConfig{}.init_std;
    std::size_t max_vocab = 200;
    bool strict = false;
};

json run_train_base_lm(const Common& c, const TrainLmOpts& o) {
    const RunConfig cfg = resolve(c);
    if (o.synthetic == o.corpus.has_value()) throw InputError("give exactly one of --corpus and --synthetic");
    const fs::path out = out_dir(c);
    std::vector<std::string> texts;
    std::size_t skipped = 0;
    if (o.synthetic) {
        DetoxConfig dcfg;
        dcfg.seed = cfg.seed;
        const DetoxCorpus d = make_detox_corpus(dcfg);
        std::vector<CorpusRecord> mixed, labeled;
        for (std::size_t i = 0; i < d.corpus.size(); ++i) mixed.push_back({d.corpus[i], d.corpus_labels[i]});
        for (const auto& s : d.clean) labeled.push_back({s, 1});
        for (const auto& s : d.toxic) labeled.push_back({s, -1});
        write_corpus(out / "corpus.jsonl", mixed);
        write_corpus(out / "labeled.jsonl", labeled);
        write_lexicon(out / "lexicon.tsv", d.lexicon());
        std::string prompts;
        for (const auto& p : d.prompts) prompts += p + '\n';
        write_text(out / "prompts.txt", prompts);
        texts = d.corpus;
    } else {
        const CorpusReadResult r = read_corpus(*o.corpus, o.strict);
        skipped = r.issues.size();
        for (const auto& issue : r.issues)
            std::cerr << *o.corpus << ":" << issue.line << ": skipped: " << issue.message << '\n';
        for (const auto& rec : r.records) texts.push_back(rec.text);
    }
    if (texts.empty()) throw InputError("training corpus is empty");
    const Vocab vocab = Vocab::build(texts, o.max_vocab);
    BaseLmConfig bc;
    bc.dim = o.dim;
    bc.epochs = o.epochs;
    bc.lr = o.lr;
    bc.init_std = o.init_std;
    bc.seed = cfg.seed;
    const SoftmaxLm lm = train_base_lm(texts, vocab, bc);
    save_lm(out / "model", lm);
    return {{"vocab_size", vocab.size()},
            {"dim", lm.dim()},
            {"sentences", texts.size()},
            {"skipped_lines", skipped},
            {"perplexity", perplexity(lm, texts)},
            {"model_dir", (out / "model").string()}};
}

// train-switch

struct TrainSwitchOpts {
    std::string corpus;
    int steps = SwitchTrainConfig{}.steps;
    double lr = SwitchTrainConfig{}.lr;
    double init_var = SwitchTrainConfig{}.init_var;
    int batch = 0;
    bool strict = false;
};

json run_train_switch(const Common& c, const TrainSwitchOpts& o) {
    const RunConfig cfg = resolve(c);
    if (o.corpus.empty()) throw InputError("missing labeled corpus path (--corpus)");
    if (!fs::exists(o.corpus)) throw InputError("labeled corpus not found: " + o.corpus);
    const SoftmaxLm lm = need_lm(cfg);
    const CorpusReadResult r = read_corpus(o.corpus, o.strict);
    for (const auto& issue : r.issues) std::cerr << o.corpus << ":" << issue.line << ": skipped: " << issue.message << '\n';
    std::vector<TokenSeq> pos, neg;
    for (const auto& rec : r.records) (rec.label > 0 ? pos : neg).push_back(lm.vocab().tokenize(rec.text));
    if (pos.empty()) throw InputError("labeled corpus " + o.corpus + " has no positive (+1) records");
    SwitchTrainConfig sc;
    sc.steps = o.steps;
    sc.lr = o.lr;
    sc.init_var = o.init_var;
    sc.batch = o.batch;
    sc.seed = cfg.seed;
    sc.eps0 = cfg.eps0;
    const SwitchMatrix sw = train_switch(lm, pos, neg, sc);
    const fs::path out = out_dir(c);
    save_switch(out / "switch", sw, lm.vocab().fingerprint());
    return {{"positives", pos.size()},
            {"negatives", neg.size()},
            {"skipped_lines", r.issues.size()},
            {"lambda_max", sw.lambda_max()},
            {"switch_dir", (out / "switch").string()}};
}

// generate

struct GenerateOpts {
    std::optional<std::string> prompt;
    std::optional<std::string> prompts_file;
    std::optional<double> scale;
};

json run_generate(const Common& c, const GenerateOpts& o) {
    const RunConfig cfg = resolve(c);
    const SoftmaxLm lm = need_lm(cfg);
    SwitchMatrix sw;
    if (cfg.switch_path) {
        sw = need_switch(cfg, lm);
    } else {
        if (cfg.k != 0.0) throw InputError("decoding with k != 0 needs a switch (--switch or switch_path)");
        sw.W = Matrix::Zero(lm.dim(), lm.dim());
        sw.W_dummy = sw.W;
    }
    sw.eps0 = cfg.eps0;
    DecodeConfig dc = decode_config(cfg);
    dc.scale_override = o.scale;
    const auto prompts = prompts_of(lm.vocab(), o.prompt, o.prompts_file);
    const fs::path out = out_dir(c);
    std::string lines;
    std::size_t count = 0;
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        DecodeConfig pc = dc;
        pc.seed = dc.seed + j * static_cast<std::uint64_t>(dc.num_samples);
        const auto samples = decode(lm, sw, pc, prompts[j]);
        for (std::size_t i = 0; i < samples.size(); ++i, ++count) {
            lines += json{{"prompt", j},
                          {"sample", i},
                          {"prompt_text", lm.vocab().text(prompts[j])},
                          {"text", lm.vocab().text(samples[i])},
                          {"tokens", samples[i]}}
                         .dump() +
                     '\n';
        }
    }
    write_text(out / "generations.jsonl", lines);
    return {{"prompts", prompts.size()},
            {"samples", count},
            {"k", cfg.k},
            {"seed", cfg.seed},
            {"generations", (out / "generations.jsonl").string()}};
}

// sweep

struct SweepOpts {
    std::vector<double> ks{0, 1, 2, 3, 4, 5};
    std::optional<std::string> prompt;
    std::optional<std::string> prompts_file;
    double threshold = 0.5;
};

json run_sweep(const Common& c, const SweepOpts& o) {
    const RunConfig cfg = resolve(c);
    const SoftmaxLm lm = need_lm(cfg);
    SwitchMatrix sw = need_switch(cfg, lm);
    sw.eps0 = cfg.eps0;
    const Scorer scorer = make_scorer(cfg, c.lexicon_fallback);
    const auto prompts = prompts_of(lm.vocab(), o.prompt, o.prompts_file);
    const SweepMetric metric = [&](const std::vector<std::vector<TokenSeq>>& gens) {
        return generation_toxicity(scorer, lm.vocab(), gens, o.threshold).avg_max;
    };
    const auto rows = ablation_sweep(lm, sw, o.ks, prompts, decode_config(cfg), metric);
    const fs::path out = out_dir(c);
    write_text(out / "sweep.csv", sweep_csv(rows));
    json table = json::array();
    for (const auto& r : rows) table.push_back({{"k", r.k}, {"avg_max_toxicity", r.metric}, {"perplexity", r.perplexity}});
    return {{"rows", table}, {"table", (out / "sweep.csv").string()}};
}

// verify-hmm

struct VerifyHmmOpts {
    std::string instance = "exact";
    std::optional<std::string> search_dir;
    int d_s = 3;
    int d_c = 1;
    int cluster_size = 3;
    int observations = 4;
    double noise = ExportOptions{}.noise;
    double condition_scale = 1.5;
    int max_len = 3;
};

json run_verify_hmm(const Common& c, const VerifyHmmOpts& o) {
    const RunConfig cfg = resolve(c);
    ConditionedHmm chmm;
    double tol = 1e-6;
    if (o.instance == "exact") {
        chmm = exact_cluster_instance(o.d_s, o.d_c, o.cluster_size, o.observations, cfg.seed);
    } else if (o.instance == "search") {
        const SearchResult r = load_search_result(need(o.search_dir, "search result directory (--search-dir)"));
        ExportOptions eo;
        eo.observations = o.observations;
        eo.noise = o.noise;
        eo.seed = cfg.seed;
        chmm = export_chmm(r, eo);
        tol = std::max(tol, std::sqrt(r.final_loss));
    } else {
        throw InputError("--instance must be exact or search");
    }
    const SwitchCertificate cert = certify_switch(chmm, o.condition_scale, o.max_len, tol);
    const fs::path out = out_dir(c);
    write_mat1(out / "W.mat1", cert.W);
    write_mat1(out / "Wprime.mat1", cert.Wprime);
    const bool pass = cert.theorem1.max_l1 < 1e-6 && cert.lemmas.swap_transition < 1e-5 &&
                      cert.lemmas.swap_emission < 1e-5 && cert.lemmas.swap_combined < 1e-5;
    const json report{{"instance", o.instance},
                      {"max_l1", cert.theorem1.max_l1},
                      {"prefixes", cert.theorem1.prefixes},
                      {"fidelity_warning", cert.theorem1.fidelity_warning},
                      {"condition_number", cert.condition_number},
                      {"ill_conditioned", cert.ill_conditioned},
                      {"lemma_swap_transition", cert.lemmas.swap_transition},
                      {"lemma_swap_emission", cert.lemmas.swap_emission},
                      {"lemma_swap_combined", cert.lemmas.swap_combined},
                      {"pass", pass}};
    write_text(out / "report.json", report.dump(2) + '\n');
    return report;
}

// verify-bounds

struct VerifyBoundsOpts {
    int L = 3;
    std::vector<double> ks{-1, -0.5, 0, 0.25, 0.5, 0.75, 1, 1.5, 2};
    std::optional<double> eps;
    std::optional<std::string> switch2;
};

json run_verify_bounds(const Common& c, const VerifyBoundsOpts& o) {
    const RunConfig cfg = resolve(c);
    const SoftmaxLm lm = need_lm(cfg);
    const SwitchMatrix sw = need_switch(cfg, lm);
    const double eps = o.eps.value_or(cfg.eps0);
    json checks = json::array();
    bool pass = true;
    double worst_ratio = -1.0;
    json worst;
    auto record = [&](json entry, const BoundCheck& b) {
        entry["lhs"] = b.lhs;
        entry["bound"] = b.bound;
        entry["pass"] = b.pass;
        pass = pass && b.pass;
        const double ratio = b.bound > 0.0 ? b.lhs / b.bound : (b.lhs > 0.0 ? INFINITY : 0.0);
        if (ratio > worst_ratio) {
            worst_ratio = ratio;
            worst = entry;
        }
        checks.push_back(std::move(entry));
    };
    for (double k : o.ks) record({{"theorem", 2}, {"k", k}, {"eps", eps}}, theorem2_check(lm, sw.W, eps, k, o.L));
    if (o.switch2) {
        const SwitchMatrix other = load_switch(*o.switch2, lm.vocab().fingerprint());
        if (other.dim() != sw.dim()) throw InputError("the two switches have different dimensions");
        for (double e : {eps, eps / 2})
            record({{"theorem", 3}, {"eps", e}}, theorem3_check(lm, sw.W, other.W, e, o.L));
    }
    const fs::path out = out_dir(c);
    write_text(out / "bounds.json", json{{"L", o.L}, {"checks", checks}, {"pass", pass}}.dump(2) + '\n');
    return {{"lhs", worst["lhs"]}, {"bound", worst["bound"]}, {"pass", pass}, {"checks", checks.size()},
            {"report", (out / "bounds.json").string()}};
}

// search-assumptions

struct SearchOpts {
    int n = SearchConfig{}.n;
    int d_s = SearchConfig{}.d_s;
    int d_c = SearchConfig{}.d_c;
    long max_steps = SearchConfig{}.max_steps;
    double lr = SearchConfig{}.lr;
    double target = SearchConfig{}.target_loss;
    std::vector<std::uint64_t> seeds = SearchConfig{}.seeds;
    bool full_scale = false;
};

json run_search(const Common& c, const SearchOpts& o) {
    resolve(c);
    SearchConfig sc = o.full_scale ? SearchConfig::full_scale() : SearchConfig{};
    if (!o.full_scale) {
        sc.n = o.n;
        sc.d_s = o.d_s;
        sc.d_c = o.d_c;
        sc.max_steps = o.max_steps;
        sc.lr = o.lr;
        sc.target_loss = o.target;
    }
    sc.seeds = o.seeds;
    sc.validate();
    if (sc.long_running()) std::cerr << "warning: this search configuration is expected to run for a long time\n";
    const auto results = search(sc);
    const fs::path out = out_dir(c);
    json rows = json::array();
    int converged = 0;
    for (const auto& r : results) {
        save_search_result(out / ("seed_" + std::to_string(r.seed)), r);
        converged += r.converged ? 1 : 0;
        rows.push_back({{"seed", r.seed},
                        {"initial_loss", r.initial_loss},
                        {"final_loss", r.final_loss},
                        {"steps", r.steps_used},
                        {"converged", r.converged}});
    }
    return {{"seeds", rows}, {"converged", converged}};
}

// transfer

struct TransferOpts {
    std::string target_lm;
    int anchors = 200;
    int min_anchors = 16;
    int steps = FitConfig{}.steps;
    double lr = FitConfig{}.lr;
};

json run_transfer(const Common& c, const TransferOpts& o) {
    const RunConfig cfg = resolve(c);
    if (o.target_lm.empty()) throw InputError("missing target LM directory (--target-lm)");
    const SoftmaxLm src = need_lm(cfg);
    const SwitchMatrix sw = need_switch(cfg, src);
    const SoftmaxLm tgt = load_lm(o.target_lm);
    const auto anchors = anchor_vocab(src.vocab(), tgt.vocab(), o.anchors, o.min_anchors);
    FitConfig fc;
    fc.steps = o.steps;
    fc.lr = o.lr;
    fc.seed = cfg.seed;
    const EmbeddingMap map = fit_embedding_map(anchor_embeddings(src, anchors), anchor_embeddings(tgt, anchors), fc);
    const SwitchMatrix moved = transfer_switch(sw, map);
    const fs::path out = out_dir(c);
    save_embedding_map(out / "map", map);
    save_switch(out / "switch", moved, tgt.vocab().fingerprint());
    return {{"anchors", map.anchor_count},
            {"fit_residual", map.fit_residual},
            {"oracle_residual", map.oracle_residual},
            {"oracle_gap", map.oracle_gap},
            {"decode_scale", moved.decode_scale},
            {"switch_dir", (out / "switch").string()}};
}

// interpret

struct InterpretOpts {
    int rows = InterpretConfig{}.rows;
    int top_k = InterpretConfig{}.k;
};

json run_interpret(const Common& c, const InterpretOpts& o) {
    const RunConfig cfg = resolve(c);
    const SoftmaxLm lm = need_lm(cfg);
    const SwitchMatrix sw = need_switch(cfg, lm);
    const Scorer scorer = make_scorer(cfg, c.lexicon_fallback);
    InterpretConfig ic;
    ic.rows = o.rows;
    ic.k = o.top_k;
    const auto reports = interpret_switch(sw.W, lm, scorer, ic);
    const SvdDecomposition svd = svd_directions(sw.W);
    const fs::path out = out_dir(c);
    write_mat1(out / "U.mat1", svd.U);
    write_mat1(out / "S.mat1", svd.S);
    write_mat1(out / "Vt.mat1", svd.Vt);
    json dirs = json::array();
    int retained = 0;
    for (const auto& r : reports) {
        json d{{"row", r.row}, {"singular_value", r.singular_value}, {"discarded", r.discarded},
               {"top", r.top}, {"bottom", r.bottom}};
        if (!r.discarded) {
            ++retained;
            d["keyword_side"] = r.keyword_is_top ? "top" : "bottom";
            d["tie"] = r.tie;
            d["top_score"] = r.top_score;
            d["bottom_score"] = r.bottom_score;
            d["keywords"] = r.keywords();
        }
        dirs.push_back(std::move(d));
    }
    write_text(out / "interpret.json",
               json{{"directions", dirs}, {"reconstruction_error", svd.reconstruction_error(sw.W)}}.dump(2) + '\n');
    json summary{{"directions", reports.size()}, {"retained", retained}, {"report", (out / "interpret.json").string()}};
    for (const auto& r : reports) {
        if (r.discarded) continue;
        summary["leading_keywords"] = r.keywords();
        break;
    }
    return summary;
}

// eval-metrics

struct EvalOpts {
    std::string generations;
    double threshold = 0.5;
};

json run_eval_metrics(const Common& c, const EvalOpts& o) {
    const RunConfig cfg = resolve(c);
    if (o.generations.empty()) throw InputError("missing generations file (--generations)");
    const Scorer scorer = make_scorer(cfg, c.lexicon_fallback);
    std::vector<std::vector<std::string>> texts;
    std::vector<std::string> prompt_texts;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(o.generations)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw InputError(o.generations + ":" + std::to_string(lineno) + ": malformed JSON");
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
            throw InputError(o.generations + ":" + std::to_string(lineno) + ": missing string field \"text\"");
        const std::size_t p = j.value("prompt", std::size_t{0});
        if (p >= texts.size()) {
            texts.resize(p + 1);
            prompt_texts.resize(p + 1);
        }
        texts[p].push_back(j["text"].get<std::string>());
        prompt_texts[p] = j.value("prompt_text", std::string());
    }
    std::vector<std::vector<std::string>> groups;
    std::vector<std::string> group_prompts;
    for (std::size_t p = 0; p < texts.size(); ++p) {
        if (texts[p].empty()) continue;
        groups.push_back(texts[p]);
        group_prompts.push_back(prompt_texts[p]);
    }
    if (groups.empty()) throw InputError("generations file " + o.generations + " holds no generations");

    std::optional<double> ppl;
    if (cfg.base_lm_dir) {
        const SoftmaxLm lm = need_lm(cfg);
        std::vector<TokenSeq> prompts;
        std::vector<std::vector<TokenSeq>> gens;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            prompts.push_back(lm.vocab().tokenize(group_prompts[g]));
            gens.emplace_back();
            for (const auto& t : groups[g]) gens.back().push_back(lm.vocab().tokenize(t));
        }
        ppl = generation_perplexity(lm, prompts, gens);
    }
    const ToxicityReport r = evaluate_generations(scorer, groups, ppl.value_or(1.0), o.threshold);
    const json report{{"avg_max_toxicity", r.avg_max_toxicity},
                      {"toxicity_prob", r.toxicity_prob},
                      {"dist1", r.dist1},
                      {"dist2", r.dist2},
                      {"dist3", r.dist3},
                      {"output_ppl", ppl ? json(*ppl) : json(nullptr)},
                      {"prompts", groups.size()}};
    const fs::path out = out_dir(c);
    write_text(out / "metrics.json", report.dump(2) + '\n');
    return report;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear switch conditioning for language models"};
    app.require_subcommand(1);
    app.fallthrough(false);

    std::vector<Common> commons(10);
    std::function<json()> action;
    auto sub = [&](const char* name, const char* help, std::size_t slot) {
        CLI::App* s = app.add_subcommand(name, help);
        add_common(s, commons[slot]);
        return s;
    };

    TrainLmOpts train_lm;
    auto* s_lm = sub("train-base-lm", "train the order-1 softmax base LM", 0);
    s_lm->add_option("--corpus", train_lm.corpus, "JSONL corpus (labels ignored)");
    s_lm->add_flag("--synthetic", train_lm.synthetic, "generate the planted-lexicon corpus into --out and train on it");
    s_lm->add_option("--dim", train_lm.dim, "embedding dimension");
    s_lm->add_option("--epochs", train_lm.epochs, "full-batch epochs");
    s_lm->add_option("--lr", train_lm.lr, "learning rate");
    s_lm->add_option("--init-std", train_lm.init_std, "initialization standard deviation");
    s_lm->add_option("--max-vocab", train_lm.max_vocab, "vocabulary cap");
    s_lm->add_flag("--strict", train_lm.strict, "fail on malformed corpus lines");
    s_lm->callback([&] { action = [&] { return run_train_base_lm(commons[0], train_lm); }; });

    TrainSwitchOpts train_sw;
    auto* s_sw = sub("train-switch", "train a switch matrix on a labeled corpus", 1);
    s_sw->add_option("--corpus", train_sw.corpus, "JSONL corpus with labels 1 / -1");
    s_sw->add_option("--steps", train_sw.steps, "Adam steps");
    s_sw->add_option("--lr", train_sw.lr, "Adam learning rate");
    s_sw->add_option("--init-var", train_sw.init_var, "initialization variance");
    s_sw->add_option("--batch", train_sw.batch, "sequences per step (0 = all)");
    s_sw->add_flag("--strict", train_sw.strict, "fail on malformed corpus lines");
    s_sw->callback([&] { action = [&] { return run_train_switch(commons[1], train_sw); }; });

    GenerateOpts gen;
    auto* s_gen = sub("generate", "sample continuations from the switched LM", 2);
    s_gen->add_option("--prompt", gen.prompt, "prompt text");
    s_gen->add_option("--prompts", gen.prompts_file, "file with one prompt per line");
    s_gen->add_option("--scale", gen.scale, "override the switch's decode scale");
    s_gen->callback([&] { action = [&] { return run_generate(commons[2], gen); }; });

    SweepOpts sweep;
    auto* s_sweep = sub("sweep", "switch-value ablation with toxicity and perplexity", 3);
    s_sweep->add_option("--ks", sweep.ks, "switch multipliers")->delimiter(',');
    s_sweep->add_option("--prompt", sweep.prompt, "prompt text");
    s_sweep->add_option("--prompts", sweep.prompts_file, "file with one prompt per line");
    s_sweep->add_option("--threshold", sweep.threshold, "toxicity threshold");
    s_sweep->callback([&] { action = [&] { return run_sweep(commons[3], sweep); }; });

    VerifyHmmOpts vh;
    auto* s_vh = sub("verify-hmm", "construct the HMM switch and verify it by enumeration", 4);
    s_vh->add_option("--instance", vh.instance, "exact or search");
    s_vh->add_option("--search-dir", vh.search_dir, "search result directory (instance = search)");
    s_vh->add_option("--ds", vh.d_s, "semantic dimensions (exact instance)");
    s_vh->add_option("--dc", vh.d_c, "condition dimensions (exact instance)");
    s_vh->add_option("--cluster-size", vh.cluster_size, "states per dimension (exact instance)");
    s_vh->add_option("--observations", vh.observations, "observation count");
    s_vh->add_option("--noise", vh.noise, "emission noise of the search export");
    s_vh->add_option("--condition-scale", vh.condition_scale, "factor on the condition entries of the initial state");
    s_vh->add_option("--max-len", vh.max_len, "longest prefix enumerated");
    s_vh->callback([&] { action = [&] { return run_verify_hmm(commons[4], vh); }; });

    VerifyBoundsOpts vb;
    auto* s_vb = sub("verify-bounds", "check the linearity bounds by exact enumeration", 5);
    s_vb->add_option("--L", vb.L, "sequence length");
    s_vb->add_option("--ks", vb.ks, "interpolation multipliers")->delimiter(',');
    s_vb->add_option("--eps", vb.eps, "switch value (default eps0)");
    s_vb->add_option("--switch2", vb.switch2, "second switch directory for the compositional bound");
    s_vb->callback([&] { action = [&] { return run_verify_bounds(commons[5], vb); }; });

    SearchOpts so;
    auto* s_so = sub("search-assumptions", "gradient search for assumption-valid state representations", 6);
    s_so->add_option("--n", so.n, "hidden states");
    s_so->add_option("--ds", so.d_s, "semantic dimensions");
    s_so->add_option("--dc", so.d_c, "condition dimensions");
    s_so->add_option("--max-steps", so.max_steps, "step cap per seed");
    s_so->add_option("--lr", so.lr, "initial learning rate");
    s_so->add_option("--target", so.target, "loss target");
    s_so->add_option("--seeds", so.seeds, "seeds")->delimiter(',');
    s_so->add_flag("--full-scale", so.full_scale, "n=200, d=21, 500k steps (hours)");
    s_so->callback([&] { action = [&] { return run_search(commons[6], so); }; });

    TransferOpts tr;
    auto* s_tr = sub("transfer", "map a switch onto another LM through anchor embeddings", 7);
    s_tr->add_option("--target-lm", tr.target_lm, "target LM directory");
    s_tr->add_option("--anchors", tr.anchors, "anchor tokens");
    s_tr->add_option("--min-anchors", tr.min_anchors, "fail below this many shared tokens");
    s_tr->add_option("--steps", tr.steps, "Adam steps for the map");
    s_tr->add_option("--lr", tr.lr, "Adam learning rate for the map");
    s_tr->callback([&] { action = [&] { return run_transfer(commons[7], tr); }; });

    InterpretOpts io;
    auto* s_in = sub("interpret", "SVD directions of a switch and their keyword groups", 8);
    s_in->add_option("--rows", io.rows, "leading directions to inspect");
    s_in->add_option("--top-k", io.top_k, "tokens per group");
    s_in->callback([&] { action = [&] { return run_interpret(commons[8], io); }; });

    EvalOpts ev;
    auto* s_ev = sub("eval-metrics", "toxicity, diversity and perplexity of generations", 9);
    s_ev->add_option("--generations", ev.generations, "JSONL generations (fields prompt, text)");
    s_ev->add_option("--threshold", ev.threshold, "toxicity threshold");
    s_ev->callback([&] { action = [&] { return run_eval_metrics(commons[9], ev); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    for (const auto& c : commons)
        if (c.threads > 0) omp_set_num_threads(c.threads);
    try {
        json summary = action();
        summary["command"] = command;
        summary["status"] = "ok";
        std::cout << summary.dump() << std::endl;
        return 0;
    } catch (const InputError& e) {
        std::cout << json{{"command", command}, {"status", "input_error"}, {"message", e.what()}}.dump() << std::endl;
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cout << json{{"command", command}, {"status", "internal_error"}, {"message", e.what()}}.dump() << std::endl;
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
