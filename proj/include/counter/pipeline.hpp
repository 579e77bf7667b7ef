#pragma once

// Pipeline stages behind the command-line tool. Each stage reads its
// prerequisites from the output directory, checks their config hashes against
// the current configuration, writes its artifacts and a manifest.
//
//   <out>/synth/      interactions.tsv truth.tsv catalog.txt
//   <out>/corpus/     interactions.tsv users.tsv items.tsv aspects.tsv
//   <out>/model/      model.ckpt loss.csv
//   <out>/recommend/  lists.jsonl
//   <out>/explain/    <variant>.jsonl
//   <out>/eval/       report.json pairs_<variant>.csv profile_<variant>.csv
//   <out>/sweep/      sweep.csv lambda_<value>.jsonl

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "counter/config.hpp"
#include "counter/corpus.hpp"
#include "counter/counterfactual.hpp"
#include "counter/error.hpp"
#include "counter/io.hpp"
#include "counter/metrics.hpp"
#include "counter/recsys.hpp"
#include "counter/synth.hpp"

namespace counter {

/// Exit status of a stage that ran but had nothing to evaluate.
inline constexpr int kNotApplicable = 5;

class Pipeline {
 public:
  Pipeline(RunConfig config, std::ostream& log) : config_(std::move(config)), log_(log) {}

  const RunConfig& config() const { return config_; }
  fs::path root() const { return config_.text("out"); }
  fs::path dir(const char* stage) const { return root() / stage; }

  // -------------------------------------------------------------------------

  void synth() {
    const auto started = utc_now();
    const SynthSpec spec = config_.synth();
    const auto generated = generate(spec);
    const std::string hash = synth_hash();
    const auto out_dir = dir("synth");
    {
      auto out = open_output(out_dir / "interactions.tsv");
      out << "#config_hash=" << hash << '\n';
      write_interactions(out, generated.corpus);
    }
    {
      auto out = open_output(out_dir / "truth.tsv");
      out << "# config_hash=" << hash << '\n';
      write_truth(out, generated.corpus, generated.truth);
    }
    {
      auto out = open_output(out_dir / "catalog.txt");
      out << "# config_hash=" << hash << '\n';
      for (const auto& name : generated.corpus.catalog.names()) out << name << '\n';
    }
    note("synth: " + std::to_string(generated.corpus.records.size()) + " interactions, " +
         std::to_string(spec.users) + " users, " + std::to_string(spec.items) + " items");
    finish(out_dir, "synth", hash, started, {}, {"interactions.tsv", "truth.tsv", "catalog.txt"});
  }

  void ingest() {
    const auto started = utc_now();
    const std::string hash = corpus_hash_from_data();
    IngestOptions options;
    options.default_scale = config_.rating_scale();
    if (!config_.text("catalog").empty()) {
      options.policy = CatalogPolicy::kFixed;
      options.fixed_aspects = read_catalog(config_.text("catalog"));
    }
    const Corpus corpus = ingest_file(config_.text("data"), options);
    const auto out_dir = dir("corpus");
    {
      auto out = open_output(out_dir / "interactions.tsv");
      out << "#config_hash=" << hash << '\n';
      write_interactions(out, corpus);
    }
    auto index_map = [&](const char* name, const std::vector<std::string>& ids) {
      auto out = open_output(out_dir / name);
      out << "# config_hash=" << hash << '\n';
      write_index_map(out, ids);
    };
    index_map("users.tsv", corpus.user_ids);
    index_map("items.tsv", corpus.item_ids);
    index_map("aspects.tsv", corpus.catalog.names());
    note("ingest: " + std::to_string(corpus.records.size()) + " interactions, " +
         std::to_string(corpus.users()) + " users, " + std::to_string(corpus.items()) +
         " items, " + std::to_string(corpus.aspects()) + " aspects");
    finish(out_dir, "ingest", hash, started, {},
           {"interactions.tsv", "users.tsv", "items.tsv", "aspects.tsv"});
  }

  void train() {
    const auto started = utc_now();
    const Data data = load_data();
    const TrainingHyper hyper = config_.training();
    const std::string hash = model_hash(data.corpus_hash);
    const auto result = counter::train(data.matrices, hyper);
    const auto out_dir = dir("model");
    fs::create_directories(out_dir);
    save_checkpoint_file((out_dir / "model.ckpt").string(), result.model,
                         {{"config_hash", hash}});
    {
      auto out = open_output(out_dir / "loss.csv");
      out << "# config_hash=" << hash << '\n' << "epoch,loss\n";
      for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        out << e + 1 << ',' << detail::format_real(result.epoch_loss[e]) << '\n';
      }
    }
    note("train: final epoch loss " + detail::format_real(result.epoch_loss.back()));
    finish(out_dir, "train", hash, started, {{"corpus/interactions.tsv", data.corpus_hash}},
           {"model.ckpt", "loss.csv"});
  }

  void recommend() {
    const auto started = utc_now();
    const Data data = load_data();
    const auto model = load_model(data.corpus_hash);
    const std::size_t k = config_.k();
    const std::string hash = lists_hash(data.corpus_hash);
    std::vector<std::optional<RankedList>> slots(data.corpus.users());
    parallel_for(slots.size(), config_.threads(), [&](std::size_t u) {
      if (candidate_items(data.matrices.b, u).size() < k + 1) return;
      slots[u] = recommend_top_k(u, k, model, data.matrices);
    });
    const auto out_dir = dir("recommend");
    auto out = open_output(out_dir / "lists.jsonl");
    std::size_t written = 0;
    for (const auto& list : slots) {
      if (!list) continue;
      out << list_to_json(*list, data.corpus, hash).dump() << '\n';
      ++written;
    }
    out.close();
    if (written < slots.size()) {
      note("recommend: skipped " + std::to_string(slots.size() - written) +
           " users with fewer than k+1 candidate items");
    }
    note("recommend: " + std::to_string(written) + " lists of length " + std::to_string(k));
    finish(out_dir, "recommend", hash, started, {{"model/model.ckpt", model_hash(data.corpus_hash)}},
           {"lists.jsonl"});
  }

  void explain() {
    const auto started = utc_now();
    const Data data = load_data();
    const auto model = load_model(data.corpus_hash);
    const auto lists = load_lists(data);
    const CfHyper hyper = config_.counterfactual();
    const auto out_dir = dir("explain");
    std::vector<std::string> outputs;
    std::string combined;
    for (auto variant : config_.variants()) {
      const auto batch = explain_all(model, data.matrices, lists, variant, hyper, config_.threads());
      const std::string hash = explain_hash(data.corpus_hash, variant);
      const std::string file = std::string(to_string(variant)) + ".jsonl";
      write_explanations(out_dir / file, batch, data.corpus, hash);
      outputs.push_back(file);
      combined += hash;
      note("explain: " + std::string(to_string(variant)) + " fidelity " +
           (batch.empty() ? std::string("n/a") : detail::format_real(fidelity(batch))) + " over " +
           std::to_string(batch.size()) + " pairs");
    }
    finish(out_dir, "explain", hex64(fnv1a(combined)), started,
           {{"recommend/lists.jsonl", lists_hash(data.corpus_hash)}}, outputs);
  }

  /// Returns 0, or kNotApplicable when some variant had no explanations.
  int evaluate() {
    const auto started = utc_now();
    const Data data = load_data();
    const auto model = load_model(data.corpus_hash);
    const auto truth = test_ground_truth(data.corpus, data.split);
    const std::size_t k = config_.k();
    const auto seed = config_.count("seed");
    const auto out_dir = dir("eval");
    const std::string hash = eval_hash(data.corpus_hash);

    Json variants = Json::array();
    std::vector<std::string> outputs{"report.json"};
    std::map<std::string, std::string> inputs;
    bool all_applicable = true;
    for (auto variant : config_.variants()) {
      const std::string name(to_string(variant));
      const auto path = dir("explain") / (name + ".jsonl");
      require_file(path, "counter explain");
      const std::string expected = explain_hash(data.corpus_hash, variant);
      inputs["explain/" + name + ".jsonl"] = expected;
      const auto batch = read_explanations(path, data.corpus, expected);
      if (batch.empty()) {
        all_applicable = false;
        note("evaluate: " + path.string() + " holds no explanations; not applicable");
        variants.push_back(Json{{"variant", name}, {"status", "not_applicable"}});
        continue;
      }
      const auto report =
          counter::evaluate(name, batch, model, data.matrices, truth, k, config_.threads());
      const auto random = random_baseline(batch, data.corpus.aspects(), is_single(variant), seed);
      const auto baseline = counter::evaluate("random-" + name, random, model, data.matrices, truth,
                                              k, config_.threads());
      write_pairs_csv(out_dir / ("pairs_" + name + ".csv"), report, batch, data.corpus, hash);
      write_profile_csv(out_dir / ("profile_" + name + ".csv"), report, hash);
      outputs.push_back("pairs_" + name + ".csv");
      outputs.push_back("profile_" + name + ".csv");
      variants.push_back(Json{{"variant", name},
                              {"status", "ok"},
                              {"report", report_to_json(report)},
                              {"random_baseline", report_to_json(baseline)}});
      note("evaluate: " + name + " fidelity " + detail::format_real(report.fidelity) +
           (report.user.applicable() ? ", F1 " + detail::format_real(report.user.mean.f1) : "") +
           (report.model.applicable() ? ", F_NS " + detail::format_real(report.model.fns) : ""));
    }
    Json report{{"config_hash", hash},
                {"k", k},
                {"seed", seed},
                {"status", all_applicable ? "ok" : "not_applicable"},
                {"variants", std::move(variants)}};
    {
      auto out = open_output(out_dir / "report.json");
      out << report.dump(2) << '\n';
    }
    finish(out_dir, "evaluate", hash, started, inputs, outputs);
    return all_applicable ? 0 : kNotApplicable;
  }

  void sweep() {
    const auto started = utc_now();
    const Data data = load_data();
    const auto model = load_model(data.corpus_hash);
    const auto lists = load_lists(data);
    const auto truth = test_ground_truth(data.corpus, data.split);
    const Variant variant = parse_variant(config_.text("sweep_variant"));
    const auto lambdas = config_.reals("lambdas");
    if (lambdas.empty()) throw ConfigError("lambdas must list at least one value");
    const std::size_t k = config_.k();
    const std::string hash = sweep_hash(data.corpus_hash);
    const auto out_dir = dir("sweep");
    std::vector<std::string> outputs{"sweep.csv"};

    std::ostringstream rows;
    rows << "# config_hash=" << hash << '\n'
         << "lambda,attempted,valid,fidelity,mean_complexity,mean_strength,precision,recall,f1,"
            "pn,ps,fns\n";
    for (double lambda : lambdas) {
      CfHyper hyper = config_.counterfactual();
      hyper.lambda = lambda;
      hyper.validate();
      const auto batch = explain_all(model, data.matrices, lists, variant, hyper, config_.threads());
      const std::string file = "lambda_" + detail::format_real(lambda) + ".jsonl";
      write_explanations(out_dir / file, batch, data.corpus, hash);
      outputs.push_back(file);
      const auto report = counter::evaluate(std::string(to_string(variant)), batch, model,
                                            data.matrices, truth, k, config_.threads());
      const auto& u = report.user.mean;
      const auto& m = report.model;
      rows << detail::format_real(lambda) << ',' << report.attempted << ',' << report.valid << ','
           << detail::format_real(report.fidelity) << ','
           << detail::format_real(report.mean_complexity) << ','
           << detail::format_real(report.mean_strength) << ','
           << detail::format_real(u.precision) << ',' << detail::format_real(u.recall) << ','
           << detail::format_real(u.f1) << ',' << detail::format_real(m.pn) << ','
           << detail::format_real(m.ps) << ',' << detail::format_real(m.fns) << '\n';
      note("sweep: lambda " + detail::format_real(lambda) + " fidelity " +
           detail::format_real(report.fidelity));
    }
    {
      auto out = open_output(out_dir / "sweep.csv");
      out << rows.str();
    }
    finish(out_dir, "sweep", hash, started,
           {{"recommend/lists.jsonl", lists_hash(data.corpus_hash)}}, outputs);
  }

  // -------------------------------------------------------------------------
  // Stage hashes

  std::string synth_hash() const {
    return config_.hash("synth", {"synth_users", "synth_items", "synth_aspects",
                                  "synth_user_aspects", "synth_item_aspects", "synth_density",
                                  "synth_noise", "synth_mention_p", "synth_mention_cap", "scale",
                                  "seed"});
  }

  std::string corpus_hash_from_data() const {
    const auto& data = config_.text("data");
    if (data.empty()) throw ConfigError("no input data: set --data");
    std::uint64_t h = fnv1a(read_bytes(data));
    if (!config_.text("catalog").empty()) h = fnv1a(read_bytes(config_.text("catalog")), h);
    return config_.hash("corpus:" + hex64(h), {"scale"});
  }

  std::string model_hash(const std::string& corpus_hash) const {
    return config_.hash("model:" + corpus_hash,
                        {"lr", "epochs", "batch", "negatives", "reduction", "seed"});
  }

  std::string lists_hash(const std::string& corpus_hash) const {
    return config_.hash("lists:" + model_hash(corpus_hash), {"k"});
  }

  std::string explain_hash(const std::string& corpus_hash, Variant variant) const {
    return config_.hash(
        "explain:" + lists_hash(corpus_hash) + ":" + std::string(to_string(variant)),
        {"lambda", "gamma", "alpha", "tau", "step", "iters", "tol", "scan_step", "reviewed_only",
         "gamma_ramp", "restarts"});
  }

  std::string eval_hash(const std::string& corpus_hash) const {
    std::string parent = "eval:";
    for (auto v : config_.variants()) parent += explain_hash(corpus_hash, v);
    return config_.hash(parent, {"seed"});
  }

  std::string sweep_hash(const std::string& corpus_hash) const {
    return config_.hash("sweep:" + lists_hash(corpus_hash),
                        {"gamma", "alpha", "tau", "step", "iters", "tol", "scan_step",
                         "reviewed_only", "gamma_ramp", "restarts", "lambdas", "sweep_variant",
                         "seed"});
  }

  // -------------------------------------------------------------------------
  // Loading

  struct Data {
    Corpus corpus;
    HoldoutSplit split;
    AspectMatrices matrices;
    std::string corpus_hash;
  };

  Data load_data() const {
    const auto corpus_dir = dir("corpus");
    const auto interactions = corpus_dir / "interactions.tsv";
    const auto aspects = corpus_dir / "aspects.tsv";
    require_file(interactions, "counter ingest");
    require_file(aspects, "counter ingest");
    Data data;
    const auto stored = header_hash(interactions);
    if (!stored) throw ConfigError(interactions.string() + " carries no config hash");
    if (!config_.text("data").empty()) expect_hash(interactions, stored, corpus_hash_from_data());
    expect_hash(aspects, header_hash(aspects), *stored);
    data.corpus_hash = *stored;
    IngestOptions options;
    options.policy = CatalogPolicy::kFixed;
    options.fixed_aspects = read_index_names(aspects);
    options.default_scale = config_.rating_scale();
    data.corpus = ingest_file(interactions.string(), options);
    data.split = split(data.corpus);
    data.matrices = build_matrices(data.corpus, data.split);
    return data;
  }

  RecommenderModel load_model(const std::string& corpus_hash) const {
    const auto path = dir("model") / "model.ckpt";
    require_file(path, "counter train");
    auto checkpoint = load_checkpoint_file(path.string());
    auto it = checkpoint.meta.find("config_hash");
    expect_hash(path, it == checkpoint.meta.end() ? std::nullopt : std::optional(it->second),
                model_hash(corpus_hash));
    return std::move(checkpoint.model);
  }

  std::vector<RankedList> load_lists(const Data& data) const {
    const auto path = dir("recommend") / "lists.jsonl";
    require_file(path, "counter recommend");
    return read_lists(path, data.corpus, lists_hash(data.corpus_hash));
  }

  static std::vector<std::string> read_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open catalog: " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      const auto name = detail::trim(line);
      if (name.empty() || name.front() == '#') continue;
      names.emplace_back(name);
    }
    return names;
  }

  static std::vector<std::string> read_index_names(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("missing file: " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line.front() == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || std::stoul(line.substr(0, tab)) != names.size()) {
        throw InputError(path.string() + ": malformed index map line '" + line + "'");
      }
      names.push_back(line.substr(tab + 1));
    }
    return names;
  }

 private:
  void note(const std::string& message) const { log_ << "counter: " << message << '\n'; }

  void finish(const fs::path& out_dir, std::string stage, std::string hash, std::string started,
              std::map<std::string, std::string> inputs, std::vector<std::string> outputs) const {
    Manifest m;
    m.stage = std::move(stage);
    m.config_hash = std::move(hash);
    m.seed = config_.count("seed");
    m.started_at = std::move(started);
    m.finished_at = utc_now();
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    m.config = config_.values();
    write_manifest(out_dir, m);
  }

  RunConfig config_;
  std::ostream& log_;
};

}  // namespace counter
