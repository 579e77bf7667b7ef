// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "counter/config.hpp"
#include "counter/counterfactual.hpp"
#include "counter/io.hpp"
#include "counter/metrics.hpp"
#include "counter/pipeline.hpp"
#include "counter/synth.hpp"
#include "fd_oracle.hpp"
#include "rerank_oracle.hpp"
#include "test_support.hpp"

using namespace counter;
namespace fs = std::filesystem;

namespace {

int failures = 0;
std::map<int, std::string> lines;

void verdict(int id, bool pass, const std::string& what, const std::string& measured) {
  if (!pass) ++failures;
  lines[id] = std::string(pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " +
              what + " | " + measured;
  std::cerr << lines[id] << std::endl;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("counter_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void formula_fidelity() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> count(1, 30), scale(2, 10);
  std::uniform_real_distribution<double> sentiment(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = count(rng), s = sentiment(rng);
    const int n = scale(rng);
    worst = std::max(worst, std::abs(preference_score(t, n) - testing::expected_x(t, n)));
    worst = std::max(worst, std::abs(quality_score(t, s, n) - testing::expected_y(t, s, n)));
  }
  const double spot_x = preference_score(1, 5);
  const double spot_y = quality_score(3, 0.0, 5);
  const bool pass = worst <= 1e-9 && std::abs(spot_x - 2.848469) <= 5e-7 && spot_y == 3.0;
  verdict(1, pass, "preference/quality scores match scalar evaluation",
          "max |diff| " + num(worst) + " over 1000 draws; X(t=1)=" + num(spot_x) +
              ", Y(t*s=0)=" + num(spot_y));
}

void gradient_correctness() {
  const auto r = fd_oracle::check_gradients(200, 8, 1e-3, 1e-4, 2024);
  const bool pass = r.failures == 0 && r.clean_draws >= 100;
  verdict(2, pass, "item gradient vs central differences (h=1e-3, rel < 1e-4)",
          std::to_string(r.checked) + " components checked, " + std::to_string(r.failures) +
              " above tolerance, worst rel " + num(r.worst_relative) + ", " +
              std::to_string(r.clean_draws) + "/" + std::to_string(r.draws) +
              " draws fully checked, " + std::to_string(r.skipped) +
              " components skipped (stencil crosses a rectifier kink)");
}

void phone_example() {
  const testing::LinearScorer user{Vector{{4.0, 5.0, 3.0}}};
  const Vector phone{{4.5, 3.0, 3.0}};
  const double boundary = 37.5;
  CfHyper hyper;
  hyper.gamma = 10.0;
  const auto single = explain_single(user, phone, boundary, hyper);
  const auto multi = explain_multi(user, phone, boundary, hyper);
  const double others = std::max(std::abs(multi.delta[0]), std::abs(multi.delta[2]));
  const bool pass = single.valid && single.aspects == std::vector<std::size_t>{1} &&
                    std::abs(multi.delta[1] + 0.9) <= 0.15 && others <= hyper.tau * 10;
  verdict(3, pass, "phone example: single picks battery, multi delta_battery ~ -0.9",
          "single aspects {" + (single.aspects.empty() ? "" : std::to_string(single.aspects[0])) +
              "}, multi delta (" + num(multi.delta[0]) + ", " + num(multi.delta[1]) + ", " +
              num(multi.delta[2]) + "), gamma 10");
}

void pn_ps_oracle() {
  SynthSpec spec;
  spec.users = 20;
  spec.items = 50;
  spec.aspects = 8;
  spec.density = 0.2;
  spec.seed = 5;
  const auto g = generate(spec);
  const auto m = build_matrices(g.corpus, split(g.corpus));
  TrainingHyper hyper;
  hyper.epochs = 20;
  const auto model = train(m, hyper).model;
  std::vector<RankedList> lists;
  for (std::size_t u = 0; u < spec.users; ++u) lists.push_back(recommend_top_k(u, 5, model, m));
  const auto batch = explain_all(model, m, lists, Variant::kMulti, CfHyper{});
  const auto got = necessity_sufficiency(model, m, batch, 5);
  std::size_t mismatches = 0, counted = 0, pn = 0, ps = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto f = rerank_oracle::flags(model, m, batch[i], 5);
    if (got.pn_flags[i].has_value() != f.counted) {
      ++mismatches;
      continue;
    }
    if (!f.counted) continue;
    ++counted;
    pn += f.pn;
    ps += f.ps;
    mismatches += (*got.pn_flags[i] != f.pn) + (*got.ps_flags[i] != f.ps);
  }
  const double opn = counted ? double(pn) / double(counted) : 0.0;
  const double ops = counted ? double(ps) / double(counted) : 0.0;
  const bool pass = mismatches == 0 && counted > 0 && got.pairs == counted && got.pn == opn &&
                    got.ps == ops;
  verdict(5, pass, "PN/PS equal exhaustive re-ranking oracle (m=20, n=50, r=8, K=5)",
          std::to_string(counted) + " explanations, " + std::to_string(mismatches) +
              " flag mismatches, PN " + num(got.pn) + " vs " + num(opn) + ", PS " + num(got.ps) +
              " vs " + num(ops));
}

const Json* variant_report(const Json& report, const std::string& name) {
  for (const auto& v : report.at("variants")) {
    if (v.at("variant") == name && v.at("status") == "ok") return &v;
  }
  return nullptr;
}

void synthetic_pipeline() {
  const auto dir = scratch("synth");
  RunConfig config;
  config.set("out", dir.string());
  config.set("variants", "multi,single");
  config.set("lambdas", "1,100");
  config.set("sweep_variant", "multi");
  std::ostringstream log;
  {
    Pipeline p(config, log);
    p.synth();
  }
  config.set("data", (dir / "synth/interactions.tsv").string());
  config.set("catalog", (dir / "synth/catalog.txt").string());
  Pipeline p(config, log);
  p.ingest();
  p.train();
  p.recommend();
  p.explain();
  const int eval_code = p.evaluate();
  p.sweep();

  const auto report = Json::parse(read_bytes(dir / "eval/report.json"));
  const Json* multi = variant_report(report, "multi");
  const Json* single = variant_report(report, "single");
  if (eval_code != 0 || multi == nullptr || single == nullptr) {
    for (int id : {4, 6, 7, 9}) verdict(id, false, "synthetic pipeline", "evaluate failed");
  } else {
    // 4: independent re-score of every reported-valid explanation
    const auto data = p.load_data();
    const auto model = p.load_model(data.corpus_hash);
    const auto lists = p.load_lists(data);
    std::map<std::size_t, const RankedList*> by_user;
    for (const auto& l : lists) by_user[l.user] = &l;
    const auto batch = read_explanations(dir / "explain/multi.jsonl", data.corpus,
                                         p.explain_hash(data.corpus_hash, Variant::kMulti));
    std::size_t reported = 0, verified = 0;
    for (const auto& e : batch) {
      if (!e.valid) continue;
      ++reported;
      const auto& list = *by_user.at(e.user);
      const auto ui = static_cast<Eigen::Index>(e.user);
      const auto uj = static_cast<Eigen::Index>(e.item);
      const auto ub = static_cast<Eigen::Index>(list.boundary.item);
      const Vector user = data.matrices.x.row(ui).transpose();
      const double boundary =
          fd_oracle::forward(model, user, data.matrices.y.row(ub).transpose()).score;
      const double moved =
          fd_oracle::forward(model, user, Vector(data.matrices.y.row(uj).transpose() + e.delta))
              .score;
      if (moved <= boundary && !e.aspects.empty()) ++verified;
    }
    const auto& mr = multi->at("report");
    const double fid = mr.at("fidelity").get<double>();
    const double verified_fraction = double(verified) / double(batch.size());
    verdict(4, verified == reported && fid == verified_fraction,
            "every reported-valid explanation passes independent re-scoring",
            std::to_string(verified) + "/" + std::to_string(reported) +
                " verified; reported fidelity " + num(fid) + ", verified fraction " +
                num(verified_fraction));

    // 6: planted recovery
    const auto& ur = mr.at("user_oriented");
    const auto& rr = multi->at("random_baseline").at("user_oriented");
    if (!ur.contains("f1") || !rr.contains("f1")) {
      verdict(6, false, "multi F1 >= 3x size-matched random F1", "user-oriented not applicable");
    } else {
      const double f1 = ur.at("f1").get<double>(), rf1 = rr.at("f1").get<double>();
      verdict(6, f1 >= 3.0 * rf1, "multi F1 >= 3x size-matched random F1 (noiseless synth defaults)",
              "F1 " + num(f1) + " vs random " + num(rf1) + " over " +
                  std::to_string(ur.at("pairs").get<int>()) + " pairs");
    }

    // 7: multi vs single fidelity
    const double sfid = single->at("report").at("fidelity").get<double>();
    verdict(7, fid >= sfid, "multi fidelity >= single fidelity on the same batch",
            "multi " + num(fid) + ", single " + num(sfid) + " over " +
                std::to_string(batch.size()) + " pairs");

    // 9: position profile
    double first = -1, last = -1;
    std::size_t explained = 0;
    for (const auto& row : mr.at("profile")) {
      explained += row.at("count").get<std::size_t>();
      if (row.at("rank") == 1) first = row.at("mean_aspects").get<double>();
      if (row.at("rank") == report.at("k")) last = row.at("mean_aspects").get<double>();
    }
    verdict(9, explained >= 200 && first >= 0 && last >= 0 && first >= last,
            "mean |D|_0 at rank 1 >= rank K",
            "rank 1 " + num(first) + ", rank K " + num(last) + " over " +
                std::to_string(explained) + " explained pairs");
  }

  // 8: lambda sweep
  std::ifstream sweep(dir / "sweep/sweep.csv");
  std::string line;
  std::vector<std::string> header;
  std::map<double, std::map<std::string, double>> rows;
  while (std::getline(sweep, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    auto& row = rows[std::stod(cells[0])];
    for (std::size_t i = 0; i < cells.size() && i < header.size(); ++i) {
      row[header[i]] = cells[i].empty() ? std::nan("") : std::stod(cells[i]);
    }
  }
  if (!rows.count(1.0) || !rows.count(100.0)) {
    verdict(8, false, "lambda monotonicity", "sweep rows missing");
  } else {
    const auto& lo = rows[1.0];
    const auto& hi = rows[100.0];
    verdict(8,
            hi.at("fidelity") >= lo.at("fidelity") &&
                hi.at("mean_complexity") >= lo.at("mean_complexity"),
            "fidelity and mean complexity at lambda=100 >= lambda=1",
            "fidelity " + num(lo.at("fidelity")) + " -> " + num(hi.at("fidelity")) +
                ", complexity " + num(lo.at("mean_complexity")) + " -> " +
                num(hi.at("mean_complexity")));
  }
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = std::string(COUNTER_CLI_PATH) + " " + args + " --config " +
                          (dir / "run.conf").string() + " --out " + (dir / "run").string() +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
    out[fs::relative(entry.path(), root).string()] = read_bytes(entry.path());
  }
  return out;
}

void determinism() {
  std::map<std::string, std::string> runs[2];
  bool ok = true;
  for (int i = 0; i < 2; ++i) {
    const auto dir = scratch("rerun" + std::to_string(i));
    std::ofstream(dir / "run.conf") << "synth_users=20\nsynth_items=50\nsynth_aspects=8\n"
                                       "synth_density=0.2\nepochs=5\nlambdas=1,100\n";
    const std::string data = "--data " + (dir / "run/synth/interactions.tsv").string() +
                             " --catalog " + (dir / "run/synth/catalog.txt").string();
    for (const std::string& stage : std::vector<std::string>
         {"synth", "ingest " + data, "train", "recommend", "explain", "evaluate", "sweep"}) {
      ok = ok && run_cli(dir, stage) == 0;
    }
    runs[i] = artifacts(dir / "run");
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  const bool has_outputs = runs[0].count("explain/multi.jsonl") && runs[0].count("eval/report.json");
  verdict(10, ok && has_outputs && differing == 0 && runs[0].size() == runs[1].size(),
          "rerun with identical config and seed is byte-identical",
          std::to_string(runs[0].size()) + " files compared (manifests excluded), " +
              std::to_string(differing) + " differ");
}

}  // namespace

int main() {
  try {
    formula_fidelity();
    gradient_correctness();
    phone_example();
    pn_ps_oracle();
    synthetic_pipeline();
    determinism();
  } catch (const std::exception& e) {
    for (const auto& [id, line] : lines) std::cout << line << '\n';
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  for (const auto& [id, line] : lines) std::cout << line << '\n';
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
