// End-to-end acceptance checks. One PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bimanual/errors.hpp"
#include "bimanual/experiment.hpp"
#include "bimanual/gradcheck.hpp"
#include "oracles.hpp"

using namespace bimanual;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1: analytic gradients against central differences.
Verdict gradients() {
  GradCheckOptions opts;  // 100 graphs, 2..6 nodes, h 1e-5, tol 1e-4
  const auto t0 = Clock::now();
  const GradCheckReport r = run_gradcheck(opts);
  const double t = seconds_since(t0);
  return {r.passed && t < 120.0,
          fmt("%d graphs, %zu params, max rel err %.3g (%s), %.1fs", r.graphs, r.parameters_checked,
              r.max_relative_error, r.worst_parameter.c_str(), t)};
}

SceneGraph permuted(const SceneGraph& g, std::mt19937_64& rng) {
  std::vector<int> perm(g.nodes.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SceneGraph out;
  out.global = g.global;
  out.nodes.resize(g.nodes.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out.nodes[static_cast<std::size_t>(perm[i])] = g.nodes[i];
  for (const SceneEdge& e : g.edges)
    out.edges.push_back({e.attr, perm[static_cast<std::size_t>(e.sender)], perm[static_cast<std::size_t>(e.receiver)]});
  std::shuffle(out.edges.begin(), out.edges.end(), rng);
  return out;
}

// 2: mirror, concatenation counts, permutation invariance, exclusivity.
Verdict structure() {
  std::mt19937_64 rng(2024);
  int bad_mirror = 0;
  for (int i = 0; i < 1000; ++i) {
    const SceneGraph g = random_scene_graph(rng, 2, 12);
    if (mirror(mirror(g)) != g || !check_invariants(mirror(g)).empty()) ++bad_mirror;
  }

  int bad_counts = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int frames = 1 + static_cast<int>(rng() % 10);
    std::vector<SceneGraph> seq;
    std::map<std::int64_t, std::vector<int>> present;
    std::size_t nodes = 0, spatial = 0;
    for (int f = 0; f < frames; ++f) {
      SceneGraph g;
      for (int id = 0; id < 6; ++id)
        if (rng() % 3 != 0) {
          g.nodes.push_back({static_cast<ObjectClass>(id), id, f, {}});
          present[id].push_back(f);
        }
      const int n = static_cast<int>(g.nodes.size());
      for (int s = 0; s < n; ++s)
        for (int r = 0; r < n; ++r)
          if (s != r && rng() % 2) g.edges.push_back({{RelationSet{Relation::contact}, false}, s, r});
      nodes += g.nodes.size();
      spatial += g.edges.size();
      seq.push_back(std::move(g));
    }
    std::size_t links = 0;
    for (const auto& [id, fs] : present)
      for (std::size_t i = 1; i < fs.size(); ++i) links += fs[i] == fs[i - 1] + 1;
    const SceneGraph g = temporal_concat(seq);
    if (g.nodes.size() != nodes || g.spatial_edge_count() != spatial || g.temporal_edge_count() != links ||
        !check_invariants(g).empty())
      ++bad_counts;
  }

  int bad_perm = 0;
  NetworkShape shape;
  shape.latent = 8;
  shape.steps = 4;
  for (int trial = 0; trial < 100; ++trial) {
    const SceneGraph g = random_scene_graph(rng, 2, 10);
    const auto w = init_weights<double>(shape, rng(), 0.5);
    const Mat<double> a = encode_process_decode_forward(make_batch<double>(g), w, false).logits;
    for (int p = 0; p < 3; ++p)
      if (encode_process_decode_forward(make_batch<double>(permuted(g, rng)), w, false).logits != a) ++bad_perm;
  }

  int bad_excl = 0;
  std::uniform_real_distribution<double> u(-500, 500), len(0, 300);
  for (int i = 0; i < 100000; ++i) {
    AABB3 a, b;
    for (int k = 0; k < 3; ++k) {
      a.min[k] = u(rng);
      a.max[k] = a.min[k] + len(rng);
      b.min[k] = u(rng);
      b.max[k] = b.min[k] + len(rng);
    }
    if (!evaluate_static_relations(a, b, RelationConfig{}).mutually_consistent()) ++bad_excl;
  }
  return {bad_mirror + bad_counts + bad_perm + bad_excl == 0,
          fmt("mirror %d/1000, concat %d/500, permutation %d/300, exclusivity %d/100000 failures", bad_mirror,
              bad_counts, bad_perm, bad_excl)};
}

// 3: relations against independent references.
Verdict relations() {
  std::mt19937_64 rng(77);
  const RelationConfig cfg;
  int mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const AABB3 a = oracle::grid_box(rng), b = oracle::grid_box(rng);
    if (evaluate_static_relations(a, b, cfg) !=
        oracle::static_relations(a, b, cfg.contact_tolerance, cfg.dir_gap))
      ++mismatches;
  }
  int motion_bad = 0;
  std::string which;
  for (const auto& m : oracle::canonical_motions()) {
    const RelationSet got = evaluate_dynamic_relations(m.a, m.b, 1.0 / 30, cfg);
    if (got != m.expected) {
      ++motion_bad;
      which += std::string(" ") + m.name;
    }
  }
  return {mismatches == 0 && motion_bad == 0,
          fmt("static %d/10000 mismatches, motions %d/6 wrong%s", mismatches, motion_bad, which.c_str())};
}

struct AblationRun {
  LosoOutcome loso;
  double seconds = 0;
};

AblationRun run_mode(const Dataset& ds, const std::vector<std::vector<FrameGraph>>& graphs, ExperimentConfig cfg,
                     AblationMode mode, bool verbose) {
  cfg.ablation = mode;
  cfg.training.shape = effective_shape(cfg);
  const auto t0 = Clock::now();
  AblationRun r;
  r.loso = run_loso(ds, graphs, cfg, [&](int s, const EpochLog& e) {
    if (verbose)
      std::fprintf(stderr, "  [%s] subject %d epoch %d loss %.4f val F1 %.4f\n", ablation_name(mode).c_str(), s,
                   e.epoch, e.loss, e.val_macro_f1);
  });
  r.seconds = seconds_since(t0);
  std::fprintf(stderr, "  [%s] pooled top-1 %.4f top-%d %.4f (%.0fs)\n", ablation_name(mode).c_str(),
               r.loso.pooled_top1.macro.f1, cfg.top_k, r.loso.pooled_topk.macro.f1, r.seconds);
  return r;
}

// 6: CLI outputs are byte-identical across reruns.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int trees_differ(const fs::path& a, const fs::path& b) {
  int diff = 0, files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++diff;
  }
  return files == 0 ? 1 : diff;
}

Verdict determinism(const std::string& cli, const fs::path& config) {
  const fs::path w = fs::temp_directory_path() / "bimanual_acceptance_determinism";
  fs::remove_all(w);
  fs::create_directories(w);
  auto run = [&](const std::string& args) {
    const std::string cmd = "cd '" + w.string() + "' && '" + cli + "' " + args + " --config '" +
                            fs::absolute(config).string() + "' --quiet > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  int failures = 0, differing = 0;
  for (const char* tag : {"a", "b"}) {
    const std::string t(tag);
    failures += run("gen --out ds_" + t) != 0;
    failures += run("train --dataset ds_a --test-subject 0 --out tr_" + t) != 0;
    failures += run("eval --weights tr_a/weights --dataset ds_a --out ev_" + t) != 0;
  }
  if (failures == 0)
    for (const char* d : {"ds", "tr", "ev"})
      differing += trees_differ(w / (std::string(d) + "_a"), w / (std::string(d) + "_b"));
  fs::remove_all(w);
  return {failures == 0 && differing == 0,
          fmt("%d command failures, %d differing outputs across gen/train/eval", failures, differing)};
}

// 7: metric definitions.
std::vector<double> peaked(Action a) {
  std::vector<double> d(kNumActions, 0.1 / (kNumActions - 1));
  d[index(a)] = 0.9;
  return d;
}

Verdict metrics() {
  const Action a = Action::approach, b = Action::lift;
  const std::vector<Action> truth{a, a, b, b};
  const MetricsReport r = score({peaked(a), peaked(b), peaked(b), peaked(b)}, truth, 1);
  const double expect = (2.0 / 3.0 + 0.8) / 2.0;
  bool ok = std::abs(r.macro.f1 - expect) < 1e-12 && std::abs(r.macro.f1 - 0.733) < 5e-4;

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  int bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<std::vector<double>> pred;
    std::vector<Action> tr;
    std::vector<int> argmax, ti;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> d(kNumActions);
      for (double& x : d) x = u(rng);
      pred.push_back(d);
      tr.push_back(static_cast<Action>(rng() % kNumActions));
      argmax.push_back(static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin()));
      ti.push_back(static_cast<int>(index(tr.back())));
    }
    const MetricsReport m = score(pred, tr, 1);
    if (std::abs(m.micro.precision - m.accuracy) > 1e-12 || std::abs(m.micro.recall - m.accuracy) > 1e-12 ||
        std::abs(m.macro.f1 - oracle::macro_f1(oracle::top1_counts(argmax, ti))) > 1e-12)
      ++bad;
  }
  return {ok && bad == 0, fmt("worked example macro F1 %.4f, %d/1000 fuzzed sets off", r.macro.f1, bad)};
}

// 8: relations plus graph construction for a 10-object frame.
Verdict latency() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(-400, 400), jitter(-3, 3);
  std::vector<Detection> base;
  for (int i = 0; i < 10; ++i) {
    const double x = pos(rng), y = pos(rng), z = 1000 + pos(rng);
    base.push_back({static_cast<ObjectClass>(i), {{x, y, z}, {x + 80, y + 100, z + 80}}, 1.0});
  }
  const RelationConfig rel;
  Tracker tracker(30.0, SmoothingConfig{}, rel.dyn_window);
  std::vector<double> times;
  std::size_t edges = 0;
  for (int f = 0; f < 1100; ++f) {
    std::vector<Detection> dets = base;
    for (Detection& d : dets)
      for (int k = 0; k < 3; ++k) {
        const double j = jitter(rng) + 2.0 * f;
        d.box.min[k] += j;
        d.box.max[k] += j;
      }
    const auto objects = tracker.update(f, dets);
    const auto t0 = Clock::now();
    const SceneGraph g = build_tracked_frame_graph(tracker, objects, f, rel);
    const double t = seconds_since(t0);
    edges = g.edges.size();
    if (f >= 100) times.push_back(t);  // after the history has filled
  }
  std::nth_element(times.begin(), times.begin() + static_cast<long>(times.size() / 2), times.end());
  const double median_ms = times[times.size() / 2] * 1e3;
  return {median_ms < 1.0, fmt("median %.4f ms over %zu frames (%zu edges)", median_ms, times.size(), edges)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config = std::string(BIMANUAL_SOURCE_DIR) + "/configs/acceptance.json";
  std::string cli = BIMANUAL_CLI;
  std::string report;
  std::vector<int> only;
  std::vector<int> known_failures;
  bool verbose = false;
  app.add_option("--config", config, "Run configuration for the training criteria")->check(CLI::ExistingFile);
  app.add_option("--cli", cli, "Path to the bimanual executable");
  app.add_option("--only", only, "Run only these criteria (1-8)");
  app.add_option("--known-failure", known_failures,
                 "Criteria whose FAIL does not change the exit status (still printed as FAIL)");
  app.add_flag("-v,--verbose", verbose, "Per-epoch progress on stderr");
  app.add_option("--report", report, "Also write the result lines to this file");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  std::map<int, Verdict> results;
  auto record = [&](int c, const std::string& title, const std::function<Verdict()>& fn) {
    if (!wanted(c)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    results[c] = v;
    std::printf("[%s] %d %s: %s\n", v.pass ? "PASS" : "FAIL", c, title.c_str(), v.detail.c_str());
    std::fflush(stdout);
  };

  record(1, "gradient check", gradients);
  record(2, "structural invariants", structure);
  record(3, "relation oracles", relations);

  if (wanted(4) || wanted(5)) {
    try {
      const RunConfig rc = load_run_config(config);
      const Dataset ds = generate_dataset(rc);
      const auto graphs = build_all_graphs(ds, rc.experiment.relations, rc.experiment.smoothing);
      std::map<AblationMode, AblationRun> runs;
      runs[AblationMode::full] = run_mode(ds, graphs, rc.experiment, AblationMode::full, verbose);
      const auto& full = runs[AblationMode::full];
      record(4, "LOSO recognition", [&] {
        const double t1 = full.loso.pooled_top1.macro.f1, tk = full.loso.pooled_topk.macro.f1;
        return Verdict{t1 >= 0.80 && tk >= 0.95 && full.seconds <= 1800.0,
                       fmt("pooled macro F1 top-1 %.4f (>= 0.80), top-%d %.4f (>= 0.95), %.0fs (<= 1800)", t1,
                           rc.experiment.top_k, tk, full.seconds)};
      });
      if (wanted(5)) {
        for (AblationMode m : {AblationMode::no_temporal, AblationMode::contact_only, AblationMode::centroids})
          runs[m] = run_mode(ds, graphs, rc.experiment, m, verbose);
        record(5, "ablation ordering", [&] {
          auto f1 = [&](AblationMode m) { return runs[m].loso.pooled_top1.macro.f1; };
          const double full_f1 = f1(AblationMode::full), nt = f1(AblationMode::no_temporal),
                       co = f1(AblationMode::contact_only), ce = f1(AblationMode::centroids);
          return Verdict{full_f1 >= nt && nt > co && co > ce && full_f1 - co >= 0.05,
                         fmt("top-1 full %.4f, no_temporal %.4f, contact_only %.4f, centroids %.4f", full_f1, nt,
                             co, ce)};
        });
      }
    } catch (const std::exception& e) {
      for (int c : {4, 5})
        if (wanted(c) && !results.count(c)) record(c, c == 4 ? "LOSO recognition" : "ablation ordering", [&] {
            return Verdict{false, std::string("exception: ") + e.what()};
          });
    }
  }

  const fs::path smoke = fs::path(BIMANUAL_SOURCE_DIR) / "configs" / "smoke.json";
  record(6, "deterministic CLI", [&] { return determinism(cli, smoke); });
  record(7, "metric definitions", metrics);
  record(8, "graph construction latency", latency);

  int unexpected = 0, passed = 0;
  for (const auto& [c, v] : results) {
    passed += v.pass;
    if (!v.pass && std::find(known_failures.begin(), known_failures.end(), c) == known_failures.end()) ++unexpected;
  }
  std::printf("%d/%zu criteria passed\n", passed, results.size());
  if (!report.empty()) {
    std::ofstream out(report);
    for (const auto& [c, v] : results) out << (v.pass ? "[PASS] " : "[FAIL] ") << c << ": " << v.detail << '\n';
    out << passed << '/' << results.size() << " criteria passed\n";
  }
  return unexpected == 0 ? 0 : 1;
}
