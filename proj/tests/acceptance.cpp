// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "memefuse.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace memefuse;

namespace {

constexpr double kGradientBudgetSeconds = 120.0;
constexpr double kMiningBudgetSeconds = 30.0;
constexpr double kLossTolerance = 1e-12;
constexpr double kAggregationTolerance = 1e-12;
constexpr double kDirectionBudgetSeconds = 600.0;
constexpr std::size_t kDirectionEpochs = 50;
constexpr double kCalibrationLow = 0.75;
constexpr double kCalibrationHigh = 0.92;

struct Verdict {
  enum class State { pass, fail, skip } state = State::fail;
  std::string detail;
};

Verdict pass(std::string d) { return {Verdict::State::pass, std::move(d)}; }
Verdict fail(std::string d) { return {Verdict::State::fail, std::move(d)}; }
Verdict skip(std::string d) { return {Verdict::State::skip, std::move(d)}; }
Verdict judge(bool ok, std::string d) { return ok ? pass(std::move(d)) : fail(std::move(d)); }

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct GradientCase {
  HeadShape shape;
  std::size_t batch;
  MiningConfig mining;
  std::size_t sampled_coords;  // 0 checks every coordinate
};

Verdict gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(0x6a09e667f3bcc908ULL);
  constexpr std::size_t ns[] = {1, 2, 4};
  constexpr double alphas[] = {0.0, 0.05, 0.5};

  std::vector<GradientCase> cases;
  for (std::size_t i = 0; i < 100; ++i) {
    GradientCase c;
    c.shape = {4 + rng.below(29), 8 + rng.below(17), 8 + rng.below(17)};
    c.batch = 4 + rng.below(29);
    c.mining.n = ns[rng.below(3)];
    c.mining.alpha = alphas[rng.below(3)];
    c.mining.neighbor_gradients = i % 2 == 1;
    c.sampled_coords = 0;
    cases.push_back(c);
  }
  // Full-width heads, with a random sample of coordinates per tensor.
  for (std::size_t i = 0; i < 4; ++i) {
    GradientCase c;
    c.shape = {4 + rng.below(29), kHidden1, kHidden2};
    c.batch = 4 + rng.below(29);
    c.mining.n = ns[i % 3];
    c.mining.alpha = alphas[1 + i % 2];
    c.mining.neighbor_gradients = i % 2 == 0;
    c.sampled_coords = 48;
    cases.push_back(c);
  }

  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0, skipped = 0, settings_seen[2] = {0, 0};
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    auto params = init_parameters(c.shape, rng());
    for (auto t : params.tensors())
      for (double& v : t) v += 0.2 * rng.normal();
    Matrix x(c.batch, c.shape.input);
    for (double& v : x.values()) v = rng.normal();
    std::vector<std::uint8_t> labels(c.batch);
    std::vector<bool> hard(c.batch);
    for (std::size_t i = 0; i < c.batch; ++i) {
      labels[i] = static_cast<std::uint8_t>(rng.below(2));
      hard[i] = rng.below(10) < 3;
    }
    labels[0] = 0;
    labels[1] = 1;
    hard[0] = true;

    std::vector<std::vector<std::size_t>> coords;
    if (c.sampled_coords > 0) {
      for (auto t : params.tensors()) {
        std::vector<std::size_t> idx;
        for (std::size_t k = 0; k < std::min(c.sampled_coords, t.size()); ++k) idx.push_back(rng.below(t.size()));
        coords.push_back(std::move(idx));
      }
    }
    const auto obj = evaluate_objective(params, x, labels, hard, c.mining);
    const auto check = oracle::check_gradients(params, obj.grads, x, labels, hard, c.mining, oracle::kGradientStep,
                                               oracle::kGradientFloor, coords);
    checked += check.checked;
    skipped += check.skipped;
    ++settings_seen[c.mining.neighbor_gradients ? 1 : 0];
    if (check.max_rel_error > worst) {
      worst = check.max_rel_error;
      worst_where = "config " + std::to_string(ci) + " " + check.worst;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool ok = worst < oracle::kGradientTolerance && elapsed < kGradientBudgetSeconds && settings_seen[0] > 0 &&
                  settings_seen[1] > 0 && checked > 100 * skipped;
  return judge(ok, format("%zu configs, %zu coordinates checked, %zu skipped at kinks/ties, max rel err %.3g "
                          "(< %.0e, floor %.0e) at %s, %.1f s (< %.0f s)",
                          cases.size(), checked, skipped, worst, oracle::kGradientTolerance, oracle::kGradientFloor,
                          worst_where.c_str(), elapsed, kGradientBudgetSeconds));
}

// ---------------------------------------------------------------------------

Verdict mining_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(0xbb67ae8584caa73bULL);
  std::size_t batches = 0, hard_rows = 0, empty_pools = 0, tie_batches = 0, mismatches = 0;
  for (int trial = 0; trial < 1500; ++trial) {
    const std::size_t batch = 2 + rng.below(63);
    const std::size_t dim = 1 + rng.below(8);
    const int mode = trial % 4;
    Matrix y(batch, dim);
    for (double& v : y.values()) {
      // modes 0 and 1 sit on a coarse integer grid, where equal distances are common
      v = mode < 2 ? static_cast<double>(static_cast<int>(rng.below(5)) - 2) : rng.normal();
    }
    std::vector<std::uint8_t> labels(batch);
    std::vector<bool> hard(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      labels[i] = mode == 3 && trial % 8 == 3 ? 1 : static_cast<std::uint8_t>(rng.below(2));  // one-class batches
      hard[i] = rng.below(mode == 2 ? 2 : 4) == 0;
    }
    const std::size_t n = 1 + rng.below(6);
    const auto fast = find_neighbors(y, labels, hard, n);
    const auto slow = oracle::brute_force_neighbors(y, labels, hard, n);
    ++batches;
    if (!(fast == slow)) ++mismatches;
    hard_rows += fast.n_hard();
    bool tie = false;
    for (const auto& a : fast.hard) {
      empty_pools += (a.has_same() ? 0 : 1) + (a.has_opposite() ? 0 : 1);
      std::vector<double> d;
      for (std::size_t j = 0; j < batch; ++j) {
        if (j != a.index) d.push_back(squared_distance(y.row(a.index), y.row(j)));
      }
      std::sort(d.begin(), d.end());
      tie = tie || std::adjacent_find(d.begin(), d.end()) != d.end();
    }
    tie_batches += tie ? 1 : 0;
  }
  const double elapsed = seconds_since(t0);
  const bool ok = mismatches == 0 && batches >= 1000 && tie_batches > 0 && empty_pools > 0 &&
                  elapsed < kMiningBudgetSeconds;
  return judge(ok, format("%zu batches (sizes 2-64, dims 1-8), %zu hard rows, %zu with distance ties, "
                          "%zu empty pools, %zu mismatches, %.1f s (< %.0f s)",
                          batches, hard_rows, tie_batches, empty_pools, mismatches, elapsed, kMiningBudgetSeconds));
}

// ---------------------------------------------------------------------------

Verdict loss_oracle() {
  double worst = 0.0;
  const auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  const auto make = [](std::initializer_list<std::vector<double>> rows) {
    Matrix m(rows.size(), rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
      std::copy(row.begin(), row.end(), m.row(r).begin());
      ++r;
    }
    return m;
  };
  MiningAssignment one;
  one.hard.push_back(HardAssignment{0, {1}, {2}});

  // hard embedding equal to both means
  {
    const auto y = make({{0.25, -1.0}, {0.25, -1.0}, {0.25, -1.0}});
    const auto l = mining_loss(y, one, MiningConfig{});
    track(l.l1, 0.0);
    track(l.l2, 0.0);
    track(l.l_hm, 1.0);
    for (double g : l.grad_penultimate.values()) track(g, 0.0);
  }
  // y = (0,0), m1 = (1,0), m2 = (0,2), alpha = 0.05
  {
    const auto y = make({{0.0, 0.0}, {1.0, 0.0}, {0.0, 2.0}});
    MiningConfig c;
    c.alpha = 0.05;
    const auto l = mining_loss(y, one, c);
    track(l.l1, 1.0);
    track(l.l2, 4.0);
    track(l.l_hm, -2.0);
    track(l.grad_penultimate(0, 0), -0.1);
    track(l.grad_penultimate(0, 1), 0.2);
    for (std::size_t r = 1; r < 3; ++r)
      for (std::size_t d = 0; d < 2; ++d) track(l.grad_penultimate(r, d), 0.0);
  }
  // no hard samples in the batch
  {
    const auto y = make({{3.0, 1.0}, {-1.0, 2.0}});
    const auto l = mining_loss(y, MiningAssignment{}, MiningConfig{});
    track(l.l_hm, 0.0);
    for (double g : l.grad_penultimate.values()) track(g, 0.0);
  }
  return judge(worst < kLossTolerance,
               format("3 worked examples, max abs error %.3g (< %.0e)", worst, kLossTolerance));
}

// ---------------------------------------------------------------------------

Verdict inertness() {
  SyntheticSpec s;
  s.embedding_dim = 16;
  s.responses_per_prompt = 10;
  s[Split::train] = {150, 150};
  s[Split::validation] = {50, 50};
  s[Split::test] = {50, 50};
  s.hard_fraction = 0.0;
  s.seed = 41;
  const auto ds = generate_synthetic(s);
  const auto data = prepare(ds, FusionConfig{});

  TrainConfig base;
  base.epochs = 50;
  base.model_selection = ModelSelection::final_epoch;
  auto with = base;
  with.mining.alpha = 0.05;
  auto without = base;
  without.mining.alpha = 0.0;

  std::size_t steps = 0, mismatched_steps = 0, mismatched_runs = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::vector<double> trace_with, trace_without;
    const auto a = train_prepared(data, with, seed, [&](std::size_t, std::size_t, const LossBreakdown& l) {
      trace_with.push_back(l.l_total);
    });
    const auto b = train_prepared(data, without, seed, [&](std::size_t, std::size_t, const LossBreakdown& l) {
      trace_without.push_back(l.l_total);
    });
    steps += trace_with.size();
    for (std::size_t i = 0; i < std::min(trace_with.size(), trace_without.size()); ++i) {
      if (std::bit_cast<std::uint64_t>(trace_with[i]) != std::bit_cast<std::uint64_t>(trace_without[i])) {
        ++mismatched_steps;
      }
    }
    bool same = trace_with.size() == trace_without.size();
    const auto ta = a.params.tensors();
    const auto tb = b.params.tensors();
    for (std::size_t t = 0; t < ta.size() && same; ++t) {
      same = std::equal(ta[t].begin(), ta[t].end(), tb[t].begin(), tb[t].end(), [](double x, double y) {
        return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
      });
    }
    mismatched_runs += same ? 0 : 1;
  }
  return judge(mismatched_runs == 0 && mismatched_steps == 0,
               format("3 seeds x 50 epochs, %zu optimizer steps, %zu step losses differ, %zu final heads differ "
                      "(alpha 0.05 vs 0, no hard flags)",
                      steps, mismatched_steps, mismatched_runs));
}

// ---------------------------------------------------------------------------

Verdict direction_of_effect() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticSpec s;
  s.embedding_dim = 16;
  s.responses_per_prompt = 10;
  s[Split::train] = {1000, 1000};
  s[Split::validation] = {200, 200};
  s[Split::test] = {200, 200};
  s.separation = 2.0;
  s.noise = 1.0;
  s.hard_fraction = 0.3;
  s.hard_shift = 2.5;
  s.seed = 7;
  const auto ds = generate_synthetic(s);

  const auto data = prepare(ds, FusionConfig{});
  const double logistic = oracle::logistic_regression_accuracy(data.train.features, data.train.labels,
                                                               data.test.features, data.test.labels);
  if (logistic < kCalibrationLow || logistic > kCalibrationHigh) {
    return fail(format("calibration: logistic baseline %.4f outside [%.2f, %.2f]", logistic, kCalibrationLow,
                       kCalibrationHigh));
  }

  TrainConfig base;
  base.epochs = kDirectionEpochs;
  const auto report = sweep_n(ds, base, {0, 1});
  const double baseline = report.cells[0].metrics.mean_accuracy;
  const double mined = report.cells[1].metrics.mean_accuracy;
  const double elapsed = seconds_since(t0);
  std::string per_seed;
  for (const auto& cell : report.cells) {
    per_seed += " " + cell.label + "[";
    for (double a : cell.metrics.test_accuracies()) per_seed += format(" %.4f", a);
    per_seed += " ]";
  }
  return judge(mined >= baseline && elapsed < kDirectionBudgetSeconds,
               format("logistic baseline %.4f in [%.2f, %.2f]; %zu epochs, 5 seeds: mean acc n=1 %.4f vs n=0 %.4f "
                      "(need n=1 >= n=0);%s; %.0f s (< %.0f s)",
                      logistic, kCalibrationLow, kCalibrationHigh, kDirectionEpochs, mined, baseline,
                      per_seed.c_str(), elapsed, kDirectionBudgetSeconds));
}

// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  test::TempDir dir;
  const auto data = (dir.path() / "ds").string();
  const std::string cli = MEMEFUSE_CLI;
  if (std::system((cli + " synth --out " + data +
                   " --dim 8 --k 4 --train 160 --validation 40 --test 40 --hard-fraction 0.3 --hard-shift 1.5"
                   " --seed 5 > /dev/null")
                      .c_str()) != 0) {
    return fail("could not generate the dataset");
  }
  const std::vector<std::string> variants{
      "",
      " --n 2 --reduction mean",
      " --neighbor-gradients --margin-clamp",
      " --optimizer sgd --learning-rate 0.05 --model-selection final_epoch",
      " --use-emotions false --l2-normalize-blocks --jobs 2",
  };
  std::size_t identical = 0;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::string docs[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = dir.path() / ("m" + std::to_string(v) + "_" + std::to_string(rep) + ".json");
      const std::string cmd = cli + " train --data " + data + " --out " + out.string() +
                              " --epochs 5 --seeds 1,2,3" + variants[v] + " > /dev/null";
      if (std::system(cmd.c_str()) != 0) return fail("train failed for variant '" + variants[v] + "'");
      docs[rep] = slurp(out);
    }
    identical += !docs[0].empty() && docs[0] == docs[1] ? 1 : 0;
  }
  return judge(identical == variants.size(),
               format("%zu/%zu train invocations repeated byte-identical metrics JSON", identical, variants.size()));
}

// ---------------------------------------------------------------------------

Verdict format_round_trip() {
  test::TempDir dir;
  std::size_t cases = 0, exact = 0, records = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    const auto ds = oracle::random_dataset(seed);
    const auto path = dir.path() / ("case" + std::to_string(seed));
    write_dataset(ds.manifest, ds.records, path);
    const auto back = read_dataset(path);
    bool same = back.manifest == ds.manifest && back.records.size() == ds.records.size();
    for (std::size_t i = 0; same && i < ds.records.size(); ++i) {
      same = oracle::records_bit_equal(ds.records[i], back.records[i]);
    }
    ++cases;
    exact += same ? 1 : 0;
    records += ds.records.size();
  }
  return judge(exact == cases, format("%zu/%zu randomized datasets (%zu records) read back bit-exact", exact, cases,
                                      records));
}

// ---------------------------------------------------------------------------

Verdict aggregation() {
  double worst = 0.0;
  const auto check_against = [&](std::span<const double> v, double mean, double std) {
    long double m = 0.0L;
    for (double x : v) m += x;
    m /= static_cast<long double>(v.size());
    long double ss = 0.0L;
    for (double x : v) ss += (x - m) * (x - m);
    const long double sd = v.size() > 1 ? std::sqrt(ss / static_cast<long double>(v.size() - 1)) : 0.0L;
    worst = std::max({worst, static_cast<double>(std::abs(mean - m)), static_cast<double>(std::abs(std - sd))});
  };

  SplitMix64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(1 + rng.below(10));
    for (double& x : v) x = rng.uniform();
    const auto s = summarize(v);
    check_against(v, s.mean, s.std);
  }

  SyntheticSpec spec;
  spec.embedding_dim = 4;
  spec.responses_per_prompt = 2;
  spec[Split::train] = {40, 40};
  spec[Split::validation] = {10, 10};
  spec[Split::test] = {15, 15};
  spec.hard_fraction = 0.2;
  spec.seed = 3;
  TrainConfig c;
  c.epochs = 3;
  c.hidden1 = 16;
  c.hidden2 = 8;
  const auto run = train_multi(generate_synthetic(spec), c);
  const auto acc = run.test_accuracies();
  check_against(acc, run.mean_accuracy, run.std_accuracy);

  const std::vector<double> pair{0.8, 0.9};
  const auto s = summarize(pair);
  const bool pinned = std::abs(s.mean - 0.85) < kAggregationTolerance && std::abs(s.std - 0.0707107) < 5e-8;
  return judge(worst < kAggregationTolerance && pinned,
               format("max deviation from recomputation %.3g (< %.0e); {0.8, 0.9} -> %.4f +/- %.7f", worst,
                      kAggregationTolerance, s.mean, s.std));
}

// ---------------------------------------------------------------------------

// Real-data split sizes, checked only when MEMEFUSE_REAL_DATA names a dataset.
Verdict real_dataset_splits() {
  const char* dir = std::getenv("MEMEFUSE_REAL_DATA");
  if (!dir || !*dir) return skip("MEMEFUSE_REAL_DATA not set; no extracted real-meme embeddings available");
  const auto ds = read_dataset(dir);
  const auto count = [&](Split s) { return ds.split(s).size(); };
  const std::size_t t = count(Split::train), v = count(Split::validation), e = count(Split::test);
  const bool harm = t == 3013 && v == 531 && e == 354;
  const bool pride = t == 4017 && v == 213 && e == 472;
  return judge(harm || pride, format("split sizes %zu/%zu/%zu", t, v, e));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient-oracle", gradient_oracle},
      {"mining-oracle", mining_oracle},
      {"loss-oracle", loss_oracle},
      {"inertness", inertness},
      {"direction-of-effect", direction_of_effect},
      {"determinism", determinism},
      {"format-round-trip", format_round_trip},
      {"aggregation", aggregation},
      {"real-dataset-splits", real_dataset_splits},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    // Optional arguments select criteria by name.
    if (argc > 1 && std::find_if(argv + 1, argv + argc, [&](const char* a) { return std::string(a) == name; }) ==
                        argv + argc) {
      continue;
    }
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = fail(std::string("exception: ") + e.what());
    }
    const char* tag = v.state == Verdict::State::pass ? "PASS" : v.state == Verdict::State::skip ? "SKIP" : "FAIL";
    std::printf("%s %-20s %s\n", tag, name, v.detail.c_str());
    std::fflush(stdout);
    failures += v.state == Verdict::State::fail ? 1 : 0;
  }
  return failures == 0 ? 0 : 1;
}
