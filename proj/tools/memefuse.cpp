// memefuse command-line driver.
//
//   memefuse synth   --out DIR [generator flags]
//   memefuse inspect --data DIR
//   memefuse train   --data DIR [train flags] [--out metrics.json] [--checkpoint-dir DIR]
//   memefuse sweep-n --data DIR --n-values 0,1,2,4 [train flags] [--out report.json]
//   memefuse ablate  --data DIR [--n 1] [train flags] [--out report.json]
//   memefuse eval    --data DIR --head FILE [--split test] [fusion flags]
//
// --data defaults to $MEMEFUSE_DATA when omitted.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memefuse.hpp"

namespace {

using namespace memefuse;

struct TrainFlags {
  TrainConfig config;
  std::string reduction = "sum";
  std::string optimizer = "adam";
  std::string selection = "best_validation";
  std::size_t jobs = 1;
};

void add_fusion_flags(CLI::App& cmd, FusionConfig& f) {
  cmd.add_option("--use-image", f.use_image, "Include the image embedding block")->default_str("true");
  cmd.add_option("--use-text", f.use_text, "Include the embedded-text block")->default_str("true");
  cmd.add_option("--use-descriptions", f.use_descriptions, "Include pooled description embeddings")
      ->default_str("true");
  cmd.add_option("--use-emotions", f.use_emotions, "Include pooled emotion embeddings")->default_str("true");
  cmd.add_flag("--l2-normalize-blocks", f.l2_normalize_blocks, "Scale each block to unit norm");
}

void add_train_flags(CLI::App& cmd, TrainFlags& t, bool with_n) {
  auto& c = t.config;
  cmd.add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--learning-rate", c.learning_rate, "Optimizer learning rate")->capture_default_str();
  cmd.add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
  if (with_n) cmd.add_option("--n", c.mining.n, "Nearest neighbors per pool (0 disables mining)")->capture_default_str();
  cmd.add_option("--alpha", c.mining.alpha, "Weight of the hard-mining loss")->capture_default_str();
  cmd.add_flag("--neighbor-gradients", c.mining.neighbor_gradients,
               "Backpropagate through the neighbor mean vectors");
  cmd.add_option("--reduction", t.reduction, "Reduction over hard samples")
      ->check(CLI::IsMember({"sum", "mean"}))
      ->capture_default_str();
  cmd.add_flag("--margin-clamp", c.mining.margin_clamp, "Use max(0, 1 - L2) for the repulsion term");
  cmd.add_option("--seeds", c.seeds, "Comma-separated run seeds")->delimiter(',')->default_str("1,2,3,4,5");
  cmd.add_option("--optimizer", t.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  cmd.add_option("--model-selection", t.selection, "best_validation or final_epoch")
      ->check(CLI::IsMember({"best_validation", "final_epoch"}))
      ->capture_default_str();
  cmd.add_option("--hidden1", c.hidden1, "First hidden layer width")->capture_default_str();
  cmd.add_option("--hidden2", c.hidden2, "Penultimate layer width")->capture_default_str();
  cmd.add_option("--jobs", t.jobs, "Seeds trained concurrently")->capture_default_str();
  add_fusion_flags(cmd, c.fusion);
}

TrainConfig finalize(TrainFlags& t) {
  auto c = t.config;
  c.mining.reduction = t.reduction == "mean" ? Reduction::mean : Reduction::sum;
  c.optimizer = t.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.model_selection = t.selection == "final_epoch" ? ModelSelection::final_epoch : ModelSelection::best_validation;
  if (c.mining.n == 0) c.mining.alpha = 0.0;
  validate_train_config(c);
  if (c.seeds.empty()) throw std::invalid_argument("at least one seed is required");
  return c;
}

std::filesystem::path resolve_data(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MEMEFUSE_DATA"); env && *env) return env;
  throw std::invalid_argument("no dataset given: pass --data or set MEMEFUSE_DATA");
}

void write_json(const std::string& path, const nlohmann::json& doc) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
}

std::string percent(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * mean, 100.0 * std);
  return buf;
}

int cmd_synth(const std::string& out, const SyntheticSpec& spec) {
  const auto ds = generate_synthetic(spec);
  write_dataset(ds.manifest, ds.records, out);
  std::cout << "wrote " << ds.records.size() << " records to " << out << "\n";
  return 0;
}

int cmd_inspect(const std::filesystem::path& dir) {
  const auto ds = read_dataset(dir);
  const auto& m = ds.manifest;
  std::cout << "dataset:              " << dir.string() << "\n";
  std::cout << "encoder_tag:          " << m.encoder_tag << "\n";
  std::cout << "embedding_dim:        " << m.embedding_dim << "\n";
  std::cout << "responses_per_prompt: " << m.responses_per_prompt << "\n";
  for (Split s : kAllSplits) {
    const auto rows = ds.split(s);
    if (!m.split_counts.contains(std::string(split_name(s)))) continue;
    std::size_t positive = 0, hard = 0;
    for (const auto* r : rows) {
      positive += r->label;
      hard += r->hard ? 1 : 0;
    }
    std::printf("%-11s %6zu records  label0 %6zu  label1 %6zu", std::string(split_name(s)).c_str(), rows.size(),
                rows.size() - positive, positive);
    if (s == Split::train) {
      const double frac = rows.empty() ? 0.0 : static_cast<double>(hard) / static_cast<double>(rows.size());
      std::printf("  hard %6zu (%.2f%%)", hard, 100.0 * frac);
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_train(const std::filesystem::path& dir, TrainFlags& flags, const std::string& out,
              const std::string& checkpoint_dir) {
  const auto config = finalize(flags);
  const auto ds = read_dataset(dir);
  std::vector<HeadParameters> heads;
  const auto metrics = train_multi(ds, config, flags.jobs, checkpoint_dir.empty() ? nullptr : &heads);
  write_json(out, metrics_document(ds.manifest, config, metrics));
  if (!checkpoint_dir.empty()) {
    std::filesystem::create_directories(checkpoint_dir);
    for (std::size_t i = 0; i < heads.size(); ++i) {
      save_head(heads[i], std::filesystem::path(checkpoint_dir) / ("head_seed" + std::to_string(config.seeds[i]) + ".fmh"));
    }
  }
  for (const auto& s : metrics.per_seed) {
    std::printf("seed %-6llu test accuracy %.4f (selected epoch %zu)\n", static_cast<unsigned long long>(s.seed),
                s.test_accuracy, s.selected_epoch);
  }
  std::cout << "accuracy (%): " << percent(metrics.mean_accuracy, metrics.std_accuracy) << "\n";
  return 0;
}

int cmd_grid(const ExperimentReport& report, const DatasetManifest& manifest, const std::string& out) {
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  write_json(out, to_json(report, manifest));
  std::cout << render_table(report);
  return 0;
}

int cmd_eval(const std::filesystem::path& dir, const std::string& head, const std::string& split_name_arg,
             const FusionConfig& fusion) {
  const auto split = parse_split(split_name_arg);
  if (!split) throw std::invalid_argument("unknown split '" + split_name_arg + "'");
  const auto ds = read_dataset(dir);
  const auto params = load_head(head);
  const double acc = evaluate(params, ds, *split, fusion);
  std::printf("%s accuracy %.4f\n", split_name_arg.c_str(), acc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate fused-embedding meme classifiers with hard-sample mining"};
  app.require_subcommand(1);

  std::string data;
  std::string out;

  auto* synth = app.add_subcommand("synth", "Generate a planted synthetic dataset");
  SyntheticSpec spec;
  std::uint32_t n_train = 2000, n_val = 400, n_test = 400;
  double positive_fraction = 0.5;
  synth->add_option("--out", out, "Output dataset directory")->required();
  synth->add_option("--dim", spec.embedding_dim, "Embedding width D1")->capture_default_str();
  synth->add_option("--k", spec.responses_per_prompt, "Responses per prompt K")->capture_default_str();
  synth->add_option("--train", n_train, "Train records")->capture_default_str();
  synth->add_option("--validation", n_val, "Validation records")->capture_default_str();
  synth->add_option("--test", n_test, "Test records")->capture_default_str();
  synth->add_option("--positive-fraction", positive_fraction, "Fraction of label-1 records per split")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--separation", spec.separation, "Distance between class means")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Noise scale")->capture_default_str();
  synth->add_option("--hard-fraction", spec.hard_fraction, "Fraction of train records planted as hard")
      ->capture_default_str();
  synth->add_option("--hard-shift", spec.hard_shift, "Shift of hard records toward the opposite class")
      ->capture_default_str();
  synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();

  auto* inspect = app.add_subcommand("inspect", "Summarize a dataset");
  inspect->add_option("--data", data, "Dataset directory");

  TrainFlags train_flags;
  std::string checkpoint_dir;
  auto* train = app.add_subcommand("train", "Train over several seeds and report mean ± std accuracy");
  train->add_option("--data", data, "Dataset directory");
  train->add_option("--out", out, "Metrics JSON output path");
  train->add_option("--checkpoint-dir", checkpoint_dir, "Write the selected head of every seed here");
  add_train_flags(*train, train_flags, true);

  TrainFlags sweep_flags;
  std::vector<std::size_t> n_values{0, 1, 2, 4};
  auto* sweep = app.add_subcommand("sweep-n", "Sweep the number of nearest neighbors");
  sweep->add_option("--data", data, "Dataset directory");
  sweep->add_option("--out", out, "Report JSON output path");
  sweep->add_option("--n-values", n_values, "Comma-separated n grid")->delimiter(',')->default_str("0,1,2,4");
  add_train_flags(*sweep, sweep_flags, false);

  TrainFlags ablate_flags;
  std::size_t ablate_n = 1;
  auto* abl = app.add_subcommand("ablate", "Run the embedding / hard-mining ablation matrix");
  abl->add_option("--data", data, "Dataset directory");
  abl->add_option("--out", out, "Report JSON output path");
  abl->add_option("--n", ablate_n, "Nearest neighbors for the hard-mining rows")->capture_default_str();
  add_train_flags(*abl, ablate_flags, false);

  std::string head, split = "test";
  FusionConfig eval_fusion;
  auto* ev = app.add_subcommand("eval", "Accuracy of a saved head on one split");
  ev->add_option("--data", data, "Dataset directory");
  ev->add_option("--head", head, "Checkpoint file")->required();
  ev->add_option("--split", split, "train, validation or test")->capture_default_str();
  add_fusion_flags(*ev, eval_fusion);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto split_counts = [&](std::uint32_t total) {
        const auto pos = static_cast<std::uint32_t>(std::floor(positive_fraction * total));
        return ClassCounts{total - pos, pos};
      };
      spec[Split::train] = split_counts(n_train);
      spec[Split::validation] = split_counts(n_val);
      spec[Split::test] = split_counts(n_test);
      return cmd_synth(out, spec);
    }
    if (inspect->parsed()) return cmd_inspect(resolve_data(data));
    if (train->parsed()) return cmd_train(resolve_data(data), train_flags, out, checkpoint_dir);
    if (sweep->parsed()) {
      const auto config = finalize(sweep_flags);
      const auto dir = resolve_data(data);
      const auto ds = read_dataset(dir);
      return cmd_grid(sweep_n(ds, config, n_values, sweep_flags.jobs), ds.manifest, out);
    }
    if (abl->parsed()) {
      const auto config = finalize(ablate_flags);
      const auto dir = resolve_data(data);
      const auto ds = read_dataset(dir);
      return cmd_grid(ablate(ds, config, ablate_n, ablate_flags.jobs), ds.manifest, out);
    }
    if (ev->parsed()) return cmd_eval(resolve_data(data), head, split, eval_fusion);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
