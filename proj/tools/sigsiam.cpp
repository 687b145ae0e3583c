// sigsiam: command-line front end for the signature verification pipeline.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sigsiam/commands.hpp"

namespace {

using sigsiam::RunConfig;

struct Overrides {
  std::string config_path;
  std::vector<std::string> sets;
  std::string dataset_kind, data_path, recipe, out_dir, head, test_mode, selection;
  std::optional<std::size_t> feature_length, train_writers, epochs, batch_size, patience;
  std::optional<double> lr, threshold, separation;
  std::optional<std::uint64_t> seed;
  bool calibrate = false;
  bool no_normalize = false;
};

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "override a config field, e.g. --set train.lr=0.001");
  cmd->add_option("--dataset-kind", o.dataset_kind, "synthetic | feature_csv | svc_raw");
  cmd->add_option("--data", o.data_path, "feature CSV or trajectory directory");
  cmd->add_option("--feature-length", o.feature_length, "expected feature CSV vector length");
  cmd->add_option("--recipe", o.recipe, "feature recipe name or JSON file");
  cmd->add_option("-o,--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("-k,--train-writers", o.train_writers, "number of training writers");
  cmd->add_option("--selection", o.selection, "first_k | seeded_random");
  cmd->add_option("--test-mode", o.test_mode, "with_forgery | genuine_only");
  cmd->add_option("--head", o.head, "contrastive | bce");
  cmd->add_option("--epochs", o.epochs, "maximum epochs");
  cmd->add_option("--batch-size", o.batch_size, "minibatch size");
  cmd->add_option("--patience", o.patience, "early-stopping patience");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--threshold", o.threshold, "fixed decision threshold");
  cmd->add_option("--separation", o.separation, "synthetic forgery separation");
  cmd->add_flag("--calibrate", o.calibrate, "use the threshold calibrated on training pairs");
  cmd->add_flag("--no-normalize", o.no_normalize, "skip z-score normalization");
}

/// "a.b.c=value": value is parsed as JSON, falling back to a plain string.
nlohmann::json set_to_patch(const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw sigsiam::ConfigError("--set expects key.path=value, got '" + expr + "'");
  }
  const std::string key = expr.substr(0, eq);
  const std::string raw = expr.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  return patch;
}

RunConfig build_config(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw sigsiam::ConfigError("'" + o.config_path + "' is not valid JSON");
    sigsiam::merge_json(j, cfg);
  }
  for (const auto& s : o.sets) sigsiam::merge_json(set_to_patch(s), cfg);
  if (!o.dataset_kind.empty()) cfg.dataset.kind = sigsiam::dataset_kind_from(o.dataset_kind);
  if (!o.data_path.empty()) cfg.dataset.path = o.data_path;
  if (o.feature_length) cfg.dataset.feature_length = *o.feature_length;
  if (!o.recipe.empty()) cfg.dataset.recipe = o.recipe;
  if (!o.out_dir.empty()) cfg.output_dir = o.out_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.train_writers) cfg.split.train_writers = *o.train_writers;
  if (!o.selection.empty()) cfg.split.selection = sigsiam::selection_from(o.selection);
  if (!o.test_mode.empty()) cfg.split.test_mode = sigsiam::test_mode_from(o.test_mode);
  if (!o.head.empty()) cfg.arch.head = sigsiam::head_from(o.head);
  if (o.epochs) cfg.train.max_epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.patience) cfg.train.patience = *o.patience;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.threshold) cfg.threshold = *o.threshold;
  if (o.separation) cfg.dataset.synthetic.separation = *o.separation;
  if (o.calibrate) cfg.calibrate = true;
  if (o.no_normalize) cfg.normalize = false;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese CNN signature verification"};
  app.set_version_flag("--version", std::string(sigsiam::kVersion));
  app.require_subcommand(1);

  std::string raw_dir, recipe = "svc47", out_csv;
  auto* extract = app.add_subcommand("extract", "trajectory files -> feature CSV");
  extract->add_option("raw_dir", raw_dir, "directory of U<n>S<m> trajectory files")->required();
  extract->add_option("-o,--out", out_csv, "output CSV")->required();
  extract->add_option("--recipe", recipe, "feature recipe name or JSON file");

  sigsiam::SynthSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic feature CSV");
  synth->add_option("-o,--out", synth_out, "output CSV")->required();
  synth->add_option("--writers", synth_spec.writers);
  synth->add_option("--genuine", synth_spec.genuine_per_writer);
  synth->add_option("--forgery", synth_spec.forgery_per_writer);
  synth->add_option("--length", synth_spec.feature_length);
  synth->add_option("--separation", synth_spec.separation);
  synth->add_option("--seed", synth_spec.seed);

  Overrides pairs_o, train_o, eval_o, sweep_o, config_o;
  auto* pairs = app.add_subcommand("pairs", "write train/test pair lists");
  add_run_flags(pairs, pairs_o);
  auto* train = app.add_subcommand("train", "train a model");
  add_run_flags(train, train_o);

  std::string checkpoint;
  bool eval_train_side = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_run_flags(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_flag("--train-side", eval_train_side, "score the training writers instead of the test writers");

  std::vector<std::size_t> ks;
  bool dry_run = false;
  auto* sweep = app.add_subcommand("sweep", "train and evaluate for several K");
  add_run_flags(sweep, sweep_o);
  sweep->add_option("--ks", ks, "training writer counts")->required()->delimiter(',');
  sweep->add_flag("--dry-run", dry_run, "only compute pair counts");

  auto* show = app.add_subcommand("config", "print the effective run configuration");
  add_run_flags(show, config_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) {
      return sigsiam::cmd_extract(raw_dir, sigsiam::resolve_recipe(recipe), out_csv);
    }
    if (*synth) {
      const auto ds = sigsiam::cmd_synth(synth_spec, synth_out);
      std::cout << "wrote " << ds.genuine_count() + ds.forgery_count() << " rows to " << synth_out << '\n';
      return 0;
    }
    if (*pairs) {
      const auto c = sigsiam::cmd_pairs(build_config(pairs_o));
      std::cout << "train " << c.train_total() << " (" << c.train_genuine << " genuine, "
                << c.train_forgery << " forgery)\n"
                << "test " << c.test_total() << " (" << c.test_genuine << " genuine, "
                << c.test_forgery << " forgery)\n";
      return 0;
    }
    if (*train) {
      const auto cfg = build_config(train_o);
      const auto r = sigsiam::cmd_train(cfg);
      std::cout << "epochs " << r.log.epochs.size() << ", best epoch " << r.log.best_epoch << " ("
                << r.log.stop_reason << "), train accuracy " << r.train_accuracy << " at threshold "
                << r.checkpoint.summary.calibrated_threshold << '\n';
      return 0;
    }
    if (*eval) {
      const auto rep = sigsiam::cmd_eval(checkpoint, build_config(eval_o),
                                         eval_train_side ? sigsiam::EvalSide::train : sigsiam::EvalSide::test);
      std::cout << rep.to_json().dump(2) << '\n';
      return 0;
    }
    if (*sweep) {
      const auto rows = sigsiam::cmd_sweep(build_config(sweep_o), ks, dry_run);
      sigsiam::write_sweep_csv(std::cout, rows);
      for (const auto& r : rows) {
        if (r.status != "ok") return 1;
      }
      return 0;
    }
    if (*show) {
      std::cout << sigsiam::to_json(build_config(config_o)).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
