#pragma once

// The command pipeline behind the command-line tool: extract, synth, pairs,
// train, eval and sweep. Each command writes its outputs under the configured
// output directory and never modifies its inputs.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigsiam/checkpoint.hpp"
#include "sigsiam/config.hpp"
#include "sigsiam/error.hpp"
#include "sigsiam/eval.hpp"
#include "sigsiam/features.hpp"
#include "sigsiam/ingest.hpp"
#include "sigsiam/optim.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/protocol.hpp"

#ifndef SIGSIAM_VERSION
#define SIGSIAM_VERSION "0.0.0-unknown"
#endif

namespace sigsiam {

namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = SIGSIAM_VERSION;

namespace detail {

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// A recipe name ("svc47", "generic100") or the path of a recipe JSON file.
inline FeatureRecipe resolve_recipe(const std::string& name_or_path) {
  if (fs::is_regular_file(name_or_path)) {
    try {
      return FeatureRecipe::from_json(nlohmann::json::parse(detail::read_file(name_or_path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("recipe file '" + name_or_path + "' is not valid JSON: " + e.what());
    }
  }
  return FeatureRecipe::by_name(name_or_path);
}

// extract ---------------------------------------------------------------------

struct ExtractResult {
  Dataset dataset;
  std::size_t files_ok = 0;
  /// "file: message" for every file that could not be processed.
  std::vector<std::string> failures;
};

/// Trajectory files are named U<writer>S<sample> with any extension. Samples
/// 1-20 are genuine and 21-40 are skilled forgeries.
inline constexpr std::size_t kGenuinePerSvcWriter = 20;

inline ExtractResult extract_directory(const fs::path& dir, const FeatureRecipe& recipe) {
  if (!fs::is_directory(dir)) throw ConfigError("'" + dir.string() + "' is not a directory");
  struct Entry {
    long writer;
    long sample;
    fs::path path;
  };
  static const std::regex name_re(R"(^[Uu](\d+)[Ss](\d+)(\..*)?$)");
  std::vector<Entry> entries;
  ExtractResult res;
  for (const auto& f : fs::directory_iterator(dir)) {
    if (!f.is_regular_file()) continue;
    const std::string fname = f.path().filename().string();
    std::smatch m;
    if (!std::regex_match(fname, m, name_re)) continue;
    entries.push_back({std::stol(m[1]), std::stol(m[2]), f.path()});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.writer, a.sample) < std::tie(b.writer, b.sample);
  });

  res.dataset.name = dir.filename().string();
  res.dataset.feature_length = recipe.target_length();
  for (const auto& e : entries) {
    try {
      std::ifstream in(e.path);
      if (!in) throw ParseError("cannot open file", 0);
      auto traj = parse_svc_trajectory(in);
      traj.writer_id = "U" + std::to_string(e.writer);
      traj.sample_id = "S" + std::to_string(e.sample);
      traj.label = e.sample <= static_cast<long>(kGenuinePerSvcWriter) ? SignatureLabel::genuine
                                                                        : SignatureLabel::forgery;
      res.dataset.add(extract_globals(traj, recipe));
      ++res.files_ok;
    } catch (const std::exception& ex) {
      res.failures.push_back(e.path.filename().string() + ": " + ex.what());
    }
  }
  return res;
}

/// Writes the feature CSV; returns the process exit code (1 if any file failed).
inline int cmd_extract(const fs::path& raw_dir, const FeatureRecipe& recipe, const fs::path& out_csv,
                       std::ostream& err = std::cerr) {
  const auto res = extract_directory(raw_dir, recipe);
  auto out = detail::open_output(out_csv);
  write_feature_csv(out, res.dataset);
  for (const auto& f : res.failures) err << "extract: " << f << '\n';
  return res.failures.empty() ? 0 : 1;
}

// synth -----------------------------------------------------------------------

inline Dataset cmd_synth(const SynthSpec& spec, const fs::path& out_csv) {
  auto ds = synth_dataset(spec);
  auto out = detail::open_output(out_csv);
  write_feature_csv(out, ds);
  return ds;
}

// dataset loading and experiment preparation ----------------------------------

inline Dataset load_dataset(const DatasetConfig& cfg) {
  switch (cfg.kind) {
    case DatasetKind::synthetic:
      return synth_dataset(cfg.synthetic);
    case DatasetKind::feature_csv: {
      std::ifstream in(cfg.path);
      if (!in) throw ConfigError("cannot open feature CSV '" + cfg.path + "'");
      return load_feature_csv(in, cfg.feature_length, fs::path(cfg.path).stem().string());
    }
    case DatasetKind::svc_raw: {
      auto res = extract_directory(cfg.path, resolve_recipe(cfg.recipe));
      if (!res.failures.empty()) {
        throw FeatureError("feature extraction failed for " + std::to_string(res.failures.size()) +
                           " file(s), first: " + res.failures.front());
      }
      return std::move(res.dataset);
    }
  }
  throw ConfigError("unknown dataset kind");
}

/// A split together with the (optionally normalized) dataset its pairs view.
struct Experiment {
  Dataset data;
  Split split;
  std::optional<NormStats> norm;
  std::vector<SignaturePair> train_pairs;
  std::vector<SignaturePair> test_pairs;

  Experiment() = default;
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;
};

inline SplitSpec resolved_split(const RunConfig& cfg, const Dataset& ds) {
  SplitSpec s = cfg.split;
  s.train_writers = cfg.resolve_train_writers(ds.writers.size());
  return s;
}

inline std::unique_ptr<Experiment> prepare_experiment(const RunConfig& cfg, const Dataset& raw,
                                                      bool materialize_pairs = true) {
  auto ex = std::make_unique<Experiment>();
  ex->split = build_split(raw, resolved_split(cfg, raw));
  if (cfg.normalize) {
    auto [normalized, stats] = normalize(raw, ex->split.train_writers);
    ex->data = std::move(normalized);
    ex->norm = std::move(stats);
  } else {
    ex->data = raw;
  }
  if (materialize_pairs) {
    ex->train_pairs = materialize(ex->data, ex->split.train);
    ex->test_pairs = materialize(ex->data, ex->split.test);
  }
  return ex;
}

inline void prepare_model_config(RunConfig& cfg, std::size_t feature_length) {
  cfg.apply_seed();
  cfg.arch.input_length = feature_length;
  cfg.loss.mode = cfg.arch.head;
  cfg.arch.validate();
}

// pairs -----------------------------------------------------------------------

struct PairCounts {
  std::size_t train_genuine = 0;
  std::size_t train_forgery = 0;
  std::size_t test_genuine = 0;
  std::size_t test_forgery = 0;

  std::size_t train_total() const noexcept { return train_genuine + train_forgery; }
  std::size_t test_total() const noexcept { return test_genuine + test_forgery; }
};

inline PairCounts count_pairs(const Split& s) {
  return {s.train.count(1), s.train.count(0), s.test.count(1), s.test.count(0)};
}

/// Writes train_pairs.csv and test_pairs.csv.
inline PairCounts cmd_pairs(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset);
  const Split split = build_split(ds, resolved_split(cfg, ds));
  const fs::path dir = cfg.output_dir;
  {
    auto out = detail::open_output(dir / "train_pairs.csv");
    write_pairs_csv(out, ds, split.train);
  }
  {
    auto out = detail::open_output(dir / "test_pairs.csv");
    write_pairs_csv(out, ds, split.test);
  }
  return count_pairs(split);
}

// train -----------------------------------------------------------------------

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainLog log;
  PairCounts counts;
  /// Training-pair accuracy at the calibrated threshold.
  double train_accuracy = 0.0;
};

/// Trains on the experiment's training pairs and packages the checkpoint.
inline TrainOutcome train_experiment(const RunConfig& prepared, const Experiment& ex,
                                     const StepHook& hook = {}) {
  ModelParams init = init_params(prepared.arch, prepared.init);
  auto result = train(std::move(init), ex.train_pairs, prepared.train, prepared.loss, hook);

  TrainOutcome out;
  out.counts = count_pairs(ex.split);
  out.log = result.log;
  const auto scored = score_pairs(result.params, ex.train_pairs, prepared.loss);
  bool both = false;
  for (const auto& s : scored) both = both || s.label != scored.front().label;
  const double thr = both ? calibrate_threshold(scored) : prepared.threshold;
  out.train_accuracy = accuracy_at(scored, thr);

  auto& ck = out.checkpoint;
  ck.loss = prepared.loss;
  ck.norm = ex.norm;
  ck.params = std::move(result.params);
  ck.summary.epochs_run = result.log.epochs.size();
  ck.summary.best_epoch = result.log.best_epoch;
  ck.summary.best_monitored_loss = result.log.best_monitored_loss;
  ck.summary.stop_reason = result.log.stop_reason;
  ck.summary.calibrated_threshold = thr;
  ck.summary.train_pairs = ex.train_pairs.size();
  return out;
}

inline nlohmann::json run_manifest(const RunConfig& cfg, std::string_view command) {
  return {{"command", command}, {"version", kVersion}, {"config", to_json(cfg)}};
}

/// Writes model.ckpt, trainlog.csv and manifest.json. On divergence the
/// partial train log is still written before the error propagates.
inline TrainOutcome cmd_train(RunConfig cfg, const StepHook& hook = {}) {
  cfg.validate();
  const Dataset raw = load_dataset(cfg.dataset);
  prepare_model_config(cfg, raw.feature_length);
  const auto ex = prepare_experiment(cfg, raw);
  const fs::path dir = cfg.output_dir;
  {
    auto out = detail::open_output(dir / "manifest.json");
    out << run_manifest(cfg, "train").dump(2) << '\n';
  }
  TrainOutcome outcome;
  try {
    outcome = train_experiment(cfg, *ex, hook);
  } catch (const DivergenceError& e) {
    auto out = detail::open_output(dir / "trainlog.csv");
    e.log().write_csv(out);
    throw;
  }
  {
    auto out = detail::open_output(dir / "trainlog.csv");
    outcome.log.write_csv(out);
  }
  save_checkpoint(outcome.checkpoint, dir / "model.ckpt");
  return outcome;
}

// eval ------------------------------------------------------------------------

enum class EvalSide { test, train };

/// Scores a split side of `cfg.dataset` with a saved model and writes
/// report.json and roc.csv. The split comes from `cfg.split`; normalization
/// uses the statistics stored in the checkpoint.
inline EvalReport cmd_eval(const fs::path& checkpoint_path, const RunConfig& cfg,
                           EvalSide side = EvalSide::test) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = load_dataset(cfg.dataset);
  if (ds.feature_length != ck.params.arch.input_length) {
    throw ConfigError("checkpoint expects feature length " +
                      std::to_string(ck.params.arch.input_length) + " but the dataset has length " +
                      std::to_string(ds.feature_length));
  }
  if (ck.norm) ds = apply_norm_stats(std::move(ds), *ck.norm);
  const Split split = build_split(ds, resolved_split(cfg, ds));
  const auto pairs = materialize(ds, side == EvalSide::test ? split.test : split.train);
  const auto scored = score_pairs(ck.params, pairs, ck.loss);
  const bool calibrated = cfg.calibrate;
  auto report = make_report(scored, calibrated ? ck.summary.calibrated_threshold : cfg.threshold,
                            calibrated ? "calibrated" : "fixed");

  const fs::path dir = cfg.output_dir;
  {
    auto out = detail::open_output(dir / "report.json");
    auto j = report.to_json();
    j["side"] = side == EvalSide::test ? "test" : "train";
    j["test_mode"] = to_string(cfg.split.test_mode);
    j["version"] = kVersion;
    out << j.dump(2) << '\n';
  }
  {
    auto out = detail::open_output(dir / "roc.csv");
    report.write_roc_csv(out);
  }
  return report;
}

// sweep -----------------------------------------------------------------------

struct SweepRow {
  std::size_t k = 0;
  std::string status = "ok";
  PairCounts counts;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double auc = std::numeric_limits<double>::quiet_NaN();
  double eer = std::numeric_limits<double>::quiet_NaN();
  double threshold = std::numeric_limits<double>::quiet_NaN();
  std::size_t epochs = 0;
  std::string error;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto quote = [](std::string s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + '"';
  };
  os << "k,status,train_pairs,test_pairs,train_genuine,train_forgery,test_genuine,test_forgery,"
        "accuracy,auc,eer,threshold,epochs,error\n";
  for (const auto& r : rows) {
    os << r.k << ',' << r.status << ',' << r.counts.train_total() << ',' << r.counts.test_total()
       << ',' << r.counts.train_genuine << ',' << r.counts.train_forgery << ','
       << r.counts.test_genuine << ',' << r.counts.test_forgery << ',' << num(r.accuracy) << ','
       << num(r.auc) << ',' << num(r.eer) << ',' << num(r.threshold) << ',' << r.epochs << ','
       << (r.error.empty() ? std::string() : quote(r.error)) << '\n';
  }
}

/// Retrains from scratch for every K and evaluates on the held-out writers.
/// A failing K is recorded as an error row and the sweep continues. With
/// `dry_run` only the pair counts are computed. Writes sweep.csv.
inline std::vector<SweepRow> cmd_sweep(RunConfig cfg, const std::vector<std::size_t>& ks,
                                       bool dry_run = false) {
  cfg.validate();
  const Dataset raw = load_dataset(cfg.dataset);
  prepare_model_config(cfg, raw.feature_length);
  std::vector<SweepRow> rows;
  for (auto k : ks) {
    SweepRow row;
    row.k = k;
    try {
      if (k == 0) throw ProtocolError("K must be at least 1");
      RunConfig run = cfg;
      run.split.train_writers = k;
      const auto ex = prepare_experiment(run, raw, !dry_run);
      row.counts = count_pairs(ex->split);
      if (!dry_run) {
        const auto outcome = train_experiment(run, *ex);
        const auto scored = score_pairs(outcome.checkpoint.params, ex->test_pairs, run.loss);
        const double thr =
            run.calibrate ? outcome.checkpoint.summary.calibrated_threshold : run.threshold;
        const auto rep = make_report(scored, thr, run.calibrate ? "calibrated" : "fixed");
        row.accuracy = rep.accuracy;
        row.auc = rep.auc;
        row.eer = rep.eer;
        row.threshold = thr;
        row.epochs = outcome.log.epochs.size();
      }
    } catch (const std::exception& e) {
      row.status = "error";
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  auto out = detail::open_output(fs::path(cfg.output_dir) / "sweep.csv");
  write_sweep_csv(out, rows);
  return rows;
}

}  // namespace sigsiam
