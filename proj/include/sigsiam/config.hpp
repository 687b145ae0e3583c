#pragma once

// Run configuration and its JSON form. Every field defaults to the published
// training setup where one exists.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sigsiam/error.hpp"
#include "sigsiam/ingest.hpp"
#include "sigsiam/optim.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/protocol.hpp"
#include "sigsiam/siamese.hpp"

namespace sigsiam {

// enum <-> string -------------------------------------------------------------

inline std::string to_string(LrnPlacement p) {
  switch (p) {
    case LrnPlacement::after_embedding: return "after_embedding";
    case LrnPlacement::after_each_conv: return "after_each_conv";
    case LrnPlacement::off: return "off";
  }
  return "off";
}
inline LrnPlacement lrn_placement_from(std::string_view s) {
  if (s == "after_embedding") return LrnPlacement::after_embedding;
  if (s == "after_each_conv") return LrnPlacement::after_each_conv;
  if (s == "off") return LrnPlacement::off;
  throw ConfigError("unknown lrn placement '" + std::string(s) + "'");
}

inline std::string to_string(HeadKind h) { return h == HeadKind::bce ? "bce" : "contrastive"; }
inline HeadKind head_from(std::string_view s) {
  if (s == "contrastive") return HeadKind::contrastive;
  if (s == "bce") return HeadKind::bce;
  throw ConfigError("unknown loss head '" + std::string(s) + "'");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}
inline Activation activation_from(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline std::string to_string(WriterSelection s) {
  return s == WriterSelection::first_k ? "first_k" : "seeded_random";
}
inline WriterSelection selection_from(std::string_view s) {
  if (s == "first_k") return WriterSelection::first_k;
  if (s == "seeded_random") return WriterSelection::seeded_random;
  throw ConfigError("unknown writer selection '" + std::string(s) + "'");
}

inline std::string to_string(TestMode m) {
  return m == TestMode::with_forgery ? "with_forgery" : "genuine_only";
}
inline TestMode test_mode_from(std::string_view s) {
  if (s == "with_forgery") return TestMode::with_forgery;
  if (s == "genuine_only") return TestMode::genuine_only;
  throw ConfigError("unknown test mode '" + std::string(s) + "'");
}

inline std::string to_string(ForgeryScheme f) {
  return f == ForgeryScheme::index_skip ? "index_skip" : "full_cross";
}
inline ForgeryScheme forgery_scheme_from(std::string_view s) {
  if (s == "index_skip") return ForgeryScheme::index_skip;
  if (s == "full_cross") return ForgeryScheme::full_cross;
  throw ConfigError("unknown forgery scheme '" + std::string(s) + "'");
}

// JSON of the library types ---------------------------------------------------

inline nlohmann::json arch_to_json(const ArchSpec& a) {
  return {{"input_length", a.input_length},
          {"conv_channels", a.conv_channels},
          {"kernel_width", a.kernel_width},
          {"embedding_dim", a.embedding_dim},
          {"lrn_placement", to_string(a.lrn_placement)},
          {"head", to_string(a.head)},
          {"embedding_activation", to_string(a.embedding_activation)},
          {"dropout_rate", a.dropout_rate},
          {"lrn", {{"k", a.lrn.k}, {"n", a.lrn.n}, {"alpha", a.lrn.alpha}, {"beta", a.lrn.beta}}},
          {"batchnorm", {{"momentum", a.batchnorm.momentum}, {"epsilon", a.batchnorm.epsilon}}}};
}

/// Fields missing from `j` keep the value already in `a`.
inline void arch_from_json(const nlohmann::json& j, ArchSpec& a) {
  a.input_length = j.value("input_length", a.input_length);
  a.conv_channels = j.value("conv_channels", a.conv_channels);
  a.kernel_width = j.value("kernel_width", a.kernel_width);
  a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
  if (j.contains("lrn_placement")) a.lrn_placement = lrn_placement_from(j["lrn_placement"].get<std::string>());
  if (j.contains("head")) a.head = head_from(j["head"].get<std::string>());
  if (j.contains("embedding_activation")) {
    a.embedding_activation = activation_from(j["embedding_activation"].get<std::string>());
  }
  a.dropout_rate = j.value("dropout_rate", a.dropout_rate);
  if (j.contains("lrn")) {
    const auto& l = j["lrn"];
    a.lrn.k = l.value("k", a.lrn.k);
    a.lrn.n = l.value("n", a.lrn.n);
    a.lrn.alpha = l.value("alpha", a.lrn.alpha);
    a.lrn.beta = l.value("beta", a.lrn.beta);
  }
  if (j.contains("batchnorm")) {
    a.batchnorm.momentum = j["batchnorm"].value("momentum", a.batchnorm.momentum);
    a.batchnorm.epsilon = j["batchnorm"].value("epsilon", a.batchnorm.epsilon);
  }
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"decay", t.decay},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"min_delta", t.min_delta},
          {"validation_fraction", t.validation_fraction},
          {"max_norm", t.max_norm}};
}

inline void train_from_json(const nlohmann::json& j, TrainConfig& t) {
  t.lr = j.value("lr", t.lr);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.epsilon = j.value("epsilon", t.epsilon);
  t.decay = j.value("decay", t.decay);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.min_delta = j.value("min_delta", t.min_delta);
  t.validation_fraction = j.value("validation_fraction", t.validation_fraction);
  t.max_norm = j.value("max_norm", t.max_norm);
}

inline nlohmann::json split_to_json(const SplitSpec& s) {
  return {{"train_writers", s.train_writers},
          {"selection", to_string(s.selection)},
          {"seed", s.seed},
          {"test_mode", to_string(s.test_mode)},
          {"balance", s.balance},
          {"forgery_scheme", to_string(s.forgery_scheme)},
          {"exclude_forgery_train", s.exclude_forgery_train}};
}

inline void split_from_json(const nlohmann::json& j, SplitSpec& s) {
  s.train_writers = j.value("train_writers", s.train_writers);
  if (j.contains("selection")) s.selection = selection_from(j["selection"].get<std::string>());
  s.seed = j.value("seed", s.seed);
  if (j.contains("test_mode")) s.test_mode = test_mode_from(j["test_mode"].get<std::string>());
  s.balance = j.value("balance", s.balance);
  if (j.contains("forgery_scheme")) {
    s.forgery_scheme = forgery_scheme_from(j["forgery_scheme"].get<std::string>());
  }
  s.exclude_forgery_train = j.value("exclude_forgery_train", s.exclude_forgery_train);
}

// RunConfig -------------------------------------------------------------------

enum class DatasetKind { synthetic, feature_csv, svc_raw };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::feature_csv: return "feature_csv";
    case DatasetKind::svc_raw: return "svc_raw";
  }
  return "synthetic";
}
inline DatasetKind dataset_kind_from(std::string_view s) {
  if (s == "synthetic") return DatasetKind::synthetic;
  if (s == "feature_csv") return DatasetKind::feature_csv;
  if (s == "svc_raw") return DatasetKind::svc_raw;
  throw ConfigError("unknown dataset kind '" + std::string(s) + "'");
}

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  /// CSV file (feature_csv) or directory of trajectory files (svc_raw).
  std::string path;
  /// Expected vector length for feature_csv.
  std::size_t feature_length = 100;
  /// Named recipe or path to a recipe JSON file (svc_raw).
  std::string recipe = "svc47";
  SynthSpec synthetic{};
};

struct RunConfig {
  DatasetConfig dataset;
  ArchSpec arch;
  TrainConfig train;
  SplitSpec split;
  LossConfig loss;
  InitSpec init;
  bool normalize = true;
  /// Fixed decision threshold on the score; m/2 for the default margin.
  double threshold = 0.5;
  /// Use the threshold calibrated on training pairs instead of `threshold`.
  bool calibrate = false;
  std::string output_dir = "out";
  std::uint64_t seed = 42;

  /// K when split.train_writers is 0: 70% of the writers, clamped to [1, M-1].
  std::size_t resolve_train_writers(std::size_t total_writers) const {
    if (split.train_writers != 0) return split.train_writers;
    const auto k = static_cast<std::size_t>(0.7 * static_cast<double>(total_writers));
    return std::clamp<std::size_t>(k, 1, total_writers > 1 ? total_writers - 1 : 1);
  }

  /// Pushes the master seed into the per-component seeds.
  void apply_seed() {
    train.seed = seed;
    init.seed = seed ^ 0xA5A5A5A5A5A5A5A5ULL;
  }

  void validate() const {
    namespace fs = std::filesystem;
    if (dataset.kind == DatasetKind::feature_csv && !fs::is_regular_file(dataset.path)) {
      throw ConfigError("feature CSV '" + dataset.path + "' does not exist");
    }
    if (dataset.kind == DatasetKind::svc_raw && !fs::is_directory(dataset.path)) {
      throw ConfigError("trajectory directory '" + dataset.path + "' does not exist");
    }
    if (output_dir.empty()) throw ConfigError("output directory must be set");
    if (!std::isfinite(threshold)) throw ConfigError("threshold must be finite");
    if (!(init.low < init.high)) throw ConfigError("init range must satisfy low < high");
    train.validate();
    loss.validate();
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"dataset",
           {{"kind", to_string(c.dataset.kind)},
            {"path", c.dataset.path},
            {"feature_length", c.dataset.feature_length},
            {"recipe", c.dataset.recipe},
            {"synthetic",
             {{"writers", c.dataset.synthetic.writers},
              {"genuine_per_writer", c.dataset.synthetic.genuine_per_writer},
              {"forgery_per_writer", c.dataset.synthetic.forgery_per_writer},
              {"feature_length", c.dataset.synthetic.feature_length},
              {"separation", c.dataset.synthetic.separation},
              {"seed", c.dataset.synthetic.seed}}}}},
          {"arch", arch_to_json(c.arch)},
          {"train", train_to_json(c.train)},
          {"split", split_to_json(c.split)},
          {"loss", {{"margin", c.loss.margin}, {"l2", c.loss.l2}}},
          {"init", {{"low", c.init.low}, {"high", c.init.high}}},
          {"normalize", c.normalize},
          {"threshold", c.threshold},
          {"calibrate", c.calibrate},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

/// Overlays the fields present in `j` onto `c`.
inline void merge_json(const nlohmann::json& j, RunConfig& c) {
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("kind")) c.dataset.kind = dataset_kind_from(d["kind"].get<std::string>());
      c.dataset.path = d.value("path", c.dataset.path);
      c.dataset.feature_length = d.value("feature_length", c.dataset.feature_length);
      c.dataset.recipe = d.value("recipe", c.dataset.recipe);
      if (d.contains("synthetic")) {
        const auto& s = d["synthetic"];
        auto& t = c.dataset.synthetic;
        t.writers = s.value("writers", t.writers);
        t.genuine_per_writer = s.value("genuine_per_writer", t.genuine_per_writer);
        t.forgery_per_writer = s.value("forgery_per_writer", t.forgery_per_writer);
        t.feature_length = s.value("feature_length", t.feature_length);
        t.separation = s.value("separation", t.separation);
        t.seed = s.value("seed", t.seed);
      }
    }
    if (j.contains("arch")) arch_from_json(j["arch"], c.arch);
    if (j.contains("train")) train_from_json(j["train"], c.train);
    if (j.contains("split")) split_from_json(j["split"], c.split);
    if (j.contains("loss")) {
      c.loss.margin = j["loss"].value("margin", c.loss.margin);
      c.loss.l2 = j["loss"].value("l2", c.loss.l2);
    }
    if (j.contains("init")) {
      c.init.low = j["init"].value("low", c.init.low);
      c.init.high = j["init"].value("high", c.init.high);
    }
    c.normalize = j.value("normalize", c.normalize);
    c.threshold = j.value("threshold", c.threshold);
    c.calibrate = j.value("calibrate", c.calibrate);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run configuration: ") + e.what());
  }
}

}  // namespace sigsiam
