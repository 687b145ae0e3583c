#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   magic     8 bytes  "SGSMCKPT"
//   version   u32
//   hdr_len   u64
//   header    hdr_len bytes of JSON (architecture, loss, blob table, summary)
//   payload   IEEE-754 binary64 values, little-endian, in blob-table order
//   checksum  u64 FNV-1a over header and payload
//
// The blob table lists every stored tensor by name and shape; its order
// defines the payload layout.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigsiam/config.hpp"
#include "sigsiam/error.hpp"
#include "sigsiam/ingest.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/siamese.hpp"

namespace sigsiam {

inline constexpr std::string_view kCheckpointMagic = "SGSMCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingSummary {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_monitored_loss = 0.0;
  std::string stop_reason;
  /// Accuracy-maximizing threshold on the training pairs.
  double calibrated_threshold = 0.5;
  std::size_t train_pairs = 0;

  friend bool operator==(const TrainingSummary&, const TrainingSummary&) = default;
};

struct Checkpoint {
  LossConfig loss;
  std::optional<NormStats> norm;
  ModelParams params;
  TrainingSummary summary;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::string_view in, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

inline void put_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) put_le(out, std::bit_cast<std::uint64_t>(v));
}

/// Payload size implied by the blob table, if the header is readable.
inline std::optional<std::size_t> declared_payload_bytes(std::string_view hdr) {
  const auto header = nlohmann::json::parse(hdr, nullptr, false);
  if (header.is_discarded() || !header.contains("blobs") || !header["blobs"].is_array()) return std::nullopt;
  std::size_t total = 0;
  for (const auto& b : header["blobs"]) {
    if (!b.contains("shape") || !b["shape"].is_array()) return std::nullopt;
    std::size_t n = 1;
    for (const auto& d : b["shape"]) {
      if (!d.is_number_unsigned()) return std::nullopt;
      n *= d.get<std::size_t>();
    }
    total += 8 * n;
  }
  return total;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json blobs = nlohmann::json::array();
  std::string payload;
  auto add_blob = [&](const std::string& name, const std::vector<std::size_t>& shape,
                      std::span<const double> values) {
    blobs.push_back({{"name", name}, {"shape", shape}});
    detail::put_doubles(payload, values);
  };
  for (const auto& t : ck.params.weights) add_blob(t.name, t.shape, t.values);
  add_blob("bn.running_mean", {ck.params.bn_running_mean.size()}, ck.params.bn_running_mean);
  add_blob("bn.running_var", {ck.params.bn_running_var.size()}, ck.params.bn_running_var);
  if (ck.norm) {
    add_blob("norm.mean", {ck.norm->mean.size()}, ck.norm->mean);
    add_blob("norm.std", {ck.norm->std.size()}, ck.norm->std);
  }

  const nlohmann::json header = {
      {"arch", arch_to_json(ck.params.arch)},
      {"loss", {{"mode", to_string(ck.loss.mode)}, {"margin", ck.loss.margin}, {"l2", ck.loss.l2}}},
      {"normalized", ck.norm.has_value()},
      {"blobs", blobs},
      {"summary",
       {{"epochs_run", ck.summary.epochs_run},
        {"best_epoch", ck.summary.best_epoch},
        {"best_monitored_loss_bits", std::bit_cast<std::uint64_t>(ck.summary.best_monitored_loss)},
        {"stop_reason", ck.summary.stop_reason},
        {"calibrated_threshold_bits", std::bit_cast<std::uint64_t>(ck.summary.calibrated_threshold)},
        {"train_pairs", ck.summary.train_pairs}}}};
  const std::string hdr = header.dump();

  std::string out(kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, hdr.size());
  out += hdr;
  out += payload;
  detail::put_le<std::uint64_t>(out, detail::fnv1a(payload, detail::fnv1a(hdr)));
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  constexpr std::size_t prefix = 8 + 4 + 8;
  if (bytes.size() < 8 || bytes.substr(0, 8) != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  if (bytes.size() < prefix) throw CheckpointError("checkpoint integrity check failed: file truncated");
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (this reader supports version " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto hdr_len = detail::get_le<std::uint64_t>(bytes, 12);
  if (hdr_len > bytes.size() - prefix || bytes.size() - prefix - hdr_len < 8) {
    throw CheckpointError("checkpoint integrity check failed: file truncated");
  }
  const std::string_view hdr = bytes.substr(prefix, hdr_len);
  const std::string_view payload =
      bytes.substr(prefix + hdr_len, bytes.size() - prefix - hdr_len - 8);
  if (const auto expected = detail::declared_payload_bytes(hdr); expected && payload.size() < *expected) {
    throw CheckpointError("checkpoint integrity check failed: file truncated");
  }
  const auto stored = detail::get_le<std::uint64_t>(bytes, bytes.size() - 8);
  if (stored != detail::fnv1a(payload, detail::fnv1a(hdr))) {
    throw CheckpointError("checkpoint integrity check failed: checksum mismatch");
  }

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(hdr);
    ArchSpec arch;
    arch_from_json(header.at("arch"), arch);
    const auto& loss = header.at("loss");
    ck.loss.mode = head_from(loss.at("mode").get<std::string>());
    ck.loss.margin = loss.at("margin").get<double>();
    ck.loss.l2 = loss.at("l2").get<double>();
    ck.params.arch = arch;
    ck.params.weights = make_param_layout(arch);

    std::size_t offset = 0;
    auto read_values = [&](std::size_t n) {
      if ((offset + n) * 8 > payload.size()) {
        throw CheckpointError("checkpoint payload shorter than its blob table");
      }
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(payload, (offset + i) * 8));
      }
      offset += n;
      return v;
    };

    NormStats norm;
    for (const auto& b : header.at("blobs")) {
      const auto name = b.at("name").get<std::string>();
      const auto shape = b.at("shape").get<std::vector<std::size_t>>();
      std::size_t n = 1;
      for (auto d : shape) n *= d;
      auto values = read_values(n);
      if (auto* t = ck.params.weights.find(name)) {
        if (t->shape != shape) throw CheckpointError("blob '" + name + "' has the wrong shape");
        t->values = std::move(values);
      } else if (name == "bn.running_mean") {
        ck.params.bn_running_mean = std::move(values);
      } else if (name == "bn.running_var") {
        ck.params.bn_running_var = std::move(values);
      } else if (name == "norm.mean") {
        norm.mean = std::move(values);
      } else if (name == "norm.std") {
        norm.std = std::move(values);
      } else {
        throw CheckpointError("unexpected blob '" + name + "'");
      }
    }
    if (offset * 8 != payload.size()) throw CheckpointError("checkpoint payload has trailing data");
    if (ck.params.bn_running_mean.size() != arch.embedding_dim ||
        ck.params.bn_running_var.size() != arch.embedding_dim) {
      throw CheckpointError("checkpoint lacks batch-norm running statistics");
    }
    if (header.at("normalized").get<bool>()) {
      if (norm.mean.size() != arch.input_length || norm.std.size() != arch.input_length) {
        throw CheckpointError("checkpoint normalization statistics are incomplete");
      }
      ck.norm = std::move(norm);
    }
    const auto& s = header.at("summary");
    ck.summary.epochs_run = s.at("epochs_run").get<std::size_t>();
    ck.summary.best_epoch = s.at("best_epoch").get<std::size_t>();
    ck.summary.best_monitored_loss = std::bit_cast<double>(s.at("best_monitored_loss_bits").get<std::uint64_t>());
    ck.summary.stop_reason = s.at("stop_reason").get<std::string>();
    ck.summary.calibrated_threshold =
        std::bit_cast<double>(s.at("calibrated_threshold_bits").get<std::uint64_t>());
    ck.summary.train_pairs = s.at("train_pairs").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid checkpoint architecture: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace sigsiam
