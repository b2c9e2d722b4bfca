#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ulab/adapters.hpp"
#include "ulab/common.hpp"
#include "ulab/matrix.hpp"
#include "ulab/types.hpp"

namespace ulab {

// Payloads are written as raw little-endian scalars; that is also the only
// host layout this code runs on.
static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                     {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},             {"max_seq", c.max_seq},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("max_seq").get_to(c.max_seq);
  c.seed = j.value("seed", std::uint64_t{0});
}

template <Scalar T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>)
    return "f32";
  else
    return "f64";
}

/// On-disk container: magic "ULAB", one version byte, a u32 little-endian
/// header length, a JSON header (kind, dtype, optional config, tensor table,
/// free-form meta), then the tensor payloads back to back in table order.
template <Scalar T>
struct Checkpoint {
  std::string kind;
  std::optional<ModelConfig> config;
  std::vector<std::pair<std::string, Matrix<T>>> tensors;
  nlohmann::json meta;
};

namespace detail {

constexpr char kMagic[4] = {'U', 'L', 'A', 'B'};
constexpr unsigned char kVersion = 1;

inline void write_bytes(std::ofstream& f, const void* p, std::size_t n, const std::string& path) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw parameter_error("checkpoint: write to '" + path + "' failed");
}

inline void read_bytes(std::ifstream& f, void* p, std::size_t n, const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (f.gcount() != static_cast<std::streamsize>(n))
    throw parameter_error("checkpoint: '" + path + "' is truncated");
}

}  // namespace detail

template <Scalar T>
void write_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  nlohmann::json header;
  header["kind"] = ck.kind;
  header["dtype"] = dtype_name<T>();
  if (ck.config) header["config"] = *ck.config;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : ck.tensors)
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["meta"] = ck.meta.is_null() ? nlohmann::json::object() : ck.meta;

  const std::string hs = header.dump();
  if (hs.size() > 0xFFFFFFFFull) throw parameter_error("checkpoint: header too large");
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw parameter_error("checkpoint: cannot open '" + path + "' for writing");
  detail::write_bytes(f, detail::kMagic, 4, path);
  detail::write_bytes(f, &detail::kVersion, 1, path);
  detail::write_bytes(f, &hlen, 4, path);
  detail::write_bytes(f, hs.data(), hs.size(), path);
  for (const auto& [name, m] : ck.tensors)
    detail::write_bytes(f, m.data(), static_cast<std::size_t>(m.size()) * sizeof(T), path);
  f.flush();
  if (!f) throw parameter_error("checkpoint: write to '" + path + "' failed");
}

/// Header of a checkpoint file, without loading payloads. Lets callers pick
/// the scalar type before committing to a typed read.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parameter_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  detail::read_bytes(f, magic, 4, path);
  if (std::memcmp(magic, detail::kMagic, 4) != 0)
    throw parameter_error("checkpoint: '" + path + "' is not a ULAB file");
  unsigned char version = 0;
  detail::read_bytes(f, &version, 1, path);
  if (version != detail::kVersion)
    throw parameter_error("checkpoint: '" + path + "' has unsupported version " +
                          std::to_string(static_cast<int>(version)));
  std::uint32_t hlen = 0;
  detail::read_bytes(f, &hlen, 4, path);
  std::string hs(hlen, '\0');
  detail::read_bytes(f, hs.data(), hlen, path);
  try {
    return nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw parameter_error("checkpoint: bad header in '" + path + "': " + e.what());
  }
}

template <Scalar T>
Checkpoint<T> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parameter_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  detail::read_bytes(f, magic, 4, path);
  if (std::memcmp(magic, detail::kMagic, 4) != 0)
    throw parameter_error("checkpoint: '" + path + "' is not a ULAB file");
  unsigned char version = 0;
  detail::read_bytes(f, &version, 1, path);
  if (version != detail::kVersion)
    throw parameter_error("checkpoint: '" + path + "' has unsupported version " +
                          std::to_string(static_cast<int>(version)));
  std::uint32_t hlen = 0;
  detail::read_bytes(f, &hlen, 4, path);
  std::string hs(hlen, '\0');
  detail::read_bytes(f, hs.data(), hlen, path);

  Checkpoint<T> ck;
  try {
    const nlohmann::json header = nlohmann::json::parse(hs);
    ck.kind = header.at("kind").get<std::string>();
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != dtype_name<T>())
      throw parameter_error("checkpoint: '" + path + "' holds " + dtype + " data, requested " +
                            dtype_name<T>());
    if (header.contains("config")) ck.config = header.at("config").get<ModelConfig>();
    ck.meta = header.value("meta", nlohmann::json::object());

    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const idx rows = entry.at("rows").get<idx>();
      const idx cols = entry.at("cols").get<idx>();
      if (rows < 1 || cols < 1)
        throw parameter_error("checkpoint: tensor '" + name + "' in '" + path +
                              "' has a non-positive shape");
      Matrix<T> m(rows, cols);
      detail::read_bytes(f, m.data(), static_cast<std::size_t>(m.size()) * sizeof(T), path);
      for (idx i = 0; i < m.size(); ++i)
        if (!is_finite(m.data()[i]))
          throw parameter_error("checkpoint: tensor '" + name + "' in '" + path +
                                "' contains non-finite values");
      ck.tensors.emplace_back(name, std::move(m));
    }
    char extra;
    f.read(&extra, 1);
    if (f.gcount() != 0)
      throw parameter_error("checkpoint: '" + path + "' has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw parameter_error("checkpoint: bad header in '" + path + "': " + e.what());
  }
  return ck;
}

// ---- typed wrappers -------------------------------------------------------

template <Scalar T>
void save_model(const std::string& path, const ModelParams<T>& params,
                const nlohmann::json& meta = nlohmann::json::object()) {
  params.validate();
  Checkpoint<T> ck;
  ck.kind = "model";
  ck.config = params.config;
  ck.meta = meta;
  for (const auto& [name, m] : params.tensors) ck.tensors.emplace_back(name, m);
  write_checkpoint(path, ck);
}

template <Scalar T>
ModelParams<T> load_model(const std::string& path, nlohmann::json* meta_out = nullptr) {
  Checkpoint<T> ck = read_checkpoint<T>(path);
  if (ck.kind != "model")
    throw parameter_error("checkpoint: '" + path + "' is a '" + ck.kind + "' file, expected model");
  if (!ck.config) throw parameter_error("checkpoint: model file '" + path + "' lacks a config");
  ModelParams<T> params;
  params.config = *ck.config;
  for (auto& [name, m] : ck.tensors) params.tensors.emplace(name, std::move(m));
  params.validate();
  if (meta_out) *meta_out = ck.meta;
  return params;
}

template <Scalar T>
void save_adapters(const std::string& path, const AdapterSet<T>& set,
                   const nlohmann::json& meta = nlohmann::json::object()) {
  Checkpoint<T> ck;
  ck.kind = "adapters";
  ck.meta = meta;
  ck.meta["compensated"] = set.compensated;
  for (const auto& [name, ad] : set.adapters) {
    ck.tensors.emplace_back(name + ".lora.a", ad.a);
    ck.tensors.emplace_back(name + ".lora.b", ad.b);
  }
  write_checkpoint(path, ck);
}

template <Scalar T>
AdapterSet<T> load_adapters(const std::string& path, nlohmann::json* meta_out = nullptr) {
  Checkpoint<T> ck = read_checkpoint<T>(path);
  if (ck.kind != "adapters")
    throw parameter_error("checkpoint: '" + path + "' is a '" + ck.kind +
                          "' file, expected adapters");
  AdapterSet<T> set;
  for (auto& [name, m] : ck.tensors) {
    const bool is_a = name.size() > 7 && name.compare(name.size() - 7, 7, ".lora.a") == 0;
    const bool is_b = name.size() > 7 && name.compare(name.size() - 7, 7, ".lora.b") == 0;
    if (!is_a && !is_b)
      throw parameter_error("checkpoint: unexpected tensor '" + name + "' in adapter file");
    const std::string target = name.substr(0, name.size() - 7);
    LoraAdapter<T>& ad = set.adapters[target];
    ad.target_name = target;
    (is_a ? ad.a : ad.b) = std::move(m);
  }
  for (const auto& [target, ad] : set.adapters)
    if (ad.a.size() == 0 || ad.b.size() == 0)
      throw parameter_error("checkpoint: adapter '" + target + "' in '" + path +
                            "' is missing a factor");
  if (ck.meta.contains("compensated"))
    set.compensated = ck.meta["compensated"].template get<std::vector<std::string>>();
  if (meta_out) *meta_out = ck.meta;
  return set;
}

template <Scalar T>
void save_fisher(const std::string& path, const FisherEstimate<T>& est,
                 const nlohmann::json& meta = nlohmann::json::object()) {
  Checkpoint<T> ck;
  ck.kind = "fisher";
  ck.meta = meta;
  ck.meta["n_examples"] = est.n_examples;
  for (const auto& [name, m] : est.sum_sq) ck.tensors.emplace_back(name, m);
  write_checkpoint(path, ck);
}

template <Scalar T>
FisherEstimate<T> load_fisher(const std::string& path) {
  Checkpoint<T> ck = read_checkpoint<T>(path);
  if (ck.kind != "fisher")
    throw parameter_error("checkpoint: '" + path + "' is a '" + ck.kind + "' file, expected fisher");
  FisherEstimate<T> est;
  est.n_examples = ck.meta.at("n_examples").template get<idx>();
  for (auto& [name, m] : ck.tensors) est.sum_sq.emplace(name, std::move(m));
  return est;
}

// ---- content hashing ------------------------------------------------------

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 14695981039346656037ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

/// Order-stable digest of every tensor's name and raw bytes. Two parameter
/// sets hash equal iff they are bitwise identical, which is how tests pin
/// down "the base model was not touched".
template <Scalar T>
std::uint64_t params_hash(const std::map<std::string, Matrix<T>>& tensors) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [name, m] : tensors) {
    h = fnv1a(name.data(), name.size(), h);
    const idx rc[2] = {m.rows(), m.cols()};
    h = fnv1a(rc, sizeof(rc), h);
    h = fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(T), h);
  }
  return h;
}

template <Scalar T>
std::uint64_t params_hash(const ModelParams<T>& params) {
  return params_hash(params.tensors);
}

template <Scalar T>
std::uint64_t params_hash(const AdapterSet<T>& set) {
  std::map<std::string, Matrix<T>> flat;
  for (const auto& [name, ad] : set.adapters) {
    flat.emplace(name + ".lora.a", ad.a);
    flat.emplace(name + ".lora.b", ad.b);
  }
  return params_hash(flat);
}

}  // namespace ulab
