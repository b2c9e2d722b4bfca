#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ulab/common.hpp"
#include "ulab/matrix.hpp"

namespace ulab {

using Token = std::int32_t;

/// Token ids in [0, vocab_size). Training sequences have length >= 2 (a
/// sequence needs at least one next-token target); generation prefixes may be
/// a single token.
using TokenSequence = std::vector<Token>;

struct ModelConfig {
  idx vocab_size = 512;
  idx d_model = 128;
  idx n_layers = 2;
  idx n_heads = 4;
  idx d_ff = 512;
  idx max_seq = 64;
  std::uint64_t seed = 0;

  idx head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1)
      throw parameter_error("ModelConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw parameter_error("ModelConfig: d_model " + std::to_string(d_model) +
                            " not divisible by n_heads " + std::to_string(n_heads));
    if (max_seq < 2) throw parameter_error("ModelConfig: max_seq must be >= 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Expected tensor names and shapes for a config. Naming scheme:
///   emb.tok, emb.pos, blk{i}.{q|k|v|o}, blk{i}.ffn.{in|out},
///   blk{i}.{ln1|ln2}.{gain|bias}, final_ln.{gain|bias}, head
inline std::map<std::string, std::pair<idx, idx>> tensor_shapes(const ModelConfig& c) {
  c.validate();
  std::map<std::string, std::pair<idx, idx>> s;
  s["emb.tok"] = {c.vocab_size, c.d_model};
  s["emb.pos"] = {c.max_seq, c.d_model};
  for (idx i = 0; i < c.n_layers; ++i) {
    std::string p = "blk" + std::to_string(i) + ".";
    s[p + "q"] = {c.d_model, c.d_model};
    s[p + "k"] = {c.d_model, c.d_model};
    s[p + "v"] = {c.d_model, c.d_model};
    s[p + "o"] = {c.d_model, c.d_model};
    s[p + "ffn.in"] = {c.d_ff, c.d_model};
    s[p + "ffn.out"] = {c.d_model, c.d_ff};
    s[p + "ln1.gain"] = {1, c.d_model};
    s[p + "ln1.bias"] = {1, c.d_model};
    s[p + "ln2.gain"] = {1, c.d_model};
    s[p + "ln2.bias"] = {1, c.d_model};
  }
  s["final_ln.gain"] = {1, c.d_model};
  s["final_ln.bias"] = {1, c.d_model};
  s["head"] = {c.vocab_size, c.d_model};
  return s;
}

/// Named tensor collection for the decoder-only transformer. Linear weights
/// are stored out x in, so y = x W^T maps directly onto the NT kernel.
template <Scalar T>
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Matrix<T>> tensors;

  const Matrix<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw shape_error("ModelParams: unknown tensor '" + name + "'");
    return it->second;
  }
  Matrix<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw shape_error("ModelParams: unknown tensor '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  idx total_entries() const {
    idx n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  void validate() const {
    auto expect = tensor_shapes(config);
    for (const auto& [name, shape] : expect) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw shape_error("ModelParams: missing tensor '" + name + "'");
      if (it->second.rows() != shape.first || it->second.cols() != shape.second)
        throw shape_error("ModelParams: tensor '" + name + "' has shape (" +
                          std::to_string(it->second.rows()) + " x " +
                          std::to_string(it->second.cols()) + "), expected (" +
                          std::to_string(shape.first) + " x " + std::to_string(shape.second) + ")");
    }
    if (tensors.size() != expect.size())
      throw shape_error("ModelParams: unexpected extra tensors present");
  }
};

inline void validate_tokens(const TokenSequence& x, idx vocab_size) {
  for (Token t : x)
    if (t < 0 || static_cast<idx>(t) >= vocab_size)
      throw parameter_error("token " + std::to_string(t) + " outside vocabulary [0, " +
                            std::to_string(vocab_size) + ")");
}

}  // namespace ulab
