#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trims/autograd.hpp"
#include "trims/checkpoint.hpp"
#include "trims/error.hpp"
#include "trims/rng.hpp"
#include "trims/vocab.hpp"

namespace trims {

enum class AttentionMode { causal, bidirectional };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::causal ? "causal" : "bidirectional"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "causal") return AttentionMode::causal;
  if (s == "bidirectional") return AttentionMode::bidirectional;
  throw UsageError("attention_mode must be 'causal' or 'bidirectional', got '" + s + "'");
}

struct ModelConfig {
  int vocab_size = kVocabSize;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 128;
  AttentionMode attention_mode = AttentionMode::bidirectional;
  int mask_id = kMaskId;
  int pad_id = kPadId;

  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      return UsageError("invalid model config: " + field + " " + why);
    };
    if (vocab_size < 2) throw bad("vocab_size", "must be at least 2");
    if (d_model <= 0) throw bad("d_model", "must be positive");
    if (n_layers <= 0) throw bad("n_layers", "must be positive");
    if (n_heads <= 0) throw bad("n_heads", "must be positive");
    if (d_model % n_heads != 0) {
      throw bad("d_model", "(" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                               std::to_string(n_heads) + ")");
    }
    if (max_seq_len <= 0) throw bad("max_seq_len", "must be positive");
    if (mask_id < 0 || mask_id >= vocab_size) throw bad("mask_id", "must name a symbol inside the vocabulary");
    if (pad_id < 0 || pad_id >= vocab_size) throw bad("pad_id", "must name a symbol inside the vocabulary");
    if (mask_id == pad_id) throw bad("mask_id", "must differ from pad_id");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"max_seq_len", c.max_seq_len},
          {"attention_mode", to_string(c.attention_mode)},
          {"mask_id", c.mask_id},       {"pad_id", c.pad_id}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  c.mask_id = j.at("mask_id").get<int>();
  c.pad_id = j.at("pad_id").get<int>();
  return c;
}

// Parameter names and shapes in canonical order.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto s = static_cast<std::size_t>(c.max_seq_len);
  std::vector<std::pair<std::string, Shape>> out{{"tok_emb", {v, d}}, {"pos_emb", {s, d}}};
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", {d}});
    out.push_back({p + "ln1.beta", {d}});
    // No key bias: softmax over keys is invariant to it, so its gradient is identically zero.
    out.push_back({p + "attn.wq", {d, d}});
    out.push_back({p + "attn.bq", {d}});
    out.push_back({p + "attn.wk", {d, d}});
    out.push_back({p + "attn.wv", {d, d}});
    out.push_back({p + "attn.bv", {d}});
    out.push_back({p + "attn.wo", {d, d}});
    out.push_back({p + "attn.bo", {d}});
    out.push_back({p + "ln2.gamma", {d}});
    out.push_back({p + "ln2.beta", {d}});
    out.push_back({p + "mlp.w1", {d, 4 * d}});
    out.push_back({p + "mlp.b1", {4 * d}});
    out.push_back({p + "mlp.w2", {4 * d, d}});
    out.push_back({p + "mlp.b2", {d}});
  }
  out.push_back({"ln_f.gamma", {d}});
  out.push_back({"ln_f.beta", {d}});
  return out;
}

template <class T>
struct Checkpoint {
  ModelConfig config;
  NamedTensors<T> params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string role;  // "teacher" or "student"

  // Zero tensors matching the parameter layout, for gradient accumulation.
  NamedTensors<T> zeros_like() const {
    NamedTensors<T> z;
    for (std::size_t i = 0; i < params.size(); ++i) z.add(params.names()[i], Tensor<T>(params.tensors()[i].shape()));
    return z;
  }
};

inline void check_parameter_set(const ModelConfig& config, const std::vector<std::string>& names,
                                const std::vector<Shape>& shapes) {
  const auto layout = parameter_layout(config);
  if (names.size() != layout.size()) {
    throw DataError("checkpoint has " + std::to_string(names.size()) + " tensors, expected " +
                    std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (names[i] != layout[i].first) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " is '" + names[i] + "', expected '" +
                      layout[i].first + "'");
    }
    if (shapes[i] != layout[i].second) {
      throw DataError("checkpoint tensor '" + names[i] + "' has shape " + shape_str(shapes[i]) + ", expected " +
                      shape_str(layout[i].second));
    }
  }
}

// Deterministic initialization: normal(0, 0.02) for embeddings and input
// projections, residual output projections scaled by 1/sqrt(2 n_layers),
// unit norm gains, zero biases.
template <class T>
Checkpoint<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint<T> ck;
  ck.config = config;
  ck.seed = seed;
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);
  std::uint64_t index = 0;
  for (const auto& [name, shape] : parameter_layout(config)) {
    Tensor<T> t(shape);
    const auto ends_with = [&name](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends_with("gamma")) {
      t.fill(T(1));
    } else if (shape.size() == 2) {
      const double stddev = (ends_with("attn.wo") || ends_with("mlp.w2")) ? resid_std : base_std;
      Rng rng(hash_key({seed, index, 0x1417ULL}));
      for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
    }
    ck.params.add(name, std::move(t));
    ++index;
  }
  return ck;
}

// Builds the logits [n x vocab] for `tokens` from parameter handles given in
// parameter_layout() order.
template <class T>
Var<T> forward_vars(Graph<T>&, const ModelConfig& config, std::span<const Var<T>> params,
                    std::span<const int> tokens) {
  const std::size_t n = tokens.size();
  if (n == 0) throw DataError("forward: empty token sequence");
  if (n > static_cast<std::size_t>(config.max_seq_len)) {
    throw DataError("forward: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                    std::to_string(config.max_seq_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] < 0 || tokens[i] >= config.vocab_size) {
      throw DataError("forward: token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                      " outside vocabulary of size " + std::to_string(config.vocab_size));
    }
  }
  const std::size_t per_layer = 15;
  if (params.size() != 4 + per_layer * static_cast<std::size_t>(config.n_layers)) {
    throw ShapeError("forward: expected " + std::to_string(4 + per_layer * config.n_layers) +
                     " parameter tensors, got " + std::to_string(params.size()));
  }
  const bool causal = config.attention_mode == AttentionMode::causal;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto heads = static_cast<std::size_t>(config.n_heads);
  const std::size_t dh = d / heads;
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(dh));

  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  Var<T> tok_emb = params[0];
  Var<T> x = add(embedding(tok_emb, tokens), embedding(params[1], std::span<const int>(positions)));

  for (std::size_t l = 0; l < static_cast<std::size_t>(config.n_layers); ++l) {
    // ln1.gamma ln1.beta wq bq wk wv bv wo bo ln2.gamma ln2.beta w1 b1 w2 b2
    const auto lp = params.subspan(2 + l * per_layer, per_layer);
    Var<T> h = layer_norm(x, lp[0], lp[1]);
    Var<T> q = add_bias(matmul(h, lp[2]), lp[3]);
    Var<T> k = matmul(h, lp[4]);
    Var<T> v = add_bias(matmul(h, lp[5]), lp[6]);
    std::vector<Var<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Var<T> qh = slice_cols(q, hd * dh, dh);
      Var<T> kh = slice_cols(k, hd * dh, dh);
      Var<T> vh = slice_cols(v, hd * dh, dh);
      Var<T> att = softmax_rows(scale(matmul_nt(qh, kh), attn_scale), causal);
      head_out.push_back(matmul(att, vh));
    }
    Var<T> o = heads == 1 ? head_out[0] : concat_cols(std::span<const Var<T>>(head_out));
    x = add(x, add_bias(matmul(o, lp[7]), lp[8]));

    Var<T> h2 = layer_norm(x, lp[9], lp[10]);
    Var<T> m = gelu(add_bias(matmul(h2, lp[11]), lp[12]));
    x = add(x, add_bias(matmul(m, lp[13]), lp[14]));
  }
  const std::size_t tail = 2 + per_layer * static_cast<std::size_t>(config.n_layers);
  x = layer_norm(x, params[tail], params[tail + 1]);
  return matmul_nt(x, tok_emb);
}

// Same as forward_vars, binding the stored tensors. When `grads` is non-null
// every parameter is tracked and backward() accumulates into it.
template <class T>
Var<T> forward(Graph<T>& g, const ModelConfig& config, const NamedTensors<T>& params, NamedTensors<T>* grads,
               std::span<const int> tokens) {
  std::vector<Var<T>> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.push_back(g.parameter(params.tensors()[i], grads ? &grads->tensors()[i] : nullptr));
  }
  return forward_vars(g, config, std::span<const Var<T>>(vars), tokens);
}

template <class T>
Tensor<T> forward_logits(const Checkpoint<T>& ck, std::span<const int> tokens) {
  Graph<T> g;
  return forward(g, ck.config, ck.params, static_cast<NamedTensors<T>*>(nullptr), tokens).value();
}

// Immutable inference wrapper that counts forward passes. Safe to share
// across threads.
template <class T>
class Model {
 public:
  explicit Model(Checkpoint<T> ck) : ck_(std::move(ck)), forwards_(std::make_unique<std::atomic<std::size_t>>(0)) {}

  const ModelConfig& config() const noexcept { return ck_.config; }
  const Checkpoint<T>& checkpoint() const noexcept { return ck_; }

  Tensor<T> logits(std::span<const int> tokens) const {
    forwards_->fetch_add(1, std::memory_order_relaxed);
    return forward_logits(ck_, tokens);
  }

  std::size_t forward_count() const noexcept { return forwards_->load(std::memory_order_relaxed); }

 private:
  Checkpoint<T> ck_;
  std::unique_ptr<std::atomic<std::size_t>> forwards_;
};

template <class T>
nlohmann::json checkpoint_meta(const Checkpoint<T>& ck) {
  return {{"kind", "trims-model"}, {"config", to_json(ck.config)}, {"seed", ck.seed}, {"step", ck.step},
          {"role", ck.role}};
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  write_tensor_file(path, checkpoint_meta(ck), ck.params);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  auto file = read_tensor_file<T>(path);
  Checkpoint<T> ck;
  try {
    if (file.meta.value("kind", std::string{}) != "trims-model") {
      throw DataError(path.string() + ": not a model checkpoint");
    }
    ck.config = model_config_from_json(file.meta.at("config"));
    ck.seed = file.meta.at("seed").template get<std::uint64_t>();
    ck.step = file.meta.at("step").template get<std::uint64_t>();
    ck.role = file.meta.value("role", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint metadata: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<Shape> shapes;
  for (const auto& t : file.tensors.tensors()) shapes.push_back(t.shape());
  check_parameter_set(ck.config, file.tensors.names(), shapes);
  ck.params = std::move(file.tensors);
  return ck;
}

}  // namespace trims
