#pragma once

// The encoder-decoder travel-time network.
//
//   spatial deltas --linear--> RNN --+
//   weekday index --embed----> RNN --+--> fusion --> residual FC chain --> estimate
//   hour index    --embed----> RNN --+
//
// Every channel enters its encoder at width D; fusion and the residual add
// therefore require rnn_units == embed_dim == last decoder width.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metatte/autodiff.hpp"
#include "metatte/params.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

enum class CellKind { LSTM, GRU, BiLSTM };
enum class Variant { Full, WithoutTemporal, WithoutAttention };

inline const char* cell_name(CellKind c) {
  switch (c) {
    case CellKind::LSTM: return "lstm";
    case CellKind::GRU: return "gru";
    case CellKind::BiLSTM: return "bilstm";
  }
  return "?";
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::WithoutTemporal: return "wt";
    case Variant::WithoutAttention: return "wa";
  }
  return "?";
}

inline CellKind parse_cell(const std::string& s) {
  if (s == "lstm") return CellKind::LSTM;
  if (s == "gru") return CellKind::GRU;
  if (s == "bilstm") return CellKind::BiLSTM;
  throw ConfigError("unknown cell kind '" + s + "' (expected lstm, gru or bilstm)");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "wt") return Variant::WithoutTemporal;
  if (s == "wa") return Variant::WithoutAttention;
  throw ConfigError("unknown variant '" + s + "' (expected full, wt or wa)");
}

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t rnn_units = 64;
  CellKind cell = CellKind::GRU;
  std::vector<std::size_t> decoder_widths{1024, 512, 256, 64};
  Variant variant = Variant::Full;

  bool use_temporal_embeddings() const { return variant != Variant::WithoutTemporal; }
  bool use_attention() const { return variant == Variant::Full; }
  std::size_t channels() const { return use_temporal_embeddings() ? 3 : 1; }

  void validate() const {
    if (embed_dim == 0 || rnn_units == 0) throw ConfigError("embed_dim and rnn_units must be positive");
    if (decoder_widths.empty()) throw ConfigError("decoder needs at least one layer");
    for (auto w : decoder_widths) {
      if (w == 0) throw ConfigError("decoder widths must be positive");
    }
    if (decoder_widths.back() != embed_dim) {
      throw ConfigError("last decoder width " + std::to_string(decoder_widths.back()) +
                        " must equal embed_dim " + std::to_string(embed_dim));
    }
    if (rnn_units != embed_dim) {
      throw ConfigError("rnn_units " + std::to_string(rnn_units) + " must equal embed_dim " +
                        std::to_string(embed_dim) + " for fusion and the residual add");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Padded mini-batch. Features are [B, L_max, 4] with channels
/// (dlat, dlon, weekday, hour); padding rows are zero.
struct Batch {
  Tensor features;
  std::vector<std::size_t> lengths;
  std::vector<double> labels;  // seconds
  std::string task_id;

  std::size_t size() const { return lengths.size(); }
  std::size_t max_length() const { return features.rank() == 3 ? features.dim(1) : 0; }
};

/// Pack already-scaled trajectories into a padded batch.
inline Batch make_batch(const std::vector<const MetaTrajectory*>& trajs, const std::string& task_id) {
  if (trajs.empty()) throw DegenerateInputError("cannot build an empty batch");
  std::size_t L = 0;
  for (const auto* m : trajs) {
    if (m->rows.empty()) throw DegenerateInputError("trajectory '" + m->id + "' has no rows");
    L = std::max(L, m->rows.size());
  }
  Batch b;
  b.task_id = task_id;
  b.features = Tensor(Shape{trajs.size(), L, 4});
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& rows = trajs[i]->rows;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      double* f = b.features.data().data() + (i * L + t) * 4;
      f[0] = rows[t].dlat;
      f[1] = rows[t].dlon;
      f[2] = rows[t].weekday;
      f[3] = rows[t].hour;
    }
    b.lengths.push_back(rows.size());
    b.labels.push_back(trajs[i]->label);
  }
  return b;
}

inline Batch make_batch(const std::vector<MetaTrajectory>& trajs, const std::string& task_id) {
  std::vector<const MetaTrajectory*> ptrs;
  for (const auto& m : trajs) ptrs.push_back(&m);
  return make_batch(ptrs, task_id);
}

using VarMap = std::map<std::string, Var>;

namespace ded {

inline Var param(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ConsistencyError("model parameter '" + name + "' is not bound");
  return it->second;
}

/// One-hot(index) x table, i.e. row `index` of table[C, E].
inline Var embed_categorical(std::size_t index, Var table) {
  return ad::gather_rows(table, {index});
}

/// Recurrent encoder over a [B * L, D] input laid out batch-major.
///
/// Each sequence advances only over its true length; rows past the end keep
/// their state unchanged, so padding never affects the result. LSTM returns the
/// final cell state, GRU the final hidden state, BiLSTM the projected
/// concatenation of forward and backward cell states.
inline Var encode_channel(Var input, const std::vector<std::size_t>& lengths, std::size_t max_len,
                          CellKind cell, const VarMap& vars, const std::string& prefix) {
  Tape& tape = *input.tape;
  const std::size_t B = lengths.size();
  for (std::size_t len : lengths) {
    if (len == 0) throw DegenerateInputError("zero-length sequence in " + prefix);
    if (len > max_len) throw DimensionError("sequence length exceeds padded length in " + prefix);
  }
  if (input.shape().size() != 2 || input.shape()[0] != B * max_len) {
    throw DimensionError("encoder input " + shape_str(input.shape()) + " does not match batch " +
                         std::to_string(B) + " x " + std::to_string(max_len));
  }

  auto mask_at = [&](std::size_t t) {
    std::vector<double> m(B);
    for (std::size_t b = 0; b < B; ++b) m[b] = t < lengths[b] ? 1.0 : 0.0;
    return m;
  };

  auto run_lstm = [&](const std::string& p, bool reverse) {
    const Var Wx = param(vars, p + ".Wx");
    const std::size_t H = param(vars, p + ".U").shape()[0];
    Var xw = ad::add_bias(ad::matmul(input, Wx), param(vars, p + ".b"));
    xw = ad::reshape(xw, {B, max_len, 4 * H});
    Var h = tape.constant(Tensor(Shape{B, H}));
    Var c = tape.constant(Tensor(Shape{B, H}));
    for (std::size_t s = 0; s < max_len; ++s) {
      const std::size_t t = reverse ? max_len - 1 - s : s;
      const Var xt = ad::reshape(ad::slice(xw, 1, t, t + 1), {B, 4 * H});
      const Var gates = ad::add(xt, ad::matmul(h, param(vars, p + ".U")));
      const Var i = ad::sigmoid(ad::slice(gates, 1, 0, H));
      const Var f = ad::sigmoid(ad::slice(gates, 1, H, 2 * H));
      const Var g = ad::tanh(ad::slice(gates, 1, 2 * H, 3 * H));
      const Var o = ad::sigmoid(ad::slice(gates, 1, 3 * H, 4 * H));
      const Var c_new = ad::add(ad::mul(f, c), ad::mul(i, g));
      const Var h_new = ad::mul(o, ad::tanh(c_new));
      const auto m = mask_at(t);
      c = ad::blend_rows(m, c_new, c);
      h = ad::blend_rows(m, h_new, h);
    }
    return c;
  };

  switch (cell) {
    case CellKind::LSTM:
      return run_lstm(prefix, false);
    case CellKind::BiLSTM: {
      const Var fwd = run_lstm(prefix + ".fwd", false);
      const Var bwd = run_lstm(prefix + ".bwd", true);
      return ad::add_bias(ad::matmul(ad::concat({fwd, bwd}), param(vars, prefix + ".proj.W")),
                          param(vars, prefix + ".proj.b"));
    }
    case CellKind::GRU: {
      const Var Un = param(vars, prefix + ".Un");
      const std::size_t H = Un.shape()[0];
      Var xw = ad::add_bias(ad::matmul(input, param(vars, prefix + ".Wx")), param(vars, prefix + ".b"));
      xw = ad::reshape(xw, {B, max_len, 3 * H});
      Var h = tape.constant(Tensor(Shape{B, H}));
      for (std::size_t t = 0; t < max_len; ++t) {
        const Var xt = ad::reshape(ad::slice(xw, 1, t, t + 1), {B, 3 * H});
        const Var hzr = ad::matmul(h, param(vars, prefix + ".Uzr"));
        const Var z = ad::sigmoid(ad::add(ad::slice(xt, 1, 0, H), ad::slice(hzr, 1, 0, H)));
        const Var r = ad::sigmoid(ad::add(ad::slice(xt, 1, H, 2 * H), ad::slice(hzr, 1, H, 2 * H)));
        const Var n = ad::tanh(ad::add(ad::slice(xt, 1, 2 * H, 3 * H), ad::matmul(ad::mul(r, h), Un)));
        // h' = (1 - z) * n + z * h
        const Var h_new = ad::add(n, ad::mul(z, ad::sub(h, n)));
        h = ad::blend_rows(mask_at(t), h_new, h);
      }
      return h;
    }
  }
  throw ConfigError("unknown cell kind");
}

struct Fusion {
  Var fused;                   // [B, D]
  std::optional<Var> weights;  // [B, D, F], attention only
};

/// Per-dimension softmax attention over the F stacked channel features.
/// Scores are relu(x W + b) with one F x F map shared across batch and dimension.
inline Fusion attention_fuse(const std::vector<Var>& features, Var W, Var b) {
  const Var stacked = ad::stack(features);  // [B, F, D]
  const std::size_t B = stacked.shape()[0], F = stacked.shape()[1], D = stacked.shape()[2];
  if (W.shape() != Shape{F, F} || b.shape() != Shape{F}) {
    throw DimensionError("attention parameters " + shape_str(W.shape()) + "/" + shape_str(b.shape()) +
                         " do not match " + std::to_string(F) + " features");
  }
  const Var per_dim = ad::reshape(ad::swap_last_axes(stacked), {B * D, F});
  const Var scores = ad::relu(ad::add_bias(ad::matmul(per_dim, W), b));
  const Var weights = ad::softmax(scores, 1);
  const Var fused = ad::reshape(ad::reduce_sum(ad::mul(weights, per_dim), 1), {B, D});
  return Fusion{fused, ad::reshape(weights, {B, D, F})};
}

/// Unweighted mean of the channel features (the no-attention ablation).
inline Var mean_fuse(const std::vector<Var>& features) {
  return ad::reduce_mean(ad::stack(features), 1);
}

/// FC chain with ReLU between layers, residual add of the input, then a
/// linear map to one output per row.
inline Var residual_decode(Var fused, const VarMap& vars, std::size_t layers) {
  Var h = fused;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string p = "dec.fc" + std::to_string(i);
    h = ad::add_bias(ad::matmul(h, param(vars, p + ".W")), param(vars, p + ".b"));
    if (i + 1 < layers) h = ad::relu(h);
  }
  if (h.shape() != fused.shape()) {
    throw ConfigError("decoder output " + shape_str(h.shape()) + " cannot be added to " +
                      shape_str(fused.shape()));
  }
  const Var res = ad::add(h, fused);
  return ad::add_bias(ad::matmul(res, param(vars, "dec.est.W")), param(vars, "dec.est.b"));
}

/// Mean absolute error.
inline Var mae_loss(Var predictions, Var targets) {
  if (predictions.value().empty()) throw DegenerateInputError("loss over an empty batch");
  if (predictions.shape() != targets.shape()) {
    throw DimensionError("loss: predictions " + shape_str(predictions.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  }
  return ad::reduce_mean(ad::abs(ad::sub(predictions, targets)));
}

}  // namespace ded

class DedModel {
 public:
  explicit DedModel(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }

  std::vector<std::string> channel_names() const {
    if (cfg_.use_temporal_embeddings()) return {"spatial", "weekday", "hour"};
    return {"spatial"};
  }

  /// Xavier-initialised weights; biases and categorical embeddings start at zero.
  ParameterStore init_params(std::uint64_t seed) const {
    ParameterStore store;
    const std::size_t D = cfg_.embed_dim, H = cfg_.rnn_units;
    auto xavier = [&](const std::string& name, Shape shape) {
      store.add(name, xavier_init(shape, derive_seed(seed, name)));
    };
    auto zeros = [&](const std::string& name, Shape shape) { store.add(name, Tensor(std::move(shape))); };

    xavier("spatial.proj.W", {2, D});
    zeros("spatial.proj.b", {D});
    if (cfg_.use_temporal_embeddings()) {
      zeros("embed.weekday", {kWeekdays, D});
      zeros("embed.hour", {kHours, D});
    }
    auto lstm = [&](const std::string& p) {
      xavier(p + ".Wx", {D, 4 * H});
      xavier(p + ".U", {H, 4 * H});
      zeros(p + ".b", {4 * H});
    };
    for (const auto& ch : channel_names()) {
      const std::string p = "enc." + ch;
      switch (cfg_.cell) {
        case CellKind::LSTM:
          lstm(p);
          break;
        case CellKind::GRU:
          xavier(p + ".Wx", {D, 3 * H});
          xavier(p + ".Uzr", {H, 2 * H});
          xavier(p + ".Un", {H, H});
          zeros(p + ".b", {3 * H});
          break;
        case CellKind::BiLSTM:
          lstm(p + ".fwd");
          lstm(p + ".bwd");
          xavier(p + ".proj.W", {2 * H, H});
          zeros(p + ".proj.b", {H});
          break;
      }
    }
    if (cfg_.use_attention()) {
      xavier("attn.W", {3, 3});
      zeros("attn.b", {3});
    }
    std::size_t in = H;
    for (std::size_t i = 0; i < cfg_.decoder_widths.size(); ++i) {
      const std::string p = "dec.fc" + std::to_string(i);
      xavier(p + ".W", {in, cfg_.decoder_widths[i]});
      zeros(p + ".b", {cfg_.decoder_widths[i]});
      in = cfg_.decoder_widths[i];
    }
    xavier("dec.est.W", {H, 1});
    zeros("dec.est.b", {1});
    return store;
  }

  struct Output {
    Var predictions;  // [B], normalised label space
    std::optional<Var> attention;
  };

  Output forward(Tape& tape, const VarMap& vars, const Batch& batch) const {
    const std::size_t B = batch.size(), L = batch.max_length();
    if (B == 0 || L == 0) throw DegenerateInputError("empty batch");
    const std::size_t D = cfg_.embed_dim;

    Tensor spatial(Shape{B * L, 2});
    std::vector<std::size_t> weekday(B * L), hour(B * L);
    const auto& f = batch.features;
    for (std::size_t i = 0; i < B * L; ++i) {
      spatial[2 * i] = f[4 * i];
      spatial[2 * i + 1] = f[4 * i + 1];
      weekday[i] = static_cast<std::size_t>(f[4 * i + 2]);
      hour[i] = static_cast<std::size_t>(f[4 * i + 3]);
    }

    std::vector<Var> feats;
    const Var sp_in = ad::add_bias(ad::matmul(tape.constant(std::move(spatial)), ded::param(vars, "spatial.proj.W")),
                                   ded::param(vars, "spatial.proj.b"));
    feats.push_back(ded::encode_channel(sp_in, batch.lengths, L, cfg_.cell, vars, "enc.spatial"));
    if (cfg_.use_temporal_embeddings()) {
      const Var w_in = ad::gather_rows(ded::param(vars, "embed.weekday"), weekday);
      const Var h_in = ad::gather_rows(ded::param(vars, "embed.hour"), hour);
      feats.push_back(ded::encode_channel(w_in, batch.lengths, L, cfg_.cell, vars, "enc.weekday"));
      feats.push_back(ded::encode_channel(h_in, batch.lengths, L, cfg_.cell, vars, "enc.hour"));
    }

    Output out;
    Var fused = feats.front();
    if (feats.size() > 1) {
      if (cfg_.use_attention()) {
        auto fu = ded::attention_fuse(feats, ded::param(vars, "attn.W"), ded::param(vars, "attn.b"));
        fused = fu.fused;
        out.attention = fu.weights;
      } else {
        fused = ded::mean_fuse(feats);
      }
    }
    if (fused.shape() != Shape{B, D}) {
      throw DimensionError("fused representation " + shape_str(fused.shape()) + " is not [B, D]");
    }
    const Var est = ded::residual_decode(fused, vars, cfg_.decoder_widths.size());
    out.predictions = ad::reshape(est, {B});
    return out;
  }

  /// Forward pass plus MAE against normalised targets.
  Var loss(Tape& tape, const VarMap& vars, const Batch& batch, const std::vector<double>& targets) const {
    const Output out = forward(tape, vars, batch);
    return ded::mae_loss(out.predictions, tape.constant(Tensor(Shape{targets.size()}, targets)));
  }

  /// Predictions in normalised label space, no gradient bookkeeping.
  std::vector<double> predict(const ParameterStore& params, const Batch& batch) const {
    Tape tape;
    VarMap vars;
    for (const auto& e : params.entries()) vars.emplace(e.name, tape.constant(e.value));
    return forward(tape, vars, batch).predictions.value().vec();
  }

 private:
  ModelConfig cfg_;
};

}  // namespace metatte
