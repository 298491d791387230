#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rulforge/ops.hpp"
#include "rulforge/param_store.hpp"
#include "rulforge/rng.hpp"
#include "rulforge/tape.hpp"

namespace rulforge::model {

using core::Activation;
using core::Mode;
using core::ParamStore;
using core::Shape;
using core::Tape;
using core::Tensor;
using core::Var;

enum class Integrator { kEuler, kRk4, kMidpoint, kHeun2, kHeun3 };

inline Integrator integrator_from_string(const std::string& name) {
  if (name == "euler") return Integrator::kEuler;
  if (name == "rk4") return Integrator::kRk4;
  if (name == "midpoint") return Integrator::kMidpoint;
  if (name == "heun2") return Integrator::kHeun2;
  if (name == "heun3") return Integrator::kHeun3;
  throw ConfigError("unknown integrator: " + name);
}

inline std::string to_string(Integrator i) {
  switch (i) {
    case Integrator::kEuler: return "euler";
    case Integrator::kRk4: return "rk4";
    case Integrator::kMidpoint: return "midpoint";
    case Integrator::kHeun2: return "heun2";
    case Integrator::kHeun3: return "heun3";
  }
  return "?";
}

// Where the relative-time scalar R_t = (t-1)/(seq_len-1) is appended: to the
// first recurrent cell's input, to every cell's input, or nowhere.
enum class RtMode { kFirst, kAll, kNone };

inline RtMode rt_mode_from_string(const std::string& name) {
  if (name == "first") return RtMode::kFirst;
  if (name == "all") return RtMode::kAll;
  if (name == "none") return RtMode::kNone;
  throw ConfigError("unknown rt_mode: " + name);
}

inline std::string to_string(RtMode m) {
  switch (m) {
    case RtMode::kFirst: return "first";
    case RtMode::kAll: return "all";
    case RtMode::kNone: return "none";
  }
  return "?";
}

struct ModelConfig {
  int hidden = 64;          // base channel count; conv stack is hidden, 2x, 4x
  int kernel = 5;           // odd
  int alstm_hidden = 128;
  int odelstm_hidden = 256;
  double dropout = 0.3;
  Activation activation = Activation::kLeakyRelu;
  Integrator integrator = Integrator::kEuler;
  int ode_substeps = 1;
  RtMode rt_mode = RtMode::kFirst;
  double output_scale = 3000.0;  // cycles
  int seq_len = 10;
  int feat_dim = 24;

  void validate() const {
    if (hidden < 1) throw ConfigError("hidden must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd and positive");
    if (alstm_hidden < 1 || odelstm_hidden < 1) throw ConfigError("hidden sizes must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (ode_substeps < 1) throw ConfigError("ode_substeps must be >= 1");
    if (output_scale <= 0.0) throw ConfigError("output_scale must be positive");
    if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
    if (feat_dim < 1) throw ConfigError("feat_dim must be positive");
  }

  int conv_channels(int layer) const { return hidden << layer; }  // H, 2H, 4H
  int alstm_input(int cell) const {
    const int base = cell == 0 ? conv_channels(2) : alstm_hidden;
    const bool rt = (cell == 0 && rt_mode != RtMode::kNone) || rt_mode == RtMode::kAll;
    return base + (rt ? 1 : 0);
  }
  int odelstm_input(int cell) const { return cell == 0 ? feat_dim : odelstm_hidden; }
  int head_input() const { return alstm_hidden + odelstm_hidden; }
};

namespace detail {

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, rng::Stream& stream) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(stream.uniform(-bound, bound));
  }
  return t;
}

inline bool is_buffer_name(const std::string& name) {
  return name.find(".bn.running_") != std::string::npos;
}

}  // namespace detail

// Evenly spaced time stamps over [0, 1] for the ODE branch.
inline std::vector<double> uniform_times(int seq_len) {
  std::vector<double> t(static_cast<std::size_t>(seq_len));
  for (int k = 0; k < seq_len; ++k) {
    t[static_cast<std::size_t>(k)] = static_cast<double>(k) / static_cast<double>(seq_len - 1);
  }
  return t;
}

// One integration of dh/dt = f_theta([h; t]) over [t0, t1] split into equal
// substeps. Returns the increment, so the caller forms h~ = h + increment.
// f_theta is a single affine map: weight [(H+1) x H], bias [H].
template <typename T>
Var<T> ode_evolve(Tape<T>& tape, Var<T> h, double t0, double t1, Var<T> f_weight, Var<T> f_bias,
                  Integrator integrator, int substeps) {
  if (t1 < t0) throw ContractError("ode_evolve needs t1 >= t0");
  if (substeps < 1) throw ConfigError("ode_evolve substeps must be >= 1");
  const std::int64_t batch = h.value().dim(0);

  auto field = [&](Var<T> y, double t) {
    auto t_col = tape.constant(Tensor<T>::full({batch, 1}, static_cast<T>(t)));
    return add_rowvec(matmul(concat_cols(y, t_col), f_weight), f_bias);
  };

  const double dt = (t1 - t0) / static_cast<double>(substeps);
  Var<T> delta;  // accumulated increment; invalid until the first substep
  for (int s = 0; s < substeps; ++s) {
    const double ts = t0 + dt * static_cast<double>(s);
    Var<T> cur = delta.valid() ? add(h, delta) : h;
    Var<T> inc;
    switch (integrator) {
      case Integrator::kEuler: {
        inc = scale(field(cur, ts), static_cast<T>(dt));
        break;
      }
      case Integrator::kMidpoint: {
        auto k1 = field(cur, ts);
        auto k2 = field(add(cur, scale(k1, static_cast<T>(dt / 2))), ts + dt / 2);
        inc = scale(k2, static_cast<T>(dt));
        break;
      }
      case Integrator::kHeun2: {
        auto k1 = field(cur, ts);
        auto k2 = field(add(cur, scale(k1, static_cast<T>(dt))), ts + dt);
        inc = scale(add(k1, k2), static_cast<T>(dt / 2));
        break;
      }
      case Integrator::kHeun3: {
        auto k1 = field(cur, ts);
        auto k2 = field(add(cur, scale(k1, static_cast<T>(dt / 3))), ts + dt / 3);
        auto k3 = field(add(cur, scale(k2, static_cast<T>(2 * dt / 3))), ts + 2 * dt / 3);
        inc = scale(add(k1, scale(k3, T(3))), static_cast<T>(dt / 4));
        break;
      }
      case Integrator::kRk4: {
        auto k1 = field(cur, ts);
        auto k2 = field(add(cur, scale(k1, static_cast<T>(dt / 2))), ts + dt / 2);
        auto k3 = field(add(cur, scale(k2, static_cast<T>(dt / 2))), ts + dt / 2);
        auto k4 = field(add(cur, scale(k3, static_cast<T>(dt))), ts + dt);
        inc = scale(add(add(k1, k4), scale(add(k2, k3), T(2))), static_cast<T>(dt / 6));
        break;
      }
    }
    delta = delta.valid() ? add(delta, inc) : inc;
  }
  return delta;
}

// Hybrid RUL network: three 1-D conv layers into a two-cell attentional LSTM
// (branch 1), a two-cell ODE-LSTM over the raw features (branch 2), and a
// sigmoid head scaled to cycles.
template <typename T>
class RulNet {
 public:
  using ParamVars = std::map<std::string, Var<T>>;

  explicit RulNet(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }

  // Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights and biases;
  // batchnorm gamma=1, beta=0; running stats at (0, 1).
  ParamStore<T> init_params(std::uint64_t seed) const {
    rng::Stream stream(rng::mix(seed, 0x0de1));
    ParamStore<T> store;
    int c_in = cfg_.feat_dim;
    for (int layer = 0; layer < 3; ++layer) {
      const int c_out = cfg_.conv_channels(layer);
      const std::string base = "cnn." + std::to_string(layer) + ".";
      const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * cfg_.kernel));
      store.insert(base + "weight",
                   detail::uniform_init<T>({c_out, c_in, cfg_.kernel}, bound, stream));
      store.insert(base + "bias", detail::uniform_init<T>({c_out}, bound, stream));
      store.insert(base + "bn.gamma", Tensor<T>::ones({c_out}));
      store.insert(base + "bn.beta", Tensor<T>::zeros({c_out}));
      store.insert(base + "bn.running_mean", Tensor<T>::zeros({c_out}), false);
      store.insert(base + "bn.running_var", Tensor<T>::ones({c_out}), false);
      c_in = c_out;
    }
    for (int cell = 0; cell < 2; ++cell) {
      const std::string base = "alstm." + std::to_string(cell) + ".";
      const int d_in = cfg_.alstm_input(cell);
      const int gate_in = d_in + 2 * cfg_.alstm_hidden;  // [x; context; h_prev]
      const double bound = 1.0 / std::sqrt(static_cast<double>(gate_in));
      for (const char* gate : {"W_i", "W_f", "W_o", "W_c"}) {
        store.insert(base + gate,
                     detail::uniform_init<T>({gate_in, cfg_.alstm_hidden}, bound, stream));
      }
      for (const char* gate : {"b_i", "b_f", "b_o", "b_c"}) {
        store.insert(base + gate, detail::uniform_init<T>({cfg_.alstm_hidden}, bound, stream));
      }
      const double att_bound = 1.0 / std::sqrt(static_cast<double>(cfg_.alstm_hidden));
      store.insert(base + "W_a", detail::uniform_init<T>({cfg_.alstm_hidden, cfg_.alstm_hidden},
                                                         att_bound, stream));
      store.insert(base + "U_a",
                   detail::uniform_init<T>({d_in, cfg_.alstm_hidden},
                                           1.0 / std::sqrt(static_cast<double>(d_in)), stream));
      store.insert(base + "b_a", detail::uniform_init<T>({cfg_.alstm_hidden}, att_bound, stream));
      store.insert(base + "v", detail::uniform_init<T>({cfg_.alstm_hidden}, att_bound, stream));
    }
    for (int cell = 0; cell < 2; ++cell) {
      const std::string base = "odelstm." + std::to_string(cell) + ".";
      const int d_in = cfg_.odelstm_input(cell);
      const int gate_in = d_in + cfg_.odelstm_hidden;  // [x; h~], no bias terms
      const double bound = 1.0 / std::sqrt(static_cast<double>(gate_in));
      for (const char* gate : {"W_i", "W_f", "W_o", "W_c"}) {
        store.insert(base + gate,
                     detail::uniform_init<T>({gate_in, cfg_.odelstm_hidden}, bound, stream));
      }
      const double f_bound = 1.0 / std::sqrt(static_cast<double>(cfg_.odelstm_hidden + 1));
      store.insert(base + "f_theta.weight",
                   detail::uniform_init<T>({cfg_.odelstm_hidden + 1, cfg_.odelstm_hidden},
                                           f_bound, stream));
      store.insert(base + "f_theta.bias",
                   detail::uniform_init<T>({cfg_.odelstm_hidden}, f_bound, stream));
    }
    {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.head_input()));
      store.insert("head.weight", detail::uniform_init<T>({cfg_.head_input(), 1}, bound, stream));
      store.insert("head.bias", detail::uniform_init<T>({1}, bound, stream));
    }
    return store;
  }

  static bool is_buffer(const std::string& name) { return detail::is_buffer_name(name); }

  // Re-applies buffer flags after loading a checkpoint.
  static void mark_buffers(ParamStore<T>& store) {
    for (auto& [name, param] : store) {
      if (is_buffer(name)) param.trainable = false;
    }
  }

  // Inserts every non-buffer parameter as a tape leaf (gradient tracking per
  // its trainable flag). Buffers stay in the store and are read/updated by
  // batchnorm directly.
  ParamVars register_params(Tape<T>& tape, ParamStore<T>& store) const {
    ParamVars vars;
    for (auto& [name, param] : store) {
      if (is_buffer(name)) continue;
      vars.emplace(name, tape.leaf(param.value, param.trainable));
    }
    return vars;
  }

  // x: [B, feat_dim, L] -> [B, 4*hidden, L]; conv/bn/activation per layer and
  // one dropout after the third layer. With `bn_frozen`, batchnorm applies the
  // stored running statistics even in train mode and never updates them
  // (used while the CNN block is frozen for fine-tuning).
  Var<T> cnn_block([[maybe_unused]] Tape<T>& tape, ParamStore<T>& store, const ParamVars& pv,
                   Var<T> x, Mode mode, rng::Stream* rng, bool bn_frozen = false) const {
    Var<T> h = x;
    const Mode bn_mode = bn_frozen ? Mode::kEval : mode;
    for (int layer = 0; layer < 3; ++layer) {
      const std::string base = "cnn." + std::to_string(layer) + ".";
      h = conv1d(h, pv.at(base + "weight"), pv.at(base + "bias"));
      h = batchnorm1d(h, pv.at(base + "bn.gamma"), pv.at(base + "bn.beta"),
                      store.value(base + "bn.running_mean"), store.value(base + "bn.running_var"),
                      bn_mode);
      h = activation(h, cfg_.activation);
    }
    return apply_dropout(h, mode, rng);
  }

  // seq: [B, C, L] -> final hidden state of the second cell, [B, alstm_hidden].
  // `attention_probe`, when given, collects every softmax row for inspection.
  Var<T> alstm_block(Tape<T>& tape, const ParamVars& pv, Var<T> seq, Mode mode, rng::Stream* rng,
                     std::vector<Tensor<T>>* attention_probe = nullptr) const {
    const std::int64_t batch = seq.value().dim(0);
    const std::int64_t len = seq.value().dim(2);
    if (len != cfg_.seq_len) {
      throw ShapeError("alstm_block expects sequence length " + std::to_string(cfg_.seq_len) +
                       ", got " + std::to_string(len));
    }
    std::vector<Var<T>> inputs(static_cast<std::size_t>(len));
    for (std::int64_t t = 0; t < len; ++t) {
      inputs[static_cast<std::size_t>(t)] = select_last(seq, t);
    }
    Var<T> final_hidden;
    for (int cell = 0; cell < 2; ++cell) {
      const std::string base = "alstm." + std::to_string(cell) + ".";
      const bool append_rt =
          (cell == 0 && cfg_.rt_mode != RtMode::kNone) || cfg_.rt_mode == RtMode::kAll;
      Var<T> h_prev = tape.constant(Tensor<T>::zeros({batch, cfg_.alstm_hidden}));
      Var<T> c_prev = tape.constant(Tensor<T>::zeros({batch, cfg_.alstm_hidden}));
      std::vector<Var<T>> hidden_hist, wa_hist;
      std::vector<Var<T>> outputs(static_cast<std::size_t>(len));
      for (std::int64_t t = 0; t < len; ++t) {
        Var<T> x_t = inputs[static_cast<std::size_t>(t)];
        if (append_rt) {
          const double rt = static_cast<double>(t) / static_cast<double>(cfg_.seq_len - 1);
          x_t = concat_cols(x_t, tape.constant(Tensor<T>::full({batch, 1}, static_cast<T>(rt))));
        }
        // Additive attention over stored hidden states h_1..h_{t-1}; an empty
        // history contributes a zero context.
        Var<T> context;
        if (t == 0) {
          context = tape.constant(Tensor<T>::zeros({batch, cfg_.alstm_hidden}));
        } else {
          Var<T> ua_x = add_rowvec(matmul(x_t, pv.at(base + "U_a")), pv.at(base + "b_a"));
          std::vector<Var<T>> scores;
          scores.reserve(static_cast<std::size_t>(t));
          for (std::int64_t j = 0; j < t; ++j) {
            scores.push_back(matvec(tanh_op(add(wa_hist[static_cast<std::size_t>(j)], ua_x)),
                                    pv.at(base + "v")));
          }
          Var<T> alpha = softmax_rows(stack_cols(scores));
          if (attention_probe) attention_probe->push_back(alpha.value());
          for (std::int64_t j = 0; j < t; ++j) {
            Var<T> weighted =
                colmul(select_col(alpha, j), hidden_hist[static_cast<std::size_t>(j)]);
            context = j == 0 ? weighted : add(context, weighted);
          }
        }
        Var<T> gate_in = concat_cols(std::vector<Var<T>>{x_t, context, h_prev});
        Var<T> i_g = sigmoid(add_rowvec(matmul(gate_in, pv.at(base + "W_i")), pv.at(base + "b_i")));
        Var<T> f_g = sigmoid(add_rowvec(matmul(gate_in, pv.at(base + "W_f")), pv.at(base + "b_f")));
        Var<T> o_g = sigmoid(add_rowvec(matmul(gate_in, pv.at(base + "W_o")), pv.at(base + "b_o")));
        Var<T> c_hat = tanh_op(add_rowvec(matmul(gate_in, pv.at(base + "W_c")), pv.at(base + "b_c")));
        Var<T> c_new = add(mul(f_g, c_prev), mul(i_g, c_hat));
        Var<T> h_new = mul(o_g, tanh_op(c_new));
        hidden_hist.push_back(h_new);
        wa_hist.push_back(matmul(h_new, pv.at(base + "W_a")));
        outputs[static_cast<std::size_t>(t)] = h_new;
        h_prev = h_new;
        c_prev = c_new;
      }
      inputs = outputs;
      final_hidden = outputs.back();
    }
    return apply_dropout(final_hidden, mode, rng);
  }

  // seq: [B, feat_dim, L]; the hidden state evolves through f_theta between
  // steps and a bias-free LSTM update consumes each input.
  Var<T> odelstm_block(Tape<T>& tape, const ParamVars& pv, Var<T> seq,
                       const std::vector<double>& times, Mode mode, rng::Stream* rng) const {
    const std::int64_t batch = seq.value().dim(0);
    const std::int64_t len = seq.value().dim(2);
    if (static_cast<std::int64_t>(times.size()) != len) {
      throw ContractError("odelstm_block needs one time stamp per step");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
      if (!(times[k] > times[k - 1])) throw ContractError("time stamps must be strictly increasing");
    }
    std::vector<Var<T>> inputs(static_cast<std::size_t>(len));
    for (std::int64_t t = 0; t < len; ++t) {
      inputs[static_cast<std::size_t>(t)] = select_last(seq, t);
    }
    Var<T> final_hidden;
    for (int cell = 0; cell < 2; ++cell) {
      const std::string base = "odelstm." + std::to_string(cell) + ".";
      Var<T> h_prev = tape.constant(Tensor<T>::zeros({batch, cfg_.odelstm_hidden}));
      Var<T> c_prev = tape.constant(Tensor<T>::zeros({batch, cfg_.odelstm_hidden}));
      std::vector<Var<T>> outputs(static_cast<std::size_t>(len));
      for (std::int64_t t = 0; t < len; ++t) {
        // The first step evolves over the first grid interval; later steps
        // evolve over the interval since the previous stamp.
        const std::size_t ti = static_cast<std::size_t>(t);
        const double t0 = t == 0 ? times[0] : times[ti - 1];
        const double t1 = t == 0 ? times[1] : times[ti];
        Var<T> h_tilde = add(h_prev, ode_evolve(tape, h_prev, t0, t1,
                                                pv.at(base + "f_theta.weight"),
                                                pv.at(base + "f_theta.bias"), cfg_.integrator,
                                                cfg_.ode_substeps));
        Var<T> gate_in = concat_cols(inputs[ti], h_tilde);
        Var<T> i_g = sigmoid(matmul(gate_in, pv.at(base + "W_i")));
        Var<T> f_g = sigmoid(matmul(gate_in, pv.at(base + "W_f")));
        Var<T> o_g = sigmoid(matmul(gate_in, pv.at(base + "W_o")));
        Var<T> c_hat = tanh_op(matmul(gate_in, pv.at(base + "W_c")));
        Var<T> c_new = add(mul(f_g, c_prev), mul(i_g, c_hat));
        Var<T> h_new = mul(o_g, tanh_op(c_new));
        outputs[ti] = h_new;
        h_prev = h_new;
        c_prev = c_new;
      }
      inputs = outputs;
      final_hidden = outputs.back();
    }
    return apply_dropout(final_hidden, mode, rng);
  }

  // input: [B, seq_len, feat_dim] (time-major rows) or [B, seq_len, 4, 6].
  // Output: [B] in (0, 1); multiply by output_scale for cycles.
  Var<T> forward_scaled(Tape<T>& tape, ParamStore<T>& store, const ParamVars& pv,
                        const Tensor<T>& input, Mode mode, rng::Stream* rng,
                        bool bn_frozen = false) const {
    Tensor<T> flat = input;
    if (flat.rank() == 4) {
      flat = flat.reshaped({flat.dim(0), flat.dim(1), flat.dim(2) * flat.dim(3)});
    }
    if (flat.rank() != 3 || flat.dim(1) != cfg_.seq_len || flat.dim(2) != cfg_.feat_dim) {
      throw ShapeError("model input must be [B," + std::to_string(cfg_.seq_len) + "," +
                       std::to_string(cfg_.feat_dim) + "], got " + core::shape_str(input.shape()));
    }
    if (!flat.all_finite()) throw ContractError("model input contains non-finite values");
    if (mode == Mode::kTrain && rng == nullptr) {
      throw ContractError("train-mode forward needs a random stream for dropout");
    }
    // Channels-first for convolution over the time axis.
    const std::int64_t batch = flat.dim(0), len = flat.dim(1), feat = flat.dim(2);
    Tensor<T> chan_first({batch, feat, len});
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t t = 0; t < len; ++t) {
        for (std::int64_t f = 0; f < feat; ++f) {
          chan_first[(b * feat + f) * len + t] = flat[(b * len + t) * feat + f];
        }
      }
    }
    Var<T> x = tape.constant(std::move(chan_first));
    Var<T> branch1 =
        alstm_block(tape, pv, cnn_block(tape, store, pv, x, mode, rng, bn_frozen), mode, rng);
    Var<T> branch2 = odelstm_block(tape, pv, x, uniform_times(cfg_.seq_len), mode, rng);
    Var<T> fused = concat_cols(branch1, branch2);
    Var<T> logit = matvec(fused, flatten_head(pv));
    return sigmoid(add_scalar(logit, pv.at("head.bias")));
  }

  Var<T> forward(Tape<T>& tape, ParamStore<T>& store, const ParamVars& pv, const Tensor<T>& input,
                 Mode mode, rng::Stream* rng, bool bn_frozen = false) const {
    return scale(forward_scaled(tape, store, pv, input, mode, rng, bn_frozen),
                 static_cast<T>(cfg_.output_scale));
  }

 private:
  Var<T> apply_dropout(Var<T> x, Mode mode, rng::Stream* rng) const {
    if (mode == Mode::kEval || cfg_.dropout == 0.0) return x;
    return dropout(x, cfg_.dropout, mode, *rng);
  }

  // head.weight is stored [head_input, 1]; matvec wants a vector view.
  // select_col on [N,1] keeps gradient routing to the stored matrix.
  Var<T> flatten_head(const ParamVars& pv) const { return select_col(pv.at("head.weight"), 0); }

  ModelConfig cfg_;
};

}  // namespace rulforge::model
