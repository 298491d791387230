#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "rulforge/dataset.hpp"
#include "rulforge/metrics.hpp"
#include "rulforge/model.hpp"
#include "rulforge/ops.hpp"

namespace rulforge::train {

using core::Mode;
using core::ParamStore;
using core::Tape;
using core::Tensor;
using core::Var;

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  double learning_rate = 0.0005;  // constant
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int n_runs = 10;
  std::uint64_t base_seed = 1;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("betas must lie in [0,1)");
    }
    if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  }
};

// Per-block trainability for fine-tuning; the head is never freezable.
struct FreezeMask {
  bool cnn = false;
  bool alstm = false;
  bool odelstm = false;
  bool head = false;

  void validate() const {
    if (head) throw ConfigError("the head block cannot be frozen");
  }

  bool any() const { return cnn || alstm || odelstm; }

  // Applies trainability by parameter prefix; batchnorm buffers stay
  // non-trainable regardless.
  void apply(ParamStore<float>& store) const {
    validate();
    const std::pair<const char*, bool> blocks[] = {
        {"cnn.", cnn}, {"alstm.", alstm}, {"odelstm.", odelstm}, {"head.", head}};
    for (auto& [name, param] : store) {
      if (model::RulNet<float>::is_buffer(name)) {
        param.trainable = false;
        continue;
      }
      for (const auto& [prefix, frozen] : blocks) {
        if (name.rfind(prefix, 0) == 0) param.trainable = !frozen;
      }
    }
  }

  // Comma-separated block names, e.g. "alstm" or "cnn,odelstm".
  static FreezeMask from_names(const std::string& names) {
    FreezeMask mask;
    std::string token;
    std::istringstream ss(names);
    while (std::getline(ss, token, ',')) {
      if (token.empty()) continue;
      if (token == "cnn") {
        mask.cnn = true;
      } else if (token == "alstm") {
        mask.alstm = true;
      } else if (token == "odelstm") {
        mask.odelstm = true;
      } else if (token == "head") {
        mask.head = true;  // rejected by validate()
      } else {
        throw ConfigError("unknown block name in freeze mask: " + token);
      }
    }
    mask.validate();
    return mask;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [name, on] :
         std::initializer_list<std::pair<const char*, bool>>{
             {"cnn", cnn}, {"alstm", alstm}, {"odelstm", odelstm}}) {
      if (!on) continue;
      if (!out.empty()) out += ",";
      out += name;
    }
    return out;
  }
};

using GradMap = std::map<std::string, Tensor<float>>;

// Mean squared error over scaled predictions and labels.
template <typename T>
Var<T> mse_loss(Var<T> pred, Var<T> label) {
  const auto& pv = pred.value();
  const auto& lv = label.value();
  if (pv.numel() == 0) throw ContractError("mse_loss over an empty batch");
  if (!pv.same_shape(lv)) {
    throw ShapeError("mse_loss shape mismatch: " + core::shape_str(pv.shape()) + " vs " +
                     core::shape_str(lv.shape()));
  }
  auto diff = sub(pred, label);
  return mean_all(mul(diff, diff));
}

// Decoupled weight decay: p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps).
// Moment state is allocated lazily and only for trainable parameters.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(ParamStore<float>& params, const GradMap& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, param] : params) {
      if (!param.trainable) continue;
      const auto git = grads.find(name);
      if (git == grads.end()) {
        throw ContractError("missing gradient for trainable parameter " + name);
      }
      const Tensor<float>& g = git->second;
      if (!g.same_shape(param.value)) {
        throw ContractError("gradient shape mismatch for " + name);
      }
      auto sit = state_.find(name);
      if (sit == state_.end()) {
        sit = state_
                  .emplace(name, Moments{Tensor<float>(param.value.shape()),
                                         Tensor<float>(param.value.shape())})
                  .first;
      }
      Tensor<float>& m = sit->second.m;
      Tensor<float>& v = sit->second.v;
      const float b1 = static_cast<float>(cfg_.beta1);
      const float b2 = static_cast<float>(cfg_.beta2);
      const float lr = static_cast<float>(cfg_.learning_rate);
      const float wd = static_cast<float>(cfg_.weight_decay);
      const float eps = static_cast<float>(cfg_.eps);
      for (std::int64_t i = 0; i < param.value.numel(); ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * g[i];
        v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
        const float mhat = m[i] / static_cast<float>(bc1);
        const float vhat = v[i] / static_cast<float>(bc2);
        param.value[i] -= lr * wd * param.value[i] + lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }
  bool has_state(const std::string& name) const { return state_.count(name) > 0; }

 private:
  struct Moments {
    Tensor<float> m, v;
  };
  TrainConfig cfg_;
  std::map<std::string, Moments> state_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Batch assembly and evaluation
// ---------------------------------------------------------------------------

namespace detail {

struct Batch {
  Tensor<float> inputs;  // [B, seq_len, 24]
  Tensor<float> labels;  // [B], scaled
};

inline Batch make_batch(const std::vector<data::Sample>& samples,
                        const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                        const model::ModelConfig& mcfg) {
  const std::int64_t batch = static_cast<std::int64_t>(end - begin);
  const std::int64_t feat = 24;
  Batch out{Tensor<float>({batch, mcfg.seq_len, feat}), Tensor<float>({batch})};
  for (std::size_t k = begin; k < end; ++k) {
    const data::Sample& s = samples[order[k]];
    if (s.n_steps != mcfg.seq_len ||
        s.features.size() != static_cast<std::size_t>(mcfg.seq_len) * 24) {
      throw ContractError("sample step count does not match the model sequence length");
    }
    if (s.label_rul >= mcfg.output_scale) {
      throw ContractError("label " + std::to_string(s.label_rul) +
                          " is not below the output scale " + std::to_string(mcfg.output_scale));
    }
    const std::int64_t row = static_cast<std::int64_t>(k - begin);
    for (std::size_t f = 0; f < s.features.size(); ++f) {
      out.inputs[row * mcfg.seq_len * feat + static_cast<std::int64_t>(f)] =
          static_cast<float>(s.features[f]);
    }
    out.labels[row] = static_cast<float>(s.label_rul / mcfg.output_scale);
  }
  return out;
}

inline std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

}  // namespace detail

// Eval-mode predictions in cycles.
inline std::vector<double> predict(ParamStore<float>& params, const model::RulNet<float>& net,
                                   const std::vector<data::Sample>& samples, int batch_size,
                                   bool bn_frozen = false) {
  std::vector<double> out;
  out.reserve(samples.size());
  const auto order = detail::identity_order(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    const auto batch = detail::make_batch(samples, order, begin, end, net.config());
    Tape<float> tape;
    auto pv = net.register_params(tape, params);
    auto pred = net.forward(tape, params, pv, batch.inputs, Mode::kEval, nullptr, bn_frozen);
    for (std::int64_t i = 0; i < pred.value().numel(); ++i) {
      out.push_back(static_cast<double>(pred.value()[i]));
    }
  }
  return out;
}

// Eval-mode MSE in scaled label space.
inline double eval_mse(ParamStore<float>& params, const model::RulNet<float>& net,
                       const std::vector<data::Sample>& samples, int batch_size) {
  if (samples.empty()) throw ContractError("eval_mse over an empty sample set");
  const auto preds = predict(params, net, samples, batch_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double p = preds[i] / net.config().output_scale;
    const double y = samples[i].label_rul / net.config().output_scale;
    acc += (p - y) * (p - y);
  }
  return acc / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct TrainResult {
  ParamStore<float> params;
  std::vector<double> epoch_losses;  // mean train MSE per epoch (scaled space)
  double initial_loss = 0.0;         // eval-mode train MSE before any update
  std::vector<double> val_losses;    // eval-mode val MSE per epoch; logged only
};

namespace detail {

// Shared loop used by train_one and transfer_finetune. Samples arrive
// already scaled; `params` may be freshly initialized or pretrained.
inline TrainResult run_training(ParamStore<float> params, const model::RulNet<float>& net,
                                const std::vector<data::Sample>& train_samples,
                                const std::vector<data::Sample>& val_samples,
                                const TrainConfig& tcfg, std::uint64_t seed, bool bn_frozen) {
  if (train_samples.empty()) throw ContractError("training requires a non-empty train set");
  tcfg.validate();

  TrainResult result;
  result.initial_loss = eval_mse(params, net, train_samples, tcfg.batch_size);

  AdamW optimizer(tcfg);
  rng::Stream stream(rng::mix(seed, 0x5eed));
  auto order = detail::identity_order(train_samples.size());
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    stream.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(tcfg.batch_size));
      const auto batch = detail::make_batch(train_samples, order, begin, end, net.config());
      Tape<float> tape;
      auto pv = net.register_params(tape, params);
      auto pred =
          net.forward_scaled(tape, params, pv, batch.inputs, Mode::kTrain, &stream, bn_frozen);
      auto loss = mse_loss(pred, tape.constant(batch.labels));
      tape.backward(loss);
      GradMap grads;
      for (const auto& [name, var] : pv) {
        if (tape.requires_grad(var.id) && tape.has_grad(var)) grads.emplace(name, tape.grad(var));
      }
      optimizer.step(params, grads);
      epoch_loss += static_cast<double>(loss.value()[0]) * static_cast<double>(end - begin);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
    if (!val_samples.empty()) {
      result.val_losses.push_back(eval_mse(params, net, val_samples, tcfg.batch_size));
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace detail

// One seeded training run from fresh parameters. Samples must already be
// scaled with a scaler fitted on the training set only.
inline TrainResult train_one(const std::vector<data::Sample>& train_samples,
                             const std::vector<data::Sample>& val_samples,
                             const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                             std::uint64_t seed) {
  model::RulNet<float> net(mcfg);
  return detail::run_training(net.init_params(seed), net, train_samples, val_samples, tcfg, seed,
                              /*bn_frozen=*/false);
}

struct EnsembleResult {
  std::vector<double> predictions;  // per test sample, cycles, mean over runs
  std::vector<std::uint64_t> seeds;
  std::vector<TrainResult> runs;
};

// Trains n_runs independently seeded models and averages their eval-mode
// predictions per sample.
inline EnsembleResult ensemble_predict(const std::vector<data::Sample>& train_samples,
                                       const std::vector<data::Sample>& test_samples,
                                       const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  model::RulNet<float> net(mcfg);
  EnsembleResult result;
  result.predictions.assign(test_samples.size(), 0.0);
  for (int run = 0; run < tcfg.n_runs; ++run) {
    const std::uint64_t seed = tcfg.base_seed + static_cast<std::uint64_t>(run);
    result.seeds.push_back(seed);
    TrainResult tr = train_one(train_samples, {}, mcfg, tcfg, seed);
    const auto preds = predict(tr.params, net, test_samples, tcfg.batch_size);
    for (std::size_t i = 0; i < preds.size(); ++i) result.predictions[i] += preds[i];
    result.runs.push_back(std::move(tr));
  }
  for (auto& p : result.predictions) p /= static_cast<double>(tcfg.n_runs);
  return result;
}

struct FinetuneResult {
  ParamStore<float> params;
  data::MinMaxScaler scaler;  // fitted on the target training data
  std::vector<double> epoch_losses;
};

// Fine-tunes pretrained parameters on target-domain samples (unscaled); a
// fresh scaler is fitted on the target training data. Frozen blocks receive
// no updates and, for the CNN, no batchnorm statistics updates either.
inline FinetuneResult transfer_finetune(const ParamStore<float>& pretrained,
                                        const std::vector<data::Sample>& target_train_raw,
                                        const FreezeMask& freeze, const model::ModelConfig& mcfg,
                                        const TrainConfig& tcfg, std::uint64_t seed) {
  freeze.validate();
  model::RulNet<float> net(mcfg);
  ParamStore<float> params = pretrained;
  model::RulNet<float>::mark_buffers(params);
  freeze.apply(params);

  FinetuneResult out;
  out.scaler = data::fit_scaler(target_train_raw);
  const auto scaled = data::apply_scaler(out.scaler, target_train_raw);
  if (tcfg.epochs == 0) {
    out.params = std::move(params);
    return out;
  }
  TrainResult tr = detail::run_training(std::move(params), net, scaled, {}, tcfg,
                                        rng::mix(seed, 0xf1e7), freeze.cnn);
  out.params = std::move(tr.params);
  out.epoch_losses = std::move(tr.epoch_losses);
  return out;
}

// ---------------------------------------------------------------------------
// Transfer cases
// ---------------------------------------------------------------------------

struct SplitDataset {
  std::vector<data::CellHistory> train;
  std::vector<data::CellHistory> test;
};

// The ten pre-train / fine-tune scenarios. `source` is the pre-training
// dataset; `target` is the fine-tuning and testing dataset. The direct cases
// (1 and 5) train and test on the source dataset alone.
struct TransferCase {
  enum class Finetune { kNone, kUpper, kLower, kAll };

  std::string id;
  bool direct = false;
  Finetune finetune = Finetune::kNone;
  FreezeMask freeze;

  static TransferCase from_id(const std::string& id, FreezeMask freeze = {}) {
    TransferCase tc;
    tc.id = id;
    tc.freeze = freeze;
    if (id == "1" || id == "5") {
      tc.direct = true;
    } else if (id == "2" || id == "6") {
      tc.finetune = Finetune::kNone;
    } else if (id == "3.1" || id == "7.1") {
      tc.finetune = Finetune::kUpper;
    } else if (id == "3.2" || id == "7.2") {
      tc.finetune = Finetune::kLower;
    } else if (id == "4" || id == "8") {
      tc.finetune = Finetune::kAll;
    } else {
      throw ConfigError("unknown transfer case id: " + id);
    }
    return tc;
  }

  bool has_finetune() const { return !direct && finetune != Finetune::kNone; }
};

struct CaseReport {
  std::string case_id;
  double rmse = 0.0;
  double r2 = 0.0;
  double mape_percent = 0.0;
  int n_test_samples = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<metrics::EvalRecord> records;  // averaged predictions
  std::vector<int> cycles;                   // anchor cycle per record
  std::vector<std::string> warnings;
};

inline CaseReport run_case(const TransferCase& tc, const SplitDataset& source,
                           const SplitDataset& target, const data::PrepConfig& prep,
                           const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
  tcfg.validate();
  model::RulNet<float> net(mcfg);
  CaseReport report;
  report.case_id = tc.id;

  auto build = [&](const std::vector<data::CellHistory>& cells) {
    auto res = data::make_dataset(cells, prep);
    report.warnings.insert(report.warnings.end(), res.warnings.begin(), res.warnings.end());
    return std::move(res.samples);
  };

  const auto pretrain_raw = build(source.train);
  const auto test_raw = build(tc.direct ? source.test : target.test);

  std::vector<data::Sample> finetune_raw;
  if (tc.has_finetune()) {
    if (tc.finetune == TransferCase::Finetune::kAll) {
      finetune_raw = build(target.train);
    } else {
      const auto [lower, upper] = data::split_by_median(target.train);
      finetune_raw = build(tc.finetune == TransferCase::Finetune::kUpper ? upper : lower);
    }
    if (finetune_raw.empty()) {
      throw DataError("transfer case " + tc.id + ": fine-tuning split produced no samples");
    }
  }
  if (pretrain_raw.empty()) {
    throw DataError("transfer case " + tc.id + ": pre-training set produced no samples");
  }
  if (test_raw.empty()) {
    throw DataError("transfer case " + tc.id + ": testing set produced no samples");
  }

  const auto source_scaler = data::fit_scaler(pretrain_raw);
  const auto pretrain_scaled = data::apply_scaler(source_scaler, pretrain_raw);

  // Test inputs are scaled for the deployment domain: direct cases use the
  // source scaler; transfer cases use a scaler fitted on the target training
  // data (the fine-tune set when one exists, the whole target train split
  // otherwise, which makes a zero-epoch fine-tune coincide with no fine-tune).
  data::MinMaxScaler target_scaler;
  if (!tc.direct && !tc.has_finetune()) {
    auto target_train_raw = build(target.train);
    if (target_train_raw.empty()) {
      throw DataError("transfer case " + tc.id + ": target training set produced no samples");
    }
    target_scaler.fit(target_train_raw);
  }

  std::vector<double> averaged(test_raw.size(), 0.0);
  for (int run = 0; run < tcfg.n_runs; ++run) {
    const std::uint64_t seed = tcfg.base_seed + static_cast<std::uint64_t>(run);
    report.seeds.push_back(seed);
    TrainResult pre = train_one(pretrain_scaled, {}, mcfg, tcfg, seed);
    std::vector<double> preds;
    if (tc.has_finetune()) {
      FinetuneResult ft = transfer_finetune(pre.params, finetune_raw, tc.freeze, mcfg, tcfg, seed);
      auto test_scaled = data::apply_scaler(ft.scaler, test_raw);
      preds = predict(ft.params, net, test_scaled, tcfg.batch_size);
    } else {
      const auto& scaler = tc.direct ? source_scaler : target_scaler;
      auto test_scaled = data::apply_scaler(scaler, test_raw);
      preds = predict(pre.params, net, test_scaled, tcfg.batch_size);
    }
    for (std::size_t i = 0; i < preds.size(); ++i) averaged[i] += preds[i];
  }
  for (auto& p : averaged) p /= static_cast<double>(tcfg.n_runs);

  report.records.reserve(test_raw.size());
  for (std::size_t i = 0; i < test_raw.size(); ++i) {
    metrics::EvalRecord rec;
    rec.y_true = test_raw[i].label_rul;
    rec.y_pred = averaged[i];
    rec.cycle_life = static_cast<double>(test_raw[i].cycle_life);
    rec.cell_id = test_raw[i].cell_id;
    report.records.push_back(rec);
    report.cycles.push_back(test_raw[i].cycle_index);
  }
  report.n_test_samples = static_cast<int>(report.records.size());
  report.rmse = metrics::rmse(report.records);
  report.r2 = metrics::r2(report.records);
  report.mape_percent = metrics::mape(report.records);
  return report;
}

}  // namespace rulforge::train
