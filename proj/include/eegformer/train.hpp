#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "eegformer/errors.hpp"
#include "eegformer/model.hpp"
#include "eegformer/rng.hpp"
#include "eegformer/signal.hpp"
#include "eegformer/tensor.hpp"

namespace eegformer {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 42;
  bool shuffle = true;

  void validate() const {
    if (batch_size < 1) throw ParameterError("train config: batch_size must be >= 1");
    if (patience < 1) throw ParameterError("train config: patience must be >= 1");
    if (!(lr > 0)) throw ParameterError("train config: lr must be positive");
    if (max_epochs < 1) throw ParameterError("train config: max_epochs must be >= 1");
  }
};

struct EpochStats {
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::size_t stopped_epoch = 0;  // 1-based index of the last epoch run
  std::size_t best_epoch = 0;     // 1-based epoch whose weights were kept
  double wall_time_seconds = 0;   // in-memory only; not part of the exported report
};

// One epoch per record. Wall time is deliberately not written so that
// same-seed runs export byte-identical logs.
inline void write_train_log(const TrainLog& log, std::ostream& out) {
  out << "# epoch train_loss train_acc val_loss val_acc\n";
  char buf[160];
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    const EpochStats& e = log.epochs[i];
    std::snprintf(buf, sizeof buf, "%zu %.12g %.12g %.12g %.12g\n", i + 1,
                  e.train_loss, e.train_acc, e.val_loss, e.val_acc);
    out << buf;
  }
  out << "stopped_epoch " << log.stopped_epoch << "\n";
  out << "best_epoch " << log.best_epoch << "\n";
}

// Mean over the batch of -log softmax(logits)[label], computed through
// log-sum-exp. Records a backward rule of (softmax - onehot)/n on the tape.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ContractError("cross_entropy: logits must be (n, classes), got " +
                        shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(y) +
                          " outside [0, " + std::to_string(k) + ")");
    }
  }

  auto probs = std::make_shared<std::vector<double>>(n * k);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[i * k + j] = std::exp(row[j] - lse);
    }
  }

  Tensor loss({1}, {total / static_cast<double>(n)}, detail::tracing({&logits}));
  if (loss.requires_grad()) {
    auto sl = logits.storage(), so = loss.storage();
    auto lab = std::make_shared<std::vector<int>>(labels);
    Tape::active()->record("cross_entropy", [sl, so, probs, lab, n, k] {
      if (so->grad.empty()) return;
      const double g = so->grad[0] / static_cast<double>(n);
      auto& gl = detail::ensure_grad(*sl);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = static_cast<std::size_t>((*lab)[i]) == j ? 1.0 : 0.0;
          gl[i * k + j] += g * ((*probs)[i * k + j] - onehot);
        }
      }
    });
  }
  return loss;
}

// Adam moments, one slot per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m, v;

  static AdamState init(std::vector<Tensor>& params) {
    AdamState s;
    for (auto& p : params) {
      s.m.emplace_back(p.numel(), 0.0);
      s.v.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
// theta <- theta - lr * mhat / (sqrt(vhat) + eps)  with bias-corrected hats.
// Parameters without an accumulated gradient are treated as zero-gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, std::size_t t,
                      const TrainConfig& cfg) {
  if (t < 1) throw ContractError("adam_step: step index starts at 1");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: state covers " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()) +
                        " parameters");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params[p];
    if (state.m[p].size() != theta.numel()) {
      throw ContractError("adam_step: moment shape mismatch at parameter " +
                          std::to_string(p));
    }
    auto& m = state.m[p];
    auto& v = state.v[p];
    const bool has_grad = theta.has_grad();
    const std::vector<double>* grad = has_grad ? &theta.grad() : nullptr;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has_grad ? (*grad)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta.at(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace detail {

inline Tensor gather_batch(const EpochSet& set, const std::vector<std::size_t>& order,
                           std::size_t begin, std::size_t end,
                           std::vector<int>& labels_out) {
  const std::size_t es = set.epoch_size();
  Tensor x({end - begin, set.window_samples, set.num_channels});
  labels_out.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const double* src = set.epoch_data(order[i]);
    std::copy(src, src + es, x.data() + (i - begin) * es);
    labels_out.push_back(set.labels[order[i]]);
  }
  return x;
}

inline std::size_t argmax_lowest(const double* row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;  // strict: ties keep the lowest index
  }
  return best;
}

}  // namespace detail

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  Tensor logits;  // (n, num_classes)
};

// Eval-mode pass over the whole set in batches. Accuracy breaks argmax ties
// toward the lowest class index.
inline EvalResult evaluate(const TransformerClassifier& model, const EpochSet& set,
                           std::size_t batch_size = 32) {
  if (set.num_epochs() == 0) throw ContractError("evaluate: empty epoch set");
  const std::size_t n = set.num_epochs();
  const std::size_t k = model.config().num_classes;
  EvalResult r;
  r.logits = Tensor({n, k});
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> labels;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    Tensor x = detail::gather_batch(set, order, begin, end, labels);
    Tensor logits = model.forward(x, /*training=*/false);
    Tensor loss = cross_entropy(logits, labels);
    loss_sum += loss.value() * static_cast<double>(end - begin);
    for (std::size_t i = 0; i < end - begin; ++i) {
      const double* row = logits.data() + i * k;
      std::copy(row, row + k, r.logits.data() + (begin + i) * k);
      if (detail::argmax_lowest(row, k) == static_cast<std::size_t>(labels[i])) {
        ++correct;
      }
    }
  }
  r.loss = loss_sum / static_cast<double>(n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

// Mini-batch Adam loop with early stopping on validation accuracy.
// Train metrics come from the training pass itself (dropout active);
// validation runs in eval mode after each epoch. The model is left holding
// the snapshot from the best validation epoch (ties keep the earlier epoch).
inline TrainLog fit(TransformerClassifier& model, const EpochSet& train,
                    const EpochSet& val, const TrainConfig& cfg,
                    std::ostream* progress = nullptr) {
  cfg.validate();
  if (train.num_epochs() == 0 || val.num_epochs() == 0) {
    throw ContractError("fit: train and validation sets must be non-empty");
  }
  const auto t_start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  auto params = model.parameters();
  AdamState state = AdamState::init(params);
  std::size_t adam_t = 0;

  TrainLog log;
  double best_acc = -1.0;
  std::vector<std::vector<double>> best_snapshot = model.snapshot();
  const std::size_t n = train.num_epochs();
  const std::size_t k = model.config().num_classes;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<int> labels;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      Tensor x = detail::gather_batch(train, order, begin, end, labels);
      Tape::Scope scope;
      Tensor logits = model.forward(x, /*training=*/true, &rng);
      Tensor loss = cross_entropy(logits, labels);
      if (!std::isfinite(loss.value())) {
        throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      model.zero_grad();
      backward(loss);
      ++adam_t;
      adam_step(params, state, adam_t, cfg);

      loss_sum += loss.value() * static_cast<double>(end - begin);
      for (std::size_t i = 0; i < end - begin; ++i) {
        if (detail::argmax_lowest(logits.data() + i * k, k) ==
            static_cast<std::size_t>(labels[i])) {
          ++correct;
        }
      }
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    const EvalResult v = evaluate(model, val, cfg.batch_size);
    stats.val_loss = v.loss;
    stats.val_acc = v.accuracy;
    log.epochs.push_back(stats);
    log.stopped_epoch = epoch;

    if (v.accuracy > best_acc) {
      best_acc = v.accuracy;
      log.best_epoch = epoch;
      best_snapshot = model.snapshot();
    }
    if (progress != nullptr) {
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "epoch %zu: train_loss %.4f train_acc %.4f val_loss %.4f "
                    "val_acc %.4f%s\n",
                    epoch, stats.train_loss, stats.train_acc, stats.val_loss,
                    stats.val_acc, log.best_epoch == epoch ? " *" : "");
      (*progress) << buf << std::flush;
    }
    if (epoch - log.best_epoch >= cfg.patience) break;
  }

  model.restore(best_snapshot);
  log.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return log;
}

}  // namespace eegformer
