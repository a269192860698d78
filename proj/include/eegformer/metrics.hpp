#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eegformer/errors.hpp"
#include "eegformer/tensor.hpp"

namespace eegformer {

using ConfusionMatrix = std::vector<std::vector<std::int64_t>>;

// CM[i][j] counts true class i predicted as class j.
inline ConfusionMatrix confusion(const std::vector<int>& labels,
                                 const std::vector<int>& predictions, std::size_t k) {
  if (labels.size() != predictions.size()) {
    throw ContractError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                        std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm(k, std::vector<std::int64_t>(k, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k || p < 0 ||
        static_cast<std::size_t>(p) >= k) {
      throw ContractError("confusion: entry (" + std::to_string(y) + ", " +
                          std::to_string(p) + ") outside [0, " + std::to_string(k) +
                          ") at index " + std::to_string(i));
    }
    ++cm[y][p];
  }
  return cm;
}

struct PrfResult {
  std::vector<double> precision, recall, f1;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
};

// precision_k = CM[k][k]/colsum, recall_k = CM[k][k]/rowsum, F1 harmonic.
// 0/0 cases resolve to 0 and emit a warning. Macro = unweighted class mean.
inline PrfResult prf(const ConfusionMatrix& cm,
                     std::vector<std::string>* warnings = nullptr) {
  const std::size_t k = cm.size();
  PrfResult r;
  r.precision.resize(k);
  r.recall.resize(k);
  r.f1.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (cm[c].size() != k) throw ContractError("prf: confusion matrix is not square");
    std::int64_t col = 0, row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      col += cm[j][c];
      row += cm[c][j];
    }
    const double tp = static_cast<double>(cm[c][c]);
    if (col == 0 && warnings != nullptr) {
      warnings->push_back("prf: class " + std::to_string(c) +
                          " never predicted; precision 0/0 reported as 0");
    }
    if (row == 0 && warnings != nullptr) {
      warnings->push_back("prf: class " + std::to_string(c) +
                          " absent from labels; recall 0/0 reported as 0");
    }
    r.precision[c] = col == 0 ? 0.0 : tp / static_cast<double>(col);
    r.recall[c] = row == 0 ? 0.0 : tp / static_cast<double>(row);
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr == 0.0 ? 0.0 : 2.0 * r.precision[c] * r.recall[c] / pr;
    r.macro_precision += r.precision[c];
    r.macro_recall += r.recall[c];
    r.macro_f1 += r.f1[c];
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

struct RocCurve {
  std::vector<double> fpr, tpr;       // threshold sweep, (0,0) .. (1,1)
  std::optional<double> auc;          // absent when the class has no pos or neg
};

struct RocResult {
  std::vector<RocCurve> per_class;
  std::optional<double> macro_auc;    // mean over defined per-class AUCs
};

// One-vs-rest ROC per class by descending threshold sweep over distinct
// scores; tied scores move as one group, which makes the trapezoid area equal
// the pairwise (Mann-Whitney, ties 0.5) statistic. The area is accumulated in
// exact integer arithmetic before the final division.
inline RocResult roc_auc(const std::vector<double>& scores, std::size_t n,
                         std::size_t k, const std::vector<int>& labels) {
  if (scores.size() != n * k) {
    throw ContractError("roc_auc: scores size " + std::to_string(scores.size()) +
                        " != n*k = " + std::to_string(n * k));
  }
  if (labels.size() != n) {
    throw ContractError("roc_auc: labels size mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += scores[i * k + j];
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError("roc_auc: score row " + std::to_string(i) +
                          " sums to " + std::to_string(s) + ", expected 1");
    }
  }

  RocResult out;
  out.per_class.resize(k);
  double auc_sum = 0;
  std::size_t auc_count = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += labels[i] == static_cast<int>(c);
    const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
    RocCurve& curve = out.per_class[c];
    if (pos == 0 || neg == 0) {
      continue;  // auc left absent
    }

    // group samples by score, descending
    std::map<double, std::pair<std::int64_t, std::int64_t>, std::greater<double>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      auto& g = groups[scores[i * k + c]];
      if (labels[i] == static_cast<int>(c)) {
        ++g.first;
      } else {
        ++g.second;
      }
    }

    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    std::int64_t tp = 0, fp = 0;
    std::int64_t twice_area = 0;  // sum of (dFP) * (TP_prev + TP_cur)
    for (const auto& [score, counts] : groups) {
      const std::int64_t tp_next = tp + counts.first;
      const std::int64_t fp_next = fp + counts.second;
      twice_area += (fp_next - fp) * (tp + tp_next);
      tp = tp_next;
      fp = fp_next;
      curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
      curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    }
    curve.auc = static_cast<double>(twice_area) /
                (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    auc_sum += *curve.auc;
    ++auc_count;
  }
  if (auc_count > 0) out.macro_auc = auc_sum / static_cast<double>(auc_count);
  return out;
}

// ---------------------------------------------------------------------------
// 2-D feature projection: PCA via power iteration with deflation.
// ---------------------------------------------------------------------------

struct Projection {
  std::vector<double> points;  // n x 2 row-major
  std::size_t n = 0;
};

inline Projection project_features(const std::vector<double>& features, std::size_t n,
                                   std::size_t d,
                                   std::vector<std::string>* warnings = nullptr) {
  if (n < 2 || d < 2) {
    throw ParameterError("project_features: need n >= 2 and d >= 2, got n=" +
                         std::to_string(n) + " d=" + std::to_string(d));
  }
  if (features.size() != n * d) {
    throw ContractError("project_features: features size mismatch");
  }
  constexpr double kTol = 1e-9;
  constexpr int kMaxIter = 1000;

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[i * d + j];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      centered[i * d + j] = features[i * d + j] - mean[j];
    }
  }

  // covariance (d x d)
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= static_cast<double>(n - 1);
      cov[b * d + a] = cov[a * d + b];
    }
  }

  double total_var = 0;
  for (std::size_t a = 0; a < d; ++a) total_var += cov[a * d + a];

  Projection out;
  out.n = n;
  out.points.assign(n * 2, 0.0);
  if (total_var <= 0.0) {
    if (warnings != nullptr) {
      warnings->push_back("project_features: zero-variance input; projection is all zeros");
    }
    return out;
  }

  std::vector<std::vector<double>> components;
  for (int comp = 0; comp < 2; ++comp) {
    // deterministic, symmetry-breaking start vector
    std::vector<double> v(d);
    double norm = 0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = 1.0 + 1e-3 * static_cast<double>(j);
      norm += v[j] * v[j];
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;

    std::vector<double> w(d);
    double lambda = 0;
    for (int iter = 0; iter < kMaxIter; ++iter) {
      for (std::size_t a = 0; a < d; ++a) {
        double acc = 0;
        for (std::size_t b = 0; b < d; ++b) acc += cov[a * d + b] * v[b];
        w[a] = acc;
      }
      lambda = 0;
      for (double x : w) lambda += x * x;
      lambda = std::sqrt(lambda);
      if (lambda <= total_var * 1e-15) {
        // deflated matrix is numerically zero; direction is arbitrary
        std::fill(w.begin(), w.end(), 0.0);
        if (warnings != nullptr) {
          warnings->push_back("project_features: component " + std::to_string(comp + 1) +
                              " has no variance; coordinate set to zero");
        }
        break;
      }
      double diff = 0;
      for (std::size_t j = 0; j < d; ++j) {
        w[j] /= lambda;
        diff += (w[j] - v[j]) * (w[j] - v[j]);
      }
      v = w;
      if (std::sqrt(diff) < kTol) break;
    }
    if (lambda <= total_var * 1e-15) {
      components.emplace_back(d, 0.0);
      continue;
    }

    // sign convention: the largest-magnitude component is positive
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    }
    if (v[arg] < 0) {
      for (double& x : v) x = -x;
    }
    components.push_back(v);

    // deflate: cov -= lambda v v^T
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (int comp = 0; comp < 2; ++comp) {
      double acc = 0;
      for (std::size_t j = 0; j < d; ++j) {
        acc += centered[i * d + j] * components[comp][j];
      }
      out.points[i * 2 + comp] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// EvalReport
// ---------------------------------------------------------------------------

struct EvalReport {
  std::size_t n = 0;
  std::size_t num_classes = 0;
  double accuracy = 0;
  PrfResult prf;
  ConfusionMatrix cm;
  RocResult roc;
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;
};

// Builds the full metrics bundle from probability rows (each summing to 1).
inline EvalReport build_report(const std::vector<int>& labels,
                               const std::vector<double>& probs, std::size_t k,
                               std::vector<std::string> class_names = {}) {
  EvalReport rep;
  rep.n = labels.size();
  rep.num_classes = k;
  rep.class_names = std::move(class_names);
  std::vector<int> preds(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = probs.data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    preds[i] = static_cast<int>(best);
  }
  rep.cm = confusion(labels, preds, k);
  rep.prf = prf(rep.cm, &rep.warnings);
  if (rep.n == 0) {
    rep.warnings.push_back("report: empty input (n=0)");
    rep.accuracy = 0;
    rep.cm = ConfusionMatrix(k, std::vector<std::int64_t>(k, 0));
    return rep;
  }
  rep.roc = roc_auc(probs, labels.size(), k, labels);
  std::int64_t trace = 0;
  for (std::size_t c = 0; c < k; ++c) trace += rep.cm[c][c];
  rep.accuracy = static_cast<double>(trace) / static_cast<double>(rep.n);
  return rep;
}

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace detail

// Machine-readable key/value lines plus matrix blocks; ROC points as
// two-column tables for external plotting.
inline void write_report(const EvalReport& rep, std::ostream& out) {
  out << "n = " << rep.n << "\n";
  out << "num_classes = " << rep.num_classes << "\n";
  if (!rep.class_names.empty()) {
    out << "class_names =";
    for (const auto& c : rep.class_names) out << ' ' << c;
    out << "\n";
  }
  out << "accuracy = " << detail::fmt_metric(rep.accuracy) << "\n";
  out << "macro_precision = " << detail::fmt_metric(rep.prf.macro_precision) << "\n";
  out << "macro_recall = " << detail::fmt_metric(rep.prf.macro_recall) << "\n";
  out << "macro_f1 = " << detail::fmt_metric(rep.prf.macro_f1) << "\n";
  if (rep.roc.macro_auc.has_value()) {
    out << "macro_auc = " << detail::fmt_metric(*rep.roc.macro_auc) << "\n";
  } else {
    out << "macro_auc = absent\n";
  }
  for (std::size_t c = 0; c < rep.num_classes; ++c) {
    out << "class " << c << " precision = " << detail::fmt_metric(rep.prf.precision[c])
        << " recall = " << detail::fmt_metric(rep.prf.recall[c])
        << " f1 = " << detail::fmt_metric(rep.prf.f1[c]) << " auc = ";
    if (c < rep.roc.per_class.size() && rep.roc.per_class[c].auc.has_value()) {
      out << detail::fmt_metric(*rep.roc.per_class[c].auc);
    } else {
      out << "absent";
    }
    out << "\n";
  }
  out << "confusion_matrix rows = " << rep.num_classes << "\n";
  for (const auto& row : rep.cm) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ' ';
      out << row[j];
    }
    out << "\n";
  }
  for (std::size_t c = 0; c < rep.roc.per_class.size(); ++c) {
    const RocCurve& curve = rep.roc.per_class[c];
    out << "roc_class " << c << " points = " << curve.fpr.size() << "\n";
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
      out << detail::fmt_metric(curve.fpr[i]) << ' ' << detail::fmt_metric(curve.tpr[i])
          << "\n";
    }
  }
  for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
}

}  // namespace eegformer
