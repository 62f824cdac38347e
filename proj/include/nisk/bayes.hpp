#pragma once

// Bayesian logistic regression posterior over (w, s), alpha = exp(s), with
//   p(w | alpha) = N(0, alpha^-1 I),  p(alpha) = Gamma(shape, rate),
// and Covertype-style CSV ingestion.

#include "nisk/targets.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace nisk {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Observations stored column-wise: features is d x N (bias row last),
// labels in {0, 1}.
struct Dataset {
  Matrix features;
  Vector labels;

  Eigen::Index size() const { return features.cols(); }
  Eigen::Index dim() const { return features.rows(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
  Vector feature_mean;  // training-split statistics used for standardization
  Vector feature_std;
};

namespace detail {

// Line source over plain or gzip-compressed text, chosen by extension.
class LineReader {
 public:
  explicit LineReader(const std::string& path) {
    gz_ = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz_) {
      gzf_ = gzopen(path.c_str(), "rb");
      if (gzf_ == nullptr) throw ParseError("cannot open dataset: " + path);
    } else {
      plain_.open(path);
      if (!plain_) throw ParseError("cannot open dataset: " + path);
    }
  }
  ~LineReader() {
    if (gzf_ != nullptr) gzclose(gzf_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  bool next(std::string& line) {
    if (!gz_) return static_cast<bool>(std::getline(plain_, line));
    line.clear();
    char buf[4096];
    while (gzgets(gzf_, buf, sizeof buf) != nullptr) {
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
    return !line.empty();
  }

 private:
  bool gz_ = false;
  gzFile gzf_ = nullptr;
  std::ifstream plain_;
};

inline std::vector<double> parse_row(const std::string& line, std::size_t line_no) {
  std::vector<double> out;
  std::size_t start = 0;
  std::string text = line;
  if (!text.empty() && text.back() == '\r') text.pop_back();
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string_view field(text.data() + start, end - start);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v))
      throw ParseError("line " + std::to_string(line_no) + ": malformed field '" +
                       std::string(field) + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

}  // namespace detail

struct CovertypeOptions {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t max_rows = 0;  // 0 keeps every row; otherwise a seeded reservoir subsample
};

// CSV rows: feature columns then the label column. Two distinct label values
// are mapped to {0, 1} (smaller -> 0). Features are standardized with
// training-split statistics and a bias feature is appended.
inline DatasetSplit load_covertype(const std::string& path, const CovertypeOptions& opts = {}) {
  require(opts.train_fraction > 0.0 && opts.train_fraction < 1.0,
          "train_fraction must lie in (0, 1)");
  detail::LineReader reader(path);
  std::vector<std::vector<double>> rows;
  Rng reservoir_rng(opts.seed, 0x726573);
  std::string line;
  std::size_t line_no = 0;
  std::size_t seen = 0;
  std::size_t width = 0;
  while (reader.next(line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = detail::parse_row(line, line_no);
    if (width == 0) width = row.size();
    if (row.size() != width || width < 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " columns, got " + std::to_string(row.size()));
    ++seen;
    if (opts.max_rows == 0 || rows.size() < opts.max_rows) {
      rows.push_back(std::move(row));
    } else {
      const std::size_t j = static_cast<std::size_t>(reservoir_rng.next_u64() % seen);
      if (j < opts.max_rows) rows[j] = std::move(row);
    }
  }
  if (rows.empty()) throw ParseError("dataset is empty: " + path);

  std::set<double> label_values;
  for (const auto& r : rows) label_values.insert(r.back());
  if (label_values.size() > 2) throw ParseError("labels are not binary in " + path);
  const double positive = *label_values.rbegin();

  const std::size_t n = rows.size();
  const std::size_t d = width - 1;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(opts.seed, 0x73706c);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(split_rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(opts.train_fraction * static_cast<double>(n)));
  require(n_train >= 1 && n_train <= n, "train split would be empty");

  auto build = [&](std::size_t begin, std::size_t end) {
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(end - begin));
    ds.labels.resize(static_cast<Eigen::Index>(end - begin));
    for (std::size_t k = begin; k < end; ++k) {
      const auto& r = rows[order[k]];
      const auto col = static_cast<Eigen::Index>(k - begin);
      for (std::size_t f = 0; f < d; ++f) ds.features(static_cast<Eigen::Index>(f), col) = r[f];
      ds.features(static_cast<Eigen::Index>(d), col) = 1.0;
      ds.labels(col) = (label_values.size() == 2 && r.back() == positive) ? 1.0 : 0.0;
    }
    return ds;
  };
  DatasetSplit split{build(0, n_train), build(n_train, n), {}, {}};

  const auto nd = static_cast<Eigen::Index>(d);
  auto train_feats = split.train.features.topRows(nd);
  split.feature_mean = train_feats.rowwise().mean();
  Matrix centered = train_feats.colwise() - split.feature_mean;
  split.feature_std = (centered.array().square().rowwise().sum() /
                       static_cast<double>(train_feats.cols())).sqrt();
  for (Eigen::Index f = 0; f < nd; ++f)
    if (!(split.feature_std(f) > 0.0)) split.feature_std(f) = 1.0;
  auto standardize = [&](Dataset& ds) {
    auto block = ds.features.topRows(nd);
    block.colwise() -= split.feature_mean;
    block.array().colwise() /= split.feature_std.array();
  };
  standardize(split.train);
  standardize(split.test);
  return split;
}

// Synthetic stand-in with the Covertype layout: `features` Gaussian columns
// then a label in {1, 2} drawn from a logistic model.
inline void write_synthetic_covertype(const std::string& path, std::size_t rows,
                                      std::uint64_t seed, int features = 54) {
  Rng rng(seed, 0x73796e);
  Vector w(features);
  for (int f = 0; f < features; ++f) w(f) = rng.normal() * 1.5 / std::sqrt(features);
  const double bias = 0.3;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write synthetic dataset: " + path);
  out.precision(6);
  for (std::size_t i = 0; i < rows; ++i) {
    Vector x(features);
    for (int f = 0; f < features; ++f) x(f) = rng.normal();
    const double p = 1.0 / (1.0 + std::exp(-(w.dot(x) + bias)));
    const int label = rng.uniform() < p ? 2 : 1;
    for (int f = 0; f < features; ++f) out << x(f) << ',';
    out << label << '\n';
  }
}

inline double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LogisticPrior {
  double gamma_shape = 1.0;
  double gamma_rate = 0.01;
};

// Posterior snapshot for one fixed minibatch; the likelihood is rescaled by N / B.
class LogisticBatchPosterior final : public TargetDensity {
 public:
  LogisticBatchPosterior(Matrix features, Vector labels, double likelihood_scale, LogisticPrior prior)
      : x_(std::move(features)), y_(std::move(labels)), scale_(likelihood_scale), prior_(prior) {}

  int dim() const override { return static_cast<int>(x_.rows()) + 1; }
  std::string name() const override { return "bayes_logistic"; }
  double likelihood_scale() const { return scale_; }
  Eigen::Index batch_size() const { return x_.cols(); }

  // Gradient of the rescaled log-likelihood alone, wrt w.
  Vector likelihood_gradient(const Vector& w) const {
    const Vector z = x_.transpose() * w;
    Vector resid(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) resid(i) = y_(i) - sigmoid(z(i));
    return scale_ * (x_ * resid);
  }

 protected:
  double log_density_at(const Vector& theta) const override {
    const Eigen::Index d = x_.rows();
    const Vector w = theta.head(d);
    const double s = theta(d);
    const double alpha = std::exp(s);
    const Vector z = x_.transpose() * w;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      ll += y_(i) * log_sigmoid(z(i)) + (1.0 - y_(i)) * log_sigmoid(-z(i));
    return scale_ * ll - 0.5 * alpha * w.squaredNorm() + 0.5 * static_cast<double>(d) * s +
           prior_.gamma_shape * s - prior_.gamma_rate * alpha;
  }

  Vector score_at(const Vector& theta) const override {
    const Eigen::Index d = x_.rows();
    const Vector w = theta.head(d);
    const double s = theta(d);
    const double alpha = std::exp(s);
    Vector g(d + 1);
    g.head(d) = likelihood_gradient(w) - alpha * w;
    g(d) = -0.5 * alpha * w.squaredNorm() + 0.5 * static_cast<double>(d) + prior_.gamma_shape -
           prior_.gamma_rate * alpha;
    return g;
  }

 private:
  Matrix x_;
  Vector y_;
  double scale_;
  LogisticPrior prior_;
};

class BayesLogisticPosterior {
 public:
  BayesLogisticPosterior(Dataset train, std::size_t minibatch_size, std::uint64_t seed,
                         LogisticPrior prior = {})
      : data_(std::move(train)), batch_(minibatch_size), prior_(prior), rng_(seed, 0x6d62) {
    require(data_.size() > 0, "posterior needs a non-empty training set");
    require(batch_ >= 1 && batch_ <= static_cast<std::size_t>(data_.size()),
            "minibatch_size must lie in [1, N]");
  }

  int dim() const { return static_cast<int>(data_.dim()) + 1; }
  std::size_t minibatch_size() const { return batch_; }
  const Dataset& data() const { return data_; }

  // Fresh minibatch without replacement; mutates the internal stream.
  std::shared_ptr<const LogisticBatchPosterior> posterior_minibatch() {
    const auto n = static_cast<std::size_t>(data_.size());
    if (batch_ == n) return full_posterior();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < batch_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.next_u64() % (n - i));
      std::swap(idx[i], idx[j]);
    }
    Matrix xb(data_.dim(), static_cast<Eigen::Index>(batch_));
    Vector yb(static_cast<Eigen::Index>(batch_));
    for (std::size_t i = 0; i < batch_; ++i) {
      xb.col(static_cast<Eigen::Index>(i)) = data_.features.col(static_cast<Eigen::Index>(idx[i]));
      yb(static_cast<Eigen::Index>(i)) = data_.labels(static_cast<Eigen::Index>(idx[i]));
    }
    return std::make_shared<LogisticBatchPosterior>(
        std::move(xb), std::move(yb), static_cast<double>(n) / static_cast<double>(batch_), prior_);
  }

  std::shared_ptr<const LogisticBatchPosterior> full_posterior() const {
    return std::make_shared<LogisticBatchPosterior>(data_.features, data_.labels, 1.0, prior_);
  }

 private:
  Dataset data_;
  std::size_t batch_;
  LogisticPrior prior_;
  Rng rng_;
};

}  // namespace nisk
