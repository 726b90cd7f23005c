#include "starvae/gmm.hpp"

#include "starvae/config.hpp"
#include "starvae/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace starvae::gmm {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index count_distinct_columns(const Data& data, Index enough) {
  std::vector<Index> idx(static_cast<std::size_t>(data.cols()));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto less = [&](Index a, Index b) {
    for (Index r = 0; r < data.rows(); ++r) {
      if (data(r, a) < data(r, b)) return true;
      if (data(r, a) > data(r, b)) return false;
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  Index distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size() && distinct < enough; ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

VectorXd global_mean(const Data& data) { return data.rowwise().mean(); }

MatrixXd global_covariance(const Data& data) {
  const MatrixXd diff = data.colwise() - global_mean(data);
  return diff * diff.transpose() / static_cast<double>(data.cols());
}

double min_separation(const GmmModel& model) {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < model.k(); ++a)
    for (int b = a + 1; b < model.k(); ++b) best = std::min(best, (model.means[a] - model.means[b]).norm());
  return best;
}

bool needs_reinit(const GmmModel& model, double data_scale, const GmmConfig& cfg) {
  return model.weights.minCoeff() < cfg.weight_floor || min_separation(model) < cfg.separation_rel * data_scale;
}

std::string join(const double* values, Index n) {
  std::string out;
  char buf[64];
  for (Index i = 0; i < n; ++i) {
    if (i) out += ',';
    const auto res = std::to_chars(buf, buf + sizeof(buf), values[i]);
    out.append(buf, res.ptr);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    out.push_back(config::to_double(key, text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Row-wise log-sum-exp of an N x k matrix.
VectorXd log_sum_exp_rows(const MatrixXd& m) {
  VectorXd out(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out(i) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

double mean_data_variance(const Data& data) {
  if (data.cols() == 0) return 0.0;
  const MatrixXd diff = data.colwise() - global_mean(data);
  return diff.array().square().sum() / static_cast<double>(data.cols() * data.rows());
}

double covariance_floor(const Data& data, const GmmConfig& cfg) {
  const double v = mean_data_variance(data);
  return v > 0.0 ? cfg.cov_floor_rel * v : cfg.cov_floor_rel;
}

GmmModel gmm_init(const Data& data, Rng& rng, const GmmConfig& cfg) {
  if (cfg.k < 1) throw Error(ErrorCode::InvalidSpec, "k must be >= 1");
  const Index needed = 2 * static_cast<Index>(cfg.k);
  if (data.rows() < 1 || data.cols() < needed || count_distinct_columns(data, needed) < needed)
    throw Error(ErrorCode::TooFewPoints, "need at least " + std::to_string(needed) + " distinct points");

  GmmModel model;
  model.weights = VectorXd::Constant(cfg.k, 1.0 / cfg.k);
  MatrixXd cov = global_covariance(data);
  cov.diagonal().array() += covariance_floor(data, cfg);
  std::vector<Index> chosen;
  while (static_cast<int>(chosen.size()) < cfg.k) {
    const auto candidate = static_cast<Index>(rng.below(static_cast<std::uint64_t>(data.cols())));
    const bool duplicate = std::any_of(chosen.begin(), chosen.end(),
                                       [&](Index c) { return data.col(c) == data.col(candidate); });
    if (duplicate) continue;
    chosen.push_back(candidate);
    model.means.push_back(data.col(candidate));
    model.covariances.push_back(cov);
  }
  return model;
}

GmmModel gmm_init(const Data& data, std::uint64_t seed, const GmmConfig& cfg) {
  Rng rng(seed);
  return gmm_init(data, rng, cfg);
}

MatrixXd log_joint(const GmmModel& model, const Data& data) {
  if (data.rows() != model.dim()) throw Error(ErrorCode::ShapeMismatch, "data dimension does not match the model");
  const Index n = data.cols();
  const double dim = static_cast<double>(data.rows());
  MatrixXd out(n, model.k());
  for (int c = 0; c < model.k(); ++c) {
    const Eigen::LLT<MatrixXd> llt(model.covariances[c]);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::InvalidSpec, "covariance " + std::to_string(c) + " is not positive definite");
    const MatrixXd l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const MatrixXd white = llt.matrixL().solve(data.colwise() - model.means[c]);
    const double base = std::log(model.weights(c)) - 0.5 * (dim * std::log(2.0 * std::numbers::pi) + log_det);
    out.col(c) = (base - 0.5 * white.colwise().squaredNorm().array()).transpose();
  }
  return out;
}

MatrixXd e_step(const GmmModel& model, const Data& data) {
  MatrixXd lj = log_joint(model, data);
  const VectorXd norm = log_sum_exp_rows(lj);
  return (lj.colwise() - norm).array().exp().matrix();
}

double log_likelihood(const GmmModel& model, const Data& data) { return log_sum_exp_rows(log_joint(model, data)).sum(); }

GmmModel m_step(const Data& data, const MatrixXd& responsibilities, const GmmConfig& cfg) {
  const Index n = data.cols();
  if (responsibilities.rows() != n) throw Error(ErrorCode::ShapeMismatch, "responsibility rows != number of points");
  const Index k = responsibilities.cols();
  const double floor = covariance_floor(data, cfg);
  GmmModel model;
  model.weights.resize(k);
  for (Index c = 0; c < k; ++c) {
    const VectorXd r = responsibilities.col(c);
    const double nc = r.sum();
    MatrixXd cov;
    if (nc > 0.0) {
      const VectorXd mean = data * r / nc;
      const MatrixXd diff = data.colwise() - mean;
      cov = (diff.array().rowwise() * r.transpose().array()).matrix() * diff.transpose() / nc;
      cov = 0.5 * (cov + cov.transpose());
      model.means.push_back(mean);
    } else {
      cov = global_covariance(data);
      model.means.push_back(global_mean(data));
    }
    cov.diagonal().array() += floor;
    model.covariances.push_back(std::move(cov));
    model.weights(c) = std::max(nc / static_cast<double>(n), kMinWeight);
  }
  model.weights /= model.weights.sum();
  return model;
}

FitResult gmm_fit(const Data& data, std::uint64_t seed, const GmmConfig& cfg) {
  Rng rng(seed);
  FitResult fit;
  fit.model = gmm_init(data, rng, cfg);
  auto& report = fit.report;
  const double data_scale = std::sqrt(mean_data_variance(data));

  double prev_ll = 0.0;
  bool fresh = true;
  for (int it = 0; it < cfg.max_iter; ++it) {
    const MatrixXd lj = log_joint(fit.model, data);
    const VectorXd norm = log_sum_exp_rows(lj);
    const double ll = norm.sum();
    report.log_likelihood_trace.push_back(ll);
    report.iterations = it + 1;
    if (!fresh && std::abs(ll - prev_ll) < cfg.tol * std::abs(ll)) {
      report.converged = true;
      break;
    }
    fresh = false;
    prev_ll = ll;
    const MatrixXd resp = (lj.colwise() - norm).array().exp().matrix();
    fit.model = m_step(data, resp, cfg);
    if (needs_reinit(fit.model, data_scale, cfg) && report.reinit_count < cfg.max_reinit) {
      fit.model = gmm_init(data, rng, cfg);
      ++report.reinit_count;
      report.reinit_at.push_back(static_cast<int>(report.log_likelihood_trace.size()));
      fresh = true;
    }
  }
  report.overlapping = needs_reinit(fit.model, data_scale, cfg);
  return fit;
}

std::vector<int> gmm_predict(const GmmModel& model, const Data& data) {
  const MatrixXd lj = log_joint(model, data);
  std::vector<int> labels(static_cast<std::size_t>(lj.rows()), 0);
  for (Index i = 0; i < lj.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < model.k(); ++c)
      if (lj(i, c) > lj(i, best)) best = c;
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

std::string serialize_model(const GmmModel& model) {
  std::string out = "k=" + std::to_string(model.k()) + "\ndim=" + std::to_string(model.dim()) + "\n";
  for (int c = 0; c < model.k(); ++c) {
    const std::string idx = std::to_string(c);
    out += "weight." + idx + "=" + join(&model.weights(c), 1) + "\n";
    out += "mean." + idx + "=" + join(model.means[c].data(), model.means[c].size()) + "\n";
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = model.covariances[c];
    out += "cov." + idx + "=" + join(rm.data(), rm.size()) + "\n";
  }
  return out;
}

GmmModel parse_model(std::string_view text) {
  const auto kv = config::KeyValues::parse(text);
  const auto k = kv.get_int("k", -1);
  const auto dim = kv.get_int("dim", -1);
  if (k < 1 || dim < 1) throw Error(ErrorCode::BadConfig, "gmm model lacks k or dim");
  GmmModel model;
  model.weights.resize(k);
  for (int c = 0; c < k; ++c) {
    const std::string idx = std::to_string(c);
    const auto w = kv.get("weight." + idx);
    const auto m = kv.get("mean." + idx);
    const auto s = kv.get("cov." + idx);
    if (!w || !m || !s) throw Error(ErrorCode::BadConfig, "gmm model lacks component " + idx);
    model.weights(c) = config::to_double("weight." + idx, *w);
    const auto mean = split_doubles("mean." + idx, *m);
    const auto cov = split_doubles("cov." + idx, *s);
    if (static_cast<long long>(mean.size()) != dim || static_cast<long long>(cov.size()) != dim * dim)
      throw Error(ErrorCode::BadConfig, "gmm component " + idx + " has the wrong length");
    model.means.push_back(Eigen::Map<const VectorXd>(mean.data(), dim));
    model.covariances.push_back(
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov.data(), dim, dim));
  }
  return model;
}

}  // namespace starvae::gmm
