#pragma once

#include "starvae/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace starvae::gmm {

/// Data matrices hold one point per column (M x N).
using Data = Eigen::MatrixXd;

struct GmmModel {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  int k() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
};

struct GmmConfig {
  int k = 2;
  /// Reinitialise when some weight drops below this.
  double weight_floor = 0.02;
  /// ... or when the means are closer than this times the data scale.
  double separation_rel = 1e-3;
  int max_reinit = 10;
  int max_iter = 1000;
  /// Converged when |dLL| < tol * |LL|.
  double tol = 1e-6;
  /// Covariance floor relative to the mean per-coordinate data variance.
  double cov_floor_rel = 1e-6;
};

/// Weight assigned to a component that receives no responsibility at all.
inline constexpr double kMinWeight = 1e-12;

/// Mean per-coordinate variance of the data.
double mean_data_variance(const Data& data);
/// cov_floor_rel * mean_data_variance, or cov_floor_rel when the data has no spread.
double covariance_floor(const Data& data, const GmmConfig& cfg);

/// Means at k distinct data points chosen uniformly at random, every
/// covariance the global data covariance plus the floor, equal weights.
GmmModel gmm_init(const Data& data, Rng& rng, const GmmConfig& cfg = {});
GmmModel gmm_init(const Data& data, std::uint64_t seed, const GmmConfig& cfg = {});

/// log p(c) + log N(z_i | mu_c, Sigma_c), one row per point.
Eigen::MatrixXd log_joint(const GmmModel& model, const Data& data);

/// Row-normalised responsibilities (N x k) via log-sum-exp.
Eigen::MatrixXd e_step(const GmmModel& model, const Data& data);

GmmModel m_step(const Data& data, const Eigen::MatrixXd& responsibilities, const GmmConfig& cfg = {});

double log_likelihood(const GmmModel& model, const Data& data);

struct EmReport {
  int iterations = 0;
  std::vector<double> log_likelihood_trace;
  /// Trace indices at which a fresh initialisation started.
  std::vector<int> reinit_at;
  int reinit_count = 0;
  bool converged = false;
  /// Final model still has a tiny component or coincident means.
  bool overlapping = false;
};

struct FitResult {
  GmmModel model;
  EmReport report;
};

FitResult gmm_fit(const Data& data, std::uint64_t seed, const GmmConfig& cfg = {});

/// argmax of the posterior class probability; ties go to the lower index.
std::vector<int> gmm_predict(const GmmModel& model, const Data& data);

std::string serialize_model(const GmmModel& model);
GmmModel parse_model(std::string_view text);

}  // namespace starvae::gmm
