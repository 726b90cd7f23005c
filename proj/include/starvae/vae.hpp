#pragma once

#include "starvae/patching.hpp"
#include "starvae/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace starvae::vae {

/// Lower and upper bound applied to log-variance before it is exponentiated.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
/// Decoder probabilities are clamped to [kProbEps, 1 - kProbEps] inside the BCE.
inline constexpr double kProbEps = 1e-7;

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

struct Architecture {
  int input_dim = 0;
  std::vector<int> hidden{1024, 256, 32};
  int latent_dim = 16;

  bool operator==(const Architecture&) const = default;
};

/// Encoder D -> h1 -> h2 -> h3 (ReLU), affine heads h3 -> L for mu and
/// log-variance, decoder L -> h3 -> h2 -> h1 (ReLU) and a sigmoid output
/// layer h1 -> D.
struct VaeParams {
  int input_dim = 0;
  int latent_dim = 0;
  std::vector<DenseLayer> encoder;
  DenseLayer mu_head;
  DenseLayer logvar_head;
  std::vector<DenseLayer> decoder;
  DenseLayer output;

  Architecture architecture() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Layers in declaration order: encoder, mu head, log-variance head,
  /// decoder, output. The checkpoint format and weight init follow it.
  std::vector<DenseLayer*> layers();
  std::vector<const DenseLayer*> layers() const;
};

VaeParams zero_params(const Architecture& arch);

/// Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))) drawn layer
/// by layer in declaration order, row-major within a layer; zero biases.
VaeParams init_params(const Architecture& arch, Rng& rng);

/// Pre-activations and activations of every hidden layer for one batch
/// (one column per sample).
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> act;
};

struct Encoding {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
  ForwardTrace trace;
};

Encoding encode(const VaeParams& params, const Eigen::VectorXd& x);

struct BatchEncoding {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd log_var;
  ForwardTrace trace;
};

BatchEncoding encode_batch(const VaeParams& params, const Eigen::MatrixXd& x);

/// z = mu + exp(log_var / 2) * eps, with log_var clamped first.
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var,
                               const Eigen::VectorXd& eps);

Eigen::VectorXd decode(const VaeParams& params, const Eigen::VectorXd& z);
Eigen::MatrixXd decode_batch(const VaeParams& params, const Eigen::MatrixXd& z);

/// KL(N(mu, diag exp(log_var)) || N(0, I)) = -1/2 sum(1 + lv - mu^2 - exp(lv)).
double kl_closed_form(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var);

/// Isotropic Gaussian mixture used as an optional latent prior.
struct MixturePrior {
  std::vector<Eigen::VectorXd> means;
  std::vector<double> variances;
  std::vector<double> weights;

  /// Two equal-weight components at +offset and -offset on every axis.
  static MixturePrior symmetric_pair(int latent_dim, double offset, double variance = 1.0);
  double log_density(const Eigen::VectorXd& z) const;
};

enum class PriorKind { StandardNormal, Mixture };

/// StandardNormal uses the closed-form KL. Mixture replaces it with the
/// single-sample estimate log q(z|x) - log p(z), which may be negative.
struct PriorConfig {
  PriorKind kind = PriorKind::StandardNormal;
  MixturePrior mixture;
};

struct NelboParts {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

NelboParts nelbo(const VaeParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& eps,
                 const PriorConfig& prior = {});

struct Gradient {
  VaeParams grad;
  NelboParts parts;
};

/// Exact gradient of nelbo() at fixed eps.
Gradient backward(const VaeParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& eps,
                  const PriorConfig& prior = {});

/// Batched loss and gradient. `eps` holds one L x B matrix per Monte-Carlo
/// sample; the per-sample loss is averaged over those. The returned
/// parts are sums over the batch columns and `grad` (when non-null) is
/// overwritten with the summed gradient.
NelboParts forward_backward(const VaeParams& params, const Eigen::MatrixXd& x,
                            std::span<const Eigen::MatrixXd> eps, const PriorConfig& prior, VaeParams* grad);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  int mc_samples = 1;
  std::uint64_t seed = 0;
  int latent_dim = 16;
  std::vector<int> hidden{1024, 256, 32};
  PriorConfig prior;

  void validate() const;
};

struct TrainResult {
  VaeParams params;
  /// Mean per-sample NELBO of each epoch, accumulated before each batch update.
  std::vector<double> loss_trace;
};

/// Plain mini-batch SGD. Draw order from Rng(cfg.seed): weight init, then
/// per epoch a Fisher-Yates shuffle followed, per batch, by the noise for
/// each sample in batch order (mc_samples blocks of latent_dim normals).
TrainResult train(const patching::PatchDataset& dataset, const TrainConfig& cfg);

struct LatentStats {
  int patch_size = 0;
  Eigen::MatrixXd mu;       // L x N
  Eigen::MatrixXd log_var;  // L x N
  std::vector<patching::PatchOrigin> geometry;

  std::size_t size() const { return geometry.size(); }
  /// Per-patch concatenation (mu, log_var): 2L x N.
  Eigen::MatrixXd features() const;
};

LatentStats latent_stats(const VaeParams& params, const patching::PatchDataset& dataset);

// ---------------------------------------------------------- Checkpoint

std::vector<std::uint8_t> save_checkpoint(const VaeParams& params, int patch_size);

struct Checkpoint {
  VaeParams params;
  int patch_size = 0;
};

/// Rejects bad magic, truncation, inconsistent shape tables and, when
/// `expected` is given, any architecture that differs from it.
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes,
                           const std::optional<Architecture>& expected = std::nullopt);

}  // namespace starvae::vae
