#include "starvae/vae.hpp"

#include "starvae/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <string>

namespace starvae::vae {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

DenseLayer make_layer(int in, int out) {
  return {MatrixXd::Zero(out, in), VectorXd::Zero(out)};
}

MatrixXd relu(const MatrixXd& m) { return m.cwiseMax(0.0); }

MatrixXd sigmoid(const MatrixXd& m) { return (1.0 + (-m.array()).exp()).inverse().matrix(); }

MatrixXd affine(const DenseLayer& layer, const MatrixXd& in) {
  MatrixXd out = layer.weight * in;
  out.colwise() += layer.bias;
  return out;
}

MatrixXd clamp_log_var(const MatrixXd& lv) { return lv.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax); }

/// Runs a ReLU stack, recording pre-activations and activations.
MatrixXd run_hidden(const std::vector<DenseLayer>& stack, const MatrixXd& in, ForwardTrace& trace) {
  const MatrixXd* current = &in;
  for (const auto& layer : stack) {
    trace.pre.push_back(affine(layer, *current));
    trace.act.push_back(relu(trace.pre.back()));
    current = &trace.act.back();
  }
  return *current;
}

void accumulate(DenseLayer& g, const MatrixXd& delta, const MatrixXd& in) {
  g.weight.noalias() += delta * in.transpose();
  g.bias += delta.rowwise().sum();
}

/// Backpropagates d(loss)/d(output of the stack) down to d(loss)/d(input),
/// accumulating weight and bias gradients on the way.
MatrixXd backprop_hidden(const std::vector<DenseLayer>& stack, std::vector<DenseLayer>& grads,
                         const ForwardTrace& trace, const MatrixXd& stack_input, MatrixXd d_out) {
  for (std::size_t i = stack.size(); i-- > 0;) {
    const MatrixXd delta = d_out.cwiseProduct((trace.pre[i].array() > 0.0).cast<double>().matrix());
    const MatrixXd& in = i == 0 ? stack_input : trace.act[i - 1];
    accumulate(grads[i], delta, in);
    d_out = stack[i].weight.transpose() * delta;
  }
  return d_out;
}

void check_params(const VaeParams& p) {
  require(!p.encoder.empty() && p.encoder.size() == p.decoder.size(), "encoder/decoder depth mismatch");
  require(p.mu_head.out_dim() == p.latent_dim && p.logvar_head.out_dim() == p.latent_dim, "head width != latent_dim");
  require(p.output.out_dim() == p.input_dim, "output width != input_dim");
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::TruncatedData, "checkpoint ends early");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

// ------------------------------------------------------------- Params

Architecture VaeParams::architecture() const {
  Architecture arch;
  arch.input_dim = input_dim;
  arch.latent_dim = latent_dim;
  arch.hidden.clear();
  for (const auto& l : encoder) arch.hidden.push_back(l.out_dim());
  return arch;
}

std::vector<DenseLayer*> VaeParams::layers() {
  std::vector<DenseLayer*> out;
  for (auto& l : encoder) out.push_back(&l);
  out.push_back(&mu_head);
  out.push_back(&logvar_head);
  for (auto& l : decoder) out.push_back(&l);
  out.push_back(&output);
  return out;
}

std::vector<const DenseLayer*> VaeParams::layers() const {
  std::vector<const DenseLayer*> out;
  for (auto* l : const_cast<VaeParams*>(this)->layers()) out.push_back(l);
  return out;
}

std::size_t VaeParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* l : layers()) n += static_cast<std::size_t>(l->weight.size() + l->bias.size());
  return n;
}

bool VaeParams::all_finite() const {
  for (const auto* l : layers())
    if (!l->weight.allFinite() || !l->bias.allFinite()) return false;
  return true;
}

VaeParams zero_params(const Architecture& arch) {
  if (arch.input_dim < 1 || arch.latent_dim < 1 || arch.hidden.empty())
    throw Error(ErrorCode::ShapeMismatch, "architecture needs input_dim, latent_dim >= 1 and a hidden layer");
  for (int h : arch.hidden)
    if (h < 1) throw Error(ErrorCode::ShapeMismatch, "hidden widths must be >= 1");
  VaeParams p;
  p.input_dim = arch.input_dim;
  p.latent_dim = arch.latent_dim;
  int prev = arch.input_dim;
  for (int h : arch.hidden) {
    p.encoder.push_back(make_layer(prev, h));
    prev = h;
  }
  p.mu_head = make_layer(prev, arch.latent_dim);
  p.logvar_head = make_layer(prev, arch.latent_dim);
  prev = arch.latent_dim;
  for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) {
    p.decoder.push_back(make_layer(prev, *it));
    prev = *it;
  }
  p.output = make_layer(prev, arch.input_dim);
  return p;
}

VaeParams init_params(const Architecture& arch, Rng& rng) {
  VaeParams p = zero_params(arch);
  for (auto* layer : p.layers()) {
    const double bound = std::sqrt(6.0 / (layer->in_dim() + layer->out_dim()));
    for (Index r = 0; r < layer->weight.rows(); ++r)
      for (Index c = 0; c < layer->weight.cols(); ++c) layer->weight(r, c) = rng.uniform(-bound, bound);
  }
  return p;
}

// ------------------------------------------------------------ Forward

BatchEncoding encode_batch(const VaeParams& params, const MatrixXd& x) {
  check_params(params);
  require(x.rows() == params.input_dim, "input length " + std::to_string(x.rows()) + " != " +
                                            std::to_string(params.input_dim));
  BatchEncoding enc;
  const MatrixXd h = run_hidden(params.encoder, x, enc.trace);
  enc.mu = affine(params.mu_head, h);
  enc.log_var = affine(params.logvar_head, h);
  return enc;
}

Encoding encode(const VaeParams& params, const VectorXd& x) {
  auto batch = encode_batch(params, x);
  return {batch.mu.col(0), batch.log_var.col(0), std::move(batch.trace)};
}

VectorXd reparameterize(const VectorXd& mu, const VectorXd& log_var, const VectorXd& eps) {
  require(mu.size() == log_var.size() && mu.size() == eps.size(), "reparameterize: length mismatch");
  const VectorXd lv = clamp_log_var(log_var);
  return mu + ((0.5 * lv).array().exp() * eps.array()).matrix();
}

MatrixXd decode_batch(const VaeParams& params, const MatrixXd& z) {
  check_params(params);
  require(z.rows() == params.latent_dim, "latent length mismatch");
  ForwardTrace trace;
  const MatrixXd h = run_hidden(params.decoder, z, trace);
  return sigmoid(affine(params.output, h));
}

VectorXd decode(const VaeParams& params, const VectorXd& z) { return decode_batch(params, z).col(0); }

double kl_closed_form(const VectorXd& mu, const VectorXd& log_var) {
  require(mu.size() == log_var.size(), "kl: length mismatch");
  double sum = 0.0;
  for (Index k = 0; k < mu.size(); ++k) sum += 1.0 + log_var(k) - mu(k) * mu(k) - std::exp(log_var(k));
  return -0.5 * sum;
}

// ----------------------------------------------------- Mixture prior

MixturePrior MixturePrior::symmetric_pair(int latent_dim, double offset, double variance) {
  MixturePrior prior;
  prior.means = {VectorXd::Constant(latent_dim, offset), VectorXd::Constant(latent_dim, -offset)};
  prior.variances = {variance, variance};
  prior.weights = {0.5, 0.5};
  return prior;
}

double MixturePrior::log_density(const VectorXd& z) const {
  std::vector<double> terms(means.size());
  const double dim = static_cast<double>(z.size());
  for (std::size_t c = 0; c < means.size(); ++c)
    terms[c] = std::log(weights[c]) - 0.5 * dim * std::log(2.0 * std::numbers::pi * variances[c]) -
               (z - means[c]).squaredNorm() / (2.0 * variances[c]);
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

namespace {

/// log p(z) and d(-log p)/dz for every column of z.
void mixture_terms(const MixturePrior& prior, const MatrixXd& z, Eigen::RowVectorXd& log_p, MatrixXd& grad_neg_log_p) {
  const Index n = z.cols();
  const std::size_t k = prior.means.size();
  log_p.resize(n);
  grad_neg_log_p.setZero(z.rows(), n);
  std::vector<double> terms(k);
  const double dim = static_cast<double>(z.rows());
  for (Index j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < k; ++c)
      terms[c] = std::log(prior.weights[c]) - 0.5 * dim * std::log(2.0 * std::numbers::pi * prior.variances[c]) -
                 (z.col(j) - prior.means[c]).squaredNorm() / (2.0 * prior.variances[c]);
    const double mx = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    log_p(j) = mx + std::log(s);
    for (std::size_t c = 0; c < k; ++c) {
      const double r = std::exp(terms[c] - log_p(j));
      grad_neg_log_p.col(j) += r * (z.col(j) - prior.means[c]) / prior.variances[c];
    }
  }
}

}  // namespace

// ------------------------------------------------------- Loss & grads

NelboParts forward_backward(const VaeParams& params, const MatrixXd& x, std::span<const MatrixXd> eps,
                            const PriorConfig& prior, VaeParams* grad) {
  check_params(params);
  const Index batch = x.cols();
  const Index latent = params.latent_dim;
  require(x.rows() == params.input_dim, "input length mismatch");
  require(!eps.empty(), "need at least one noise sample");
  for (const auto& e : eps) require(e.rows() == latent && e.cols() == batch, "noise shape mismatch");
  const bool mixture = prior.kind == PriorKind::Mixture;
  if (mixture) {
    require(!prior.mixture.means.empty() && prior.mixture.means.size() == prior.mixture.variances.size() &&
                prior.mixture.means.size() == prior.mixture.weights.size(),
            "mixture prior is inconsistent");
    for (const auto& m : prior.mixture.means) require(m.size() == latent, "mixture mean length != latent_dim");
  }

  const BatchEncoding enc = encode_batch(params, x);
  const MatrixXd lv = clamp_log_var(enc.log_var);
  const MatrixXd sigma = (0.5 * lv).array().exp().matrix();
  const double inv_s = 1.0 / static_cast<double>(eps.size());

  NelboParts parts;
  if (!mixture) parts.kl = -0.5 * (1.0 + lv.array() - enc.mu.array().square() - lv.array().exp()).sum();

  if (grad) {
    if (grad->architecture() != params.architecture()) *grad = zero_params(params.architecture());
    for (auto* l : grad->layers()) {
      l->weight.setZero();
      l->bias.setZero();
    }
  }
  MatrixXd d_mu = MatrixXd::Zero(latent, batch);
  MatrixXd d_lv = MatrixXd::Zero(latent, batch);

  for (const auto& e : eps) {
    const MatrixXd z = enc.mu + sigma.cwiseProduct(e);
    ForwardTrace dec_trace;
    const MatrixXd h = run_hidden(params.decoder, z, dec_trace);
    const MatrixXd p = sigmoid(affine(params.output, h));
    const MatrixXd pc = p.cwiseMax(kProbEps).cwiseMin(1.0 - kProbEps);
    parts.recon -= inv_s * (x.array() * pc.array().log() + (1.0 - x.array()) * (1.0 - pc.array()).log()).sum();

    Eigen::RowVectorXd log_p;
    MatrixXd grad_neg_log_p;
    if (mixture) {
      mixture_terms(prior.mixture, z, log_p, grad_neg_log_p);
      const double log_q = (-kHalfLog2Pi - 0.5 * lv.array() - 0.5 * e.array().square()).sum();
      parts.kl += inv_s * (log_q - log_p.sum());
    }

    if (!grad) continue;
    const auto inside = (p.array() > kProbEps && p.array() < 1.0 - kProbEps).cast<double>();
    const MatrixXd delta_out = (inv_s * (p - x).array() * inside).matrix();
    accumulate(grad->output, delta_out, h);
    MatrixXd d_z = backprop_hidden(params.decoder, grad->decoder, dec_trace, z,
                                   params.output.weight.transpose() * delta_out);
    if (mixture) d_z += inv_s * grad_neg_log_p;
    d_mu += d_z;
    d_lv += (d_z.array() * 0.5 * sigma.array() * e.array()).matrix();
  }
  parts.loss = parts.recon + parts.kl;
  if (!grad) return parts;

  if (mixture) {
    d_lv.array() += -0.5;
  } else {
    d_mu += enc.mu;
    d_lv += (0.5 * (lv.array().exp() - 1.0)).matrix();
  }
  const auto unclamped = (enc.log_var.array() > kLogVarMin && enc.log_var.array() < kLogVarMax).cast<double>();
  d_lv = (d_lv.array() * unclamped).matrix();

  const MatrixXd& h_enc = enc.trace.act.back();
  accumulate(grad->mu_head, d_mu, h_enc);
  accumulate(grad->logvar_head, d_lv, h_enc);
  const MatrixXd d_h = params.mu_head.weight.transpose() * d_mu + params.logvar_head.weight.transpose() * d_lv;
  backprop_hidden(params.encoder, grad->encoder, enc.trace, x, d_h);
  return parts;
}

NelboParts nelbo(const VaeParams& params, const VectorXd& x, const VectorXd& eps, const PriorConfig& prior) {
  const MatrixXd e = eps;
  return forward_backward(params, x, std::span<const MatrixXd>(&e, 1), prior, nullptr);
}

Gradient backward(const VaeParams& params, const VectorXd& x, const VectorXd& eps, const PriorConfig& prior) {
  Gradient out;
  out.grad = zero_params(params.architecture());
  const MatrixXd e = eps;
  out.parts = forward_backward(params, x, std::span<const MatrixXd>(&e, 1), prior, &out.grad);
  return out;
}

// ------------------------------------------------------------ Training

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || mc_samples < 1 || latent_dim < 1 || hidden.empty())
    throw Error(ErrorCode::InvalidSpec, "epochs, batch_size, mc_samples, latent_dim must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorCode::InvalidSpec, "learning_rate must be finite and >= 0");
}

TrainResult train(const patching::PatchDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  const Index n = static_cast<Index>(dataset.size());
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "cannot train on an empty patch dataset");
  require(dataset.patches.cols() == n && dataset.patches.rows() == dataset.dim(), "dataset matrix shape mismatch");

  Rng rng(cfg.seed);
  const Architecture arch{dataset.dim(), cfg.hidden, cfg.latent_dim};
  TrainResult result;
  result.params = init_params(arch, rng);
  VaeParams grad = zero_params(arch);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<MatrixXd> eps(static_cast<std::size_t>(cfg.mc_samples));
  MatrixXd xb;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);

    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index b = std::min<Index>(cfg.batch_size, n - start);
      xb.resize(dataset.dim(), b);
      for (Index j = 0; j < b; ++j) xb.col(j) = dataset.patches.col(order[static_cast<std::size_t>(start + j)]);
      for (auto& e : eps) e.resize(arch.latent_dim, b);
      for (Index j = 0; j < b; ++j)
        for (auto& e : eps)
          for (Index k = 0; k < arch.latent_dim; ++k) e(k, j) = rng.normal();

      const NelboParts parts = forward_backward(result.params, xb, eps, cfg.prior, &grad);
      epoch_loss += parts.loss;
      if (cfg.learning_rate == 0.0) continue;
      const double step = cfg.learning_rate / static_cast<double>(b);
      auto params_layers = result.params.layers();
      auto grad_layers = grad.layers();
      for (std::size_t l = 0; l < params_layers.size(); ++l) {
        params_layers[l]->weight.noalias() -= step * grad_layers[l]->weight;
        params_layers[l]->bias.noalias() -= step * grad_layers[l]->bias;
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  return result;
}

Eigen::MatrixXd LatentStats::features() const {
  MatrixXd f(mu.rows() + log_var.rows(), mu.cols());
  f.topRows(mu.rows()) = mu;
  f.bottomRows(log_var.rows()) = log_var;
  return f;
}

LatentStats latent_stats(const VaeParams& params, const patching::PatchDataset& dataset) {
  require(dataset.dim() == params.input_dim, "patch dimension does not match the model");
  constexpr Index kChunk = 256;
  const Index n = static_cast<Index>(dataset.size());
  LatentStats stats;
  stats.patch_size = dataset.patch_size;
  stats.geometry = dataset.geometry;
  stats.mu.resize(params.latent_dim, n);
  stats.log_var.resize(params.latent_dim, n);
  for (Index start = 0; start < n; start += kChunk) {
    const Index b = std::min(kChunk, n - start);
    const auto enc = encode_batch(params, dataset.patches.middleCols(start, b));
    stats.mu.middleCols(start, b) = enc.mu;
    stats.log_var.middleCols(start, b) = enc.log_var;
  }
  return stats;
}

// ---------------------------------------------------------- Checkpoint

std::vector<std::uint8_t> save_checkpoint(const VaeParams& params, int patch_size) {
  check_params(params);
  std::vector<std::uint8_t> out = {'V', 'A', 'E', '1'};
  const auto layers = params.layers();
  put_u32(out, static_cast<std::uint32_t>(params.latent_dim));
  put_u32(out, static_cast<std::uint32_t>(patch_size));
  put_u32(out, static_cast<std::uint32_t>(layers.size()));
  for (const auto* l : layers) {
    put_u32(out, static_cast<std::uint32_t>(l->out_dim()));
    put_u32(out, static_cast<std::uint32_t>(l->in_dim()));
  }
  for (const auto* l : layers) {
    for (Index r = 0; r < l->weight.rows(); ++r)
      for (Index c = 0; c < l->weight.cols(); ++c) put_f64(out, l->weight(r, c));
    for (Index r = 0; r < l->bias.size(); ++r) put_f64(out, l->bias(r));
  }
  return out;
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<Architecture>& expected) {
  ByteReader in(bytes);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), "VAE1", 4) != 0) throw Error(ErrorCode::MalformedHeader, "checkpoint magic is not VAE1");
  Checkpoint ck;
  const auto latent = static_cast<int>(in.u32());
  ck.patch_size = static_cast<int>(in.u32());
  const auto n_layers = in.u32();
  if (n_layers < 5 || (n_layers - 3) % 2 != 0)
    throw Error(ErrorCode::ShapeMismatch, "checkpoint layer count " + std::to_string(n_layers) + " is invalid");
  std::vector<std::pair<int, int>> shapes(n_layers);
  for (auto& s : shapes) {
    s.first = static_cast<int>(in.u32());
    s.second = static_cast<int>(in.u32());
  }
  const std::size_t depth = (n_layers - 3) / 2;
  Architecture arch;
  arch.input_dim = shapes.front().second;
  arch.latent_dim = latent;
  arch.hidden.clear();
  for (std::size_t i = 0; i < depth; ++i) arch.hidden.push_back(shapes[i].first);
  if (arch.input_dim != ck.patch_size * ck.patch_size)
    throw Error(ErrorCode::ShapeMismatch, "checkpoint input dimension does not match its patch size");

  Checkpoint probe;
  probe.params = zero_params(arch);
  const auto layers = probe.params.layers();
  for (std::size_t i = 0; i < n_layers; ++i)
    if (layers[i]->out_dim() != shapes[i].first || layers[i]->in_dim() != shapes[i].second)
      throw Error(ErrorCode::ShapeMismatch, "checkpoint shape table does not chain at layer " + std::to_string(i));
  if (expected && !(*expected == arch))
    throw Error(ErrorCode::ShapeMismatch, "checkpoint architecture differs from the expected one");

  for (auto* l : layers) {
    for (Index r = 0; r < l->weight.rows(); ++r)
      for (Index c = 0; c < l->weight.cols(); ++c) l->weight(r, c) = in.f64();
    for (Index r = 0; r < l->bias.size(); ++r) l->bias(r) = in.f64();
  }
  if (!in.at_end()) throw Error(ErrorCode::MalformedHeader, "trailing bytes after checkpoint payload");
  ck.params = std::move(probe.params);
  return ck;
}

}  // namespace starvae::vae
