#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradient_check.hpp"
#include "starvae/error.hpp"
#include "starvae/patching.hpp"
#include "starvae/rng.hpp"
#include "starvae/synthfield.hpp"
#include "starvae/vae.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

using namespace starvae;
using namespace starvae::vae;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd random_vector(Rng& rng, int n, double lo, double hi) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

VectorXd normal_vector(Rng& rng, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

patching::PatchDataset field_patches(std::uint64_t seed, int size, std::size_t limit) {
  synthfield::FieldSpec spec;
  spec.width = spec.height = 128;
  spec.n_cluster = 40;
  spec.n_background = 40;
  spec.cluster_center_px = {64.0, 64.0};
  spec.cluster_sigma_px = 10.0;
  spec.noise_sigma = 20.0;
  spec.seed = seed;
  const auto field = synthfield::generate_field(spec);
  auto ds = patching::extract_patches(patching::normalize(field.image), size, size / 2);
  if (ds.size() > limit) {
    ds.patches.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(limit));
    ds.geometry.resize(limit);
  }
  return ds;
}

bool same_params(const VaeParams& a, const VaeParams& b) {
  const auto la = a.layers();
  const auto lb = b.layers();
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i)
    if (la[i]->weight != lb[i]->weight || la[i]->bias != lb[i]->bias) return false;
  return true;
}

}  // namespace

TEST_CASE("zero parameters encode to zero and decode to one half") {
  const auto p = zero_params({6, {8, 4, 3}, 2});
  Rng rng(1);
  const auto enc = encode(p, random_vector(rng, 6, 0, 1));
  CHECK(enc.mu == VectorXd::Zero(2));
  CHECK(enc.log_var == VectorXd::Zero(2));
  CHECK(decode(p, normal_vector(rng, 2)) == VectorXd::Constant(6, 0.5));
}

TEST_CASE("hand-set toy encoder") {
  auto p = zero_params({2, {2}, 2});
  p.encoder[0].weight << 1, -1, 0, 1;
  p.mu_head.weight << 1, 2, 3, 4;
  p.mu_head.bias << 0.5, -0.5;
  p.logvar_head.weight << 1, 0, 0, 1;
  VectorXd x(2);
  x << 0.2, 0.7;
  // hidden = relu(0.2 - 0.7, 0.7) = (0, 0.7)
  const auto enc = encode(p, x);
  CHECK(enc.mu(0) == doctest::Approx(0.0 + 2 * 0.7 + 0.5).epsilon(1e-15));
  CHECK(enc.mu(1) == doctest::Approx(0.0 + 4 * 0.7 - 0.5).epsilon(1e-15));
  CHECK(enc.log_var(0) == 0.0);
  CHECK(enc.log_var(1) == doctest::Approx(0.7).epsilon(1e-15));
  const auto again = encode(p, x);
  CHECK(again.mu == enc.mu);
  CHECK(again.log_var == enc.log_var);
}

TEST_CASE("hand-set toy decoder") {
  auto p = zero_params({1, {1}, 1});
  p.decoder[0].weight(0, 0) = 1.0;
  p.output.weight(0, 0) = 1.0;
  CHECK(decode(p, VectorXd::Zero(1))(0) == 0.5);
  CHECK(decode(p, VectorXd::Constant(1, std::log(3.0)))(0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("encoder rejects wrong input length") {
  const auto p = zero_params({6, {8, 4, 3}, 2});
  CHECK_THROWS_AS(encode(p, VectorXd::Zero(5)), Error);
  CHECK_THROWS_AS(decode(p, VectorXd::Zero(3)), Error);
  CHECK_THROWS_AS(reparameterize(VectorXd::Zero(2), VectorXd::Zero(3), VectorXd::Zero(2)), Error);
}

TEST_CASE("reparameterize") {
  VectorXd mu(1), lv(1), eps(1);
  mu << 1.0;
  lv << 2.0 * std::log(2.0);
  eps << 0.5;
  CHECK(reparameterize(mu, lv, eps)(0) == doctest::Approx(2.0).epsilon(1e-15));
  eps << 0.0;
  CHECK(reparameterize(mu, lv, eps)(0) == 1.0);

  SUBCASE("Monte Carlo mean and spread") {
    Rng rng(2024);
    const int n = 1000000;
    VectorXd m(1), l(1), e(1);
    m << -0.7;
    l << std::log(1.8 * 1.8);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      e << rng.normal();
      const double z = reparameterize(m, l, e)(0);
      s += z;
      s2 += z * z;
    }
    const double mean = s / n;
    const double sd = std::sqrt(s2 / n - mean * mean);
    CHECK(std::abs(mean - (-0.7)) <= 0.01 * 0.7);
    CHECK(std::abs(sd - 1.8) <= 0.01 * 1.8);
  }
}

TEST_CASE("closed-form KL") {
  CHECK(kl_closed_form(VectorXd::Zero(3), VectorXd::Zero(3)) == 0.0);
  CHECK(kl_closed_form(VectorXd::Ones(1), VectorXd::Zero(1)) == 0.5);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const int k = 1 + static_cast<int>(rng.below(6));
    CHECK(kl_closed_form(random_vector(rng, k, -3, 3), random_vector(rng, k, -5, 5)) >= 0.0);
  }
}

TEST_CASE("closed-form KL matches a Monte Carlo estimate") {
  Rng draw(77);
  Rng sampler(78);
  const int n = 1000000;
  for (int trial = 0; trial < 4; ++trial) {
    const VectorXd mu = random_vector(draw, 3, -1.5, 1.5);
    const VectorXd lv = random_vector(draw, 3, -1.5, 1.5);
    double acc = 0.0;
    for (int s = 0; s < n; ++s) {
      double log_ratio = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double e = sampler.normal();
        const double z = mu(k) + std::exp(0.5 * lv(k)) * e;
        // log q(z) - log p(z) for one coordinate; the 2*pi terms cancel.
        log_ratio += -0.5 * lv(k) - 0.5 * e * e + 0.5 * z * z;
      }
      acc += log_ratio;
    }
    const double mc = acc / n;
    const double exact = kl_closed_form(mu, lv);
    CHECK(std::abs(mc - exact) <= 0.01 * exact);
  }
}

TEST_CASE("nelbo hand cases") {
  const auto p = zero_params({4, {3}, 2});
  const auto parts = nelbo(p, VectorXd::Zero(4), VectorXd::Zero(2));
  CHECK(parts.recon == doctest::Approx(4.0 * std::numbers::ln2).epsilon(1e-15));
  CHECK(parts.kl == 0.0);
  CHECK(parts.loss == parts.recon + parts.kl);

  const auto half = nelbo(p, VectorXd::Constant(4, 0.5), VectorXd::Zero(2));
  CHECK(half.recon == doctest::Approx(4.0 * std::numbers::ln2).epsilon(1e-15));
}

TEST_CASE("nelbo is non-negative and decomposes exactly") {
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const Architecture arch{1 + static_cast<int>(rng.below(8)), {1 + static_cast<int>(rng.below(6))},
                            1 + static_cast<int>(rng.below(3))};
    auto p = init_params(arch, rng);
    for (auto* layer : p.layers()) layer->weight *= rng.uniform(0.1, 5.0);
    const auto parts =
        nelbo(p, random_vector(rng, arch.input_dim, 0, 1), normal_vector(rng, arch.latent_dim));
    REQUIRE(parts.loss >= 0.0);
    REQUIRE(parts.loss == parts.recon + parts.kl);
  }
}

TEST_CASE("analytic gradient matches central differences on the toy network") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto p = testing::toy_params(seed);
    Rng rng(seed + 100);
    const auto x = random_vector(rng, 6, 0, 1);
    const auto eps = normal_vector(rng, 2);
    const auto result = testing::check_gradient(p, x, eps, {});
    CHECK(result.coordinates == p.parameter_count());
    CHECK(result.max_rel_error < 1e-4);
  }
}

TEST_CASE("analytic gradient matches central differences under the mixture prior") {
  PriorConfig prior;
  prior.kind = PriorKind::Mixture;
  prior.mixture = MixturePrior::symmetric_pair(2, 1.5, 0.8);
  for (std::uint64_t seed = 4; seed <= 5; ++seed) {
    const auto p = testing::toy_params(seed);
    Rng rng(seed + 100);
    const auto result = testing::check_gradient(p, random_vector(rng, 6, 0, 1), normal_vector(rng, 2), prior);
    CHECK(result.max_rel_error < 1e-4);
  }
}

TEST_CASE("output-bias gradient equals reconstruction minus target") {
  const auto p = testing::toy_params(9);
  Rng rng(10);
  const auto x = random_vector(rng, 6, 0, 1);
  const auto eps = normal_vector(rng, 2);
  const auto enc = encode(p, x);
  const auto x_hat = decode(p, reparameterize(enc.mu, enc.log_var, eps));
  const auto g = backward(p, x, eps);
  for (int d = 0; d < 6; ++d) CHECK(g.grad.output.bias(d) == doctest::Approx(x_hat(d) - x(d)).epsilon(1e-12));

  const auto zero = zero_params({6, {8, 4, 3}, 2});
  const auto gz = backward(zero, VectorXd::Zero(6), VectorXd::Zero(2));
  CHECK(gz.grad.output.bias == VectorXd::Constant(6, 0.5));
}

TEST_CASE("with a constant decoder the mu-head bias gradient is mu") {
  auto p = testing::toy_params(12);
  for (auto& layer : p.decoder) layer.weight.setZero();
  p.output.weight.setZero();
  Rng rng(13);
  const auto x = random_vector(rng, 6, 0, 1);
  const auto g = backward(p, x, normal_vector(rng, 2));
  const auto enc = encode(p, x);
  for (int k = 0; k < 2; ++k) {
    CHECK(g.grad.mu_head.bias(k) == doctest::Approx(enc.mu(k)).epsilon(1e-13));
    CHECK(g.grad.logvar_head.bias(k) == doctest::Approx(0.5 * (std::exp(enc.log_var(k)) - 1.0)).epsilon(1e-13));
  }
}

TEST_CASE("batched loss and gradient equal the sum of single-sample ones") {
  const auto p = testing::toy_params(21);
  Rng rng(22);
  MatrixXd x(6, 5);
  for (Eigen::Index c = 0; c < 5; ++c) x.col(c) = random_vector(rng, 6, 0, 1);
  std::vector<MatrixXd> eps{MatrixXd(2, 5)};
  for (Eigen::Index c = 0; c < 5; ++c) eps[0].col(c) = normal_vector(rng, 2);
  VaeParams grad = zero_params(p.architecture());
  const auto parts = forward_backward(p, x, eps, {}, &grad);
  double loss = 0.0;
  VaeParams sum = zero_params(p.architecture());
  for (Eigen::Index c = 0; c < 5; ++c) {
    const auto g = backward(p, x.col(c), eps[0].col(c));
    loss += g.parts.loss;
    auto dst = sum.layers();
    const auto src = g.grad.layers();
    for (std::size_t l = 0; l < dst.size(); ++l) {
      dst[l]->weight += src[l]->weight;
      dst[l]->bias += src[l]->bias;
    }
  }
  CHECK(parts.loss == doctest::Approx(loss).epsilon(1e-12));
  const auto a = grad.layers();
  const auto b = sum.layers();
  for (std::size_t l = 0; l < a.size(); ++l) {
    CHECK((a[l]->weight - b[l]->weight).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a[l]->bias - b[l]->bias).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("log-variance clamp guards the loss") {
  auto p = zero_params({3, {2}, 1});
  p.logvar_head.bias(0) = 50.0;
  const auto parts = nelbo(p, VectorXd::Constant(3, 0.3), VectorXd::Ones(1));
  CHECK(std::isfinite(parts.loss));
  CHECK(reparameterize(VectorXd::Zero(1), VectorXd::Constant(1, 50.0), VectorXd::Ones(1))(0) ==
        doctest::Approx(std::exp(5.0)).epsilon(1e-15));
}

TEST_CASE("mixture prior density") {
  const auto prior = MixturePrior::symmetric_pair(2, 1.0, 1.0);
  VectorXd z(2);
  z << 1.0, 1.0;
  // Equal weights; one component centred on z, the other 2 units away on each axis.
  const double expected =
      std::log(0.5 * std::exp(-std::log(2.0 * std::numbers::pi)) * (1.0 + std::exp(-4.0)));
  CHECK(prior.log_density(z) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("training is deterministic") {
  const auto ds = field_patches(3, 8, 200);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.hidden = {32, 16, 8};
  cfg.latent_dim = 4;
  cfg.seed = 17;
  const auto a = train(ds, cfg);
  const auto b = train(ds, cfg);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(same_params(a.params, b.params));
  cfg.seed = 18;
  CHECK(train(ds, cfg).loss_trace != a.loss_trace);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto ds = field_patches(4, 8, 150);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.0;
  cfg.hidden = {16, 8, 4};
  cfg.latent_dim = 2;
  cfg.seed = 9;
  const auto r = train(ds, cfg);
  Rng rng(cfg.seed);
  CHECK(same_params(r.params, init_params({ds.dim(), cfg.hidden, cfg.latent_dim}, rng)));
  REQUIRE(r.loss_trace.size() == 4);
  // Only the fresh noise differs between epochs.
  const auto [lo, hi] = std::minmax_element(r.loss_trace.begin(), r.loss_trace.end());
  CHECK((*hi - *lo) <= 0.01 * *lo);
}

TEST_CASE("fifty epochs lower the mean NELBO") {
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto ds = field_patches(seed, 8, 500);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.hidden = {64, 32, 16};
    cfg.latent_dim = 4;
    cfg.seed = seed;
    const auto r = train(ds, cfg);
    REQUIRE(r.loss_trace.size() == 50);
    for (double v : r.loss_trace) REQUIRE(std::isfinite(v));
    CHECK(r.loss_trace.back() < r.loss_trace.front());
    CHECK(r.params.all_finite());
  }
}

TEST_CASE("training configuration is validated") {
  patching::PatchDataset empty;
  empty.patch_size = 8;
  empty.patches = MatrixXd(64, 0);
  try {
    train(empty, TrainConfig{});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("latent stats") {
  Rng rng(40);
  const auto p = init_params({16, {12, 6, 5}, 3}, rng);
  const auto ds = field_patches(6, 4, 300);

  SUBCASE("one entry per patch, matching single encodes") {
    const auto stats = latent_stats(p, ds);
    REQUIRE(stats.size() == ds.size());
    CHECK(stats.features().rows() == 6);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto enc = encode(p, ds.patches.col(static_cast<Eigen::Index>(i)));
      const auto c = static_cast<Eigen::Index>(i);
      REQUIRE((stats.mu.col(c) - enc.mu).cwiseAbs().maxCoeff() <= 1e-12);
      REQUIRE((stats.log_var.col(c) - enc.log_var).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(stats.geometry[i].x0 == ds.geometry[i].x0);
    }
  }
  SUBCASE("single patch") {
    auto one = ds;
    one.patches = ds.patches.leftCols(1);
    one.geometry.resize(1);
    CHECK(latent_stats(p, one).size() == 1);
  }
  SUBCASE("permutation equivariance") {
    std::vector<Eigen::Index> perm(ds.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto shuffled = ds;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.patches.col(static_cast<Eigen::Index>(i)) = ds.patches.col(perm[i]);
      shuffled.geometry[i] = ds.geometry[static_cast<std::size_t>(perm[i])];
    }
    const auto a = latent_stats(p, ds);
    const auto b = latent_stats(p, shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      REQUIRE((b.mu.col(static_cast<Eigen::Index>(i)) - a.mu.col(perm[i])).cwiseAbs().maxCoeff() <= 1e-12);
      REQUIRE(b.geometry[i].y0 == a.geometry[static_cast<std::size_t>(perm[i])].y0);
    }
  }
  SUBCASE("dimension mismatch") {
    const auto wrong = field_patches(6, 8, 10);
    CHECK_THROWS_AS(latent_stats(p, wrong), Error);
  }
}

TEST_CASE("checkpoints") {
  Rng rng(50);
  const Architecture arch{64, {20, 10, 6}, 3};
  const auto p = init_params(arch, rng);
  const auto bytes = save_checkpoint(p, 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VAE1");
  CHECK(bytes.size() == 4 + 4 * 3 + 4 * 2 * p.layers().size() + 8 * p.parameter_count());

  SUBCASE("round trip is exact") {
    const auto ck = load_checkpoint(bytes, arch);
    CHECK(ck.patch_size == 8);
    CHECK(same_params(ck.params, p));
    CHECK(save_checkpoint(ck.params, 8) == bytes);
  }
  auto expect_reject = [](std::span<const std::uint8_t> b, const std::optional<Architecture>& expected) {
    try {
      load_checkpoint(b, expected);
      FAIL("checkpoint accepted");
    } catch (const Error&) {
    }
  };
  SUBCASE("bad magic") {
    auto b = bytes;
    b[3] = '2';
    expect_reject(b, std::nullopt);
  }
  SUBCASE("truncated and padded") {
    expect_reject(std::span(bytes).first(bytes.size() - 1), std::nullopt);
    expect_reject(std::span(bytes).first(10), std::nullopt);
    auto b = bytes;
    b.push_back(0);
    expect_reject(b, std::nullopt);
  }
  SUBCASE("shape table mismatch") {
    expect_reject(bytes, Architecture{64, {20, 10, 6}, 4});
    expect_reject(bytes, Architecture{64, {21, 10, 6}, 3});
    auto b = bytes;
    // First layer's output width: breaks the chain with the next layer.
    b[16] = 21;
    expect_reject(b, std::nullopt);
  }
}
