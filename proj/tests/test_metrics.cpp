// Saliency metrics and losses against hand-computed values and brute force.

#include <gtest/gtest.h>

#include "avsal/avsal.hpp"

using namespace avsal;

namespace {

std::vector<double> random_map(std::uint64_t seed, std::size_t n = 64, bool normalized = true) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(0.01, 1.0);
  if (normalized) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= s;
  }
  return v;
}

std::vector<double> random_fixations(std::uint64_t seed, std::size_t n = 64) {
  std::mt19937_64 g(seed);
  std::vector<double> f(n, 0.0);
  for (int k = 0; k < 6; ++k) f[g() % n] = 1.0;
  f[0] = 1.0;
  f[n - 1] = 0.0;
  return f;
}

// ROC by direct counting at every distinct fixated value, closed with (0,0)
// and (1,1), integrated by trapezoids.
double brute_judd(const std::vector<double>& s, const std::vector<double>& fix) {
  std::vector<double> thr;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (fix[i] > 0) thr.push_back(s[i]);
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  std::vector<std::pair<double, double>> roc{{0.0, 0.0}};
  for (auto it = thr.rbegin(); it != thr.rend(); ++it) {
    double tp = 0, fp = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      (fix[i] > 0 ? np : nn) += 1;
      if (s[i] >= *it) (fix[i] > 0 ? tp : fp) += 1;
    }
    roc.emplace_back(fp / nn, tp / np);
  }
  roc.emplace_back(1.0, 1.0);
  double a = 0;
  for (std::size_t k = 1; k < roc.size(); ++k)
    a += (roc[k].first - roc[k - 1].first) * (roc[k].second + roc[k - 1].second) / 2;
  return a;
}

}  // namespace

TEST(Metrics, IdentitiesOnRandomMaps) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto s = random_map(seed);
    EXPECT_NEAR(metrics::cc(s, s), 1.0, 1e-12);
    EXPECT_NEAR(metrics::sim(s, s), 1.0, 1e-12);
    EXPECT_LE(metrics::kl(s, s, 1e-7), 2e-7);
    const std::vector<double> all(s.size(), 1.0);
    EXPECT_NEAR(metrics::nss(s, all), 0.0, 1e-12);
    std::vector<double> fix(s.size(), 0.0), sep(s.size(), 0.1);
    for (std::size_t i = 0; i < s.size(); i += 5) fix[i] = sep[i] = 1.0;
    EXPECT_EQ(metrics::auc_judd(sep, fix), 1.0);
    EXPECT_EQ(metrics::auc_judd(std::vector<double>(s.size(), 0.3), fix), 0.5);
  }
}

TEST(Metrics, HandComputedValues) {
  // Thresholds 0.9 and 0.7 give ROC points (0, 1/2) and (1/3, 1).
  const std::vector<double> p{0.9, 0.8, 0.7, 0.6, 0.5}, f{1, 0, 1, 0, 0};
  EXPECT_NEAR(metrics::auc_judd(p, f), 0.25 + 2.0 / 3.0, 1e-15);
  const std::vector<double> q{1, 2, 3, 4}, g{0, 0, 0, 1};
  EXPECT_NEAR(metrics::nss(q, g), 1.5 / std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(metrics::cc(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0, 1e-15);
  const std::vector<double> a{0.5, 0.5, 0}, b{0.25, 0.25, 0.5};
  EXPECT_NEAR(metrics::sim(a, b), 0.5, 1e-15);
  const double eps = 1e-7;
  const double want = 0.5 * std::log(eps + 0.5 / (0.25 + eps)) * 2 + 0.0;
  EXPECT_NEAR(metrics::kl(a, b, eps), want, 1e-15);
}

TEST(Metrics, JuddAreaMatchesDirectCounting) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = random_map(seed, 100, false);
    for (auto& v : s) v = std::round(v * 20) / 20;  // heavy ties
    const auto f = random_fixations(seed + 50, 100);
    EXPECT_NEAR(metrics::auc_judd(s, f), brute_judd(s, f), 1e-12) << "seed " << seed;
  }
}

TEST(Metrics, CorrelationMatchesClosedForm) {
  const auto a = random_map(3, 50, false), b = random_map(4, 50, false);
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < 50; ++i) ma += a[i], mb += b[i];
  ma /= 50, mb /= 50;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  EXPECT_NEAR(metrics::cc(a, b), static_cast<double>(sab / std::sqrt(saa * sbb)), 1e-14);
  // Affine invariance of the prediction.
  auto c = b;
  for (auto& v : c) v = 3 * v + 7;
  EXPECT_NEAR(metrics::cc(a, c), metrics::cc(a, b), 1e-13);
}

TEST(Metrics, DegenerateInputsThrow) {
  const std::vector<double> flat(4, 0.25), s{0.1, 0.2, 0.3, 0.4}, none(4, 0.0);
  EXPECT_THROW(metrics::cc(s, flat), NumericError);
  EXPECT_THROW(metrics::nss(flat, std::vector<double>{1, 0, 0, 0}), NumericError);
  EXPECT_THROW(metrics::nss(s, none), NumericError);
  EXPECT_THROW(metrics::auc_judd(s, none), NumericError);
  EXPECT_THROW(metrics::kl(s, std::vector<double>{1, 1, 1, 1}), NumericError);
  EXPECT_THROW(metrics::cc(s, std::vector<double>{1, 2}), ShapeError);
}

TEST(Metrics, EvaluateScoresFlatPredictionsAsChance) {
  const auto gt = random_map(5);
  const auto fix = random_fixations(6);
  const auto r = metrics::evaluate(std::vector<double>(64, 0.7), gt, fix);
  EXPECT_EQ(r.cc, 0.0);
  EXPECT_EQ(r.nss, 0.0);
  EXPECT_EQ(r.auc_judd, 0.5);
  const auto p = random_map(7, 64, false);
  const auto e = metrics::evaluate(p, gt, fix);
  EXPECT_EQ(e.cc, metrics::cc(gt, p));
  std::vector<double> pn(p);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : pn) v /= total;
  EXPECT_NEAR(e.sim, metrics::sim(gt, pn), 1e-15);
  EXPECT_THROW(metrics::evaluate(std::vector<double>(64, 0.0), gt, fix), NumericError);
}

TEST(Density, BlurOfImpulseIsNormalizedGaussian) {
  const std::size_t H = 21, W = 21;
  std::vector<double> fix(H * W, 0.0);
  fix[10 * W + 10] = 1.0;
  const double sigma = 1.5;
  const auto d = metrics::density_from_fixations(fix, H, W, sigma);
  EXPECT_NEAR(std::accumulate(d.begin(), d.end(), 0.0), 1.0, 1e-14);
  double z = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) z += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const double want = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / z;
      EXPECT_NEAR(d[(10 + dy) * W + 10 + dx], want, 1e-15);
    }
  EXPECT_EQ(d[0], 0.0);
  EXPECT_THROW(metrics::density_from_fixations(std::vector<double>(H * W, 0.0), H, W, sigma), NumericError);
}

TEST(Loss, TensorLossesMatchMetricValues) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = random_map(seed), p = random_map(seed + 100);
    Tensor<double> gt({1, 1, 1, 8, 8}, g), pr({1, 1, 1, 8, 8}, p);
    EXPECT_NEAR(kl_div(gt, pr).item(), metrics::kl(g, p), 1e-14);
    EXPECT_NEAR(cc(gt, pr).item(), metrics::cc(g, p), 1e-14);
    long double tb = 0;
    for (std::size_t i = 0; i < g.size(); ++i) tb += g[i] * std::log(g[i] / (p[i] + 1e-7));
    EXPECT_NEAR(kl_div(gt, pr, 1e-7, KlForm::kTextbook).item(), static_cast<double>(tb), 1e-14);
  }
}

TEST(Loss, KlOfIdenticalMapsIsWithinTwoEps) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto s = random_map(seed);
    Tensor<double> t({64}, s);
    const double v = kl_div(t, t, 1e-7).item();
    EXPECT_LE(v, 2e-7);
    EXPECT_GE(v, -64 * 1e-7);  // sum g log(1 + eps - eps / g) >= -(n - 1) eps
  }
}

TEST(Loss, CompositeCombinesKlAndCc) {
  const auto g = random_map(8);
  auto p = random_map(9, 64, false);
  Tensor<double> gt({64}, g), pr({64}, p);
  LossConfig c;
  c.lambda_kl = 0.7;
  c.lambda_cc = -0.4;
  std::vector<double> pn(p);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : pn) v /= total;
  const double want = 0.7 * metrics::kl(g, pn) - 0.4 * metrics::cc(g, p);
  EXPECT_NEAR(composite_loss(gt, pr, c).item(), want, 1e-13);
  c.lambda_cc = 0.0;
  EXPECT_NEAR(composite_loss(gt, pr, c).item(), 0.7 * metrics::kl(g, pn), 1e-13);
}

TEST(Loss, RejectsUnnormalizedOrMismatchedMaps) {
  Tensor<double> a({4}, {0.25, 0.25, 0.25, 0.25}), b({4}, {0.5, 0.5, 0.5, 0.5}), c({3}, {0.2, 0.3, 0.5});
  EXPECT_THROW(kl_div(a, b), NumericError);
  EXPECT_THROW(kl_div(a, c), ShapeError);
  EXPECT_THROW(cc(a, a), NumericError);
  EXPECT_THROW(kl_div(a, a, 0.0), NumericError);
}
