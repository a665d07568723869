// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/QR>

#include "oracles.hpp"
#include "scalecomm/eval/evaluate.hpp"

using namespace scalecomm;
using num::Index;
using num::Matrix;
using num::Rng;

namespace {

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(rng.index(k));
  return v;
}

enc::ModelConfig small() {
  enc::ModelConfig c;
  c.hidden_dim = 16;
  c.latent_dim = 8;
  c.message_dim = 6;
  c.attention_dim = 4;
  c.num_prototypes = 5;
  return c;
}

}  // namespace

TEST(Cka, MatchesLoopOracleOnFiftyInstances) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const long n = 5 + static_cast<long>(rng.index(40));
    const Matrix x = oracle::random_matrix(rng, n, 1 + static_cast<long>(rng.index(7)));
    const Matrix y = oracle::random_matrix(rng, n, 1 + static_cast<long>(rng.index(7)));
    EXPECT_NEAR(eval::linear_cka(x, y), oracle::cka(oracle::rows_of(x), oracle::rows_of(y)), 1e-10);
  }
}

TEST(Cka, InvariancesAndBounds) {
  Rng rng(2);
  const Matrix x = oracle::random_matrix(rng, 30, 5), y = oracle::random_matrix(rng, 30, 4);
  EXPECT_NEAR(eval::linear_cka(x, x), 1.0, 1e-12);
  const double base = eval::linear_cka(x, y);
  EXPECT_GE(base, 0.0);
  EXPECT_LE(base, 1.0);
  // Orthogonal transform, isotropic scale and translation leave CKA unchanged.
  const Eigen::HouseholderQR<Matrix> qr(oracle::random_matrix(rng, 5, 5));
  const Matrix q = qr.householderQ();
  Matrix moved = 3.5 * x * q;
  moved.rowwise() += Eigen::RowVectorXd::Constant(5, 7.0);
  EXPECT_NEAR(eval::linear_cka(moved, y), base, 1e-10);
  EXPECT_NEAR(eval::linear_cka(x, y), eval::linear_cka(y, x), 1e-12);
  EXPECT_THROW(eval::linear_cka(Matrix::Ones(10, 3), y.topRows(10)), DomainError);
  EXPECT_THROW(eval::linear_cka(x, y.topRows(10)), DomainError);
}

TEST(Nmi, MatchesContingencyOracleOnFiftyInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng.index(200);
    const auto a = random_labels(rng, n, 2 + rng.index(6));
    auto b = random_labels(rng, n, 2 + rng.index(6));
    // Correlate half the instances so the values are not all near zero.
    if (trial % 2 == 0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.bernoulli(0.7)) b[i] = a[i];
      }
    }
    EXPECT_NEAR(eval::nmi(a, b), oracle::nmi(a, b), 1e-10);
  }
}

TEST(Nmi, IdentitiesAndErrors) {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(eval::nmi(a, a), 1.0, 1e-12);
  EXPECT_NEAR(eval::nmi(a, {7, 7, 3, 3, 9, 9}), 1.0, 1e-12);  // relabelling
  EXPECT_NEAR(eval::nmi(a, {0, 0, 0, 0, 0, 0}), 0.0, 0.0);
  EXPECT_NEAR(eval::nmi({0, 1, 0, 1}, {0, 0, 1, 1}), 0.0, 1e-12);  // independent
  EXPECT_THROW(eval::nmi(a, {0, 1}), StructuralError);
  EXPECT_THROW(eval::nmi({}, {}), DomainError);
}

TEST(ProtoNmi, MatchesArgmaxOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const long n = 20 + static_cast<long>(rng.index(60));
    const Matrix m = oracle::random_matrix(rng, n, 6);
    const Matrix p = oracle::random_matrix(rng, 4, 6);
    auto labels = random_labels(rng, static_cast<std::size_t>(n), 4);
    labels[0] = 0;
    labels[1] = 1;
    EXPECT_NEAR(eval::proto_nmi(m, p, labels), oracle::proto_nmi(oracle::rows_of(m), oracle::rows_of(p), labels),
                1e-10);
  }
  const Matrix m = oracle::random_matrix(rng, 10, 6), p = oracle::random_matrix(rng, 4, 6);
  EXPECT_THROW(eval::proto_nmi(m, p, std::vector<int>(10, 2)), DomainError);
  EXPECT_THROW(eval::proto_nmi(m, p, std::vector<int>(9, 2)), StructuralError);
}

TEST(Retrieval, PerfectAlignmentAndChance) {
  Rng rng(5);
  const Matrix m = oracle::random_matrix(rng, 200, 8);
  EXPECT_EQ(eval::recall_at_1(m, 2.0 * m), 1.0);
  // Independent random keys: chance is 1/M.
  double sum = 0;
  for (int t = 0; t < 20; ++t) sum += eval::recall_at_1(m, oracle::random_matrix(rng, 200, 8));
  EXPECT_LT(sum / 20, 0.03);
  EXPECT_THROW(eval::recall_at_1(m.topRows(1), m.topRows(1)), DomainError);
  EXPECT_THROW(eval::recall_at_1(m, m.topRows(100)), StructuralError);
}

TEST(Retrieval, TemporalUsesOnlyRowsWithSuccessors) {
  Rng rng(6);
  const Matrix z = oracle::random_matrix(rng, 6, 4);
  Matrix pred = oracle::random_matrix(rng, 6, 4);
  const std::vector<long> succ{2, 3, 4, -1, -1, -1};
  pred.row(0) = z.row(2);
  pred.row(1) = z.row(3);
  pred.row(2) = z.row(0);  // wrong on purpose
  EXPECT_NEAR(eval::temporal_at_1(pred, z, succ), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(eval::temporal_at_1(pred, z, std::vector<long>(6, -1)), DomainError);
}

TEST(Probe, SeparableDataBeatsChanceAndNoiseDoesNot) {
  Rng rng(7);
  const long n = 400;
  Matrix x(n, 5);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 4);
    y[static_cast<std::size_t>(i)] = c;
    for (long j = 0; j < 5; ++j) x(i, j) = rng.normal(0.0, 0.3) + (j == c ? 3.0 : 0.0);
  }
  EXPECT_GT(eval::probe_accuracy(x, y, 1), 0.95);
  const double noise = eval::probe_accuracy(oracle::random_matrix(rng, n, 5), y, 1);
  EXPECT_LT(noise, 0.4);
  EXPECT_EQ(eval::probe_accuracy(x, y, 9), eval::probe_accuracy(x, y, 9));
  EXPECT_THROW(eval::probe_accuracy(x.topRows(10), std::vector<int>(y.begin(), y.begin() + 10), 1), DomainError);
  EXPECT_THROW(eval::probe_accuracy(x, std::vector<int>(static_cast<std::size_t>(n), 1), 1), DomainError);
}

TEST(Kpis, SummaryUsesSampleStandardDeviation) {
  std::vector<env::EpisodeKpis> eps(3);
  eps[0].deliveries = 2;
  eps[1].deliveries = 4;
  eps[2].deliveries = 6;
  eps[0].unassigned_pct = 10;
  eps[1].unassigned_pct = 20;
  eps[2].unassigned_pct = 30;
  const auto s = eval::summarize(eps);
  EXPECT_EQ(s.deliveries_mean, 4.0);
  EXPECT_NEAR(s.deliveries_sd, 2.0, 1e-15);
  EXPECT_EQ(s.unassigned_pct, 20.0);
  EXPECT_EQ(s.episodes, 3);
}

TEST(Evaluate, DeterministicAndInRange) {
  Rng rng(8);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  eval::EvalConfig cfg;
  cfg.episodes = 2;
  cfg.steps = 40;
  cfg.kpi_episodes = 2;
  env::EnvConfig ec;
  ec.episode_length = 40;
  const auto a = eval::evaluate(ps, ec, cfg, 3, 11), b = eval::evaluate(ps, ec, cfg, 3, 11);
  EXPECT_EQ(eval::to_json(a.metrics).dump(), eval::to_json(b.metrics).dump());
  EXPECT_EQ(eval::to_json(a.kpis).dump(), eval::to_json(b.kpis).dump());
  for (double v : {a.metrics.r_at_1, a.metrics.temp_at_1, a.metrics.proto_nmi, a.metrics.probe_acc, a.metrics.cka_mz}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a.kpis.episodes, 2);
  cfg.steps = 0;
  EXPECT_THROW(eval::evaluate(ps, ec, cfg, 3, 11), ConfigError);
}
