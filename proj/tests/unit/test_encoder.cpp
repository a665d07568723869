// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "scalecomm/encoder/checkpoint.hpp"
#include "scalecomm/encoder/model.hpp"
#include "scalecomm/env/warehouse.hpp"

using namespace scalecomm;
using num::Graph;
using num::Matrix;
using num::Rng;
using num::Tensor;

namespace {

enc::ModelConfig small() {
  enc::ModelConfig c;
  c.hidden_dim = 16;
  c.latent_dim = 12;
  c.message_dim = 6;
  c.attention_dim = 4;
  c.num_prototypes = 5;
  return c;
}

Tensor tensor_of(const Matrix& m) {
  Tensor t(m.rows(), m.cols());
  t.mat() = m;
  return t;
}

}  // namespace

TEST(Encoder, LatentShapeAndWidthCheck) {
  Rng rng(1);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  const std::vector<double> obs(23, 0.5);
  const Tensor z = enc::encode(obs, ps);
  EXPECT_EQ(z.rows(), 1);
  EXPECT_EQ(z.cols(), 12);
  const std::vector<double> bad(22, 0.5);
  EXPECT_THROW(enc::encode(bad, ps), StructuralError);
}

TEST(Encoder, MessagesAreUnitNorm) {
  Rng rng(2);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z = tensor_of(oracle::random_matrix(rng, 1, 12, 3.0));
    const Tensor m = enc::to_message(z, ps);
    EXPECT_NEAR(m.mat().norm(), 1.0, 1e-12);
  }
  Graph g;
  const enc::ModelView v = enc::bind_constant(g, ps);
  const Matrix batch = enc::message(v, g.constant(oracle::random_matrix(rng, 30, 12))).value();
  for (long i = 0; i < batch.rows(); ++i) EXPECT_NEAR(batch.row(i).norm(), 1.0, 1e-12);
  EXPECT_THROW(enc::to_message(Tensor(1, 12), ps), DomainError);
}

TEST(Encoder, ZeroMessageGuardIsCounted) {
  Rng rng(3);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  Graph g;
  const enc::ModelView v = enc::bind_constant(g, ps);
  long hits = 0;
  const Matrix m = enc::message(v, g.constant(Matrix::Zero(2, 12)), &hits).value();
  EXPECT_EQ(hits, 2);
  EXPECT_TRUE(m.allFinite());
}

TEST(Attention, WeightsFormASimplexOverUnmaskedSlots) {
  Rng rng(4);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<bool> mask(4);
    for (auto&& b : mask) b = rng.bernoulli(0.6);
    mask[rng.index(4)] = true;
    const Tensor z = tensor_of(oracle::random_matrix(rng, 1, 12));
    const Tensor tasks = tensor_of(oracle::random_matrix(rng, 4, 5));
    const auto a = enc::task_attention(z, tasks, mask, ps);
    double sum = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double w = a.weights(0, static_cast<long>(k));
      EXPECT_GE(w, 0.0);
      if (!mask[k]) {
        EXPECT_EQ(w, 0.0);
      }
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Attention, AllMaskedIsRejectedOrZeroInBatches) {
  Rng rng(5);
  const enc::ParamSet ps = enc::init_params(small(), rng);
  const Tensor z = tensor_of(oracle::random_matrix(rng, 1, 12));
  const Tensor tasks = tensor_of(oracle::random_matrix(rng, 4, 5));
  EXPECT_THROW(enc::task_attention(z, tasks, std::vector<bool>(4, false), ps), DomainError);
  EXPECT_THROW(enc::task_attention(z, tasks, std::vector<bool>(3, true), ps), StructuralError);
  Graph g;
  const enc::ModelView v = enc::bind_constant(g, ps);
  const auto a = enc::attend(v, g.constant(z), g.constant(tasks), Matrix::Zero(1, 4));
  EXPECT_TRUE(a.weights.value().isZero(0.0));
  EXPECT_TRUE(a.context.value().isZero(0.0));
}

TEST(Policy, MaskedSlotsAreNegativeInfinityAndSkipIsFree) {
  Rng rng(6);
  enc::ParamSet ps = enc::init_params(small(), rng);
  const Tensor z = tensor_of(oracle::random_matrix(rng, 1, 12));
  const Tensor c = tensor_of(oracle::random_matrix(rng, 1, 12));
  const Tensor tasks = tensor_of(oracle::random_matrix(rng, 4, 5));
  const auto r = enc::policy_forward(z, c, tasks, {true, false, true, false}, ps);
  EXPECT_EQ(r.logits.cols(), 5);
  EXPECT_TRUE(std::isinf(r.logits(0, 1)));
  EXPECT_TRUE(std::isinf(r.logits(0, 3)));
  EXPECT_TRUE(std::isfinite(r.logits(0, 4)));
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Policy, BiasOnlyTouchesTaskLogits) {
  Rng rng(7);
  enc::ParamSet ps = enc::init_params(small(), rng);
  ps[enc::names::kBiasW].value().mat() = oracle::random_matrix(rng, 12, 5);
  const Tensor z = tensor_of(oracle::random_matrix(rng, 1, 12));
  const Tensor c = tensor_of(oracle::random_matrix(rng, 1, 12));
  const Tensor tasks = tensor_of(oracle::random_matrix(rng, 4, 5));
  const std::vector<bool> all(4, true);
  const auto off = enc::policy_forward(z, c, tasks, all, ps, {false, 1.0});
  const auto on = enc::policy_forward(z, c, tasks, all, ps, {true, 2.0});
  const Tensor b = enc::task_bias(z, tasks, ps, 2.0);
  for (long k = 0; k < 4; ++k) EXPECT_NEAR(on.logits(0, k) - off.logits(0, k), b(0, k), 1e-12);
  EXPECT_EQ(on.logits(0, 4), off.logits(0, 4));
  // Hand value for one slot: β zᵀ W_B τ_k.
  const Matrix expect = 2.0 * z.mat() * ps[enc::names::kBiasW].value().mat() * tasks.mat().row(2).transpose();
  EXPECT_NEAR(b(0, 2), expect(0, 0), 1e-12);
}

TEST(Ema, UpdateIsConvexElementwise) {
  Rng rng(8);
  enc::ParamSet online = enc::init_params(small(), rng);
  enc::EmaTarget target{enc::init_params(small(), rng), 0.9};
  const enc::ParamSet before = target.params;
  enc::ema_update(online, target);
  for (std::size_t i = 0; i < online.size(); ++i) {
    const Matrix& a = before.all()[i].value().mat();
    const Matrix& b = online.all()[i].value().mat();
    const Matrix& t = target.params.all()[i].value().mat();
    EXPECT_LT((t - (0.9 * a + 0.1 * b)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(((t.array() >= a.cwiseMin(b).array() - 1e-15) && (t.array() <= a.cwiseMax(b).array() + 1e-15)).all());
  }
  enc::EmaTarget copy{before, 0.0};
  enc::ema_update(online, copy);
  EXPECT_TRUE(copy.params == online);
  enc::EmaTarget bad{before, 1.0};
  EXPECT_THROW(enc::ema_update(online, bad), DomainError);
}

TEST(Params, InitIsSeededAndPrototypesAreUnit) {
  Rng a(9), b(9), c(10);
  const enc::ParamSet pa = enc::init_params(small(), a), pb = enc::init_params(small(), b),
                      pc = enc::init_params(small(), c);
  EXPECT_TRUE(pa == pb);
  EXPECT_FALSE(pa == pc);
  const Matrix& p = pa[enc::names::kProto].value().mat();
  for (long i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).norm(), 1.0, 1e-12);
  EXPECT_TRUE(enc::is_encoder_param(enc::names::kEncW1));
  EXPECT_TRUE(enc::is_encoder_param(enc::names::kMsgW));
  EXPECT_FALSE(enc::is_encoder_param(enc::names::kPiW));
}

TEST(Params, ConfigValidation) {
  enc::ModelConfig c = small();
  c.obs_dim = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.num_prototypes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsExactAndShapesAreChecked) {
  Rng rng(11);
  enc::Checkpoint ck;
  ck.online = enc::init_params(small(), rng);
  ck.target = {enc::init_params(small(), rng), 0.99};
  ck.phase = "pretrain";
  const std::string text = enc::checkpoint_to_string(ck);
  const enc::Checkpoint back = enc::checkpoint_from_string(text, small());
  EXPECT_TRUE(back.online == ck.online);
  EXPECT_TRUE(back.target.params == ck.target.params);
  EXPECT_EQ(back.phase, "pretrain");
  EXPECT_EQ(enc::checkpoint_to_string(back), text);
  enc::ModelConfig other = small();
  other.latent_dim = 13;
  EXPECT_THROW(enc::checkpoint_from_string(text, other), LoadError);
  EXPECT_THROW(enc::checkpoint_from_string("{not json", small()), LoadError);
  EXPECT_THROW(enc::load_checkpoint("/nonexistent/ckpt.json", small()), MissingArtifactError);
}

TEST(GradCheck, PolicyAndAttentionPath) {
  enc::ModelConfig mc = small();
  mc.hidden_dim = 5;
  mc.latent_dim = 4;
  mc.attention_dim = 3;
  Rng rng(12);
  enc::ParamSet ps = enc::init_params(mc, rng);
  ps[enc::names::kBiasW].value().mat() = oracle::random_matrix(rng, 4, 5, 0.3);
  ps[enc::names::kPiW].value().mat() = oracle::random_matrix(rng, 8, 5, 0.3);
  const Matrix obs = oracle::random_matrix(rng, 8, 23, 0.5);
  Matrix mask = Matrix::Ones(8, 4);
  mask(1, 2) = mask(5, 0) = mask(5, 3) = 0.0;
  auto build = [&](Graph& g) {
    const enc::ModelView v = enc::bind(g, ps);
    const enc::Encoded e = enc::encode(v, g.constant(obs));
    num::Var tasks = g.constant(enc::task_rows(obs, 4));
    const enc::Attention att = enc::attend(v, e.latent, tasks, mask);
    const enc::PolicyHeads h = enc::policy_heads(v, e.latent, att.context, tasks, mask, {true, 1.5});
    Matrix amask = h.action_mask;
    return num::add(num::sum(num::mul(num::softmax_rows(h.logits, &amask), h.logits)), num::sum(num::square(h.value)));
  };
  const auto res = oracle::grad_check(build, ps.select([](const std::string&) { return true; }));
  EXPECT_LE(res.worst_rel_error, 1e-4) << res.worst_param;
}
