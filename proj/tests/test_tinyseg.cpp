// Copyright 2026 The BobQC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bobqc/errors.hpp"
#include "bobqc/reference.hpp"
#include "bobqc/rng.hpp"
#include "bobqc/tinyseg.hpp"
#include "bobqc/volume.hpp"
#include "test_util.hpp"

using namespace bobqc;
using testutil::TempDir;

namespace {

ScalarVolume random_input(Rng& rng, int side, Spacing s = {1, 1, 1}) {
  ScalarVolume v = make_scalar_volume({side, side, side}, s);
  for (double& x : v.voxels) x = rng.uniform(-1.0, 1.0);
  return v;
}

LabelVolume random_labels(Rng& rng, int side, int num_classes,
                          Spacing s = {1, 1, 1}) {
  LabelVolume v = make_label_volume({side, side, side}, s);
  for (std::uint16_t& x : v.voxels)
    x = static_cast<std::uint16_t>(
        rng.next_below(static_cast<std::uint64_t>(num_classes)));
  return v;
}

bool params_equal(const TinySegParams& a, const TinySegParams& b) {
  const auto conv_eq = [](const ConvLayer& x, const ConvLayer& y) {
    return x.cin == y.cin && x.cout == y.cout && x.ksize == y.ksize &&
           x.w == y.w && x.b == y.b;
  };
  const auto bn_eq = [](const BnLayer& x, const BnLayer& y) {
    return x.gamma == y.gamma && x.beta == y.beta &&
           x.running_mean == y.running_mean && x.running_var == y.running_var;
  };
  return a.num_classes == b.num_classes && a.seed == b.seed &&
         conv_eq(a.conv1, b.conv1) && conv_eq(a.conv2, b.conv2) &&
         conv_eq(a.conv3, b.conv3) && conv_eq(a.head, b.head) &&
         bn_eq(a.bn1, b.bn1) && bn_eq(a.bn2, b.bn2) && bn_eq(a.bn3, b.bn3);
}

// Collects pointers to every trainable scalar together with the matching
// gradient entry, so gradient checks can sweep arbitrary subsets.
struct ParamRef {
  double* value;
  const double* grad;
};

std::vector<ParamRef> all_refs(TinySegParams& p, const TinySegGrads& g) {
  std::vector<ParamRef> out;
  const auto conv = [&](ConvLayer& lp, const ConvLayer& lg) {
    for (std::size_t i = 0; i < lp.w.size(); ++i)
      out.push_back({&lp.w[i], &lg.w[i]});
    for (std::size_t i = 0; i < lp.b.size(); ++i)
      out.push_back({&lp.b[i], &lg.b[i]});
  };
  const auto bn = [&](BnLayer& lp, const std::vector<double>& gg,
                      const std::vector<double>& gb) {
    for (std::size_t i = 0; i < lp.gamma.size(); ++i)
      out.push_back({&lp.gamma[i], &gg[i]});
    for (std::size_t i = 0; i < lp.beta.size(); ++i)
      out.push_back({&lp.beta[i], &gb[i]});
  };
  conv(p.conv1, g.conv1);
  bn(p.bn1, g.bn1_gamma, g.bn1_beta);
  conv(p.conv2, g.conv2);
  bn(p.bn2, g.bn2_gamma, g.bn2_beta);
  conv(p.conv3, g.conv3);
  bn(p.bn3, g.bn3_gamma, g.bn3_beta);
  conv(p.head, g.head);
  return out;
}

}  // namespace

TEST_CASE("initialization is deterministic and follows the declared scheme") {
  const TinySegParams a = init_params(42, 3);
  const TinySegParams b = init_params(42, 3);
  const TinySegParams c = init_params(43, 3);
  CHECK(params_equal(a, b));
  CHECK_FALSE(params_equal(a, c));

  CHECK(a.conv1.cin == 1);
  CHECK(a.conv1.cout == 8);
  CHECK(a.conv2.cout == 8);
  CHECK(a.conv3.cout == 16);
  CHECK(a.head.cout == 3);
  CHECK(a.head.ksize == 1);
  CHECK(a.conv1.w.size() == 8 * 27);
  CHECK(a.conv3.w.size() == 16 * 8 * 27);
  CHECK(a.head.w.size() == 3 * 16);

  const auto check_layer = [](const ConvLayer& l) {
    const double bound = std::sqrt(6.0 / (l.cin * l.ksize * l.ksize * l.ksize));
    for (double w : l.w) {
      CHECK(w >= -bound);
      CHECK(w <= bound);
    }
    for (double bv : l.b) CHECK(bv == 0.0);
  };
  check_layer(a.conv1);
  check_layer(a.conv2);
  check_layer(a.conv3);
  check_layer(a.head);

  for (const BnLayer* bnl : {&a.bn1, &a.bn2, &a.bn3}) {
    for (double g : bnl->gamma) CHECK(g == 1.0);
    for (double v : bnl->beta) CHECK(v == 0.0);
    for (double v : bnl->running_mean) CHECK(v == 0.0);
    for (double v : bnl->running_var) CHECK(v == 1.0);
  }
  CHECK_THROWS_AS(init_params(1, 1), config_error);
}

TEST_CASE("forward produces a normalized probability field") {
  Rng rng(7);
  TinySegParams params = init_params(3, 4);
  const std::vector<ScalarVolume> batch{random_input(rng, 5),
                                        random_input(rng, 5)};
  const auto probs = forward(params, batch, RunMode::kTrain, nullptr);
  REQUIRE(probs.size() == 2);
  for (const ProbVolume& p : probs) {
    CHECK(p.channels == 4);
    CHECK(p.dims == batch[0].dims);
    CHECK(p.is_normalized(1e-9));
  }
}

TEST_CASE("zero input yields the uniform field through zero-bias layers") {
  TinySegParams params = init_params(5, 4);
  const ScalarVolume zeros = make_scalar_volume({4, 4, 4}, {1, 1, 1});
  for (RunMode mode : {RunMode::kTrain, RunMode::kEval}) {
    const auto probs = forward(params, {zeros}, mode, nullptr);
    for (double v : probs[0].values) CHECK(v == 0.25);
  }
}

TEST_CASE("repeated forwards are bitwise deterministic") {
  Rng rng(8);
  TinySegParams p1 = init_params(11, 3);
  TinySegParams p2 = init_params(11, 3);
  const std::vector<ScalarVolume> batch{random_input(rng, 6)};
  const auto a = forward(p1, batch, RunMode::kTrain, nullptr);
  const auto b = forward(p2, batch, RunMode::kTrain, nullptr);
  CHECK(a[0].values == b[0].values);
}

TEST_CASE("running statistics fold with momentum 0.1") {
  Rng rng(9);
  TinySegParams params = init_params(2, 3);
  const std::vector<ScalarVolume> batch{random_input(rng, 5)};
  ForwardCache cache;
  forward(params, batch, RunMode::kTrain, &cache);
  REQUIRE(cache.valid);

  // From the initial (0, 1) statistics: new = 0.9*old + 0.1*batch.
  for (std::size_t c = 0; c < params.bn1.running_mean.size(); ++c) {
    CHECK(params.bn1.running_mean[c] ==
          doctest::Approx(0.1 * cache.mean1[c]).epsilon(1e-15));
    CHECK(params.bn1.running_var[c] ==
          doctest::Approx(0.9 + 0.1 * cache.var1[c]).epsilon(1e-15));
  }

  const std::vector<double> rm1 = params.bn1.running_mean;
  const std::vector<double> rv1 = params.bn1.running_var;
  ForwardCache cache2;
  forward(params, batch, RunMode::kAdapt, &cache2);  // adapt commits too
  for (std::size_t c = 0; c < rm1.size(); ++c) {
    CHECK(params.bn1.running_mean[c] ==
          doctest::Approx(0.9 * rm1[c] + 0.1 * cache2.mean1[c]).epsilon(1e-15));
    CHECK(params.bn1.running_var[c] ==
          doctest::Approx(0.9 * rv1[c] + 0.1 * cache2.var1[c]).epsilon(1e-15));
  }
}

TEST_CASE("batch variance is the biased estimate") {
  // Two samples of one voxel each: the batch for channel statistics has
  // M = 2 entries; biased variance divides by M, not M-1.
  TinySegParams params = init_params(4, 2);
  // Force conv1 to pass the raw input to channel 0: center tap 1, rest 0.
  std::fill(params.conv1.w.begin(), params.conv1.w.end(), 0.0);
  params.conv1.w[13] = 1.0;  // channel 0 center tap
  ScalarVolume a = make_scalar_volume({1, 1, 1}, {1, 1, 1});
  ScalarVolume b = a;
  a.voxels[0] = 1.0;
  b.voxels[0] = 3.0;
  ForwardCache cache;
  forward(params, {a, b}, RunMode::kTrain, &cache);
  CHECK(cache.mean1[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cache.var1[0] == doctest::Approx(1.0).epsilon(1e-15));  // ((1)^2+(1)^2)/2
}

TEST_CASE("eval forward leaves parameters bitwise untouched") {
  Rng rng(10);
  TinySegParams params = init_params(6, 3);
  // Give the running stats a non-trivial state first.
  const std::vector<ScalarVolume> batch{random_input(rng, 5)};
  forward(params, batch, RunMode::kTrain, nullptr);
  const TinySegParams before = params;
  forward(params, batch, RunMode::kEval, nullptr);
  CHECK(params_equal(params, before));
  // The frozen-stats forward is pure as well.
  forward_frozen_stats(params, batch, nullptr);
  CHECK(params_equal(params, before));
}

TEST_CASE("frozen-stats forward matches train-mode probabilities") {
  Rng rng(12);
  TinySegParams p1 = init_params(13, 3);
  TinySegParams p2 = init_params(13, 3);
  const std::vector<ScalarVolume> batch{random_input(rng, 5)};
  const auto a = forward(p1, batch, RunMode::kTrain, nullptr);
  const auto b = forward_frozen_stats(p2, batch, nullptr);
  CHECK(a[0].values == b[0].values);
}

TEST_CASE("first conv stage agrees with the reference convolution") {
  Rng rng(14);
  TinySegParams params = init_params(21, 3);
  const ScalarVolume x = random_input(rng, 6);
  ForwardCache cache;
  forward_frozen_stats(params, {x}, &cache);

  const std::int64_t nvox = x.dims.count();
  std::vector<double> want(static_cast<std::size_t>(8 * nvox));
  ref::conv3x3x3(x.voxels.data(), 1, params.conv1.w.data(),
                 params.conv1.b.data(), 8, x.dims, want.data());
  REQUIRE(cache.z1.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(cache.z1[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("supervised loss on a hand-built probability field") {
  // Single voxel, C = 2, p(true class 1) = 0.8.
  ProbVolume p = make_prob_volume({1, 1, 1}, {1, 1, 1}, 2);
  p.values = {0.2, 0.8};
  LabelVolume y = make_label_volume({1, 1, 1}, {1, 1, 1});
  y.voxels[0] = 1;

  const LossTerms t = loss_supervised({p}, {&y}, 1.0, 1.0);
  const double ce = -std::log(0.8);
  const double s = kDiceSmooth;
  const double d0 = s / (0.2 + s);                // class 0 absent in gt
  const double d1 = (2 * 0.8 + s) / (1.8 + s);
  const double dice_term = 1.0 - 0.5 * (d0 + d1);
  CHECK(t.cross_entropy == doctest::Approx(ce).epsilon(1e-14));
  CHECK(t.dice == doctest::Approx(dice_term).epsilon(1e-12));
  CHECK(t.total == doctest::Approx(ce + dice_term).epsilon(1e-12));

  SUBCASE("weights scale the terms") {
    const LossTerms w = loss_supervised({p}, {&y}, 2.0, 0.5);
    CHECK(w.total == doctest::Approx(2.0 * ce + 0.5 * dice_term).epsilon(1e-12));
  }
  SUBCASE("label outside the class range") {
    y.voxels[0] = 2;
    CHECK_THROWS_AS(loss_supervised({p}, {&y}, 1.0, 1.0), data_error);
  }
}

TEST_CASE("one-hot prediction matching the labels has near-zero loss") {
  Rng rng(15);
  const LabelVolume y = random_labels(rng, 4, 3);
  ProbVolume p = make_prob_volume(y.dims, y.spacing, 3);
  const double lo = 1e-12;
  for (std::int64_t i = 0; i < y.dims.count(); ++i) {
    for (int c = 0; c < 3; ++c)
      p.values[static_cast<std::size_t>(c + 3 * i)] = lo;
    p.values[static_cast<std::size_t>(y.voxels[static_cast<std::size_t>(i)] +
                                      3 * i)] = 1.0 - 2 * lo;
  }
  const LossTerms t = loss_supervised({p}, {&y});
  CHECK(t.cross_entropy < 1e-10);
  CHECK(t.dice < 1e-4);  // bounded by the smoothing constant
}

TEST_CASE("supervised gradients match finite differences on a subset") {
  Rng rng(16);
  TinySegParams params = init_params(99, 3);
  const std::vector<ScalarVolume> batch{random_input(rng, 5),
                                        random_input(rng, 5)};
  std::vector<LabelVolume> labels{random_labels(rng, 5, 3),
                                  random_labels(rng, 5, 3)};
  const std::vector<const LabelVolume*> lptr{&labels[0], &labels[1]};

  ForwardCache cache;
  forward_frozen_stats(params, batch, &cache);
  const TinySegGrads grads =
      backward_supervised(params, cache, lptr, 1.0, 1.0);

  auto refs = all_refs(params, grads);
  // Small step: with batch-normalized preactivations some ReLU inputs sit
  // near zero, and a wider window would straddle the kink and corrupt the
  // finite difference. The acceptance suite runs a wider-step sweep on a
  // fixture that keeps every ReLU away from its kink.
  const double h = 1e-6;
  // Deterministic stride over all tensors keeps the runtime small while
  // still touching every layer.
  const std::size_t stride = refs.size() / 60 + 1;
  for (std::size_t i = 0; i < refs.size(); i += stride) {
    double* v = refs[i].value;
    const double saved = *v;
    *v = saved + h;
    const double up =
        loss_supervised(forward_frozen_stats(params, batch, nullptr), lptr)
            .total;
    *v = saved - h;
    const double dn =
        loss_supervised(forward_frozen_stats(params, batch, nullptr), lptr)
            .total;
    *v = saved;
    const double fd = (up - dn) / (2 * h);
    const double an = *refs[i].grad;
    const double rel =
        std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("backward requires a valid cache") {
  TinySegParams params = init_params(1, 3);
  ForwardCache cache;  // never filled
  std::vector<const LabelVolume*> none;
  CHECK_THROWS_AS(backward_supervised(params, cache, none), config_error);
  CHECK_THROWS_AS(backward_entropy(params, cache), config_error);
}

TEST_CASE("parameter partition round trips") {
  TinySegParams params = init_params(77, 4);
  const std::vector<double> fixed = theta_fixed(params);
  // conv1 + conv2 + conv3 + head weights and biases.
  const std::size_t want_fixed = (8 * 27 + 8) + (8 * 8 * 27 + 8) +
                                 (16 * 8 * 27 + 16) + (4 * 16 + 4);
  CHECK(fixed.size() == want_fixed);

  std::vector<double> affine = theta_bn_affine(params);
  CHECK(affine.size() == 2 * (8 + 8 + 16));
  for (double& v : affine) v += 0.125;
  set_theta_bn_affine(params, affine);
  CHECK(theta_bn_affine(params) == affine);
  CHECK(theta_fixed(params) == fixed);  // unaffected by the affine update
  CHECK(params.bn1.gamma[0] == 1.125);
  CHECK(params.bn3.beta[15] == 0.125);

  affine.pop_back();
  CHECK_THROWS_AS(set_theta_bn_affine(params, affine), config_error);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir tmp("ckpt");
  Rng rng(17);
  TinySegParams params = init_params(123, 5);
  // Perturb everything so the round trip is not trivially the init state.
  const std::vector<ScalarVolume> batch{random_input(rng, 5)};
  forward(params, batch, RunMode::kTrain, nullptr);
  for (double& w : params.conv2.w) w += rng.uniform(-0.01, 0.01);
  for (double& g : params.bn2.gamma) g += 0.01;

  const std::string p = tmp.str("net.bin");
  save_checkpoint(params, p);
  const TinySegParams back = load_checkpoint(p);
  CHECK(params_equal(params, back));

  // Byte-identical on re-save.
  const std::string p2 = tmp.str("net2.bin");
  save_checkpoint(back, p2);
  CHECK(testutil::slurp(p) == testutil::slurp(p2));
}

TEST_CASE("checkpoint rejects malformed files") {
  TempDir tmp("ckpt");
  const TinySegParams params = init_params(5, 3);
  const std::string p = tmp.str("net.bin");
  save_checkpoint(params, p);
  const auto original = testutil::slurp(p);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(tmp.str("none.bin")), io_error);
  }
  SUBCASE("bad magic") {
    testutil::patch_bytes(p, 0, {'X', 'Q', 'C', 'K'});
    CHECK_THROWS_AS(load_checkpoint(p), data_error);
  }
  SUBCASE("unsupported version") {
    testutil::patch_bytes(p, 4, {9, 0, 0, 0});
    CHECK_THROWS_AS(load_checkpoint(p), data_error);
  }
  SUBCASE("truncated tensor data") {
    testutil::truncate_file(p, static_cast<std::streamoff>(original.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(p), data_error);
  }
  SUBCASE("trailing bytes") {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out.put('\0');
    out.close();
    CHECK_THROWS_AS(load_checkpoint(p), data_error);
  }
}

TEST_CASE("training reduces the loss on a learnable toy problem") {
  // Threshold task: class 1 where the smoothed intensity is positive.
  Rng rng(18);
  std::vector<std::pair<ScalarVolume, LabelVolume>> dataset;
  for (int i = 0; i < 4; ++i) {
    ScalarVolume x = random_input(rng, 6);
    LabelVolume y = make_label_volume(x.dims, x.spacing);
    for (std::size_t j = 0; j < x.voxels.size(); ++j)
      y.voxels[j] = x.voxels[j] > 0.0 ? 1 : 0;
    dataset.emplace_back(std::move(x), std::move(y));
  }

  TinySegParams params = init_params(1, 2);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 12;
  cfg.batch_size = 2;
  cfg.seed = 4;
  const TrainResult r = train(params, dataset, cfg);
  REQUIRE(r.epoch_loss.size() == 12);
  CHECK(r.epoch_loss.back() < 0.7 * r.epoch_loss.front());
}

TEST_CASE("training is deterministic in the seed") {
  Rng rng(19);
  std::vector<std::pair<ScalarVolume, LabelVolume>> dataset;
  for (int i = 0; i < 3; ++i)
    dataset.emplace_back(random_input(rng, 5), random_labels(rng, 5, 2));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 21;

  TinySegParams a = init_params(2, 2);
  TinySegParams b = init_params(2, 2);
  const TrainResult ra = train(a, dataset, cfg);
  const TrainResult rb = train(b, dataset, cfg);
  CHECK(params_equal(a, b));
  CHECK(ra.epoch_loss == rb.epoch_loss);
}

TEST_CASE("zero learning rate leaves weights unchanged but commits stats") {
  Rng rng(20);
  std::vector<std::pair<ScalarVolume, LabelVolume>> dataset;
  dataset.emplace_back(random_input(rng, 5), random_labels(rng, 5, 2));
  TinySegParams params = init_params(3, 2);
  const std::vector<double> fixed0 = theta_fixed(params);
  const std::vector<double> affine0 = theta_bn_affine(params);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  train(params, dataset, cfg);
  CHECK(theta_fixed(params) == fixed0);
  CHECK(theta_bn_affine(params) == affine0);
  // Running statistics still move: the forward pass ran in train mode.
  bool stats_moved = false;
  for (double v : params.bn1.running_mean) stats_moved |= (v != 0.0);
  CHECK(stats_moved);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("negative lr") {
    cfg.lr = -1e-4;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("beta out of range") {
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("zero batch") {
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
  SUBCASE("negative epochs") {
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), config_error);
  }
}

TEST_CASE("forward input validation") {
  TinySegParams params = init_params(1, 2);
  SUBCASE("empty batch") {
    CHECK_THROWS_AS(forward(params, {}, RunMode::kTrain, nullptr), data_error);
  }
  SUBCASE("mismatched dims in batch") {
    const ScalarVolume a = make_scalar_volume({4, 4, 4}, {1, 1, 1});
    const ScalarVolume b = make_scalar_volume({5, 4, 4}, {1, 1, 1});
    CHECK_THROWS_AS(forward(params, {a, b}, RunMode::kTrain, nullptr),
                    data_error);
  }
  SUBCASE("non-finite input") {
    ScalarVolume a = make_scalar_volume({4, 4, 4}, {1, 1, 1});
    a.voxels[10] = std::nan("");
    CHECK_THROWS_AS(forward(params, {a}, RunMode::kTrain, nullptr), data_error);
  }
  SUBCASE("single-voxel single-sample batch statistics are degenerate") {
    const ScalarVolume a = make_scalar_volume({1, 1, 1}, {1, 1, 1});
    CHECK_THROWS_AS(forward(params, {a}, RunMode::kTrain, nullptr), data_error);
    // Eval mode has no batch statistics and accepts it.
    CHECK_NOTHROW(forward(params, {a}, RunMode::kEval, nullptr));
  }
}
