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

#include "bobqc/tinyseg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bobqc/errors.hpp"
#include "bobqc/parallel.hpp"
#include "bobqc/rng.hpp"

namespace bobqc {

namespace {

constexpr int kStage1 = 8, kStage2 = 8, kStage3 = 16;
constexpr double kAdamEpsilon = 1e-8;

std::size_t act_size(int batch, int channels, std::int64_t nvox) {
  return static_cast<std::size_t>(batch) * static_cast<std::size_t>(channels) *
         static_cast<std::size_t>(nvox);
}

// Value index for activation tensors: sample-major, then channel planes.
inline std::int64_t at(int b, int c, int channels, std::int64_t nvox,
                       std::int64_t i) {
  return (static_cast<std::int64_t>(b) * channels + c) * nvox + i;
}

ConvLayer make_conv(int cin, int cout, int ksize) {
  ConvLayer L;
  L.cin = cin;
  L.cout = cout;
  L.ksize = ksize;
  L.w.assign(static_cast<std::size_t>(cout) * cin * ksize * ksize * ksize, 0.0);
  L.b.assign(static_cast<std::size_t>(cout), 0.0);
  return L;
}

BnLayer make_bn(int channels) {
  BnLayer bn;
  bn.gamma.assign(static_cast<std::size_t>(channels), 1.0);
  bn.beta.assign(static_cast<std::size_t>(channels), 0.0);
  bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
  bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
  return bn;
}

void check_finite(const std::vector<double>& values, int stage) {
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  int bad = 0;
#pragma omp parallel for schedule(static) reduction(| : bad)
  for (std::int64_t i = 0; i < n; ++i)
    bad |= !std::isfinite(values[static_cast<std::size_t>(i)]);
  if (bad)
    throw numeric_error("non-finite activations after layer " +
                        std::to_string(stage));
}

void conv3_forward(const ConvLayer& L, const double* in, double* out, int batch,
                   const Dims& d) {
  const std::int64_t nvox = d.count();
  for (int b = 0; b < batch; ++b) {
    const double* src = in + static_cast<std::int64_t>(b) * L.cin * nvox;
    double* dst = out + static_cast<std::int64_t>(b) * L.cout * nvox;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < L.cout; ++co)
      for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
          for (int x = 0; x < d.nx; ++x) {
            double acc = L.b[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < L.cin; ++ci) {
              const double* plane = src + static_cast<std::int64_t>(ci) * nvox;
              const double* w = L.w.data() +
                                static_cast<std::size_t>(co * L.cin + ci) * 27;
              for (int kz = -1; kz <= 1; ++kz)
                for (int ky = -1; ky <= 1; ++ky)
                  for (int kx = -1; kx <= 1; ++kx) {
                    const int sx = x + kx, sy = y + ky, sz = z + kz;
                    if (!d.contains(sx, sy, sz)) continue;
                    acc += plane[d.index(sx, sy, sz)] *
                           w[(kz + 1) * 9 + (ky + 1) * 3 + (kx + 1)];
                  }
            }
            dst[static_cast<std::int64_t>(co) * nvox + d.index(x, y, z)] = acc;
          }
  }
}

void conv1_forward(const ConvLayer& L, const double* in, double* out, int batch,
                   std::int64_t nvox) {
  for (int b = 0; b < batch; ++b) {
    const double* src = in + static_cast<std::int64_t>(b) * L.cin * nvox;
    double* dst = out + static_cast<std::int64_t>(b) * L.cout * nvox;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < nvox; ++i)
      for (int co = 0; co < L.cout; ++co) {
        double acc = L.b[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < L.cin; ++ci)
          acc += src[ci * nvox + i] *
                 L.w[static_cast<std::size_t>(co * L.cin + ci)];
        dst[co * nvox + i] = acc;
      }
  }
}

// Normalize z with the given statistics, apply the affine and ReLU.
void bn_relu_apply(const BnLayer& bn, const std::vector<double>& mean,
                   const std::vector<double>& var, const double* z, double* y,
                   int batch, int channels, std::int64_t nvox) {
  const std::int64_t total = static_cast<std::int64_t>(batch) * channels * nvox;
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < total; ++j) {
    const int c = static_cast<int>((j / nvox) % channels);
    const double inv = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + kBnEpsilon);
    const double u = (z[j] - mean[static_cast<std::size_t>(c)]) * inv *
                         bn.gamma[static_cast<std::size_t>(c)] +
                     bn.beta[static_cast<std::size_t>(c)];
    y[j] = u > 0 ? u : 0.0;
  }
}

void batch_stats(const double* z, int batch, int channels, std::int64_t nvox,
                 std::vector<double>* mean, std::vector<double>* var) {
  const std::int64_t m = static_cast<std::int64_t>(batch) * nvox;
  mean->resize(static_cast<std::size_t>(channels));
  var->resize(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    auto value = [&](std::int64_t j) {
      const int b = static_cast<int>(j / nvox);
      const std::int64_t i = j % nvox;
      return z[at(b, c, channels, nvox, i)];
    };
    const double mu = blocked_sum(m, value) / static_cast<double>(m);
    const double ss = blocked_sum(m, [&](std::int64_t j) {
                        const double d = value(j) - mu;
                        return d * d;
                      }) /
                      static_cast<double>(m);
    (*mean)[static_cast<std::size_t>(c)] = mu;
    (*var)[static_cast<std::size_t>(c)] = ss;
  }
}

struct StageStats {
  std::vector<double> mean1, var1, mean2, var2, mean3, var3;
};

// One full forward. With use_batch_stats the BN layers normalize by batch
// statistics (cached for backward); otherwise by running statistics.
std::vector<ProbVolume> run_forward(const TinySegParams& P,
                                    const std::vector<ScalarVolume>& batch,
                                    bool use_batch_stats, ForwardCache* cache,
                                    StageStats* stats_out) {
  if (batch.empty()) throw data_error("forward needs at least one volume");
  const Dims d = batch[0].dims;
  const Spacing sp = batch[0].spacing;
  for (const ScalarVolume& v : batch) {
    if (!(v.dims == d) || !(v.spacing == sp))
      throw data_error("batch volumes must share dims and spacing");
    if (static_cast<std::int64_t>(v.voxels.size()) != d.count())
      throw data_error("volume buffer does not match its dims");
    if (!v.all_finite()) throw data_error("non-finite input intensities");
  }
  const int B = static_cast<int>(batch.size());
  const std::int64_t nvox = d.count();
  if (use_batch_stats && static_cast<std::int64_t>(B) * nvox < 2)
    throw data_error("batch statistics need at least two positions");
  const int C = P.num_classes;

  std::vector<double> input(act_size(B, 1, nvox));
  for (int b = 0; b < B; ++b)
    std::copy(batch[static_cast<std::size_t>(b)].voxels.begin(),
              batch[static_cast<std::size_t>(b)].voxels.end(),
              input.begin() + static_cast<std::int64_t>(b) * nvox);

  std::vector<double> z1(act_size(B, kStage1, nvox));
  std::vector<double> y1(z1.size());
  std::vector<double> z2(act_size(B, kStage2, nvox));
  std::vector<double> y2(z2.size());
  std::vector<double> z3(act_size(B, kStage3, nvox));
  std::vector<double> y3(z3.size());
  std::vector<double> logits(act_size(B, C, nvox));
  std::vector<double> probs(logits.size());

  StageStats st;
  auto stage = [&](const ConvLayer& conv, const BnLayer& bn, const double* in,
                   std::vector<double>& z, std::vector<double>& y,
                   std::vector<double>& mean, std::vector<double>& var,
                   int index) {
    conv3_forward(conv, in, z.data(), B, d);
    check_finite(z, index);
    if (use_batch_stats) {
      batch_stats(z.data(), B, conv.cout, nvox, &mean, &var);
    } else {
      mean = bn.running_mean;
      var = bn.running_var;
    }
    bn_relu_apply(bn, mean, var, z.data(), y.data(), B, conv.cout, nvox);
  };
  stage(P.conv1, P.bn1, input.data(), z1, y1, st.mean1, st.var1, 1);
  stage(P.conv2, P.bn2, y1.data(), z2, y2, st.mean2, st.var2, 2);
  stage(P.conv3, P.bn3, y2.data(), z3, y3, st.mean3, st.var3, 3);

  conv1_forward(P.head, y3.data(), logits.data(), B, nvox);
  check_finite(logits, 4);

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < nvox; ++i) {
      double peak = logits[static_cast<std::size_t>(at(b, 0, C, nvox, i))];
      for (int c = 1; c < C; ++c)
        peak = std::max(peak,
                        logits[static_cast<std::size_t>(at(b, c, C, nvox, i))]);
      double denom = 0;
      for (int c = 0; c < C; ++c) {
        const auto j = static_cast<std::size_t>(at(b, c, C, nvox, i));
        probs[j] = std::exp(logits[j] - peak);
        denom += probs[j];
      }
      for (int c = 0; c < C; ++c)
        probs[static_cast<std::size_t>(at(b, c, C, nvox, i))] /= denom;
    }

  std::vector<ProbVolume> out;
  out.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    ProbVolume pv = make_prob_volume(d, sp, C);
    for (std::int64_t i = 0; i < nvox; ++i)
      for (int c = 0; c < C; ++c)
        pv.values[static_cast<std::size_t>(c + C * i)] =
            probs[static_cast<std::size_t>(at(b, c, C, nvox, i))];
    out.push_back(std::move(pv));
  }

  if (stats_out != nullptr) *stats_out = st;
  if (cache != nullptr) {
    cache->valid = use_batch_stats;
    cache->dims = d;
    cache->batch = B;
    cache->input = std::move(input);
    cache->z1 = std::move(z1);
    cache->z2 = std::move(z2);
    cache->z3 = std::move(z3);
    cache->y1 = std::move(y1);
    cache->y2 = std::move(y2);
    cache->y3 = std::move(y3);
    cache->mean1 = st.mean1;
    cache->var1 = st.var1;
    cache->mean2 = st.mean2;
    cache->var2 = st.var2;
    cache->mean3 = st.mean3;
    cache->var3 = st.var3;
    cache->logits = std::move(logits);
    cache->probs = std::move(probs);
  }
  return out;
}

void fold_running(BnLayer& bn, const std::vector<double>& mean,
                  const std::vector<double>& var) {
  for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
    bn.running_mean[c] =
        (1.0 - kBnMomentum) * bn.running_mean[c] + kBnMomentum * mean[c];
    bn.running_var[c] =
        (1.0 - kBnMomentum) * bn.running_var[c] + kBnMomentum * var[c];
  }
}

// dL/dprobs -> dL/dlogits through the softmax at every voxel.
std::vector<double> softmax_chain(const std::vector<double>& probs,
                                  const std::vector<double>& dprobs, int B,
                                  int C, std::int64_t nvox) {
  std::vector<double> dlogits(probs.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < nvox; ++i) {
      double inner = 0;
      for (int c = 0; c < C; ++c) {
        const auto j = static_cast<std::size_t>(at(b, c, C, nvox, i));
        inner += dprobs[j] * probs[j];
      }
      for (int c = 0; c < C; ++c) {
        const auto j = static_cast<std::size_t>(at(b, c, C, nvox, i));
        dlogits[j] = probs[j] * (dprobs[j] - inner);
      }
    }
  return dlogits;
}

// BN+ReLU backward for one stage. dy is the gradient at the ReLU output;
// returns dz and fills the affine gradients.
void bn_relu_backward(const BnLayer& bn, const std::vector<double>& z,
                      const std::vector<double>& y,
                      const std::vector<double>& mean,
                      const std::vector<double>& var,
                      const std::vector<double>& dy, int B, int channels,
                      std::int64_t nvox, std::vector<double>* dz,
                      std::vector<double>* dgamma, std::vector<double>* dbeta) {
  const std::int64_t m = static_cast<std::int64_t>(B) * nvox;
  dz->assign(z.size(), 0.0);
  dgamma->assign(static_cast<std::size_t>(channels), 0.0);
  dbeta->assign(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    const double mu = mean[static_cast<std::size_t>(c)];
    const double inv =
        1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + kBnEpsilon);
    const double g = bn.gamma[static_cast<std::size_t>(c)];
    auto du_at = [&](std::int64_t j) {
      const int b = static_cast<int>(j / nvox);
      const std::int64_t idx = at(b, c, channels, nvox, j % nvox);
      // ReLU gate: the cached output is positive exactly where it passed.
      return y[static_cast<std::size_t>(idx)] > 0
                 ? dy[static_cast<std::size_t>(idx)]
                 : 0.0;
    };
    auto xhat_at = [&](std::int64_t j) {
      const int b = static_cast<int>(j / nvox);
      const std::int64_t idx = at(b, c, channels, nvox, j % nvox);
      return (z[static_cast<std::size_t>(idx)] - mu) * inv;
    };
    const double sum_du = blocked_sum(m, du_at);
    const double sum_du_xhat =
        blocked_sum(m, [&](std::int64_t j) { return du_at(j) * xhat_at(j); });
    (*dbeta)[static_cast<std::size_t>(c)] = sum_du;
    (*dgamma)[static_cast<std::size_t>(c)] = sum_du_xhat;
    const double md = static_cast<double>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < m; ++j) {
      const int b = static_cast<int>(j / nvox);
      const std::int64_t idx = at(b, c, channels, nvox, j % nvox);
      (*dz)[static_cast<std::size_t>(idx)] =
          g * inv *
          (du_at(j) - (sum_du + xhat_at(j) * sum_du_xhat) / md);
    }
  }
}

// Conv backward for the 3x3x3 layers: weight and bias gradients plus the
// gradient flowing into the layer input (skipped when din is null).
void conv3_backward(const ConvLayer& L, const std::vector<double>& in,
                    const std::vector<double>& dout, int B, const Dims& d,
                    ConvLayer* grad, std::vector<double>* din) {
  const std::int64_t nvox = d.count();
  *grad = make_conv(L.cin, L.cout, L.ksize);

#pragma omp parallel for schedule(static)
  for (int co = 0; co < L.cout; ++co) {
    double* wrow = grad->w.data() + static_cast<std::size_t>(co) * L.cin * 27;
    double bacc = 0;
    for (int b = 0; b < B; ++b) {
      const double* dslab =
          dout.data() + (static_cast<std::int64_t>(b) * L.cout + co) * nvox;
      const double* islab = in.data() + static_cast<std::int64_t>(b) * L.cin * nvox;
      for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
          for (int x = 0; x < d.nx; ++x) {
            const double dv = dslab[d.index(x, y, z)];
            bacc += dv;
            if (dv == 0) continue;
            for (int ci = 0; ci < L.cin; ++ci) {
              const double* plane = islab + static_cast<std::int64_t>(ci) * nvox;
              double* w = wrow + static_cast<std::size_t>(ci) * 27;
              for (int kz = -1; kz <= 1; ++kz)
                for (int ky = -1; ky <= 1; ++ky)
                  for (int kx = -1; kx <= 1; ++kx) {
                    const int sx = x + kx, sy = y + ky, sz = z + kz;
                    if (!d.contains(sx, sy, sz)) continue;
                    w[(kz + 1) * 9 + (ky + 1) * 3 + (kx + 1)] +=
                        dv * plane[d.index(sx, sy, sz)];
                  }
            }
          }
    }
    grad->b[static_cast<std::size_t>(co)] = bacc;
  }

  if (din == nullptr) return;
  din->assign(in.size(), 0.0);
  for (int b = 0; b < B; ++b) {
    const double* dslab = dout.data() + static_cast<std::int64_t>(b) * L.cout * nvox;
    double* islab = din->data() + static_cast<std::int64_t>(b) * L.cin * nvox;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < L.cin; ++ci)
      for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
          for (int x = 0; x < d.nx; ++x) {
            double acc = 0;
            for (int co = 0; co < L.cout; ++co) {
              const double* w = L.w.data() +
                                static_cast<std::size_t>(co * L.cin + ci) * 27;
              for (int kz = -1; kz <= 1; ++kz)
                for (int ky = -1; ky <= 1; ++ky)
                  for (int kx = -1; kx <= 1; ++kx) {
                    const int ox = x - kx, oy = y - ky, oz = z - kz;
                    if (!d.contains(ox, oy, oz)) continue;
                    acc += dslab[static_cast<std::int64_t>(co) * nvox +
                                 d.index(ox, oy, oz)] *
                           w[(kz + 1) * 9 + (ky + 1) * 3 + (kx + 1)];
                  }
            }
            islab[static_cast<std::int64_t>(ci) * nvox + d.index(x, y, z)] = acc;
          }
  }
}

void conv1_backward(const ConvLayer& L, const std::vector<double>& in,
                    const std::vector<double>& dout, int B, std::int64_t nvox,
                    ConvLayer* grad, std::vector<double>* din) {
  const std::int64_t m = static_cast<std::int64_t>(B) * nvox;
  *grad = make_conv(L.cin, L.cout, 1);
  for (int co = 0; co < L.cout; ++co) {
    auto dv = [&](std::int64_t j) {
      const int b = static_cast<int>(j / nvox);
      return dout[static_cast<std::size_t>(at(b, co, L.cout, nvox, j % nvox))];
    };
    grad->b[static_cast<std::size_t>(co)] = blocked_sum(m, dv);
    for (int ci = 0; ci < L.cin; ++ci)
      grad->w[static_cast<std::size_t>(co * L.cin + ci)] =
          blocked_sum(m, [&](std::int64_t j) {
            const int b = static_cast<int>(j / nvox);
            return dv(j) * in[static_cast<std::size_t>(
                               at(b, ci, L.cin, nvox, j % nvox))];
          });
  }
  din->assign(in.size(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < m; ++j) {
    const int b = static_cast<int>(j / nvox);
    const std::int64_t i = j % nvox;
    for (int ci = 0; ci < L.cin; ++ci) {
      double acc = 0;
      for (int co = 0; co < L.cout; ++co)
        acc += dout[static_cast<std::size_t>(at(b, co, L.cout, nvox, i))] *
               L.w[static_cast<std::size_t>(co * L.cin + ci)];
      (*din)[static_cast<std::size_t>(at(b, ci, L.cin, nvox, i))] = acc;
    }
  }
}

TinySegGrads backward_core(const TinySegParams& P, const ForwardCache& cc,
                           const std::vector<double>& dlogits) {
  const Dims d = cc.dims;
  const std::int64_t nvox = d.count();
  const int B = cc.batch;

  TinySegGrads g;
  std::vector<double> dy3;
  conv1_backward(P.head, cc.y3, dlogits, B, nvox, &g.head, &dy3);

  std::vector<double> dz3, dy2, dz2, dy1, dz1;
  bn_relu_backward(P.bn3, cc.z3, cc.y3, cc.mean3, cc.var3, dy3, B, kStage3,
                   nvox, &dz3, &g.bn3_gamma, &g.bn3_beta);
  conv3_backward(P.conv3, cc.y2, dz3, B, d, &g.conv3, &dy2);

  bn_relu_backward(P.bn2, cc.z2, cc.y2, cc.mean2, cc.var2, dy2, B, kStage2,
                   nvox, &dz2, &g.bn2_gamma, &g.bn2_beta);
  conv3_backward(P.conv2, cc.y1, dz2, B, d, &g.conv2, &dy1);

  bn_relu_backward(P.bn1, cc.z1, cc.y1, cc.mean1, cc.var1, dy1, B, kStage1,
                   nvox, &dz1, &g.bn1_gamma, &g.bn1_beta);
  conv3_backward(P.conv1, cc.input, dz1, B, d, &g.conv1, nullptr);
  return g;
}

void require_cache(const ForwardCache& cc) {
  if (!cc.valid)
    throw config_error(
        "backward requires a cached batch-statistics forward pass");
}

struct DiceAccum {
  double num, den;  // per sample and class, smooth folded in
};

}  // namespace

TinySegParams init_params(std::uint64_t seed, int num_classes) {
  if (num_classes < 2) throw config_error("network needs at least 2 classes");
  TinySegParams P;
  P.num_classes = num_classes;
  P.seed = seed;
  P.conv1 = make_conv(1, kStage1, 3);
  P.conv2 = make_conv(kStage1, kStage2, 3);
  P.conv3 = make_conv(kStage2, kStage3, 3);
  P.head = make_conv(kStage3, num_classes, 1);
  P.bn1 = make_bn(kStage1);
  P.bn2 = make_bn(kStage2);
  P.bn3 = make_bn(kStage3);

  Rng rng(seed);
  // Kernels uniform in +-sqrt(6/fan_in); biases start at zero so a zero
  // input yields a spatially constant field.
  for (ConvLayer* L : {&P.conv1, &P.conv2, &P.conv3, &P.head}) {
    const double fan_in =
        static_cast<double>(L->cin) * L->ksize * L->ksize * L->ksize;
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& w : L->w) w = rng.uniform(-bound, bound);
  }
  return P;
}

std::vector<ProbVolume> forward(TinySegParams& params,
                                const std::vector<ScalarVolume>& batch,
                                RunMode mode, ForwardCache* cache) {
  if (mode == RunMode::kEval)
    return run_forward(params, batch, false, cache, nullptr);
  StageStats st;
  auto out = run_forward(params, batch, true, cache, &st);
  fold_running(params.bn1, st.mean1, st.var1);
  fold_running(params.bn2, st.mean2, st.var2);
  fold_running(params.bn3, st.mean3, st.var3);
  return out;
}

std::vector<ProbVolume> forward_frozen_stats(
    const TinySegParams& params, const std::vector<ScalarVolume>& batch,
    ForwardCache* cache) {
  return run_forward(params, batch, true, cache, nullptr);
}

LossTerms loss_supervised(const std::vector<ProbVolume>& probs,
                          const std::vector<const LabelVolume*>& labels,
                          double ce_weight, double dice_weight) {
  if (probs.empty() || probs.size() != labels.size())
    throw data_error("probability batch and label batch differ in size");
  const int B = static_cast<int>(probs.size());
  const int C = probs[0].channels;
  const std::int64_t nvox = probs[0].dims.count();

  double ce_sum = 0;
  double dice_mean = 0;
  for (int b = 0; b < B; ++b) {
    const ProbVolume& p = probs[static_cast<std::size_t>(b)];
    const LabelVolume& g = *labels[static_cast<std::size_t>(b)];
    if (!(g.dims == p.dims))
      throw data_error("label dims differ from prediction dims");
    int bad = 0;
#pragma omp parallel for schedule(static) reduction(| : bad)
    for (std::int64_t i = 0; i < nvox; ++i)
      bad |= g.voxels[static_cast<std::size_t>(i)] >= C;
    if (bad)
      throw data_error("label outside [0, " + std::to_string(C) + ")");
    ce_sum += blocked_sum(nvox, [&](std::int64_t i) {
      const std::uint16_t cls = g.voxels[static_cast<std::size_t>(i)];
      const double pv =
          p.values[static_cast<std::size_t>(cls + C * i)];
      return -std::log(std::max(pv, 1e-300));
    });
    for (int c = 0; c < C; ++c) {
      double inter = 0, psum = 0, gsum = 0;
      for (std::int64_t i = 0; i < nvox; ++i) {
        const double pv = p.values[static_cast<std::size_t>(c + C * i)];
        const bool gv = g.voxels[static_cast<std::size_t>(i)] == c;
        inter += gv ? pv : 0.0;
        psum += pv;
        gsum += gv;
      }
      dice_mean += (2.0 * inter + kDiceSmooth) / (psum + gsum + kDiceSmooth);
    }
  }
  LossTerms t;
  t.cross_entropy = ce_sum / (static_cast<double>(B) * static_cast<double>(nvox));
  t.dice = 1.0 - dice_mean / (static_cast<double>(B) * C);
  t.total = ce_weight * t.cross_entropy + dice_weight * t.dice;
  return t;
}

TinySegGrads backward_supervised(const TinySegParams& params,
                                 const ForwardCache& cache,
                                 const std::vector<const LabelVolume*>& labels,
                                 double ce_weight, double dice_weight) {
  require_cache(cache);
  const int B = cache.batch;
  if (static_cast<int>(labels.size()) != B)
    throw data_error("label batch size mismatch");
  const int C = params.num_classes;
  const std::int64_t nvox = cache.dims.count();
  const double n_total = static_cast<double>(B) * static_cast<double>(nvox);

  // Per sample and class soft-Dice accumulators.
  std::vector<DiceAccum> acc(static_cast<std::size_t>(B) * C);
  for (int b = 0; b < B; ++b) {
    const LabelVolume& g = *labels[static_cast<std::size_t>(b)];
    if (!(g.dims == cache.dims)) throw data_error("label dims mismatch");
    for (int c = 0; c < C; ++c) {
      double inter = 0, psum = 0, gsum = 0;
      for (std::int64_t i = 0; i < nvox; ++i) {
        const double pv =
            cache.probs[static_cast<std::size_t>(at(b, c, C, nvox, i))];
        const bool gv = g.voxels[static_cast<std::size_t>(i)] == c;
        inter += gv ? pv : 0.0;
        psum += pv;
        gsum += gv;
      }
      acc[static_cast<std::size_t>(b * C + c)] = {2.0 * inter + kDiceSmooth,
                                                  psum + gsum + kDiceSmooth};
    }
  }

  std::vector<double> dprobs(cache.probs.size());
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < nvox; ++i) {
      const std::uint16_t cls =
          labels[static_cast<std::size_t>(b)]->voxels[static_cast<std::size_t>(i)];
      for (int c = 0; c < C; ++c) {
        const auto j = static_cast<std::size_t>(at(b, c, C, nvox, i));
        double dd = 0;
        if (ce_weight != 0 && c == cls)
          dd += ce_weight *
                (-1.0 / std::max(cache.probs[j], 1e-300)) / n_total;
        if (dice_weight != 0) {
          const DiceAccum& a = acc[static_cast<std::size_t>(b * C + c)];
          const double gv = c == cls ? 1.0 : 0.0;
          // d(1 - mean s)/dp = -(1/(B*C)) * (2 g den - num) / den^2
          dd += dice_weight * (-(2.0 * gv * a.den - a.num) / (a.den * a.den)) /
                (static_cast<double>(B) * C);
        }
        dprobs[j] = dd;
      }
    }
  return backward_core(params, cache,
                       softmax_chain(cache.probs, dprobs, B, C, nvox));
}

TinySegGrads backward_entropy(const TinySegParams& params,
                              const ForwardCache& cache) {
  require_cache(cache);
  const int B = cache.batch;
  const int C = params.num_classes;
  const std::int64_t nvox = cache.dims.count();
  const double n_total = static_cast<double>(B) * static_cast<double>(nvox);

  std::vector<double> dprobs(cache.probs.size());
  const std::int64_t total = static_cast<std::int64_t>(dprobs.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < total; ++j) {
    const double p = cache.probs[static_cast<std::size_t>(j)];
    dprobs[static_cast<std::size_t>(j)] =
        -(std::log(std::max(p, 1e-300)) + 1.0) / n_total;
  }
  return backward_core(params, cache,
                       softmax_chain(cache.probs, dprobs, B, C, nvox));
}

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr))
    throw config_error("learning rate must be finite and >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw config_error("moment decay rates must lie in [0, 1)");
  if (epochs < 0) throw config_error("epochs must be >= 0");
  if (batch_size < 1) throw config_error("batch size must be >= 1");
}

namespace {

// The trainable tensors in declared order, shared by Adam and the
// checkpoint layout.
std::vector<std::vector<double>*> trainable_tensors(TinySegParams& P) {
  return {&P.conv1.w, &P.conv1.b, &P.bn1.gamma, &P.bn1.beta,
          &P.conv2.w, &P.conv2.b, &P.bn2.gamma, &P.bn2.beta,
          &P.conv3.w, &P.conv3.b, &P.bn3.gamma, &P.bn3.beta,
          &P.head.w,  &P.head.b};
}

std::vector<const std::vector<double>*> gradient_tensors(const TinySegGrads& G) {
  return {&G.conv1.w, &G.conv1.b, &G.bn1_gamma, &G.bn1_beta,
          &G.conv2.w, &G.conv2.b, &G.bn2_gamma, &G.bn2_beta,
          &G.conv3.w, &G.conv3.b, &G.bn3_gamma, &G.bn3_beta,
          &G.head.w,  &G.head.b};
}

}  // namespace

TrainResult train(TinySegParams& params,
                  const std::vector<std::pair<ScalarVolume, LabelVolume>>& dataset,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw data_error("training dataset is empty");

  auto tensors = trainable_tensors(params);
  std::vector<std::vector<double>> m(tensors.size()), v(tensors.size());
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    m[t].assign(tensors[t]->size(), 0.0);
    v[t].assign(tensors[t]->size(), 0.0);
  }

  Rng shuffle_rng(derive_seed(cfg.seed, 0x5u));
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<ScalarVolume> xs;
      std::vector<const LabelVolume*> ys;
      for (std::size_t i = start; i < stop; ++i) {
        xs.push_back(dataset[order[i]].first);
        ys.push_back(&dataset[order[i]].second);
      }

      ForwardCache cache;
      auto probs = forward(params, xs, RunMode::kTrain, &cache);
      const LossTerms loss =
          loss_supervised(probs, ys, cfg.ce_weight, cfg.dice_weight);
      if (!std::isfinite(loss.total))
        throw numeric_error("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batches));
      loss_sum += loss.total;
      ++batches;

      const TinySegGrads grads = backward_supervised(
          params, cache, ys, cfg.ce_weight, cfg.dice_weight);
      auto gtensors = gradient_tensors(grads);
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        std::vector<double>& theta = *tensors[t];
        const std::vector<double>& g = *gtensors[t];
        for (std::size_t j = 0; j < theta.size(); ++j) {
          m[t][j] = cfg.beta1 * m[t][j] + (1.0 - cfg.beta1) * g[j];
          v[t][j] = cfg.beta2 * v[t][j] + (1.0 - cfg.beta2) * g[j] * g[j];
          theta[j] -= cfg.lr * (m[t][j] / bc1) /
                      (std::sqrt(v[t][j] / bc2) + kAdamEpsilon);
        }
      }
    }
    result.epoch_loss.push_back(loss_sum / std::max(batches, 1));
  }
  return result;
}

std::vector<double> theta_fixed(const TinySegParams& params) {
  std::vector<double> out;
  for (const ConvLayer* L :
       {&params.conv1, &params.conv2, &params.conv3, &params.head}) {
    out.insert(out.end(), L->w.begin(), L->w.end());
    out.insert(out.end(), L->b.begin(), L->b.end());
  }
  return out;
}

std::vector<double> theta_bn_affine(const TinySegParams& params) {
  std::vector<double> out;
  for (const BnLayer* bn : {&params.bn1, &params.bn2, &params.bn3}) {
    out.insert(out.end(), bn->gamma.begin(), bn->gamma.end());
    out.insert(out.end(), bn->beta.begin(), bn->beta.end());
  }
  return out;
}

void set_theta_bn_affine(TinySegParams& params,
                         const std::vector<double>& values) {
  std::size_t pos = 0;
  for (BnLayer* bn : {&params.bn1, &params.bn2, &params.bn3})
    for (std::vector<double>* t : {&bn->gamma, &bn->beta}) {
      if (pos + t->size() > values.size())
        throw config_error("BN affine vector has the wrong length");
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
                values.begin() + static_cast<std::ptrdiff_t>(pos + t->size()),
                t->begin());
      pos += t->size();
    }
  if (pos != values.size())
    throw config_error("BN affine vector has the wrong length");
}

std::vector<double> grads_bn_affine(const TinySegGrads& grads) {
  std::vector<double> out;
  for (const std::vector<double>* t :
       {&grads.bn1_gamma, &grads.bn1_beta, &grads.bn2_gamma, &grads.bn2_beta,
        &grads.bn3_gamma, &grads.bn3_beta})
    out.insert(out.end(), t->begin(), t->end());
  return out;
}

namespace {

constexpr char kCheckpointMagic[4] = {'B', 'Q', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw data_error("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) |
         static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 |
         static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
  const std::uint64_t lo = get_u32(in, path);
  const std::uint64_t hi = get_u32(in, path);
  return lo | hi << 32;
}

// All tensors including running statistics, declared order.
std::vector<std::vector<double>*> checkpoint_tensors(TinySegParams& P) {
  return {&P.conv1.w, &P.conv1.b, &P.bn1.gamma,        &P.bn1.beta,
          &P.bn1.running_mean,    &P.bn1.running_var,  &P.conv2.w,
          &P.conv2.b, &P.bn2.gamma,        &P.bn2.beta,
          &P.bn2.running_mean,    &P.bn2.running_var,  &P.conv3.w,
          &P.conv3.b, &P.bn3.gamma,        &P.bn3.beta,
          &P.bn3.running_mean,    &P.bn3.running_var,  &P.head.w,
          &P.head.b};
}

}  // namespace

void save_checkpoint(const TinySegParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.num_classes));
  put_u64(out, params.seed);
  auto tensors = checkpoint_tensors(const_cast<TinySegParams&>(params));
  for (const std::vector<double>* t : tensors)
    for (double v : *t) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_u64(out, bits);
    }
  if (!out) throw io_error("write failure on checkpoint: " + path);
}

TinySegParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw data_error("not a checkpoint file: " + path);
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " +
                     std::to_string(version) + " in " + path);
  const auto num_classes = static_cast<int>(get_u32(in, path));
  if (num_classes < 2 || num_classes > 4096)
    throw data_error("implausible class count in checkpoint: " + path);
  const std::uint64_t seed = get_u64(in, path);

  TinySegParams P = init_params(seed, num_classes);
  for (std::vector<double>* t : checkpoint_tensors(P))
    for (double& v : *t) {
      const std::uint64_t bits = get_u64(in, path);
      std::memcpy(&v, &bits, 8);
    }
  char extra;
  if (in.read(&extra, 1))
    throw data_error("trailing bytes in checkpoint: " + path);
  return P;
}

}  // namespace bobqc
