/* Copyright 2026 The EF-Net Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "efnet/layers.hpp"
#include "support/oracles.hpp"

namespace efnet {
namespace {

using testing::finite_difference_check;
using testing::random_tensor;
using testing::to_matrix;
using TD = Tensor<double>;

double row_sum(const TD& w, std::size_t r) {
  double s = 0;
  for (std::size_t c = 0; c < w.dim(1); ++c) s += w.at(r, c);
  return s;
}

TEST(ScaledDotAttention, IdentityQueriesIncludeRegulator) {
  const auto eye = TD::matrix({{1, 0}, {0, 1}});
  const auto v = TD::matrix({{1, 2}, {3, 4}});
  const auto r = scaled_dot_attention(eye, eye, v);
  const auto ref = testing::brute_softmax({1 / std::sqrt(2.0), 0.0});
  EXPECT_NEAR(r.weights[0].at(0, 0), ref[0], 1e-15);
  EXPECT_NEAR(r.weights[0].at(0, 1), ref[1], 1e-15);
  EXPECT_NEAR(r.output.at(0, 0), ref[0] * 1 + ref[1] * 3, 1e-15);
}

TEST(ScaledDotAttention, SaturatesOnAlignedKey) {
  const auto k = TD::matrix({{1, 0}, {0, 1}});
  const auto v = TD::matrix({{7, -1}, {2, 5}});
  const auto q = TD::matrix({{1000, 0}});
  const auto r = scaled_dot_attention(q, k, v);
  EXPECT_NEAR(r.output.at(0, 0), 7, 1e-4);
  EXPECT_NEAR(r.output.at(0, 1), -1, 1e-4);
}

TEST(ScaledDotAttention, MaskedKeysGetZeroWeight) {
  std::mt19937_64 rng(2);
  const auto q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 2}, rng);
  const Mask m{1, 0, 1, 1, 0};
  const auto r = scaled_dot_attention(q, k, v, m);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.weights[0].at(i, 1), 0.0);
    EXPECT_EQ(r.weights[0].at(i, 4), 0.0);
    EXPECT_NEAR(row_sum(r.weights[0], i), 1.0, 1e-6);
  }
}

TEST(ScaledDotAttention, DimensionErrors) {
  EXPECT_THROW(scaled_dot_attention(TD({2, 3}), TD({2, 4}), TD({2, 1})), DimensionError);
  EXPECT_THROW(scaled_dot_attention(TD({2, 3}), TD({2, 3}), TD({3, 1})), DimensionError);
}

TEST(MultiHead, HeadsMustDivideWidth) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(MHAParams<double>::make(4, 4, 4, 32, 5, rng), ConfigError);
  EXPECT_THROW(MHAParams<double>::check_heads(8, 0), ConfigError);
  EXPECT_NO_THROW(MHAParams<double>::check_heads(32, 4));
}

TEST(MultiHead, MatchesPerHeadLoopOnRandomShapes) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> small(1, 6);
  std::uniform_int_distribution<std::size_t> head_pick(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t heads = head_pick(rng), width = heads * small(rng);
    const std::size_t n = small(rng), m = small(rng), dq = small(rng), dk = small(rng), dv = small(rng);
    const auto p = MHAParams<double>::make(dq, dk, dv, width, heads, rng);
    const auto q = random_tensor({n, dq}, rng), k = random_tensor({m, dk}, rng), v = random_tensor({m, dv}, rng);
    const auto got = multi_head(q, k, v, p);
    const auto ref = testing::loop_mha(to_matrix(q), to_matrix(k), to_matrix(v), to_matrix(p.wq),
                                       to_matrix(p.wk), to_matrix(p.wv), heads);
    ASSERT_EQ(got.weights.size(), heads);
    EXPECT_LT(testing::max_abs_diff(ref.output, got.output), 1e-6);
    for (std::size_t h = 0; h < heads; ++h) {
      EXPECT_LT(testing::max_abs_diff(ref.weights[h], got.weights[h]), 1e-6);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(row_sum(got.weights[h], i), 1.0, 1e-6);
    }
  }
}

TEST(MultiHead, ThreeByFourLoopReference) {
  std::mt19937_64 rng(6);
  const auto p = MHAParams<double>::make(4, 4, 4, 4, 2, rng);
  const auto x = random_tensor({3, 4}, rng);
  const Mask m{1, 1, 0};
  const auto got = mhsa(x, p, m);
  const auto ref = testing::loop_mha(to_matrix(x), to_matrix(x), to_matrix(x), to_matrix(p.wq),
                                     to_matrix(p.wk), to_matrix(p.wv), 2, {true, true, false});
  EXPECT_LT(testing::max_abs_diff(ref.output, got.output), 1e-6);
}

TEST(Mhsa, PermutationEquivariant) {
  std::mt19937_64 rng(9);
  const auto p = MHAParams<double>::make(6, 6, 6, 8, 2, rng);
  const auto x = random_tensor({5, 6}, rng);
  std::vector<double> swapped = x.values();
  for (std::size_t c = 0; c < 6; ++c) std::swap(swapped[1 * 6 + c], swapped[3 * 6 + c]);
  const TD xs({5, 6}, swapped);
  const auto a = mhsa(x, p).output, b = mhsa(xs, p).output;
  for (std::size_t r = 0; r < 5; ++r) {
    const std::size_t pr = r == 1 ? 3 : r == 3 ? 1 : r;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.at(r, c), b.at(pr, c), 1e-12);
  }
}

TEST(Mhsa, MaskedTokensDoNotInfluenceRealRows) {
  std::mt19937_64 rng(10);
  const auto p = MHAParams<double>::make(4, 4, 4, 4, 2, rng);
  auto x = random_tensor({4, 4}, rng);
  const Mask m{1, 1, 1, 0};
  const auto before = mhsa(x, p, m).output;
  for (std::size_t c = 0; c < 4; ++c) x.mutable_data()[12 + c] = 100.0 + static_cast<double>(c);
  const auto after = mhsa(x, p, m).output;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(before.at(r, c), after.at(r, c), 1e-12);
}

GRUParams<double> zero_gru(std::size_t d_in, std::size_t d_h) {
  GRUParams<double> p;
  p.wz = p.wr = p.wh = TD({d_in, d_h});
  p.uz = TD({d_h, d_h});
  p.ur = TD({d_h, d_h});
  p.uh = TD({d_h, d_h});
  p.bz = TD({d_h});
  p.br = TD({d_h});
  p.bh = TD({d_h});
  return p;
}

TEST(Gru, ZeroParametersHalveState) {
  const auto p = zero_gru(3, 2);
  const auto h = gru_cell(TD::vector({1, 2, 3}), TD::vector({0.8, -4}), p);
  EXPECT_DOUBLE_EQ(h[0], 0.4);
  EXPECT_DOUBLE_EQ(h[1], -2.0);
}

TEST(Gru, ConvexCombinationBound) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = GRUParams<double>::make(5, 4, rng);
    const auto x = random_tensor({5}, rng, 3.0);
    const auto h_prev = random_tensor({4}, rng, 2.0);
    const auto h = gru_cell(x, h_prev, p);
    double prev_inf = 0, inf = 0;
    for (double v : h_prev.data()) prev_inf = std::max(prev_inf, std::abs(v));
    for (double v : h.data()) inf = std::max(inf, std::abs(v));
    EXPECT_LE(inf, std::max(prev_inf, 1.0) + 1e-12);
  }
}

TEST(Gru, ShapeErrors) {
  std::mt19937_64 rng(1);
  const auto p = GRUParams<double>::make(3, 2, rng);
  EXPECT_THROW(gru_cell(TD({4}), TD({2}), p), DimensionError);
  EXPECT_THROW(gru_cell(TD({3}), TD({3}), p), DimensionError);
}

TEST(BiGru, SingleTokenConcatenatesBothDirections) {
  std::mt19937_64 rng(13);
  const auto f = GRUParams<double>::make(6, 3, rng), b = GRUParams<double>::make(6, 3, rng);
  const auto t = random_tensor({1, 3}, rng), a = random_tensor({3}, rng);
  const auto h = bigru_encode(t, a, f, b);
  ASSERT_EQ(h.shape(), (Shape{1, 6}));
  const auto x = ops::concat<double>({ops::reshape(t, {3}), a});
  const auto hf = gru_cell(x, TD({3}), f), hb = gru_cell(x, TD({3}), b);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(h.at(0, c), hf[c]);
    EXPECT_DOUBLE_EQ(h.at(0, 3 + c), hb[c]);
  }
}

TEST(BiGru, ReversalWithSwappedParametersReversesRows) {
  std::mt19937_64 rng(14);
  const std::size_t m = 4, d = 3, dh = 5;
  const auto f = GRUParams<double>::make(2 * d, dh, rng), b = GRUParams<double>::make(2 * d, dh, rng);
  const auto t = random_tensor({m, d}, rng), a = random_tensor({d}, rng);
  std::vector<double> rev;
  for (std::size_t j = m; j-- > 0;)
    for (std::size_t c = 0; c < d; ++c) rev.push_back(t.at(j, c));
  const auto h = bigru_encode(t, a, f, b);
  const auto hr = bigru_encode(TD({m, d}, rev), a, b, f);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < dh; ++c) {
      EXPECT_NEAR(hr.at(j, c), h.at(m - 1 - j, dh + c), 1e-14);
      EXPECT_NEAR(hr.at(j, dh + c), h.at(m - 1 - j, c), 1e-14);
    }
  }
}

TEST(Squash, UnitNormMapsToHalf) {
  const auto v = squash(TD::matrix({{0.6, 0.8}}));
  const double norm = std::hypot(v[0], v[1]);
  EXPECT_NEAR(norm, 0.5, 1e-12);
}

TEST(Squash, NormBelowOneAndDirectionPreserved) {
  std::mt19937_64 rng(15);
  const auto s = random_tensor({200, 6}, rng, 20.0);
  const auto v = squash(s);
  for (std::size_t r = 0; r < 200; ++r) {
    double ns = 0, nv = 0, dot = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      ns += s.at(r, c) * s.at(r, c);
      nv += v.at(r, c) * v.at(r, c);
      dot += s.at(r, c) * v.at(r, c);
    }
    EXPECT_LT(std::sqrt(nv), 1.0);
    EXPECT_NEAR(dot / std::sqrt(ns * nv), 1.0, 1e-6);
    EXPECT_NEAR(std::sqrt(nv), ns / (1 + ns), 1e-12);
  }
}

TEST(Squash, ZeroVectorStaysZero) {
  const auto v = squash(TD::matrix({{0, 0, 0}}));
  for (double x : v.data()) EXPECT_EQ(x, 0.0);
}

TEST(Capsule, ShapeAndNorms) {
  std::mt19937_64 rng(16);
  const auto p = CapsuleParams<double>::make(10, 4, rng);
  const auto r = random_tensor({kRegions, 10}, rng, 5.0);
  const auto h = capsule_layer(r, p);
  ASSERT_EQ(h.shape(), (Shape{kRegions, 4}));
  for (std::size_t i = 0; i < kRegions; ++i) {
    double n = 0;
    for (std::size_t c = 0; c < 4; ++c) n += h.at(i, c) * h.at(i, c);
    EXPECT_LT(std::sqrt(n), 1.0);
  }
  EXPECT_THROW(capsule_layer(random_tensor({48, 10}, rng), p), DimensionError);
}

TEST(Positions, Examples) {
  EXPECT_EQ(relative_distances(2, 3, 5, 36), (std::vector<long>{-2, -1, 0, 1, 2}));
  EXPECT_EQ(relative_distances(1, 3, 5, 36), (std::vector<long>{-1, 0, 0, 1, 2}));
  EXPECT_THROW(relative_distances(3, 3, 5, 36), InputError);
  EXPECT_THROW(relative_distances(2, 6, 5, 36), InputError);
}

TEST(Positions, AntisymmetricAndClipped) {
  for (std::size_t n = 1; n <= 30; ++n) {
    for (std::size_t start = 0; start < n; ++start) {
      const auto d = relative_distances(start, start + 1, n, 4);
      for (std::size_t i = 0; i < n; ++i) {
        EXPECT_LE(std::abs(d[i]), 4);
        const long plain = static_cast<long>(i) - static_cast<long>(start);
        EXPECT_EQ(d[i], std::clamp(plain, -4L, 4L));
        const std::size_t mirror = 2 * start - i;
        if (i <= 2 * start && mirror < n) {
          EXPECT_EQ(d[mirror], -d[i]);
        }
      }
    }
  }
}

TEST(Positions, LookupUsesClippedRows) {
  std::mt19937_64 rng(18);
  const auto table = PositionTable<double>::make(2, 3, rng);
  const auto e = position_embeddings(0, 1, 5, table);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(e.at(0, c), table.table.at(2, c));
    EXPECT_EQ(e.at(4, c), table.table.at(4, c));
    EXPECT_EQ(e.at(3, c), table.table.at(4, c));
  }
}

TEST(Init, GlorotBoundsAndDeterminism) {
  std::mt19937_64 a(3), b(3);
  const auto w = glorot_uniform<double>(20, 30, a);
  EXPECT_EQ(w.values(), glorot_uniform<double>(20, 30, b).values());
  const double limit = std::sqrt(6.0 / 50.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), limit);
  EXPECT_TRUE(w.requires_grad());
}

class LayerGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{19};
  void expect_ok(std::vector<TD> leaves, const testing::LossFn& f) {
    const auto r = finite_difference_check(std::move(leaves), f);
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
  static TD weigh(const TD& y) {
    std::vector<double> w(y.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(0.7 * static_cast<double>(i));
    return ops::sum(ops::mul(y, TD(y.shape(), w)));
  }
};

TEST_F(LayerGradients, MultiHeadMasked) {
  const auto p = MHAParams<double>::make(5, 3, 4, 4, 2, rng);
  const Mask m{1, 0, 1};
  expect_ok({random_tensor({2, 5}, rng), random_tensor({3, 3}, rng), random_tensor({3, 4}, rng),
             p.wq, p.wk, p.wv},
            [&](const auto& x) {
              MHAParams<double> q{x[3], x[4], x[5], 2};
              return weigh(multi_head(x[0], x[1], x[2], q, m).output);
            });
}

TEST_F(LayerGradients, BiGru) {
  const auto f = GRUParams<double>::make(6, 4, rng), b = GRUParams<double>::make(6, 4, rng);
  std::vector<TD> leaves{random_tensor({3, 3}, rng), random_tensor({3}, rng)};
  for (const auto* g : {&f, &b})
    for (const auto* t : {&g->wz, &g->wr, &g->wh, &g->uz, &g->ur, &g->uh, &g->bz, &g->br, &g->bh})
      leaves.push_back(t->clone());
  for (std::size_t i = 8; i < leaves.size(); i += 9) {
    for (auto& v : leaves[i].mutable_data()) v = 0.1;
  }
  expect_ok(leaves, [&](const auto& x) {
    auto unpack = [&](std::size_t o) {
      return GRUParams<double>{x[o], x[o + 1], x[o + 2], x[o + 3], x[o + 4],
                               x[o + 5], x[o + 6], x[o + 7], x[o + 8]};
    };
    return weigh(bigru_encode(x[0], x[1], unpack(2), unpack(11)));
  });
}

TEST_F(LayerGradients, CapsuleAndSquash) {
  const auto p = CapsuleParams<double>::make(6, 4, rng);
  expect_ok({random_tensor({kRegions, 6}, rng), p.weight.clone(), random_tensor({4}, rng)},
            [&](const auto& x) {
              return weigh(capsule_layer(x[0], CapsuleParams<double>{x[1], x[2]}));
            });
  expect_ok({random_tensor({5, 3}, rng, 3.0)}, [&](const auto& x) { return weigh(squash(x[0])); });
}

TEST_F(LayerGradients, PositionTable) {
  const auto t = PositionTable<double>::make(3, 2, rng);
  expect_ok({t.table.clone()}, [&](const auto& x) {
    return weigh(position_embeddings(2, 4, 9, PositionTable<double>{x[0], 3}));
  });
}

}  // namespace
}  // namespace efnet
