#include <algorithm>
#include <random>

#include "grad_check.hpp"
#include "sscn/common.hpp"
#include "sscn/ldt.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace sscn;

namespace {

FeaturePyramid toy_pyramid(int64_t input, double scale, uint64_t seed) {
  torch::manual_seed(seed);
  RefEncoder enc(3, scale);
  enc->eval();
  torch::NoGradGuard ng;
  return enc->forward(torch::randn({1, 3, input, input}), FeaturePyramid::Source::kReference);
}

FlattenedFeatures toy_features(int64_t d, int64_t r, uint64_t seed,
                               torch::Dtype dtype = torch::kFloat32) {
  torch::manual_seed(seed);
  FlattenedFeatures f;
  f.mat = torch::randn({1, d, r}, dtype);
  f.h4 = 1;
  f.w4 = r;
  return f;
}

}  // namespace

TEST_CASE("flatten_pyramid concatenates levels 1-4 at quarter resolution") {
  auto pyr = toy_pyramid(32, 0.25, 11);
  auto flat = flatten_pyramid(pyr);
  int64_t d = 0;
  for (int i = 0; i < 4; ++i) {
    d += pyr.levels[i].size(1);
  }
  CHECK(flat.d() == d);
  CHECK(flat.regions() == 8 * 8);
  CHECK(flat.h4 == 8);
  CHECK(flat.w4 == 8);

  // levels already at 1/4 resolution pass through the resize unchanged
  int64_t off = pyr.levels[0].size(1) + pyr.levels[1].size(1);
  auto level3_slice = unflatten(flat).narrow(1, off, pyr.levels[2].size(1));
  CHECK(torch::equal(level3_slice, pyr.levels[2]));

  // unflatten is the exact reshape inverse
  auto back = unflatten(flat).reshape({1, d, 64});
  CHECK(torch::equal(back, flat.mat));
}

TEST_CASE("256 input yields 4096 selectable regions") {
  auto pyr = toy_pyramid(256, 0.01, 12);
  auto flat = flatten_pyramid(pyr);
  CHECK(flat.regions() == 4096);
}

TEST_CASE("cam classifier") {
  torch::manual_seed(13);
  CamClassifier cls(8, 10);
  cls->eval();
  FeaturePyramid pyr;
  pyr.levels.resize(5);
  torch::NoGradGuard ng;

  // uniform feature maps give a spatially constant CAM
  pyr.levels[4] = torch::ones({1, 8, 4, 4});
  auto out = cls->forward(pyr, std::nullopt, 8, 8);
  CHECK(out.logits.size(1) == 10);
  CHECK((out.cam - out.cam[0][0]).abs().max().item<double>() < 1e-6);

  // direct weighted-sum oracle at level-5 resolution
  pyr.levels[4] = torch::randn({1, 8, 4, 4});
  auto labels = torch::tensor({3}, torch::kInt64);
  auto o2 = cls->forward(pyr, labels, 4, 4);
  auto w = cls->fc->weight;
  for (auto [y, x] : {std::pair{0, 0}, std::pair{1, 3}, std::pair{2, 2}}) {
    double want = 0;
    for (int c = 0; c < 8; ++c) {
      want += w[3][c].item<double>() * pyr.levels[4][0][c][y][x].item<double>();
    }
    CHECK(o2.cam[0][y * 4 + x].item<double>() == doctest::Approx(want).epsilon(1e-5));
  }

  // the argmax class drives the CAM when no label is given
  auto o3 = cls->forward(pyr, std::nullopt, 4, 4);
  auto best = o3.logits.argmax(1)[0];
  auto o4 = cls->forward(pyr, best.unsqueeze(0), 4, 4);
  CHECK(torch::equal(o3.cam, o4.cam));

  CHECK_THROWS(cls->forward(pyr, torch::tensor({10}, torch::kInt64), 4, 4));
  CHECK_THROWS(cls->forward(pyr, torch::tensor({-1}, torch::kInt64), 4, 4));
}

TEST_CASE("select_regions matches the full-sort oracle") {
  auto rng = make_rng(17);
  std::mt19937_64 check_rng(99);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 64;
    auto scores = torch::empty({n}, torch::kFloat64);
    for (int64_t i = 0; i < n; ++i) {
      scores[i] = u(check_rng);
    }
    auto sel = select_regions(scores, 16, 0, rng);
    std::vector<std::pair<double, int64_t>> pairs;
    for (int64_t i = 0; i < n; ++i) {
      pairs.emplace_back(-scores[i].item<double>(), i);
    }
    std::sort(pairs.begin(), pairs.end());
    for (int64_t i = 0; i < 16; ++i) {
      CHECK(sel.topk[i] == pairs[i].second);
    }
  }
}

TEST_CASE("select_regions tie-break, disjointness, exhaustive selection") {
  auto rng = make_rng(23);
  auto scores = torch::tensor({1.0, 3.0, 3.0, 0.5, 3.0, 2.0}, torch::kFloat64);
  auto sel = select_regions(scores, 3, 2, rng);
  CHECK(sel.topk == std::vector<int64_t>{1, 2, 4});  // ties break toward low index
  CHECK(sel.k() == 3);
  CHECK(sel.r() == 2);
  for (auto t : sel.random) {
    CHECK(std::find(sel.topk.begin(), sel.topk.end(), t) == sel.topk.end());
  }

  auto all = select_regions(scores, 2, 4, rng);
  auto sel_all = all.all();
  std::sort(sel_all.begin(), sel_all.end());
  CHECK(sel_all == std::vector<int64_t>{0, 1, 2, 3, 4, 5});

  CHECK_THROWS_WITH(select_regions(scores, 6, 1, rng),
                    doctest::Contains("k+r exceeds region count"));

  auto r1 = make_rng(5);
  auto r2 = make_rng(5);
  auto a = select_regions(scores, 2, 3, r1);
  auto b = select_regions(scores, 2, 3, r2);
  CHECK(a.random == b.random);
}

TEST_CASE("attention rows are distributions and keys can be sparse") {
  torch::manual_seed(31);
  Attention attn(12);
  attn->eval();
  auto coarse = toy_features(12, 20, 32);
  auto ref = toy_features(12, 20, 33);
  torch::NoGradGuard ng;

  auto dense = attn->forward(coarse, ref);
  CHECK(dense.attended.sizes() == torch::IntArrayRef({1, 12, 20}));
  CHECK((dense.weights.sum(-1) - 1.0).abs().max().item<double>() < 1e-5);

  // single key: every query returns exactly W_v f_r[j*]
  auto idx = torch::tensor({{7}}, torch::kInt64);
  auto single = attn->forward(coarse, ref, idx);
  auto expect = attn->wv(ref.mat.transpose(1, 2).index({0, 7}));
  for (int i = 0; i < 20; ++i) {
    CHECK((single.attended.index({0, torch::indexing::Slice(), i}) - expect)
              .abs()
              .max()
              .item<double>() < 1e-6);
  }
}

TEST_CASE("dense attend matches the scalar-loop oracle") {
  torch::manual_seed(35);
  const int64_t d = 6, R = 16;
  Attention attn(d);
  attn->to(torch::kFloat64);
  attn->eval();
  auto coarse = toy_features(d, R, 36, torch::kFloat64);
  auto ref = toy_features(d, R, 37, torch::kFloat64);
  torch::NoGradGuard ng;
  auto res = attn->forward(coarse, ref);

  auto wq = attn->wq->weight, wk = attn->wk->weight, wv = attn->wv->weight;
  auto fc = coarse.mat[0], fr = ref.mat[0];  // (d,R)
  for (int64_t i = 0; i < R; ++i) {
    // logits over keys
    std::vector<double> logits(R);
    for (int64_t j = 0; j < R; ++j) {
      double dot = 0;
      for (int64_t a = 0; a < d; ++a) {
        double qa = 0, ka = 0;
        for (int64_t b = 0; b < d; ++b) {
          qa += wq[a][b].item<double>() * fc[b][i].item<double>();
          ka += wk[a][b].item<double>() * fr[b][j].item<double>();
        }
        dot += qa * ka;
      }
      logits[j] = dot / std::sqrt(static_cast<double>(d));
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int64_t a = 0; a < d; ++a) {
      double acc = 0;
      for (int64_t j = 0; j < R; ++j) {
        double va = 0;
        for (int64_t b = 0; b < d; ++b) {
          va += wv[a][b].item<double>() * fr[b][j].item<double>();
        }
        acc += (logits[j] / z) * va;
      }
      CHECK(res.attended[0][a][i].item<double>() == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}

TEST_CASE("selection covering all keys reproduces dense attention") {
  torch::manual_seed(41);
  Attention attn(10);
  attn->eval();
  auto coarse = toy_features(10, 24, 42);
  auto ref = toy_features(10, 24, 43);
  torch::NoGradGuard ng;
  auto dense = attn->forward(coarse, ref);

  auto rng = make_rng(44);
  auto sel = select_regions(torch::randn({24}, torch::kFloat64), 8, 16, rng);
  auto idx = torch::tensor(sel.all()).unsqueeze(0);
  auto sparse = attn->forward(coarse, ref, idx);
  CHECK((sparse.attended - dense.attended).abs().max().item<double>() < 1e-4);
}

TEST_CASE("attention is equivariant to permuting reference regions") {
  torch::manual_seed(45);
  Attention attn(8);
  attn->eval();
  auto coarse = toy_features(8, 12, 46);
  auto ref = toy_features(8, 12, 47);
  torch::NoGradGuard ng;

  auto idx = torch::tensor({{0, 3, 5, 9}}, torch::kInt64);
  auto base = attn->forward(coarse, ref, idx);

  auto perm = torch::randperm(12);
  FlattenedFeatures ref_p = ref;
  ref_p.mat = ref.mat.index_select(2, perm);
  auto inv = torch::empty_like(perm);
  inv.index_put_({perm}, torch::arange(12));
  auto idx_p = inv.index_select(0, idx[0]).unsqueeze(0);
  auto permuted = attn->forward(coarse, ref_p, idx_p);
  CHECK((base.attended - permuted.attended).abs().max().item<double>() < 1e-5);
}

TEST_CASE("attention weights are shift invariant in the logits") {
  torch::manual_seed(49);
  const int64_t d = 8, R = 10;
  Attention attn(d);
  attn->to(torch::kFloat64);
  attn->eval();
  auto coarse = toy_features(d, R, 50, torch::kFloat64);
  auto ref = toy_features(d, R, 51, torch::kFloat64);
  torch::NoGradGuard ng;
  auto res = attn->forward(coarse, ref);

  auto q = attn->wq(coarse.mat.transpose(1, 2));
  auto k = attn->wk(ref.mat.transpose(1, 2));
  auto logits = torch::matmul(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(d));
  CHECK((torch::softmax(logits, -1) - res.weights).abs().max().item<double>() < 1e-6);
  CHECK((torch::softmax(logits + 3.7, -1) - res.weights).abs().max().item<double>() < 1e-6);
}

TEST_CASE("attend MAC count scales with the key set") {
  torch::manual_seed(53);
  Attention attn(16);
  attn->eval();
  auto coarse = toy_features(16, 64, 54);
  auto ref = toy_features(16, 64, 55);
  torch::NoGradGuard ng;
  auto dense = attn->forward(coarse, ref);
  auto rng = make_rng(56);
  auto sel = select_regions(torch::randn({64}, torch::kFloat64), 8, 8, rng);
  auto sparse = attn->forward(coarse, ref, torch::tensor(sel.all()).unsqueeze(0));
  CHECK(dense.stats.total() == 2LL * 64 * 64 * 16);
  CHECK(sparse.stats.total() == 2LL * 64 * 16 * 16);
  double ratio = static_cast<double>(sparse.stats.total()) / dense.stats.total();
  CHECK(ratio == doctest::Approx(16.0 / 64.0));
}

TEST_CASE("attend rejects mismatched feature dimensions") {
  Attention attn(8);
  auto coarse = toy_features(8, 12, 57);
  auto ref = toy_features(6, 12, 58);
  CHECK_THROWS(attn->forward(coarse, ref));
}

TEST_CASE("attend gradient w.r.t. coarse features matches finite differences") {
  torch::manual_seed(59);
  const int64_t d = 4, R = 4;
  Attention attn(d);
  attn->to(torch::kFloat64);
  auto ref = toy_features(d, R, 60, torch::kFloat64);
  auto weights = torch::randn({1, d, R}, torch::kFloat64);
  auto x0 = torch::randn({1, d, R}, torch::kFloat64);
  auto err = sscn::testing::max_rel_grad_err(
      [&](const torch::Tensor& x) {
        FlattenedFeatures f;
        f.mat = x;
        f.h4 = 1;
        f.w4 = R;
        return (attn->forward(f, ref).attended * weights).sum();
      },
      x0);
  CHECK(err < 1e-3);
}

TEST_CASE("fusion decoder emits ab planes and a quarter-resolution distribution") {
  torch::manual_seed(61);
  RefEncoder enc(3, 0.25);
  enc->eval();
  auto pyr = enc->forward(torch::randn({2, 3, 32, 32}), FeaturePyramid::Source::kCoarse);
  auto flat = flatten_pyramid(pyr);
  const int64_t q = 313;
  FusionDecoder dec(enc->level_channels(), flat.d(), q);
  dec->eval();
  torch::NoGradGuard ng;

  auto out = dec->forward(unflatten(flat), pyr);
  CHECK(out.ab.sizes() == torch::IntArrayRef({2, 2, 32, 32}));
  CHECK(out.distribution.sizes() == torch::IntArrayRef({2, q, 8, 8}));
  CHECK((out.distribution.sum(1) - 1.0).abs().max().item<double>() < 1e-5);

  // zeroed attended features still decode to validly shaped output
  auto zeroed = dec->forward(torch::zeros_like(unflatten(flat)), pyr);
  CHECK(zeroed.ab.sizes() == out.ab.sizes());
  CHECK(zeroed.distribution.sizes() == out.distribution.sizes());
}
