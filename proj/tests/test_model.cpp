#include <filesystem>

#include "sscn/common.hpp"
#include "sscn/model.hpp"
#include "support.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace sscn;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.resolution = 32;
  c.scale_factor = 0.125;
  c.class_count = 5;
  return c;
}

SscnModel tiny_model(uint64_t seed = 1, std::optional<ModelConfig> cfg = std::nullopt) {
  torch::manual_seed(seed);
  SscnModel m(cfg.value_or(tiny_config()));
  m->mark_trained();
  m->eval();
  return m;
}

}  // namespace

TEST_CASE("model config json round trip and diff") {
  auto c = tiny_config();
  auto back = ModelConfig::from_json(c.to_json());
  CHECK(back == c);

  auto other = c;
  other.scale_factor = 0.5;
  other.class_count = 7;
  auto diffs = config_diff(c, other);
  REQUIRE(diffs.size() == 2);
  CHECK(diffs[0].find("scale_factor") != std::string::npos);
  CHECK(config_diff(c, c).empty());
}

TEST_CASE("untrained model refuses to colorize") {
  torch::manual_seed(2);
  SscnModel m(tiny_config());
  auto img = sscn::testing::make_synth_image(3, 32, 1);
  auto L = rgb_to_lab(img).L;
  CHECK_THROWS_WITH(m->colorize(L, img, AttendMode::kDense, 0, 0, 0),
                    doctest::Contains("no trained weights"));
}

TEST_CASE("colorize passes luminance through untouched and is deterministic") {
  auto m = tiny_model(4);
  auto img = sscn::testing::make_synth_image(5, 48, 2);  // off-resolution target
  auto ref = sscn::testing::make_synth_image(6, 32, 3);
  auto L = rgb_to_lab(img).L;

  auto out1 = m->colorize(L, ref, AttendMode::kSparse, 16, 16, 7);
  CHECK(torch::equal(out1.L, L));
  CHECK(out1.a.sizes() == L.sizes());
  out1.validate();

  auto out2 = m->colorize(L, ref, AttendMode::kSparse, 16, 16, 7);
  CHECK(torch::equal(out1.a, out2.a));
  CHECK(torch::equal(out1.b, out2.b));

  // a different selection seed changes the sparse key set
  auto out3 = m->colorize(L, ref, AttendMode::kSparse, 4, 4, 8);
  CHECK(out3.a.sizes() == out1.a.sizes());
}

TEST_CASE("sparse selection covering every region equals dense attention") {
  auto m = tiny_model(9);
  auto img = sscn::testing::make_synth_image(10, 32, 0);
  auto ref = sscn::testing::make_synth_image(11, 32, 1);
  auto L = rgb_to_lab(img).L;
  const int64_t R = m->config.regions();

  auto dense = m->colorize(L, ref, AttendMode::kDense, 0, 0, 0);
  auto sparse = m->colorize(L, ref, AttendMode::kSparse, R / 2, R - R / 2, 3);
  CHECK((dense.a - sparse.a).abs().max().item<double>() < 1e-4 * kChromaRange);
  CHECK((dense.b - sparse.b).abs().max().item<double>() < 1e-4 * kChromaRange);
}

TEST_CASE("k+r beyond the region count is rejected") {
  auto m = tiny_model(12);
  auto img = sscn::testing::make_synth_image(13, 32, 0);
  auto L = rgb_to_lab(img).L;
  const int64_t R = m->config.regions();
  CHECK_THROWS_WITH(m->colorize(L, img, AttendMode::kSparse, R, 1, 0),
                    doctest::Contains("k+r exceeds region count"));
}

TEST_CASE("coarse output depends on the reference only through the style vector") {
  auto m = tiny_model(14);
  torch::NoGradGuard ng;
  auto ref1 = lab_norm_from_rgb(sscn::testing::make_synth_image(15, 32, 1)).unsqueeze(0);
  auto ref2 = lab_norm_from_rgb(sscn::testing::make_synth_image(16, 32, 2)).unsqueeze(0);
  auto L = torch::rand({1, 1, 32, 32}) * 2 - 1;

  auto style = m->style_from_features(m->encode_reference(ref1));
  auto a = m->coarse_from_style(L, style);
  // encoding an unrelated reference in between must not disturb the decode
  (void)m->encode_reference(ref2);
  auto b = m->coarse_from_style(L, style);
  CHECK(torch::equal(a, b));

  auto full = m->coarse_colorize(L, ref1);
  CHECK(torch::equal(a, full));
}

TEST_CASE("checkpoint round trip restores forward outputs bit-identically") {
  auto dir = sscn::testing::temp_dir("ckpt");
  auto m = tiny_model(17);
  auto img = sscn::testing::make_synth_image(18, 32, 2);
  auto ref = sscn::testing::make_synth_image(19, 32, 4);
  auto L = rgb_to_lab(img).L;
  auto before = m->colorize(L, ref, AttendMode::kSparse, 8, 8, 5);

  CheckpointMeta meta;
  meta.step = 42;
  meta.epoch = 2;
  meta.class_names = {"a", "b", "c", "d", "e"};
  auto path = dir + "/model.sscn";
  save_checkpoint(path, m, meta, "opaque-optimizer-bytes");

  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.step == 42);
  CHECK(loaded.meta.epoch == 2);
  CHECK(loaded.meta.class_names.size() == 5);
  CHECK(loaded.optimizer_blob == "opaque-optimizer-bytes");
  CHECK(loaded.model->config == m->config);
  CHECK(loaded.model->weights_ready());

  auto after = loaded.model->colorize(L, ref, AttendMode::kSparse, 8, 8, 5);
  CHECK(torch::equal(before.a, after.a));
  CHECK(torch::equal(before.b, after.b));
}

TEST_CASE("checkpoint config mismatch is rejected with a diff report") {
  auto dir = sscn::testing::temp_dir("ckpt_diff");
  auto m = tiny_model(20);
  auto path = dir + "/model.sscn";
  save_checkpoint(path, m, {});

  auto expected = tiny_config();
  expected.scale_factor = 0.5;
  CHECK_THROWS_WITH(load_checkpoint(path, expected), doctest::Contains("scale_factor"));

  CHECK_THROWS(load_checkpoint(dir + "/missing.sscn"));
}

TEST_CASE("single-stage ablation variant runs without the coarse path") {
  auto cfg = tiny_config();
  cfg.two_stage = false;
  auto m = tiny_model(21, cfg);
  auto img = sscn::testing::make_synth_image(22, 32, 2);
  auto ref = sscn::testing::make_synth_image(23, 32, 3);
  auto L = rgb_to_lab(img).L;
  auto out = m->colorize(L, ref, AttendMode::kSparse, 8, 8, 1);
  CHECK(torch::equal(out.L, L));
  CHECK_THROWS(m->coarse_colorize(torch::rand({1, 1, 32, 32}),
                                  lab_norm_from_rgb(ref).unsqueeze(0)));

  // round trip keeps the variant
  auto dir = sscn::testing::temp_dir("ckpt_ablate");
  save_checkpoint(dir + "/m.sscn", m, {});
  auto loaded = load_checkpoint(dir + "/m.sscn");
  CHECK_FALSE(loaded.model->config.two_stage);
}

TEST_CASE("attention diagnostics serialize to json") {
  auto m = tiny_model(24);
  auto img = sscn::testing::make_synth_image(25, 32, 2);
  auto ref = sscn::testing::make_synth_image(26, 32, 4);
  auto L = rgb_to_lab(img).L;
  ColorizeDiagnostics diag;
  (void)m->colorize(L, ref, AttendMode::kSparse, 8, 8, 5, &diag);
  REQUIRE(diag.selection.has_value());
  CHECK(diag.coarse_ab.defined());

  auto j = diagnostics_json(diag, {0, 3});
  CHECK(j["rows"].size() == 2);
  CHECK(j["rows"][0]["query_index"] == 0);
  CHECK(j["rows"][0]["key_indices"].size() == 16);
  CHECK(j["rows"][0]["weights"].size() == 16);
  CHECK(j["selection"]["topk"].size() == 8);
  CHECK(j["selection"]["cam"].size() == m->config.regions());

  double sum = 0;
  for (const auto& w : j["rows"][0]["weights"]) {
    sum += w.get<double>();
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
}
