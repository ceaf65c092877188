#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "xraft/errors.hpp"
#include "xraft/evaluation.hpp"

using namespace xraft;

namespace {

const Modality W = Modality::kWhite;
const Modality B = Modality::kBlue;

HsiCube random_cube(int w, int h, int bands, Modality m, Rng& rng) {
  HsiCube c(w, h, bands, m);
  for (float& v : c.values) v = static_cast<float>(rng.uniform());
  return c;
}

double mean_norm(const FlowField& f) {
  double s = 0.0;
  for (std::size_t p = 0; p < f.pixels(); ++p) s += std::hypot(double{f.uv[2 * p]}, double{f.uv[2 * p + 1]});
  return s / static_cast<double>(f.pixels());
}

FlowPredictor constant(double u, double v) {
  return [u, v](const HsiCube& s, const HsiCube&) {
    return FlowField(s.width, s.height, static_cast<float>(u), static_cast<float>(v));
  };
}

}  // namespace

TEST_CASE("gen_deformation") {
  const FlowField zero = gen_deformation(20, 16, {3, 4.0, 0.0});
  for (float v : zero.uv) CHECK(v == 0.0f);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FlowField f = gen_deformation(32, 24, {seed, 3.0, 7.5});
    CHECK(f.width == 32);
    CHECK(f.height == 24);
    CHECK(f.max_norm() == doctest::Approx(7.5).epsilon(1e-6));
    CHECK(gen_deformation(32, 24, {seed, 3.0, 7.5}).uv == f.uv);
    CHECK(gen_deformation(32, 24, {seed + 100, 3.0, 7.5}).uv != f.uv);
  }
  CHECK_THROWS_AS(gen_deformation(8, 8, {0, 0.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(gen_deformation(8, 8, {0, 2.0, -1.0}), ConfigError);
}

TEST_CASE("apply_deformation") {
  Rng rng(1);
  const HsiCube cube = random_cube(12, 10, 4, W, rng);
  CHECK(apply_deformation(cube, FlowField(12, 10)).values == cube.values);

  const HsiCube moved = apply_deformation(cube, FlowField(12, 10, 2.0f, -1.0f));
  for (int b = 0; b < 4; ++b)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) {
        const int sx = x + 2, sy = y - 1;
        const float expected = (sx < 12 && sy >= 0) ? cube.at(b, sy, sx) : 0.0f;
        CHECK(moved.at(b, y, x) == expected);
      }

  const FlowField f = gen_deformation(12, 10, {5, 2.0, 3.0});
  const HsiCube whole = apply_deformation(cube, f);
  for (int b = 0; b < 4; ++b) {
    HsiCube one(12, 10, 1, W);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) one.at(0, y, x) = cube.at(b, y, x);
    const HsiCube single = apply_deformation(one, f);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) CHECK(single.at(0, y, x) == whole.at(b, y, x));
  }
  CHECK_THROWS_AS(apply_deformation(cube, FlowField(10, 10)), ShapeError);
}

TEST_CASE("eval_synthetic self-consistency") {
  Rng rng(2);
  const EvalPair pair{random_cube(32, 32, 6, W, rng), random_cube(32, 32, 6, B, rng)};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DeformRecipe recipe{seed, 6.0, 5.0};
    const FlowField truth = gen_deformation(32, 32, recipe);
    const FlowPredictor oracle_flow = [&](const HsiCube&, const HsiCube&) { return truth; };
    for (auto d : {Direction::kWhiteToBlue, Direction::kBlueToWhite, Direction::kBoth})
      CHECK(eval_synthetic(oracle_flow, pair, recipe, d) < 1e-3);
    const FlowPredictor none = constant(0.0, 0.0);
    CHECK(std::abs(eval_synthetic(none, pair, recipe, Direction::kWhiteToBlue) - mean_norm(truth)) <= 1e-3);

    const FlowPredictor off = constant(0.7, -0.2);
    const double wb = eval_synthetic(off, pair, recipe, Direction::kWhiteToBlue);
    const double bw = eval_synthetic(off, pair, recipe, Direction::kBlueToWhite);
    CHECK(std::abs(eval_synthetic(off, pair, recipe, Direction::kBoth) - 0.5 * (wb + bw)) <= 1e-9);
  }

  // The predictor sees the deformed source and the untouched target.
  const DeformRecipe recipe{9, 6.0, 5.0};
  int calls = 0;
  const FlowPredictor spy = [&](const HsiCube& s, const HsiCube& t) {
    ++calls;
    CHECK(s.modality == B);
    CHECK(t.values == pair.white.values);
    CHECK(s.values == apply_deformation(pair.blue, gen_deformation(32, 32, recipe)).values);
    return FlowField(32, 32);
  };
  eval_synthetic(spy, pair, recipe, Direction::kBlueToWhite);
  CHECK(calls == 1);
  CHECK(parse_direction("both") == Direction::kBoth);
  CHECK(std::string(direction_name(Direction::kBlueToWhite)) == "bw");
  CHECK_THROWS_AS(parse_direction("up"), ConfigError);
  CHECK_THROWS_AS(mean_synthetic_epe(spy, {}, recipe, Direction::kBoth), std::invalid_argument);
}

TEST_CASE("eval_keypoints") {
  const FlowField shift(16, 16, 2.0f, 3.0f);
  CHECK(eval_keypoints(shift, {{5, 5, 7, 8}}) == 0.0);
  CHECK(eval_keypoints(shift, {{5, 5, 10, 12}}) == doctest::Approx(5.0));
  CHECK_THROWS_AS(eval_keypoints(shift, {}), std::invalid_argument);

  Rng rng(3);
  const FlowField f = oracle::smooth_flow(16, 16, 2.0, rng);
  std::vector<KeypointPair> pairs;
  for (int i = 0; i < 20; ++i) {
    const double x = rng.uniform(0, 15), y = rng.uniform(0, 15);
    const auto [u, v] = oracle::sample_flow(f, x, y);
    pairs.push_back({x, y, x + u + rng.uniform(-1, 1), y + v + rng.uniform(-1, 1)});
  }
  double expected = 0.0;
  for (const auto& p : pairs) {
    const auto [u, v] = oracle::sample_flow(f, p.x_src, p.y_src);
    expected += std::hypot(p.x_src + u - p.x_dst, p.y_src + v - p.y_dst);
  }
  expected /= 20.0;
  const double got = eval_keypoints(f, pairs);
  CHECK(std::abs(got - expected) <= 1e-9);
  std::vector<KeypointPair> shuffled(pairs.rbegin(), pairs.rend());
  std::swap(shuffled[3], shuffled[11]);
  CHECK(eval_keypoints(f, shuffled) == doctest::Approx(got).epsilon(1e-12));

  const auto path = std::filesystem::temp_directory_path() / "xraft_kp.txt";
  write_keypoints(pairs, path);
  CHECK(read_keypoints(path) == pairs);
  {
    std::ofstream out(path);
    out << "# comment\n1 2 3 4\n1 2 3\n";
  }
  CHECK_THROWS_WITH_AS(read_keypoints(path), doctest::Contains(":3:"), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_keypoints(path), FormatError);
}

TEST_CASE("eval_mask_iou") {
  Rng rng(4);
  const ValidityMask m = oracle::random_mask(16, 16, 0.4, rng);
  CHECK(eval_mask_iou(FlowField(16, 16), m, m) == 0.0);
  CHECK(eval_mask_iou(FlowField(16, 16), ValidityMask(16, 16, false), ValidityMask(16, 16, false)) == 0.0);

  ValidityMask left(16, 16, false), right(16, 16, false);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) {
      left.set(x, y, true);
      right.set(x + 8, y, true);
    }
  CHECK(eval_mask_iou(FlowField(16, 16), left, right) == 1.0);

  // A square moved right by 3: the flow on the destination grid points back.
  ValidityMask src(16, 16, false), dst(16, 16, false);
  for (int y = 4; y < 10; ++y)
    for (int x = 3; x < 9; ++x) {
      src.set(x, y, true);
      dst.set(x + 3, y, true);
    }
  CHECK(eval_mask_iou(FlowField(16, 16, -3.0f, 0.0f), src, dst) == 0.0);

  for (int trial = 0; trial < 30; ++trial) {
    const FlowField f = oracle::smooth_flow(16, 16, 2.0, rng);
    const ValidityMask a = oracle::random_mask(16, 16, 0.5, rng), b = oracle::random_mask(16, 16, 0.5, rng);
    const double e = eval_mask_iou(f, a, b);
    CHECK(e >= 0.0);
    CHECK(e <= 1.0);
    CHECK(std::abs(e - oracle::one_minus_iou(oracle::warp_mask(a, f), b)) <= 1e-12);

    // Dropping a pixel of the correct overlap from dst never lowers the error.
    const ValidityMask moved = warp_mask(a, f);
    ValidityMask eroded = b;
    for (std::size_t i = 0; i < eroded.valid.size(); ++i)
      if (moved.valid[i] && eroded.valid[i]) {
        eroded.valid[i] = 0;
        break;
      }
    CHECK(eval_mask_iou(f, a, eroded) >= e);
  }
  CHECK_THROWS_AS(eval_mask_iou(FlowField(16, 16), m, ValidityMask(8, 16, false)), ShapeError);
}

TEST_CASE("render_registration") {
  HsiCube src(16, 16, 3, W), tgt(16, 16, 3, B);
  // Distinct band levels: no blend with the zero fill can come out grey.
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      src.at(0, y, x) = 0.9f;
      src.at(1, y, x) = 0.2f;
      src.at(2, y, x) = 0.5f;
    }
  const ColorMatrix q = ColorMatrix::identity3();
  const FlowField fwd(16, 16, 1.0f, 0.0f), back(16, 16, -1.0f, 0.0f);

  auto grey = [](const RgbImage& img, std::size_t p) {
    return img.pixels[3 * p] == 128 && img.pixels[3 * p + 1] == 128 && img.pixels[3 * p + 2] == 128;
  };
  const RgbImage ok = render_registration(src, tgt, back, fwd, 3.0, q);
  CHECK(ok.width == 16);
  for (std::size_t p = 0; p < 256; ++p) CHECK_FALSE(grey(ok, p));
  const RgbImage bad = render_registration(src, tgt, FlowField(16, 16, 5.0f, 5.0f), FlowField(16, 16, 5.0f, 5.0f), 3.0, q);
  for (std::size_t p = 0; p < 256; ++p) CHECK(grey(bad, p));

  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const FlowField st = oracle::smooth_flow(16, 16, 3.0, rng), ts = oracle::smooth_flow(16, 16, 3.0, rng);
    const RgbImage img = render_registration(src, tgt, st, ts, 3.0, q);
    const ValidityMask keep = discrepancy_mask(ts, st, 3.0);
    for (std::size_t p = 0; p < 256; ++p) CHECK(grey(img, p) == !keep.valid[p]);
  }
}

TEST_CASE("eval_report") {
  const SynthDataset data = make_synth(fixtures::tiny_data(32, 0, 3, 6));
  EvalSet set{data.test, data.annotated, DeformRecipe{4, 6.0, 3.0}};

  SUBCASE("single run") {
    const auto rows = eval_report({constant(0.5, 0.0)}, set, "m");
    REQUIRE(rows.size() == 9);
    for (const auto& r : rows) {
      CHECK(r.model == "m");
      CHECK_FALSE(r.stddev);
      REQUIRE(r.value);
    }
    for (std::size_t m = 0; m < 3; ++m)
      CHECK(std::abs(*rows[3 * m + 2].value - 0.5 * (*rows[3 * m].value + *rows[3 * m + 1].value)) <= 1e-9);
    CHECK(rows[0].metric == "synthetic_epe");
    CHECK(rows[0].direction == "wb");
    const std::string text = format_report(rows);
    CHECK(text.rfind("model\tdirection\tmetric\tvalue\tstd\n", 0) == 0);
    CHECK(text.find("m\tboth\tmask_1-iou\t") != std::string::npos);
  }
  SUBCASE("ground truth scores zero on generated annotations") {
    REQUIRE(set.annotated[0].truth_wb);
    CHECK(eval_keypoints(*set.annotated[0].truth_wb, set.annotated[0].keypoints) < 1e-9);
    const auto& a = set.annotated[0];
    CHECK(eval_mask_iou(*a.truth_wb, *a.blue_mask, *a.white_mask) == 0.0);
  }
  SUBCASE("missing annotations are absent") {
    set.annotated[0].white_mask.reset();
    const auto rows = eval_report({constant(0.5, 0.0)}, set, "m");
    CHECK(rows[3].value);
    CHECK_FALSE(rows[6].value);
    CHECK(format_report(rows).find("m\twb\tmask_1-iou\tabsent") != std::string::npos);
    set.annotated.clear();
    const auto bare = eval_report({constant(0.5, 0.0)}, set, "m");
    CHECK_FALSE(bare[3].value);
    CHECK(bare[0].value);
  }
  SUBCASE("several runs give mean and sample std matching the per-run rows") {
    std::vector<FlowPredictor> runs;
    for (int r = 0; r < 5; ++r) runs.push_back(constant(0.3 * r, -0.1 * r));
    const auto rows = eval_report(runs, set, "x");
    REQUIRE(rows.size() == 5 * 9 + 9);
    for (std::size_t cell = 0; cell < 9; ++cell) {
      std::vector<double> v;
      for (std::size_t r = 0; r < 5; ++r) {
        const auto& row = rows[r * 9 + cell];
        CHECK(row.model == "x/run" + std::to_string(r));
        v.push_back(*row.value);
      }
      double mu = 0.0, ss = 0.0;
      for (double x : v) mu += x / 5.0;
      for (double x : v) ss += (x - mu) * (x - mu);
      const auto& agg = rows[45 + cell];
      CHECK(agg.model == "x");
      CHECK(*agg.value == doctest::Approx(mu).epsilon(1e-12));
      CHECK(*agg.stddev == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-12));
    }
    std::istringstream text(format_report(rows));
    std::string line;
    int lines = 0;
    while (std::getline(text, line)) ++lines;
    CHECK(lines == 1 + 54);
  }
  CHECK_THROWS_AS(eval_report({}, set, "m"), std::invalid_argument);
}
