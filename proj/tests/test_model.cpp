#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "xraft/adam.hpp"
#include "xraft/errors.hpp"
#include "xraft/model.hpp"
#include "xraft/ops.hpp"

using namespace xraft;

namespace {

const Modality W = Modality::kWhite;
const Modality B = Modality::kBlue;

ModelConfig small_config() {
  ModelConfig c;
  c.iterations = 4;
  return c;
}

double max_diff(const Tensor& a, const Tensor& b) { return oracle::max_abs_diff(a, b); }

// Sets every parameter of one encoder to fresh random values.
void scramble(Encoder& e, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& l : e.layers)
    for (double& v : l.weight.mutable_values()) v = round_to_precision(rng.normal(0.0, 0.3));
}

std::map<std::string, std::vector<double>> snapshot(const FlowModel& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : m.parameters()) out[p.name].assign(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

Tensor image(std::uint64_t seed, int h = 32, int w = 32) {
  Rng rng(seed);
  return oracle::random_tensor({1, 3, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST_CASE("modality pair keys") {
  CHECK(all_pair_keys().size() == 4);
  for (const auto& k : all_pair_keys()) CHECK(ModalityPairKey::parse(k.name()) == k);
  CHECK(ModalityPairKey{W, B}.cross());
  CHECK_FALSE(ModalityPairKey{B, B}.cross());
  CHECK(ModalityPairKey{W, B} != ModalityPairKey{B, W});
  CHECK_THROWS_AS(ModalityPairKey::parse("WX"), std::invalid_argument);
}

TEST_CASE("encode selects encoders and validates input") {
  const FlowModel base = FlowModel::create_base(small_config(), 1);
  const Tensor x = image(2);
  const Tensor f = base.encode(x, {W, W}, EncoderKind::kFeature);
  CHECK(f.shape() == Shape{1, 64, 4, 4});
  CHECK(base.encode(x, {W, W}, EncoderKind::kContext).shape() == Shape{1, 64, 4, 4});
  CHECK_THROWS_AS(base.encode(x, {W, B}, EncoderKind::kFeature), std::invalid_argument);
  CHECK_THROWS_AS(base.encode(Tensor({1, 4, 32, 32}), {W, W}, EncoderKind::kFeature), ShapeError);

  FlowModel xr = build_xraft(base, InputMode::kRgb, ColorMatrix::cie_default());
  scramble(xr.encoder({W, B}, EncoderKind::kFeature), 11);
  const Tensor wb = xr.encode(x, {W, B}, EncoderKind::kFeature);
  const Tensor bw = xr.encode(x, {B, W}, EncoderKind::kFeature);
  CHECK(max_diff(wb, bw) > 1e-3);
}

TEST_CASE("a white image uses the (W,B) encoders whichever role it plays") {
  FlowModel xr = build_xraft(FlowModel::create_base(small_config(), 3), InputMode::kRgb, ColorMatrix::cie_default());
  xr.set_trainable(TrainPolicy::kAll);
  auto used = [&](bool white_is_source) {
    active_graph().clear();
    for (auto& p : xr.parameters()) p.tensor.clear_grad();
    const Tensor w = image(4), b = image(5);
    const auto flows = white_is_source ? xr.forward_tensors(w, b, W, B, 2) : xr.forward_tensors(b, w, B, W, 2);
    backward(ops::sum(flows.back()));
    active_graph().clear();
    std::set<std::string> names;
    for (const auto& p : xr.parameters())
      if (p.tensor.has_grad() && p.name.rfind("update.", 0) != 0) names.insert(p.name.substr(0, p.name.find(".conv")));
    return names;
  };
  CHECK(used(true) == std::set<std::string>{"feature.WB", "feature.BW", "context.WB"});
  CHECK(used(false) == std::set<std::string>{"feature.WB", "feature.BW", "context.BW"});
}

TEST_CASE("forward shape contract") {
  const FlowModel base = FlowModel::create_base(small_config(), 6);
  NoGradGuard no_grad;
  const auto flows = base.forward(image(7), image(8), W, W, 5);
  REQUIRE(flows.size() == 5);
  for (const auto& f : flows) {
    CHECK(f.width == 32);
    CHECK(f.height == 32);
    CHECK(std::isfinite(f.max_norm()));
  }
  CHECK(base.forward(image(7), image(8), W, W).size() == 4);
  CHECK_THROWS_AS(base.forward(image(7, 24, 32), image(8, 24, 32), W, W), ShapeError);
  CHECK_THROWS_AS(base.forward(image(7), image(8, 32, 48), W, W), ShapeError);

  ModelConfig four = small_config();
  four.downsample = 4;
  const FlowModel fine = FlowModel::create_base(four, 6);
  CHECK(fine.encode(image(7), {W, W}, EncoderKind::kFeature).shape() == Shape{1, 64, 8, 8});
  CHECK(fine.forward(image(7), image(8), W, W, 2).back().width == 32);
}

TEST_CASE("init_cross_rgb") {
  Tensor a({1, 3, 1, 1}, {0.2, 0.3, 0.5});
  const Tensor b = init_cross_rgb(a);
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 0.0);
  CHECK(b[2] == doctest::Approx(1.0));

  Rng rng(9);
  Tensor blue_only = oracle::random_tensor({4, 3, 3, 3}, rng);
  for (int o = 0; o < 4; ++o)
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < 9; ++t) blue_only.mutable_values()[(o * 3 + c) * 9 + t] = 0.0;
  CHECK(max_diff(init_cross_rgb(blue_only), blue_only) == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = oracle::random_tensor({6, 3, 5, 5}, rng);
    const Tensor x = oracle::random_tensor({1, 3, 12, 12}, rng, 0.0, 1.0);
    const Tensor bias({6}, 0.0);
    const auto lhs = oracle::conv2d(x, init_cross_rgb(w), bias, 2, 2);
    const auto rhs = oracle::conv2d(to_bbb(x), w, bias, 2, 2);
    double err = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) err = std::max(err, std::abs(lhs[i] - rhs[i]));
    CHECK(err <= 1e-5);
  }
  CHECK_THROWS_AS(init_cross_rgb(Tensor({2, 4, 3, 3})), ShapeError);
}

TEST_CASE("lift_rgb_to_hsi") {
  Rng rng(10);
  const Tensor b = oracle::random_tensor({4, 3, 3, 3}, rng);
  CHECK(max_diff(lift_rgb_to_hsi(b, ColorMatrix::identity3()), b) == 0.0);
  const Tensor zero = lift_rgb_to_hsi(Tensor({4, 3, 3, 3}), ColorMatrix::cie_default());
  CHECK(zero.shape() == Shape{4, 10, 3, 3});
  for (double v : zero.values()) CHECK(v == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    ColorMatrix q{10, std::vector<double>(30)};
    for (double& v : q.weights) v = rng.uniform(0.0, 0.3);
    HsiCube cube(10, 10, 10, Modality::kWhite);
    for (float& v : cube.values) v = static_cast<float>(rng.uniform());
    const Tensor w = oracle::random_tensor({5, 3, 3, 3}, rng);
    const Tensor bias({5}, 0.0);
    const auto lhs = oracle::conv2d(cube.to_tensor(), lift_rgb_to_hsi(w, q), bias, 1, 1);
    const auto rhs = oracle::conv2d(ops::reshape(to_rgb(cube, q), {1, 3, 10, 10}), w, bias, 1, 1);
    double err = 0.0;
    for (std::size_t i = 0; i < lhs.size(); ++i) err = std::max(err, std::abs(lhs[i] - rhs[i]));
    CHECK(err <= 1e-4);
  }
  CHECK_THROWS_AS(lift_rgb_to_hsi(Tensor({2, 2, 3, 3}), ColorMatrix::cie_default()), ShapeError);
}

TEST_CASE("build_xraft clones and adapts the base") {
  const FlowModel base = FlowModel::create_base(small_config(), 12);
  const ColorMatrix q = ColorMatrix::cie_default();
  const FlowModel rgb = build_xraft(base, InputMode::kRgb, q);
  CHECK(rgb.is_xraft());
  const auto base_params = snapshot(base);
  const auto x_params = snapshot(rgb);
  for (const auto& [name, values] : base_params) {
    if (name.rfind("update.", 0) == 0) CHECK(x_params.at(name) == values);
    const auto dot = name.find('.');
    if (name.find(".WW.") != std::string::npos) CHECK(x_params.at(name) == values);
    if (name.find(".WW.conv0.weight") != std::string::npos) {
      const std::string kind = name.substr(0, dot);
      CHECK(x_params.at(kind + ".BB.conv0.weight") == values);
      CHECK(x_params.at(kind + ".WB.conv0.weight") != values);
    }
  }

  // Cross-modal forward on RGB equals the base on BBB.
  NoGradGuard no_grad;
  const Tensor w = image(13), b = image(14);
  const auto cross = rgb.forward_tensors(w, b, W, B);
  const auto ref = base.forward_tensors(to_bbb(w), to_bbb(b), W, W);
  CHECK(max_diff(cross.back(), ref.back()) <= 1e-4);

  // HSI mode on cubes equals RGB mode on their conversions.
  const FlowModel hsi = build_xraft(base, InputMode::kHsi, q);
  CHECK(hsi.config().in_channels == 10);
  HsiCube cw(32, 32, 10, W), cb(32, 32, 10, B);
  Rng rng(15);
  for (float& v : cw.values) v = static_cast<float>(rng.uniform());
  for (float& v : cb.values) v = static_cast<float>(rng.uniform(0.0, 0.4));
  for (auto [sm, tm] : {std::pair{W, B}, std::pair{B, W}, std::pair{W, W}}) {
    const HsiCube& s = sm == W ? cw : cb;
    const HsiCube& t = tm == W ? cw : cb;
    const auto h = hsi.forward_tensors(model_input(s, InputMode::kHsi, q), model_input(t, InputMode::kHsi, q), sm, tm);
    const auto r = rgb.forward_tensors(model_input(s, InputMode::kRgb, q), model_input(t, InputMode::kRgb, q), sm, tm);
    CHECK(max_diff(h.back(), r.back()) <= 1e-4);
  }

  const FlowModel bbb = build_xraft(base, InputMode::kBbb, q);
  CHECK(snapshot(bbb).at("feature.WB.conv0.weight") == base_params.at("feature.WW.conv0.weight"));
  CHECK_THROWS_AS(build_xraft(rgb, InputMode::kRgb, q), ConfigError);
}

TEST_CASE("trainable policies") {
  FlowModel xr = build_xraft(FlowModel::create_base(small_config(), 16), InputMode::kRgb, ColorMatrix::cie_default());
  const auto before = snapshot(xr);
  auto run_backward = [&]() {
    active_graph().clear();
    const Tensor w = image(17), b = image(18);
    const auto f1 = xr.forward_tensors(w, b, W, B, 3);
    const auto f2 = xr.forward_tensors(b, w, B, W, 3);
    backward(ops::add(ops::mean(ops::mul(f1.back(), f1.back())), ops::mean(ops::mul(f2.back(), f2.back()))));
    active_graph().clear();
  };

  run_backward();
  for (const auto& p : xr.parameters()) {
    const bool cross = p.name.find(".WB.") != std::string::npos || p.name.find(".BW.") != std::string::npos;
    INFO(p.name);
    CHECK(p.tensor.has_grad() == cross);
  }
  std::vector<Tensor> params = xr.trainable_parameters();
  AdamState adam(params, AdamConfig{1e-2});
  for (int step = 0; step < 2; ++step) {
    adam_step(params, adam);
    for (auto& p : params) p.clear_grad();
    run_backward();
  }
  const auto after = snapshot(xr);
  for (const auto& [name, values] : before) {
    const bool cross = name.find(".WB.") != std::string::npos || name.find(".BW.") != std::string::npos;
    INFO(name);
    if (!cross) CHECK(after.at(name) == values);
  }
  CHECK(after.at("feature.WB.conv0.weight") != before.at("feature.WB.conv0.weight"));

  for (auto& p : xr.parameters()) p.tensor.clear_grad();
  xr.set_trainable(TrainPolicy::kAll);
  CHECK(xr.trainable_parameters().size() == xr.parameters().size());
  run_backward();
  for (const auto& p : xr.parameters()) {
    const bool same = p.name.find(".WW.") != std::string::npos || p.name.find(".BB.") != std::string::npos;
    INFO(p.name);
    CHECK(p.tensor.has_grad() == !same);
  }
  for (auto& p : xr.parameters()) p.tensor.clear_grad();
  xr.set_trainable(TrainPolicy::kNone);
  CHECK(xr.trainable_parameters().empty());
}

// One iteration: later iterations look up correlations at detached flow, so
// finite differences would see a path the gradient deliberately drops.
TEST_CASE("recurrent update is differentiable") {
  ModelConfig c = small_config();
  c.feature_dim = 8;
  c.hidden_dim = 4;
  c.context_dim = 4;
  c.corr_radius = 1;
  PrecisionScope p64(Precision::kFloat64);
  FlowModel m = FlowModel::create_base(c, 19);
  Rng rng(20);
  const Tensor src = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  const Tensor tgt = oracle::random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  auto& u = m.update_block();
  auto r = gradcheck::check(
      [&](std::vector<Tensor>&) { return gradcheck::project(m.forward_tensors(src, tgt, W, W, 1).back()); },
      {u.gru_z.weight, u.gru_r.weight, u.gru_q.weight, u.gru_q.bias, u.head2.weight}, {0, 1, 2, 3, 4});
  INFO(r.worst_relative_error);
  CHECK(r.ok(1e-4));
}

TEST_CASE("checkpoint round trip and errors") {
  const FlowModel base = FlowModel::create_base(small_config(), 21);
  const FlowModel xr = build_xraft(base, InputMode::kHsi, ColorMatrix::cie_default());
  const auto path = std::filesystem::temp_directory_path() / "xraft_test_model.xrft";
  for (const FlowModel* m : {&base, &xr}) {
    save_checkpoint(*m, path);
    const FlowModel back = load_checkpoint(path);
    CHECK(back.config() == m->config());
    CHECK(back.is_xraft() == m->is_xraft());
    CHECK(snapshot(back) == snapshot(*m));
    NoGradGuard no_grad;
    const int C = m->config().in_channels;
    Rng rng(22);
    const Tensor s = oracle::random_tensor({1, C, 32, 32}, rng, 0.0, 1.0), t = oracle::random_tensor({1, C, 32, 32}, rng, 0.0, 1.0);
    const auto f1 = m->forward_tensors(s, t, W, m->is_xraft() ? B : W);
    const auto f2 = back.forward_tensors(s, t, W, m->is_xraft() ? B : W);
    CHECK(max_diff(f1.back(), f2.back()) == 0.0);
  }
  std::filesystem::remove(path);

  const auto bytes = encode_checkpoint(base);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(version), doctest::Contains("version"), FormatError);
  auto magic = bytes;
  magic[0] = 'Y';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_WITH_AS(decode_checkpoint(truncated), doctest::Contains("missing"), FormatError);
  auto trailing = bytes;
  trailing.push_back(1);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
}
