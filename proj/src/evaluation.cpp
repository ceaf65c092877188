#include "xraft/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "xraft/errors.hpp"
#include "xraft/filters.hpp"
#include "xraft/ops.hpp"
#include "xraft/rng.hpp"

namespace xraft {

namespace {

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<KeypointPair> reversed(const std::vector<KeypointPair>& pairs) {
  std::vector<KeypointPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p.x_dst, p.y_dst, p.x_src, p.y_src});
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void DeformRecipe::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("deformation: sigma must be positive");
  if (!(amplitude >= 0.0)) throw ConfigError("deformation: amplitude must be non-negative");
}

FlowField gen_deformation(int width, int height, const DeformRecipe& recipe) {
  recipe.validate();
  Rng rng(mix_seed(recipe.seed, 0x6465666f726dULL));
  std::vector<double> u(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  std::vector<double> v(u.size());
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  gaussian_blur(u, width, height, recipe.sigma);
  gaussian_blur(v, width, height, recipe.sigma);
  double peak = 0.0;
  for (std::size_t p = 0; p < u.size(); ++p) peak = std::max(peak, std::hypot(u[p], v[p]));
  const double s = peak > 0.0 ? recipe.amplitude / peak : 0.0;
  FlowField f(width, height);
  for (std::size_t p = 0; p < u.size(); ++p) {
    f.uv[2 * p] = static_cast<float>(u[p] * s);
    f.uv[2 * p + 1] = static_cast<float>(v[p] * s);
  }
  return f;
}

HsiCube apply_deformation(const HsiCube& cube, const FlowField& flow) {
  if (cube.width != flow.width || cube.height != flow.height) {
    throw ShapeError("apply_deformation: cube is " + std::to_string(cube.width) + "x" + std::to_string(cube.height) +
                     ", flow is " + std::to_string(flow.width) + "x" + std::to_string(flow.height));
  }
  NoGradGuard no_grad;
  PrecisionScope exact(Precision::kFloat64);
  return cube_from_tensor(warp(cube.to_tensor(), flow), cube.modality);
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::kWhiteToBlue: return "wb";
    case Direction::kBlueToWhite: return "bw";
    case Direction::kBoth: return "both";
  }
  return "?";
}

Direction parse_direction(const std::string& s) {
  if (s == "wb") return Direction::kWhiteToBlue;
  if (s == "bw") return Direction::kBlueToWhite;
  if (s == "both") return Direction::kBoth;
  throw ConfigError("unknown direction '" + s + "' (expected wb, bw or both)");
}

FlowPredictor model_predictor(const FlowModel& model, const ColorMatrix& q) {
  return [&model, q](const HsiCube& source, const HsiCube& target) {
    NoGradGuard no_grad;
    const InputMode mode = model.config().input_mode;
    const bool bank = model.is_xraft();
    const auto flows = model.forward_tensors(model_input(source, mode, q), model_input(target, mode, q),
                                             bank ? source.modality : Modality::kWhite,
                                             bank ? target.modality : Modality::kWhite);
    return FlowField::from_tensor(flows.back());
  };
}

double eval_synthetic(const FlowPredictor& predict, const EvalPair& pair, const DeformRecipe& recipe, Direction direction) {
  if (direction == Direction::kBoth) {
    return 0.5 * (eval_synthetic(predict, pair, recipe, Direction::kWhiteToBlue) +
                  eval_synthetic(predict, pair, recipe, Direction::kBlueToWhite));
  }
  const bool wb = direction == Direction::kWhiteToBlue;
  const HsiCube& source = wb ? pair.white : pair.blue;
  const HsiCube& target = wb ? pair.blue : pair.white;
  const FlowField truth = gen_deformation(source.width, source.height, recipe);
  return epe(predict(apply_deformation(source, truth), target), truth);
}

double mean_synthetic_epe(const FlowPredictor& predict, const std::vector<EvalPair>& pairs, const DeformRecipe& recipe,
                          Direction direction) {
  if (pairs.empty()) throw std::invalid_argument("mean_synthetic_epe: no evaluation pairs");
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    DeformRecipe r = recipe;
    r.seed = mix_seed(recipe.seed, i);
    total += eval_synthetic(predict, pairs[i], r, direction);
  }
  return total / static_cast<double>(pairs.size());
}

double eval_keypoints(const FlowField& flow, const std::vector<KeypointPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("eval_keypoints: no keypoints");
  NoGradGuard no_grad;
  PrecisionScope exact(Precision::kFloat64);
  const auto K = static_cast<std::int64_t>(pairs.size());
  std::vector<double> coords(static_cast<std::size_t>(2 * K));
  for (std::int64_t k = 0; k < K; ++k) {
    coords[static_cast<std::size_t>(k)] = pairs[static_cast<std::size_t>(k)].x_src;
    coords[static_cast<std::size_t>(K + k)] = pairs[static_cast<std::size_t>(k)].y_src;
  }
  const Tensor sampled = ops::bilinear_sample(flow.to_tensor(), Tensor({1, 2, 1, K}, std::move(coords)));
  double total = 0.0;
  for (std::int64_t k = 0; k < K; ++k) {
    const auto& p = pairs[static_cast<std::size_t>(k)];
    total += std::hypot(p.x_src + sampled[k] - p.x_dst, p.y_src + sampled[K + k] - p.y_dst);
  }
  return total / static_cast<double>(K);
}

std::vector<KeypointPair> read_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open keypoint file " + path.string());
  std::vector<KeypointPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::istringstream ss(line);
    KeypointPair p;
    std::string extra;
    if (!(ss >> p.x_src >> p.y_src >> p.x_dst >> p.y_dst) || (ss >> extra)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'x_src y_src x_dst y_dst'");
    }
    out.push_back(p);
  }
  return out;
}

void write_keypoints(const std::vector<KeypointPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write keypoint file " + path.string());
  out.precision(17);
  for (const auto& p : pairs) out << p.x_src << ' ' << p.y_src << ' ' << p.x_dst << ' ' << p.y_dst << '\n';
}

double eval_mask_iou(const FlowField& flow, const ValidityMask& src_mask, const ValidityMask& dst_mask) {
  if (src_mask.width != dst_mask.width || src_mask.height != dst_mask.height)
    throw ShapeError("eval_mask_iou: mask sizes differ");
  const ValidityMask moved = warp_mask(src_mask, flow);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < moved.valid.size(); ++i) {
    inter += moved.valid[i] && dst_mask.valid[i];
    uni += moved.valid[i] || dst_mask.valid[i];
  }
  return uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

RgbImage render_registration(const HsiCube& source, const HsiCube& target, const FlowField& f_st,
                             const FlowField& f_ts, double threshold, const ColorMatrix& q) {
  if (source.width != target.width || source.height != target.height)
    throw ShapeError("render_registration: source and target sizes differ");
  const HsiCube moved = apply_deformation(source, f_ts);
  const ValidityMask keep = discrepancy_mask(f_ts, f_st, threshold);
  RgbImage img = render_rgb(to_rgb(moved, q));
  for (std::size_t p = 0; p < keep.valid.size(); ++p)
    if (!keep.valid[p])
      for (int c = 0; c < 3; ++c) img.pixels[3 * p + static_cast<std::size_t>(c)] = 128;
  return img;
}

std::vector<MetricRow> eval_report(const std::vector<FlowPredictor>& runs, const EvalSet& set, const std::string& label) {
  if (runs.empty()) throw std::invalid_argument("eval_report: no models given");
  const std::vector<std::string> metrics{"synthetic_epe", "keypoint_epe", "mask_1-iou"};
  const std::vector<std::string> directions{"wb", "bw", "both"};
  // values[run][metric][direction]
  std::vector<std::vector<std::vector<std::optional<double>>>> values;
  for (const auto& predict : runs) {
    std::vector<std::vector<std::optional<double>>> per(3, std::vector<std::optional<double>>(3));
    if (!set.synthetic.empty()) {
      per[0][0] = mean_synthetic_epe(predict, set.synthetic, set.recipe, Direction::kWhiteToBlue);
      per[0][1] = mean_synthetic_epe(predict, set.synthetic, set.recipe, Direction::kBlueToWhite);
    }
    std::vector<double> kp_wb, kp_bw, iou_wb, iou_bw;
    for (const auto& a : set.annotated) {
      const bool has_masks = a.white_mask && a.blue_mask;
      if (a.keypoints.empty() && !has_masks) continue;
      const FlowField f_wb = predict(a.images.white, a.images.blue);
      const FlowField f_bw = predict(a.images.blue, a.images.white);
      if (!a.keypoints.empty()) {
        kp_wb.push_back(eval_keypoints(f_wb, a.keypoints));
        kp_bw.push_back(eval_keypoints(f_bw, reversed(a.keypoints)));
      }
      if (has_masks) {
        iou_wb.push_back(eval_mask_iou(f_wb, *a.blue_mask, *a.white_mask));
        iou_bw.push_back(eval_mask_iou(f_bw, *a.white_mask, *a.blue_mask));
      }
    }
    if (!kp_wb.empty()) {
      per[1][0] = mean_of(kp_wb);
      per[1][1] = mean_of(kp_bw);
    }
    if (!iou_wb.empty()) {
      per[2][0] = mean_of(iou_wb);
      per[2][1] = mean_of(iou_bw);
    }
    for (auto& m : per)
      if (m[0] && m[1]) m[2] = 0.5 * (*m[0] + *m[1]);
    values.push_back(std::move(per));
  }

  std::vector<MetricRow> rows;
  const bool multi = runs.size() > 1;
  if (multi) {
    for (std::size_t r = 0; r < runs.size(); ++r)
      for (std::size_t m = 0; m < 3; ++m)
        for (std::size_t d = 0; d < 3; ++d)
          rows.push_back({label + "/run" + std::to_string(r), directions[d], metrics[m], values[r][m][d], std::nullopt});
  }
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t d = 0; d < 3; ++d) {
      MetricRow row{label, directions[d], metrics[m], std::nullopt, std::nullopt};
      if (values[0][m][d]) {
        std::vector<double> v;
        for (const auto& run : values) v.push_back(*run[m][d]);
        const double mu = mean_of(v);
        row.value = mu;
        if (multi) {
          double ss = 0.0;
          for (double x : v) ss += (x - mu) * (x - mu);
          row.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
      }
      rows.push_back(row);
    }
  return rows;
}

std::string format_report(const std::vector<MetricRow>& rows) {
  std::string out = "model\tdirection\tmetric\tvalue\tstd\n";
  for (const auto& r : rows) {
    out += r.model + '\t' + r.direction + '\t' + r.metric + '\t' + (r.value ? format_value(*r.value) : "absent");
    if (r.stddev) out += '\t' + format_value(*r.stddev);
    out += '\n';
  }
  return out;
}

}  // namespace xraft
