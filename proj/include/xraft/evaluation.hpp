#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xraft/flow.hpp"
#include "xraft/imaging.hpp"
#include "xraft/model.hpp"

namespace xraft {

/// Elastic deformation: smoothed Gaussian noise rescaled to a maximum
/// displacement.
struct DeformRecipe {
  std::uint64_t seed = 0;
  double sigma = 8.0;       // smoothing, pixels
  double amplitude = 10.0;  // max vector norm, pixels

  void validate() const;
};

FlowField gen_deformation(int width, int height, const DeformRecipe& recipe);

// Backward-warps every band: out(x) = cube(x + flow(x)), zero outside.
HsiCube apply_deformation(const HsiCube& cube, const FlowField& flow);

enum class Direction { kWhiteToBlue, kBlueToWhite, kBoth };
const char* direction_name(Direction d);  // "wb", "bw", "both"
Direction parse_direction(const std::string& s);

// Predicts the flow from source to target; modalities travel with the cubes.
using FlowPredictor = std::function<FlowField(const HsiCube& source, const HsiCube& target)>;

// Final-iteration flow of a model, with inputs prepared for its input mode.
// A base model runs its single encoder pair on both images whatever their
// modality, which is the naive cross-modal baseline.
FlowPredictor model_predictor(const FlowModel& model, const ColorMatrix& q);

/// A geometrically aligned white/blue acquisition of one scene.
struct EvalPair {
  HsiCube white;
  HsiCube blue;
};

// Deforms the source image of the requested direction by the recipe's field
// and scores the predicted flow against it. kBoth averages the two.
double eval_synthetic(const FlowPredictor& predict, const EvalPair& pair, const DeformRecipe& recipe, Direction direction);

struct KeypointPair {
  double x_src = 0.0, y_src = 0.0;
  double x_dst = 0.0, y_dst = 0.0;
  bool operator==(const KeypointPair&) const = default;
};

// Mean distance between source + flow(source) and the annotated target.
double eval_keypoints(const FlowField& flow, const std::vector<KeypointPair>& pairs);

std::vector<KeypointPair> read_keypoints(const std::filesystem::path& path);
void write_keypoints(const std::vector<KeypointPair>& pairs, const std::filesystem::path& path);

// 1 - IoU between dst_mask and src_mask pulled along `flow`, where the flow
// lives on dst_mask's grid and points into src_mask's image. 0 when both
// masks are empty.
double eval_mask_iou(const FlowField& flow, const ValidityMask& src_mask, const ValidityMask& dst_mask);

// The source pulled into the target frame along f_ts, rendered as RGB, with
// pixels whose forward-backward residual exceeds the threshold painted grey.
RgbImage render_registration(const HsiCube& source, const HsiCube& target, const FlowField& f_st,
                             const FlowField& f_ts, double threshold, const ColorMatrix& q);

/// White/blue pair with annotations; keypoints run from white to blue.
struct AnnotatedPair {
  EvalPair images;
  std::vector<KeypointPair> keypoints;
  std::optional<ValidityMask> white_mask;
  std::optional<ValidityMask> blue_mask;
  std::optional<FlowField> truth_wb;  // known only for generated pairs; not written to disk
};

struct EvalSet {
  std::vector<EvalPair> synthetic;
  std::vector<AnnotatedPair> annotated;
  DeformRecipe recipe;  // per-case seeds are derived from recipe.seed
};

struct MetricRow {
  std::string model;
  std::string direction;
  std::string metric;  // synthetic_epe, keypoint_epe, mask_1-iou
  std::optional<double> value;  // empty when the annotation kind is absent
  std::optional<double> stddev;
};

// Mean synthetic EPE over the set in one direction.
double mean_synthetic_epe(const FlowPredictor& predict, const std::vector<EvalPair>& pairs, const DeformRecipe& recipe,
                          Direction direction);

// One predictor gives plain rows. Several give per-run rows labelled
// "<label>/run<i>" followed by mean and sample standard deviation rows.
std::vector<MetricRow> eval_report(const std::vector<FlowPredictor>& runs, const EvalSet& set, const std::string& label);

std::string format_report(const std::vector<MetricRow>& rows);

}  // namespace xraft
