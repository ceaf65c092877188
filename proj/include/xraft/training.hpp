#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xraft/evaluation.hpp"
#include "xraft/flow.hpp"
#include "xraft/imaging.hpp"
#include "xraft/model.hpp"

namespace xraft {

struct TrainConfig {
  int batch_size = 20;
  double learning_rate = 5e-5;
  double eps_o = kOcclusionThreshold;
  double eps_d = kDarkThreshold;
  int supervised_iterations = 3;
  int validate_every = 10;  // batches
  int patience = 20;        // validations without improvement
  int max_batches = 0;      // 0 = until early stop
  std::uint64_t seed = 0;

  void validate() const;
};

/// Supervised pretraining on deformed same-modality white pairs.
struct PretrainConfig {
  int steps = 200;
  int batch_size = 8;
  double learning_rate = 4e-4;
  double sigma = 8.0;           // deformation smoothness
  double max_amplitude = 10.0;  // amplitudes drawn uniformly from [0, max]
  std::uint64_t seed = 0;

  void validate() const;
};

/// White-blue-white triplet. Teacher flows may be supplied, e.g. from files;
/// missing ones are computed by the teacher model.
struct TrainingTriplet {
  HsiCube a;
  HsiCube b;
  HsiCube c;
  std::optional<FlowField> teacher_ac;
  std::optional<FlowField> teacher_ca;
};

using TrainLog = std::function<void(const std::string& line)>;

// Flow from a to c through the teacher's (W,W) branch, or the supplied field.
FlowField teacher_flow(const TrainingTriplet& t, const FlowModel& teacher, const ColorMatrix& q);

/// Everything about a triplet that stays fixed while the student trains.
struct PreparedTriplet {
  Tensor a, b, c;  // [1,C,H,W] student inputs
  FlowField teacher_ac;
  ValidityMask mask_ac;  // occlusion mask of the teacher flows
  ValidityMask dark_b;
};

PreparedTriplet prepare_triplet(const TrainingTriplet& t, const FlowModel& student, const FlowModel& teacher,
                                const ColorMatrix& q, const TrainConfig& config);

struct CycleLoss {
  Tensor loss;  // sum of per-triplet losses; undefined when used == 0
  int used = 0;
  int skipped = 0;
};

// Loss of one triplet from given per-iteration flows F_ab and F_bc (each
// [1,2,H,W]) and final backward flows; nullopt when no pixel is supervisable.
std::optional<Tensor> cycle_loss_from_flows(const std::vector<Tensor>& f_ab, const std::vector<Tensor>& f_bc,
                                            const FlowField& f_ba, const FlowField& f_cb, const PreparedTriplet& t,
                                            const TrainConfig& config);

// Masked flow-cycle loss over a batch, running the student batched.
CycleLoss cycle_loss(const FlowModel& model, const std::vector<const PreparedTriplet*>& batch, const TrainConfig& config);

// Single triplet; throws NoSupervisablePixels when its combined mask is empty.
Tensor cycle_loss(const FlowModel& model, const PreparedTriplet& triplet, const TrainConfig& config);

// Trains every parameter; returns the per-step loss trace.
std::vector<double> pretrain(FlowModel& model, const std::vector<HsiCube>& scenes, const ColorMatrix& q,
                             const PretrainConfig& config, const TrainLog& log = {});

struct FinetuneResult {
  std::vector<double> losses;                       // per batch, mean over used triplets
  std::vector<std::pair<int, double>> validations;  // (batch, epe), batch 0 first
  int best_batch = 0;
  int batches_run = 0;
  int skipped_total = 0;
  bool early_stopped = false;
};

// Cycle-consistency finetuning with periodic validation; on return the
// model holds the best validated parameters.
FinetuneResult finetune(FlowModel& model, const FlowModel& teacher, const std::vector<TrainingTriplet>& triplets,
                        const std::vector<EvalPair>& validation, const DeformRecipe& validation_recipe,
                        const ColorMatrix& q, const TrainConfig& config, const TrainLog& log = {});

}  // namespace xraft
