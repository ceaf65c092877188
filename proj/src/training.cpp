#include "xraft/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "xraft/adam.hpp"
#include "xraft/errors.hpp"
#include "xraft/ops.hpp"
#include "xraft/rng.hpp"

namespace xraft {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

FlowField final_flow(const FlowModel& model, const Tensor& source, const Tensor& target, Modality sm, Modality tm) {
  NoGradGuard no_grad;
  return FlowField::from_tensor(model.forward_tensors(source, target, sm, tm).back());
}

FlowField batch_item(const Tensor& flows, std::int64_t i) {
  NoGradGuard no_grad;
  return FlowField::from_tensor(ops::slice(flows, 0, i, 1));
}

void clear_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.clear_grad();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(eps_o > 0.0)) throw ConfigError("train: eps_o must be positive");
  if (!(eps_d >= 0.0)) throw ConfigError("train: eps_d must be non-negative");
  if (supervised_iterations <= 0) throw ConfigError("train: supervised_iterations must be positive");
  if (validate_every <= 0) throw ConfigError("train: validate_every must be positive");
  if (patience <= 0) throw ConfigError("train: patience must be positive");
  if (max_batches < 0) throw ConfigError("train: max_batches must be non-negative");
}

void PretrainConfig::validate() const {
  if (steps < 0) throw ConfigError("pretrain: steps must be non-negative");
  if (batch_size <= 0) throw ConfigError("pretrain: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain: learning_rate must be positive");
  if (!(sigma > 0.0)) throw ConfigError("pretrain: sigma must be positive");
  if (!(max_amplitude >= 0.0)) throw ConfigError("pretrain: max_amplitude must be non-negative");
}

FlowField teacher_flow(const TrainingTriplet& t, const FlowModel& teacher, const ColorMatrix& q) {
  if (t.teacher_ac) return *t.teacher_ac;
  const InputMode mode = teacher.config().input_mode;
  return final_flow(teacher, model_input(t.a, mode, q), model_input(t.c, mode, q), Modality::kWhite, Modality::kWhite);
}

PreparedTriplet prepare_triplet(const TrainingTriplet& t, const FlowModel& student, const FlowModel& teacher,
                                const ColorMatrix& q, const TrainConfig& config) {
  if (t.a.width != t.b.width || t.a.height != t.b.height || t.a.width != t.c.width || t.a.height != t.c.height)
    throw ShapeError("triplet images differ in size");
  if (t.a.modality != Modality::kWhite || t.c.modality != Modality::kWhite || t.b.modality != Modality::kBlue)
    throw std::invalid_argument("triplet must be white, blue, white");
  PreparedTriplet p;
  const InputMode mode = student.config().input_mode;
  p.a = model_input(t.a, mode, q);
  p.b = model_input(t.b, mode, q);
  p.c = model_input(t.c, mode, q);
  p.teacher_ac = teacher_flow(t, teacher, q);
  FlowField ca;
  if (t.teacher_ca) {
    ca = *t.teacher_ca;
  } else {
    const InputMode tm = teacher.config().input_mode;
    ca = final_flow(teacher, model_input(t.c, tm, q), model_input(t.a, tm, q), Modality::kWhite, Modality::kWhite);
  }
  p.mask_ac = occlusion_mask(p.teacher_ac, ca, config.eps_o);
  p.dark_b = dark_mask(t.b, config.eps_d);
  return p;
}

std::optional<Tensor> cycle_loss_from_flows(const std::vector<Tensor>& f_ab, const std::vector<Tensor>& f_bc,
                                            const FlowField& f_ba, const FlowField& f_cb, const PreparedTriplet& t,
                                            const TrainConfig& config) {
  if (f_ab.empty() || f_ab.size() != f_bc.size()) throw std::invalid_argument("cycle loss: iteration counts differ");
  const FlowField ab = batch_item(f_ab.back(), 0), bc = batch_item(f_bc.back(), 0);
  const ValidityMask m_ab = occlusion_mask(ab, f_ba, config.eps_o);
  const ValidityMask m_bc = occlusion_mask(bc, f_cb, config.eps_o);
  const ValidityMask mask = combined_mask(t.mask_ac, m_ab, m_bc, t.dark_b, ab);
  if (mask.count() == 0) return std::nullopt;
  const Tensor m = mask.to_tensor();
  const Tensor teacher = t.teacher_ac.to_tensor();
  const std::size_t supervised = std::min<std::size_t>(static_cast<std::size_t>(config.supervised_iterations), f_ab.size());
  Tensor loss;
  for (std::size_t k = 0; k < supervised; ++k) {
    const Tensor term = ops::endpoint_error(compose(f_ab[k], f_bc[k]), teacher, m);
    loss = loss.defined() ? ops::add(loss, term) : term;
  }
  return loss;
}

CycleLoss cycle_loss(const FlowModel& model, const std::vector<const PreparedTriplet*>& batch, const TrainConfig& config) {
  CycleLoss result;
  if (batch.empty()) return result;
  std::vector<Tensor> as, bs, cs;
  for (const auto* t : batch) {
    as.push_back(t->a);
    bs.push_back(t->b);
    cs.push_back(t->c);
  }
  const Tensor A = as.size() == 1 ? as[0] : ops::concat(as, 0);
  const Tensor B = bs.size() == 1 ? bs[0] : ops::concat(bs, 0);
  const Tensor C = cs.size() == 1 ? cs[0] : ops::concat(cs, 0);
  const auto W = Modality::kWhite, Bl = Modality::kBlue;

  const auto f_ab = model.forward_tensors(A, B, W, Bl);
  const auto f_bc = model.forward_tensors(B, C, Bl, W);
  Tensor f_ba, f_cb;
  {
    NoGradGuard no_grad;
    f_ba = model.forward_tensors(B, A, Bl, W).back();
    f_cb = model.forward_tensors(C, B, W, Bl).back();
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto n = static_cast<std::int64_t>(i);
    std::vector<Tensor> ab, bc;
    for (std::size_t k = 0; k < f_ab.size(); ++k) {
      ab.push_back(ops::slice(f_ab[k], 0, n, 1));
      bc.push_back(ops::slice(f_bc[k], 0, n, 1));
    }
    auto loss = cycle_loss_from_flows(ab, bc, batch_item(f_ba, n), batch_item(f_cb, n), *batch[i], config);
    if (!loss) {
      ++result.skipped;
      continue;
    }
    result.loss = result.loss.defined() ? ops::add(result.loss, *loss) : *loss;
    ++result.used;
  }
  return result;
}

Tensor cycle_loss(const FlowModel& model, const PreparedTriplet& triplet, const TrainConfig& config) {
  CycleLoss r = cycle_loss(model, std::vector<const PreparedTriplet*>{&triplet}, config);
  if (r.used == 0) throw NoSupervisablePixels();
  return r.loss;
}

std::vector<double> pretrain(FlowModel& model, const std::vector<HsiCube>& scenes, const ColorMatrix& q,
                             const PretrainConfig& config, const TrainLog& log) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("pretrain: no scenes");
  if (model.is_xraft()) throw ConfigError("pretrain: expected a base model");
  model.set_trainable(TrainPolicy::kAll);
  std::vector<Tensor> params = model.trainable_parameters();
  AdamState adam(params, AdamConfig{config.learning_rate});
  Rng rng(mix_seed(config.seed, 0x7072657472ULL));
  const InputMode mode = model.config().input_mode;
  std::vector<double> losses;
  auto& graph = active_graph();
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<Tensor> sources, targets, truths;
    for (int i = 0; i < config.batch_size; ++i) {
      const HsiCube& scene = scenes[rng.below(scenes.size())];
      DeformRecipe recipe;
      recipe.sigma = config.sigma;
      recipe.amplitude = rng.uniform(0.0, config.max_amplitude);
      recipe.seed = rng.next_u64();
      const FlowField truth = gen_deformation(scene.width, scene.height, recipe);
      sources.push_back(model_input(apply_deformation(scene, truth), mode, q));
      targets.push_back(model_input(scene, mode, q));
      truths.push_back(truth.to_tensor());
    }
    graph.clear();
    const Tensor truth = ops::concat(truths, 0);
    const auto flows = model.forward_tensors(ops::concat(sources, 0), ops::concat(targets, 0), Modality::kWhite,
                                             Modality::kWhite);
    Tensor loss;
    for (const auto& f : flows) {
      const Tensor term = ops::endpoint_error(f, truth);
      loss = loss.defined() ? ops::add(loss, term) : term;
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
      graph.clear();
      throw DivergenceError("pretrain: non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    graph.clear();
    adam_step(params, adam);
    clear_grads(params);
    losses.push_back(value);
    if (log) log("step " + std::to_string(step) + " loss " + fmt("%.6f", value));
  }
  return losses;
}

FinetuneResult finetune(FlowModel& model, const FlowModel& teacher, const std::vector<TrainingTriplet>& triplets,
                        const std::vector<EvalPair>& validation, const DeformRecipe& validation_recipe,
                        const ColorMatrix& q, const TrainConfig& config, const TrainLog& log) {
  config.validate();
  if (triplets.empty()) throw std::invalid_argument("finetune: no training triplets");
  if (validation.empty()) throw std::invalid_argument("finetune: no validation pairs");
  std::vector<PreparedTriplet> prepared;
  prepared.reserve(triplets.size());
  for (const auto& t : triplets) prepared.push_back(prepare_triplet(t, model, teacher, q, config));

  std::vector<Tensor> params = model.trainable_parameters();
  AdamState adam(params, AdamConfig{config.learning_rate});
  Rng rng(mix_seed(config.seed, 0x66696e65ULL));
  auto& graph = active_graph();

  FinetuneResult result;
  auto validate = [&](int batch) {
    const double v = mean_synthetic_epe(model_predictor(model, q), validation, validation_recipe, Direction::kBoth);
    result.validations.emplace_back(batch, v);
    if (log) log("val " + std::to_string(batch) + " epe " + fmt("%.6f", v));
    return v;
  };
  double best = validate(0);
  FlowModel best_model = model.clone();
  int stale = 0;

  std::vector<std::size_t> order(prepared.size());
  std::size_t cursor = order.size();
  for (int batch = 1; config.max_batches == 0 || batch <= config.max_batches; ++batch) {
    std::vector<const PreparedTriplet*> items;
    while (static_cast<int>(items.size()) < config.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      items.push_back(&prepared[order[cursor++]]);
    }
    graph.clear();
    CycleLoss loss = cycle_loss(model, items, config);
    double mean_loss = 0.0;
    if (loss.used > 0) {
      const Tensor scaled = ops::scale(loss.loss, 1.0 / loss.used);
      mean_loss = scaled.item();
      if (!std::isfinite(mean_loss)) {
        graph.clear();
        throw DivergenceError("finetune: non-finite loss at batch " + std::to_string(batch));
      }
      backward(scaled);
      adam_step(params, adam);
    }
    graph.clear();
    clear_grads(params);
    result.losses.push_back(mean_loss);
    result.skipped_total += loss.skipped;
    result.batches_run = batch;
    if (log) log("batch " + std::to_string(batch) + " loss " + fmt("%.6f", mean_loss) + " skipped " +
                 std::to_string(loss.skipped));

    if (batch % config.validate_every == 0) {
      const double v = validate(batch);
      if (v < best) {
        best = v;
        best_model = model.clone();
        result.best_batch = batch;
        stale = 0;
      } else if (++stale >= config.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  model = std::move(best_model);
  return result;
}

}  // namespace xraft
