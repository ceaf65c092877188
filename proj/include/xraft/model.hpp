#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xraft/flow.hpp"
#include "xraft/imaging.hpp"
#include "xraft/tensor.hpp"

namespace xraft {

/// Selects an encoder by the modality of the image being encoded and the
/// modality of its counterpart. (W,B) and (B,W) are distinct slots.
struct ModalityPairKey {
  Modality own = Modality::kWhite;
  Modality other = Modality::kWhite;

  bool cross() const { return own != other; }
  // "WW", "BB", "WB", "BW"
  std::string name() const;
  static ModalityPairKey parse(const std::string& name);
  auto operator<=>(const ModalityPairKey&) const = default;
};

inline const std::vector<ModalityPairKey>& all_pair_keys() {
  static const std::vector<ModalityPairKey> keys{{Modality::kWhite, Modality::kWhite},
                                                 {Modality::kBlue, Modality::kBlue},
                                                 {Modality::kWhite, Modality::kBlue},
                                                 {Modality::kBlue, Modality::kWhite}};
  return keys;
}

enum class EncoderKind { kFeature, kContext };

// How images are presented to the network.
enum class InputMode : std::uint32_t { kRgb = 0, kBbb = 1, kHsi = 2 };
const char* input_mode_name(InputMode m);
InputMode parse_input_mode(const std::string& s);

struct ModelConfig {
  int in_channels = 3;
  int feature_dim = 64;
  int hidden_dim = 32;
  int context_dim = 32;
  int downsample = 8;  // 8 or 4
  int corr_levels = 2;
  int corr_radius = 3;
  int iterations = 8;
  InputMode input_mode = InputMode::kRgb;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int padding = 0;
  bool norm = false;
  bool relu = false;

  Tensor operator()(const Tensor& x) const;
};

// Stack of convolutions taking an image to the 1/downsample grid.
struct Encoder {
  std::vector<ConvLayer> layers;

  Tensor operator()(const Tensor& image) const;
};

struct UpdateBlock {
  ConvLayer corr1, flow1, motion, gru_z, gru_r, gru_q, head1, head2;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

enum class TrainPolicy { kCrossEncoders, kAll, kNone };

/// RAFT-style recurrent flow network. A base model owns a single (W,W)
/// encoder pair; an X-RAFT model owns one feature and one context encoder per
/// modality pair key, sharing the update block.
class FlowModel {
 public:
  FlowModel() = default;

  // Freshly initialised single-modality network.
  static FlowModel create_base(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool is_xraft() const { return feature_.size() == 4; }
  bool has_key(const ModalityPairKey& key) const { return feature_.count(key) != 0; }

  // [C,H,W] or [N,C,H,W] -> [N,D,H/s,W/s]
  Tensor encode(const Tensor& image, const ModalityPairKey& key, EncoderKind kind) const;

  // Per-iteration flows at input resolution, each [N,2,H,W].
  std::vector<Tensor> forward_tensors(const Tensor& source, const Tensor& target, Modality source_modality,
                                      Modality target_modality, int iterations = 0) const;
  // Single-pair convenience over [C,H,W] or [1,C,H,W] inputs.
  std::vector<FlowField> forward(const Tensor& source, const Tensor& target, Modality source_modality,
                                 Modality target_modality, int iterations = 0) const;

  // Stable order: encoders by kind then key, then the update block.
  std::vector<NamedParameter> parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  void set_trainable(TrainPolicy policy);

  Encoder& encoder(const ModalityPairKey& key, EncoderKind kind);
  const Encoder& encoder(const ModalityPairKey& key, EncoderKind kind) const;
  UpdateBlock& update_block() { return update_; }

  // Deep copy; the clone shares no storage with this model.
  FlowModel clone() const;

 private:
  friend FlowModel build_xraft(const FlowModel&, InputMode, const ColorMatrix&);
  friend FlowModel model_from_parameters(const ModelConfig&, std::size_t,
                                         const std::vector<std::pair<std::string, Tensor>>&);

  ModelConfig config_;
  std::map<ModalityPairKey, Encoder> feature_;
  std::map<ModalityPairKey, Encoder> context_;
  UpdateBlock update_;
};

// First-layer weights for a cross-modal encoder: the channel-wise sum of A
// placed on the blue input channel, zero on red and green.
Tensor init_cross_rgb(const Tensor& a);

// Expands 3-channel first-layer weights to the bands of q, so that convolving
// a cube equals convolving its RGB conversion with the original weights.
Tensor lift_rgb_to_hsi(const Tensor& b, const ColorMatrix& q);

// Clones the base encoders into all four slots and adapts first layers for
// the chosen input mode.
FlowModel build_xraft(const FlowModel& base, InputMode mode, const ColorMatrix& q);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const FlowModel& model);
FlowModel decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const FlowModel& model, const std::filesystem::path& path);
FlowModel load_checkpoint(const std::filesystem::path& path);

// Network input for a cube under the given mode: RGB, BBB, or the cube itself.
Tensor model_input(const HsiCube& cube, InputMode mode, const ColorMatrix& q);

}  // namespace xraft
