#include "xraft/model.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "byte_io.hpp"
#include "xraft/errors.hpp"
#include "xraft/ops.hpp"
#include "xraft/rng.hpp"

namespace xraft {

namespace {

char modality_letter(Modality m) { return m == Modality::kWhite ? 'W' : 'B'; }

ConvLayer make_conv(int in, int out, int kernel, int stride, bool norm, bool relu, Rng& rng, double gain = 1.0) {
  ConvLayer c;
  const double fan_in = static_cast<double>(in) * kernel * kernel;
  const double sd = gain * (relu ? std::sqrt(2.0) : 1.0) / std::sqrt(fan_in);
  std::vector<double> w(static_cast<std::size_t>(out) * in * kernel * kernel);
  for (double& v : w) v = rng.normal(0.0, sd);
  c.weight = Tensor({out, in, kernel, kernel}, std::move(w));
  c.bias = Tensor({out}, 0.0);
  c.stride = stride;
  c.padding = kernel / 2;
  c.norm = norm;
  c.relu = relu;
  return c;
}

Encoder make_encoder(const ModelConfig& cfg, int out, Rng& rng) {
  const int last_stride = cfg.downsample == 8 ? 2 : 1;
  Encoder e;
  e.layers.push_back(make_conv(cfg.in_channels, 16, 5, 2, true, true, rng));
  e.layers.push_back(make_conv(16, 16, 3, 1, true, true, rng));
  e.layers.push_back(make_conv(16, 32, 3, 2, true, true, rng));
  e.layers.push_back(make_conv(32, 32, 3, 1, true, true, rng));
  e.layers.push_back(make_conv(32, 64, 3, last_stride, true, true, rng));
  e.layers.push_back(make_conv(64, out, 1, 1, false, false, rng));
  return e;
}

UpdateBlock make_update_block(const ModelConfig& cfg, Rng& rng) {
  const int taps = cfg.corr_levels * (2 * cfg.corr_radius + 1) * (2 * cfg.corr_radius + 1);
  const int motion_dim = 32;
  const int x_dim = motion_dim + cfg.context_dim;
  const int hx = cfg.hidden_dim + x_dim;
  UpdateBlock u;
  u.corr1 = make_conv(taps, 48, 1, 1, false, true, rng);
  u.flow1 = make_conv(2, 16, 3, 1, false, true, rng);
  u.motion = make_conv(64, motion_dim - 2, 3, 1, false, true, rng);
  u.gru_z = make_conv(hx, cfg.hidden_dim, 3, 1, false, false, rng);
  u.gru_r = make_conv(hx, cfg.hidden_dim, 3, 1, false, false, rng);
  u.gru_q = make_conv(hx, cfg.hidden_dim, 3, 1, false, false, rng);
  u.head1 = make_conv(cfg.hidden_dim, 32, 3, 1, false, true, rng);
  u.head2 = make_conv(32, 2, 3, 1, false, false, rng, 0.1);
  return u;
}

std::vector<std::pair<std::string, ConvLayer*>> update_layers(UpdateBlock& u) {
  return {{"corr1", &u.corr1}, {"flow1", &u.flow1}, {"motion", &u.motion}, {"gru_z", &u.gru_z},
          {"gru_r", &u.gru_r}, {"gru_q", &u.gru_q}, {"head1", &u.head1},   {"head2", &u.head2}};
}

ConvLayer clone_layer(const ConvLayer& c) {
  ConvLayer out = c;
  out.weight = c.weight.detach();
  out.bias = c.bias.detach();
  out.weight.set_requires_grad(c.weight.requires_grad());
  out.bias.set_requires_grad(c.bias.requires_grad());
  return out;
}

Encoder clone_encoder(const Encoder& e) {
  Encoder out;
  for (const auto& l : e.layers) out.layers.push_back(clone_layer(l));
  return out;
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 3) return ops::reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() != 4) throw ShapeError("expected a [C,H,W] or [N,C,H,W] image, got " + shape_str(image.shape()));
  return image;
}

void set_layer_trainable(ConvLayer& c, bool on) {
  c.weight.set_requires_grad(on);
  c.bias.set_requires_grad(on);
}

}  // namespace

std::string ModalityPairKey::name() const { return {modality_letter(own), modality_letter(other)}; }

ModalityPairKey ModalityPairKey::parse(const std::string& name) {
  for (const auto& k : all_pair_keys())
    if (k.name() == name) return k;
  throw std::invalid_argument("unknown modality pair key '" + name + "'");
}

const char* input_mode_name(InputMode m) {
  switch (m) {
    case InputMode::kRgb: return "rgb";
    case InputMode::kBbb: return "bbb";
    case InputMode::kHsi: return "hsi";
  }
  return "?";
}

InputMode parse_input_mode(const std::string& s) {
  if (s == "rgb") return InputMode::kRgb;
  if (s == "bbb") return InputMode::kBbb;
  if (s == "hsi") return InputMode::kHsi;
  throw ConfigError("unknown input mode '" + s + "' (expected rgb, bbb or hsi)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string("model: ") + what + " must be positive");
  };
  positive(in_channels, "in_channels");
  positive(feature_dim, "feature_dim");
  positive(hidden_dim, "hidden_dim");
  positive(context_dim, "context_dim");
  positive(corr_levels, "corr_levels");
  positive(iterations, "iterations");
  if (corr_radius < 0) throw ConfigError("model: corr_radius must be non-negative");
  if (downsample != 8 && downsample != 4) throw ConfigError("model: downsample must be 4 or 8");
  if (corr_levels > 4) throw ConfigError("model: at most 4 correlation levels");
  if (input_mode != InputMode::kHsi && in_channels != 3)
    throw ConfigError("model: rgb/bbb input needs 3 channels, got " + std::to_string(in_channels));
}

Tensor ConvLayer::operator()(const Tensor& x) const {
  Tensor y = ops::conv2d(x, weight, bias, stride, padding);
  if (norm) y = ops::instance_norm(y);
  if (relu) y = ops::relu(y);
  return y;
}

Tensor Encoder::operator()(const Tensor& image) const {
  Tensor x = image;
  for (const auto& l : layers) x = l(x);
  return x;
}

FlowModel FlowModel::create_base(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  FlowModel m;
  m.config_ = config;
  const ModalityPairKey ww{Modality::kWhite, Modality::kWhite};
  m.feature_[ww] = make_encoder(config, config.feature_dim, rng);
  m.context_[ww] = make_encoder(config, config.hidden_dim + config.context_dim, rng);
  m.update_ = make_update_block(config, rng);
  m.set_trainable(TrainPolicy::kAll);
  return m;
}

Encoder& FlowModel::encoder(const ModalityPairKey& key, EncoderKind kind) {
  auto& bank = kind == EncoderKind::kFeature ? feature_ : context_;
  const auto it = bank.find(key);
  if (it == bank.end()) throw std::invalid_argument("model has no encoder for key " + key.name());
  return it->second;
}

const Encoder& FlowModel::encoder(const ModalityPairKey& key, EncoderKind kind) const {
  return const_cast<FlowModel*>(this)->encoder(key, kind);
}

Tensor FlowModel::encode(const Tensor& image, const ModalityPairKey& key, EncoderKind kind) const {
  const Tensor x = as_batch(image);
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("model expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  return encoder(key, kind)(x);
}

std::vector<Tensor> FlowModel::forward_tensors(const Tensor& source, const Tensor& target, Modality source_modality,
                                               Modality target_modality, int iterations) const {
  if (iterations <= 0) iterations = config_.iterations;
  const Tensor src = as_batch(source), tgt = as_batch(target);
  if (src.shape() != tgt.shape())
    throw ShapeError("source " + shape_str(src.shape()) + " and target " + shape_str(tgt.shape()) + " differ");
  const std::int64_t unit = static_cast<std::int64_t>(config_.downsample) << (config_.corr_levels - 1);
  if (src.dim(2) % unit != 0 || src.dim(3) % unit != 0) {
    throw ShapeError("image size " + std::to_string(src.dim(3)) + "x" + std::to_string(src.dim(2)) +
                     " is not divisible by " + std::to_string(unit));
  }
  const ModalityPairKey src_key{source_modality, target_modality}, tgt_key{target_modality, source_modality};
  const Tensor f1 = encode(src, src_key, EncoderKind::kFeature);
  const Tensor f2 = encode(tgt, tgt_key, EncoderKind::kFeature);
  const Tensor ctx = encode(src, src_key, EncoderKind::kContext);
  Tensor h = ops::tanh(ops::slice(ctx, 1, 0, config_.hidden_dim));
  const Tensor inp = ops::relu(ops::slice(ctx, 1, config_.hidden_dim, config_.context_dim));

  const std::int64_t N = f1.dim(0), H = f1.dim(2), W = f1.dim(3);
  std::vector<Tensor> pyramid{ops::correlation_volume(f1, f2)};
  for (int l = 1; l < config_.corr_levels; ++l) {
    const Tensor& prev = pyramid.back();
    const Tensor pooled = ops::avg_pool2(ops::reshape(prev, {N * H * W, 1, prev.dim(3), prev.dim(4)}));
    pyramid.push_back(ops::reshape(pooled, {N, H, W, pooled.dim(2), pooled.dim(3)}));
  }

  const Tensor grid = pixel_grid(N, H, W);
  const auto& u = update_;
  Tensor flow({N, 2, H, W}, 0.0);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    flow = flow.detach();
    const Tensor coords = ops::add(grid, flow);
    std::vector<Tensor> taps;
    for (int l = 0; l < config_.corr_levels; ++l)
      taps.push_back(ops::corr_lookup(pyramid[static_cast<std::size_t>(l)], ops::scale(coords, 1.0 / (1 << l)),
                                      config_.corr_radius));
    const Tensor corr = taps.size() == 1 ? taps[0] : ops::concat(taps, 1);
    const Tensor motion = ops::concat({u.motion(ops::concat({u.corr1(corr), u.flow1(flow)}, 1)), flow}, 1);
    const Tensor x = ops::concat({motion, inp}, 1);
    const Tensor hx = ops::concat({h, x}, 1);
    const Tensor z = ops::sigmoid(u.gru_z(hx));
    const Tensor r = ops::sigmoid(u.gru_r(hx));
    const Tensor q = ops::tanh(u.gru_q(ops::concat({ops::mul(r, h), x}, 1)));
    h = ops::add(h, ops::mul(z, ops::sub(q, h)));
    flow = ops::add(flow, u.head2(u.head1(h)));
    out.push_back(ops::scale(ops::upsample_bilinear(flow, config_.downsample), config_.downsample));
  }
  return out;
}

std::vector<FlowField> FlowModel::forward(const Tensor& source, const Tensor& target, Modality source_modality,
                                          Modality target_modality, int iterations) const {
  if (as_batch(source).dim(0) != 1) throw ShapeError("forward: expected a single image pair");
  std::vector<FlowField> flows;
  for (const auto& t : forward_tensors(source, target, source_modality, target_modality, iterations))
    flows.push_back(FlowField::from_tensor(t));
  return flows;
}

std::vector<NamedParameter> FlowModel::parameters() const {
  std::vector<NamedParameter> out;
  auto add_layers = [&](const std::string& prefix, const std::vector<ConvLayer>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.push_back({prefix + ".conv" + std::to_string(i) + ".weight", layers[i].weight});
      out.push_back({prefix + ".conv" + std::to_string(i) + ".bias", layers[i].bias});
    }
  };
  for (const auto& [key, enc] : feature_) add_layers("feature." + key.name(), enc.layers);
  for (const auto& [key, enc] : context_) add_layers("context." + key.name(), enc.layers);
  for (const auto& [name, layer] : update_layers(const_cast<UpdateBlock&>(update_))) {
    out.push_back({"update." + name + ".weight", layer->weight});
    out.push_back({"update." + name + ".bias", layer->bias});
  }
  return out;
}

std::vector<Tensor> FlowModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters())
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

void FlowModel::set_trainable(TrainPolicy policy) {
  for (auto* bank : {&feature_, &context_})
    for (auto& [key, enc] : *bank) {
      const bool on = policy == TrainPolicy::kAll || (policy == TrainPolicy::kCrossEncoders && key.cross());
      for (auto& l : enc.layers) set_layer_trainable(l, on);
    }
  for (auto& [name, layer] : update_layers(update_)) set_layer_trainable(*layer, policy == TrainPolicy::kAll);
}

FlowModel FlowModel::clone() const {
  FlowModel m;
  m.config_ = config_;
  for (const auto& [k, e] : feature_) m.feature_[k] = clone_encoder(e);
  for (const auto& [k, e] : context_) m.context_[k] = clone_encoder(e);
  m.update_ = update_;
  for (auto& [name, layer] : update_layers(m.update_)) *layer = clone_layer(*layer);
  return m;
}

Tensor init_cross_rgb(const Tensor& a) {
  if (a.rank() != 4 || a.dim(1) != 3) throw ShapeError("init_cross_rgb: expected [n,3,kh,kw] weights, got " + shape_str(a.shape()));
  const std::int64_t n = a.dim(0), taps = a.dim(2) * a.dim(3);
  std::vector<double> b(static_cast<std::size_t>(a.numel()), 0.0);
  for (std::int64_t o = 0; o < n; ++o)
    for (std::int64_t t = 0; t < taps; ++t) {
      double s = 0.0;
      for (std::int64_t i = 0; i < 3; ++i) s += a[(o * 3 + i) * taps + t];
      b[static_cast<std::size_t>((o * 3 + 2) * taps + t)] = s;
    }
  return Tensor(a.shape(), std::move(b));
}

Tensor lift_rgb_to_hsi(const Tensor& b, const ColorMatrix& q) {
  if (b.rank() != 4 || b.dim(1) != 3) throw ShapeError("lift_rgb_to_hsi: expected [n,3,kh,kw] weights, got " + shape_str(b.shape()));
  if (q.bands <= 0 || q.weights.size() != static_cast<std::size_t>(3 * q.bands))
    throw ShapeError("lift_rgb_to_hsi: colour matrix must be 3 x bands");
  const std::int64_t n = b.dim(0), C = q.bands, taps = b.dim(2) * b.dim(3);
  std::vector<double> c(static_cast<std::size_t>(n * C * taps), 0.0);
  for (std::int64_t o = 0; o < n; ++o)
    for (std::int64_t band = 0; band < C; ++band)
      for (std::int64_t t = 0; t < taps; ++t) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += b[(o * 3 + i) * taps + t] * q(i, static_cast<int>(band));
        c[static_cast<std::size_t>((o * C + band) * taps + t)] = s;
      }
  return Tensor({n, C, b.dim(2), b.dim(3)}, std::move(c));
}

FlowModel build_xraft(const FlowModel& base, InputMode mode, const ColorMatrix& q) {
  if (base.is_xraft()) throw ConfigError("build_xraft: base model already has a modality-pair bank");
  if (base.config().in_channels != 3 || base.config().input_mode != InputMode::kRgb)
    throw ConfigError("build_xraft: base model must take 3-channel RGB input");
  if (mode == InputMode::kHsi && (q.bands <= 0 || q.weights.size() != static_cast<std::size_t>(3 * q.bands)))
    throw ConfigError("build_xraft: hsi mode needs a 3 x bands colour matrix");

  const ModalityPairKey ww{Modality::kWhite, Modality::kWhite};
  FlowModel m = base.clone();
  m.config_.input_mode = mode;
  m.config_.in_channels = mode == InputMode::kHsi ? q.bands : 3;
  const Encoder base_feature = m.feature_.at(ww), base_context = m.context_.at(ww);
  for (const auto& key : all_pair_keys()) {
    for (auto kind : {EncoderKind::kFeature, EncoderKind::kContext}) {
      Encoder e = clone_encoder(kind == EncoderKind::kFeature ? base_feature : base_context);
      Tensor& first = e.layers.front().weight;
      const bool grad = first.requires_grad();
      if (key.cross() && mode != InputMode::kBbb) first = init_cross_rgb(first);
      if (mode == InputMode::kHsi) first = lift_rgb_to_hsi(first, q);
      first.set_requires_grad(grad);
      (kind == EncoderKind::kFeature ? m.feature_ : m.context_)[key] = std::move(e);
    }
  }
  m.set_trainable(TrainPolicy::kCrossEncoders);
  return m;
}

FlowModel model_from_parameters(const ModelConfig& config, std::size_t bank_size,
                                const std::vector<std::pair<std::string, Tensor>>& params) {
  FlowModel m = FlowModel::create_base(config, 0);
  if (bank_size == 4) {
    const ModalityPairKey ww{Modality::kWhite, Modality::kWhite};
    for (const auto& key : all_pair_keys()) {
      m.feature_[key] = clone_encoder(m.feature_.at(ww));
      m.context_[key] = clone_encoder(m.context_.at(ww));
    }
  } else if (bank_size != 1) {
    throw FormatError("checkpoint: encoder bank size must be 1 or 4, got " + std::to_string(bank_size));
  }
  const auto slots = m.parameters();
  if (slots.size() != params.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(slots.size()) + " parameter tensors, found " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != params[i].first)
      throw FormatError("checkpoint: expected parameter '" + slots[i].name + "', found '" + params[i].first + "'");
    if (slots[i].tensor.shape() != params[i].second.shape())
      throw FormatError("checkpoint: parameter '" + slots[i].name + "' has shape " + shape_str(params[i].second.shape()) +
                        ", expected " + shape_str(slots[i].tensor.shape()));
    Tensor dst = slots[i].tensor;
    const auto src = params[i].second.values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
  m.set_trainable(bank_size == 4 ? TrainPolicy::kCrossEncoders : TrainPolicy::kAll);
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const FlowModel& model) {
  const auto& c = model.config();
  detail::ByteWriter w;
  w.put_bytes("XRFT", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.in_channels));
  for (int v : {c.feature_dim, c.hidden_dim, c.context_dim, c.downsample, c.corr_levels, c.corr_radius, c.iterations})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.input_mode));
  w.put<std::uint32_t>(model.is_xraft() ? 4u : 1u);
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) w.put<float>(static_cast<float>(v));
  }
  return w.take();
}

FlowModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "XRFT") throw FormatError("checkpoint: bad magic, not an XRFT file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  auto small = [&](const char* what) {
    const auto v = r.get<std::uint32_t>();
    if (v > 4096) throw FormatError(std::string("checkpoint: implausible ") + what + " " + std::to_string(v));
    return static_cast<int>(v);
  };
  ModelConfig c;
  c.in_channels = small("input channel count");
  c.feature_dim = small("feature_dim");
  c.hidden_dim = small("hidden_dim");
  c.context_dim = small("context_dim");
  c.downsample = small("downsample");
  c.corr_levels = small("corr_levels");
  c.corr_radius = small("corr_radius");
  c.iterations = small("iterations");
  const auto mode = r.get<std::uint32_t>();
  if (mode > 2) throw FormatError("checkpoint: unknown input mode tag " + std::to_string(mode));
  c.input_mode = static_cast<InputMode>(mode);
  const auto bank = r.get<std::uint32_t>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid hyperparameters: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  if (count > 10000) throw FormatError("checkpoint: implausible parameter count " + std::to_string(count));
  std::vector<std::pair<std::string, Tensor>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string(256);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 4) throw FormatError("checkpoint: parameter '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(small("dimension"));
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    r.need(n * sizeof(float));
    std::vector<float> raw(n);
    r.get_bytes(raw.data(), n * sizeof(float));
    params.emplace_back(std::move(name), Tensor(shape, std::vector<double>(raw.begin(), raw.end())));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing byte(s)");
  return model_from_parameters(c, bank, params);
}

void save_checkpoint(const FlowModel& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw FormatError(path.string() + ": " + msg);
  }
}

Tensor model_input(const HsiCube& cube, InputMode mode, const ColorMatrix& q) {
  switch (mode) {
    case InputMode::kHsi: return cube.to_tensor();
    case InputMode::kBbb: return to_bbb(ops::reshape(to_rgb(cube, q), {1, 3, cube.height, cube.width}));
    case InputMode::kRgb: break;
  }
  return ops::reshape(to_rgb(cube, q), {1, 3, cube.height, cube.width});
}

}  // namespace xraft
