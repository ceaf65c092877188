#include "xraft/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "xraft/errors.hpp"
#include "xraft/rng.hpp"

namespace xraft {

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_integer(const std::string& text) {
  T v{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw ConfigError("expected an integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("expected a number, got '" + text + "'");
  return v;
}

std::string show(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
Field integer(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& s) { c.*member = parse_integer<T>(s); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

// Members of nested structs are reached through a projection.
template <typename Proj, typename S, typename T>
Field integer(Proj proj, T S::*member) {
  return {[proj, member](RunConfig& c, const std::string& s) { proj(c).*member = parse_integer<T>(s); },
          [proj, member](const RunConfig& c) { return std::to_string(proj(c).*member); }};
}

template <typename Proj, typename S>
Field real(Proj proj, double S::*member) {
  return {[proj, member](RunConfig& c, const std::string& s) { proj(c).*member = parse_double(s); },
          [proj, member](const RunConfig& c) { return show(proj(c).*member); }};
}

Field text(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& s) { c.*member = s; },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    auto synth = [](auto& c) -> auto& { return c.synth; };
    auto model = [](auto& c) -> auto& { return c.model; };
    auto pre = [](auto& c) -> auto& { return c.pretrain; };
    auto train = [](auto& c) -> auto& { return c.train; };
    auto eval = [](auto& c) -> auto& { return c.eval; };
    auto self = [](auto& c) -> auto& { return c; };
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("seed", integer(&RunConfig::seed));

    t.emplace_back("synth.width", integer(synth, &SynthConfig::width));
    t.emplace_back("synth.height", integer(synth, &SynthConfig::height));
    t.emplace_back("synth.bands", integer(synth, &SynthConfig::bands));
    t.emplace_back("synth.train_triplets", integer(synth, &SynthConfig::train_triplets));
    t.emplace_back("synth.val_pairs", integer(synth, &SynthConfig::val_pairs));
    t.emplace_back("synth.test_pairs", integer(synth, &SynthConfig::test_pairs));
    t.emplace_back("synth.annotated_pairs", integer(synth, &SynthConfig::annotated_pairs));
    t.emplace_back("synth.keypoints_per_pair", integer(synth, &SynthConfig::keypoints_per_pair));
    t.emplace_back("synth.motion_amplitude", real(synth, &SynthConfig::motion_amplitude));
    t.emplace_back("synth.motion_sigma", real(synth, &SynthConfig::motion_sigma));
    t.emplace_back("synth.blue_attenuation", real(synth, &SynthConfig::blue_attenuation));
    t.emplace_back("synth.blue_darkening_min", real(synth, &SynthConfig::blue_darkening_min));
    t.emplace_back("synth.blue_darkening_sigma", real(synth, &SynthConfig::blue_darkening_sigma));
    t.emplace_back("synth.blue_noise_sigma", real(synth, &SynthConfig::blue_noise_sigma));

    t.emplace_back("model.feature_dim", integer(model, &ModelConfig::feature_dim));
    t.emplace_back("model.hidden_dim", integer(model, &ModelConfig::hidden_dim));
    t.emplace_back("model.context_dim", integer(model, &ModelConfig::context_dim));
    t.emplace_back("model.downsample", integer(model, &ModelConfig::downsample));
    t.emplace_back("model.corr_levels", integer(model, &ModelConfig::corr_levels));
    t.emplace_back("model.corr_radius", integer(model, &ModelConfig::corr_radius));
    t.emplace_back("model.iterations", integer(model, &ModelConfig::iterations));
    t.emplace_back("model.input_mode",
                   Field{[](RunConfig& c, const std::string& s) { c.model.input_mode = parse_input_mode(s); },
                         [](const RunConfig& c) { return std::string(input_mode_name(c.model.input_mode)); }});

    t.emplace_back("pretrain.steps", integer(pre, &PretrainConfig::steps));
    t.emplace_back("pretrain.batch_size", integer(pre, &PretrainConfig::batch_size));
    t.emplace_back("pretrain.learning_rate", real(pre, &PretrainConfig::learning_rate));
    t.emplace_back("pretrain.sigma", real(pre, &PretrainConfig::sigma));
    t.emplace_back("pretrain.max_amplitude", real(pre, &PretrainConfig::max_amplitude));

    t.emplace_back("train.batch_size", integer(train, &TrainConfig::batch_size));
    t.emplace_back("train.learning_rate", real(train, &TrainConfig::learning_rate));
    t.emplace_back("train.eps_o", real(train, &TrainConfig::eps_o));
    t.emplace_back("train.eps_d", real(train, &TrainConfig::eps_d));
    t.emplace_back("train.supervised_iterations", integer(train, &TrainConfig::supervised_iterations));
    t.emplace_back("train.validate_every", integer(train, &TrainConfig::validate_every));
    t.emplace_back("train.patience", integer(train, &TrainConfig::patience));
    t.emplace_back("train.max_batches", integer(train, &TrainConfig::max_batches));

    t.emplace_back("eval.sigma", real(eval, &DeformRecipe::sigma));
    t.emplace_back("eval.amplitude", real(eval, &DeformRecipe::amplitude));
    t.emplace_back("render.threshold", real(self, &RunConfig::render_threshold));

    t.emplace_back("path.data", text(&RunConfig::data));
    t.emplace_back("path.base", text(&RunConfig::base));
    t.emplace_back("path.teacher", text(&RunConfig::teacher));
    t.emplace_back("path.xraft", text(&RunConfig::xraft));
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  pretrain.seed = s;
  train.seed = s;
  eval.seed = mix_seed(s, 0x6576616cULL);
}

DeformRecipe RunConfig::validation_recipe() const {
  DeformRecipe r = eval;
  r.seed = mix_seed(seed, 0x76616cULL);
  return r;
}

void RunConfig::validate() const {
  synth.validate();
  model.validate();
  pretrain.validate();
  train.validate();
  eval.validate();
  if (!(render_threshold >= 0.0)) throw ConfigError("render.threshold must be non-negative");
}

RunConfig parse_run_config(const std::string& text_in, const std::string& origin) {
  std::map<std::string, const Field*> by_name;
  for (const auto& [name, field] : fields()) by_name[name] = &field;
  RunConfig config;
  config.apply_seed(0);
  std::set<std::string> seen;
  std::istringstream in(text_in);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "key '" + key + "' given twice");
    try {
      it->second->set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  config.apply_seed(config.seed);
  config.validate();
  return config;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string format_run_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [name, field] : fields()) keys.push_back(name);
  return keys;
}

}  // namespace xraft
