// Command-line front end: make-synth, pretrain, finetune, infer, eval, render.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "xraft/dataset.hpp"
#include "xraft/errors.hpp"
#include "xraft/evaluation.hpp"
#include "xraft/model.hpp"
#include "xraft/run_config.hpp"
#include "xraft/training.hpp"

namespace fs = std::filesystem;
using namespace xraft;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string direction;  // empty: every direction
  std::string mode;
  std::string data;
  std::string base;
  std::string teacher;
  std::vector<std::string> checkpoints;
  std::string source;
  std::string target;
  bool force = false;
  bool render = false;
  bool quiet = false;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? parse_run_config("") : read_run_config(o.config);
  if (o.seed) c.apply_seed(*o.seed);
  if (!o.mode.empty()) c.model.input_mode = parse_input_mode(o.mode);
  if (!o.data.empty()) c.data = o.data;
  if (!o.base.empty()) c.base = o.base;
  if (!o.teacher.empty()) c.teacher = o.teacher;
  return c;
}

fs::path require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing ") + what);
  return value;
}

fs::path output_dir(const Options& o) {
  const fs::path out = require(o.out, "--out");
  fs::create_directories(out);
  return out;
}

SynthDataset load_data(const RunConfig& c) { return read_manifest(require(c.data, "dataset (--data or path.data)") / "manifest.txt"); }

ColorMatrix color_matrix(int bands) { return ColorMatrix::cie_default(bands); }

int bands_of(const SynthDataset& d) {
  if (!d.triplets.empty()) return d.triplets[0].a.bands;
  if (!d.validation.empty()) return d.validation[0].white.bands;
  if (!d.test.empty()) return d.test[0].white.bands;
  if (!d.annotated.empty()) return d.annotated[0].images.white.bands;
  throw std::invalid_argument("dataset is empty");
}

// Writes each line to the log file and, unless quiet, to stdout.
TrainLog tee(std::ofstream& file, bool quiet) {
  return [&file, quiet](const std::string& line) {
    file << line << '\n';
    file.flush();
    if (!quiet) std::cout << line << std::endl;
  };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

int cmd_make_synth(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path out = require(o.out, "--out");
  if (fs::exists(out) && !fs::is_empty(out) && !o.force)
    throw std::runtime_error("output directory " + out.string() + " is not empty (use --force)");
  write_dataset(make_synth(c.synth), out);
  write_text(out / "config.txt", format_run_config(c));
  std::cout << "wrote dataset to " << out.string() << '\n';
  return 0;
}

int cmd_pretrain(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path out = output_dir(o);
  const SynthDataset data = load_data(c);
  ModelConfig mc = c.model;
  mc.input_mode = InputMode::kRgb;
  mc.in_channels = 3;
  FlowModel model = FlowModel::create_base(mc, c.seed);
  std::ofstream log(out / "pretrain.log");
  pretrain(model, data.white_scenes(), color_matrix(bands_of(data)), c.pretrain, tee(log, o.quiet));
  save_checkpoint(model, out / "base.xrft");
  write_text(out / "config.txt", format_run_config(c));
  std::cout << "wrote " << (out / "base.xrft").string() << '\n';
  return 0;
}

int cmd_finetune(const Options& o) {
  const RunConfig c = load_config(o);
  const fs::path out = output_dir(o);
  const SynthDataset data = load_data(c);
  const ColorMatrix q = color_matrix(bands_of(data));
  const FlowModel base = load_checkpoint(require(c.base, "base checkpoint (--base or path.base)"));
  const FlowModel teacher = c.teacher.empty() ? base.clone() : load_checkpoint(c.teacher);
  FlowModel model = build_xraft(base, c.model.input_mode, q);
  std::ofstream log(out / "train.log");
  const FinetuneResult r =
      finetune(model, teacher, data.triplets, data.validation, c.validation_recipe(), q, c.train, tee(log, o.quiet));
  save_checkpoint(model, out / "xraft.xrft");
  write_text(out / "config.txt", format_run_config(c));
  std::cout << "best validation at batch " << r.best_batch << " of " << r.batches_run << ", skipped triplets "
            << r.skipped_total << "\nwrote " << (out / "xraft.xrft").string() << '\n';
  return 0;
}

// Flow from source to target with the single checkpoint given.
FlowField predict(const FlowModel& model, const HsiCube& s, const HsiCube& t) {
  return model_predictor(model, color_matrix(s.bands))(s, t);
}

int cmd_infer(const Options& o, bool render_only) {
  const RunConfig c = load_config(o);
  if (o.checkpoints.size() != 1) throw ConfigError("expected exactly one --checkpoint");
  const FlowModel model = load_checkpoint(o.checkpoints[0]);
  const HsiCube s = read_cube(require(o.source, "--source")), t = read_cube(require(o.target, "--target"));
  if (s.bands != t.bands) throw ShapeError("source has " + std::to_string(s.bands) + " bands, target " + std::to_string(t.bands));
  const fs::path out = output_dir(o);
  FlowField f_st;
  try {
    f_st = predict(model, s, t);
  } catch (const ShapeError& e) {
    throw ShapeError(o.source + " does not fit " + o.checkpoints[0] + ": " + e.what());
  }
  if (!render_only) {
    write_flo(f_st, out / "flow.flo");
    std::cout << "wrote " << (out / "flow.flo").string() << " (mean norm " << f_st.mean_norm() << " px)\n";
  }
  if (render_only || o.render) {
    const FlowField f_ts = predict(model, t, s);
    write_ppm(render_registration(s, t, f_st, f_ts, c.render_threshold, color_matrix(s.bands)), out / "render.ppm");
    std::cout << "wrote " << (out / "render.ppm").string() << '\n';
  }
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig c = load_config(o);
  if (o.checkpoints.empty()) throw ConfigError("expected at least one --checkpoint");
  const std::string only = o.direction.empty() ? "" : direction_name(parse_direction(o.direction));
  const SynthDataset data = load_data(c);
  const ColorMatrix q = color_matrix(bands_of(data));
  std::vector<FlowModel> models;
  for (const auto& p : o.checkpoints) models.push_back(load_checkpoint(p));
  std::vector<FlowPredictor> runs;
  for (const auto& m : models) runs.push_back(model_predictor(m, q));
  const EvalSet set{data.test, data.annotated, c.eval};
  const std::string label = fs::path(o.checkpoints[0]).stem().string();
  std::vector<MetricRow> rows;
  for (auto& row : eval_report(runs, set, label))
    if (only.empty() || row.direction == only) rows.push_back(std::move(row));
  const std::string report = format_report(rows);
  const fs::path out = output_dir(o);
  write_text(out / "metrics.tsv", report);
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal optical flow toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "run configuration (key = value)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "overrides the config seed");
    cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_flag("--quiet", o.quiet, "no per-step output");
  };
  auto* make = app.add_subcommand("make-synth", "generate a synthetic cross-modal dataset");
  common(make);
  make->add_flag("--force", o.force, "write into a non-empty directory");

  auto* pre = app.add_subcommand("pretrain", "supervised pretraining of a base model");
  common(pre);
  pre->add_option("--data", o.data, "dataset directory");

  auto* fine = app.add_subcommand("finetune", "cycle-consistency finetuning of cross-modal encoders");
  common(fine);
  fine->add_option("--data", o.data, "dataset directory");
  fine->add_option("--base", o.base, "base checkpoint");
  fine->add_option("--teacher", o.teacher, "teacher checkpoint (default: the base)");
  fine->add_option("--mode", o.mode, "input mode")->check(CLI::IsMember({"rgb", "bbb", "hsi"}));

  auto pair_options = [&](CLI::App* cmd) {
    common(cmd);
    cmd->add_option("--checkpoint", o.checkpoints, "model checkpoint")->required();
    cmd->add_option("--source", o.source, "source cube")->required();
    cmd->add_option("--target", o.target, "target cube")->required();
  };
  auto* infer = app.add_subcommand("infer", "predict the flow from source to target");
  pair_options(infer);
  infer->add_flag("--render", o.render, "also write the registration render");
  auto* render = app.add_subcommand("render", "write the discrepancy-masked registration render");
  pair_options(render);

  auto* eval = app.add_subcommand("eval", "metrics report on a dataset's test and annotated pairs");
  common(eval);
  eval->add_option("--data", o.data, "dataset directory");
  eval->add_option("--checkpoint", o.checkpoints, "checkpoint; repeat for mean and std over runs")->required();
  eval->add_option("--direction", o.direction, "only rows for wb, bw or both")->check(CLI::IsMember({"wb", "bw", "both"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*make) return cmd_make_synth(o);
    if (*pre) return cmd_pretrain(o);
    if (*fine) return cmd_finetune(o);
    if (*infer) return cmd_infer(o, false);
    if (*render) return cmd_infer(o, true);
    if (*eval) return cmd_eval(o);
  } catch (const std::exception& e) {
    std::cerr << "xraft: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
