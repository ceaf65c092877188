#include "xraft/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "xraft/errors.hpp"
#include "xraft/filters.hpp"
#include "xraft/rng.hpp"

namespace xraft {

namespace {

// Margin synthesised around each frame so deformations never pull in
// zero padding.
constexpr int kMargin = 16;

enum Salt : std::uint64_t { kTriplet = 1, kValidation = 2, kTest = 3, kAnnotated = 4, kBlueMix = 5 };

std::uint64_t item_seed(std::uint64_t seed, Salt salt, int index, std::uint64_t part) {
  return mix_seed(mix_seed(mix_seed(seed, salt), static_cast<std::uint64_t>(index)), part);
}

HsiCube crop(const HsiCube& big, int width, int height) {
  HsiCube out(width, height, big.bands, big.modality);
  for (int b = 0; b < big.bands; ++b)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(b, y, x) = big.at(b, y + kMargin, x + kMargin);
  return out;
}

FlowField crop(const FlowField& big, int width, int height) {
  FlowField out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.set(x, y, big.u(x + kMargin, y + kMargin), big.v(x + kMargin, y + kMargin));
  return out;
}

HsiCube to_blue(const HsiCube& white, const ModalityRecipe& shared, std::uint64_t seed) {
  ModalityRecipe r = shared;
  r.seed = seed;
  return synth_modality(white, r);
}

std::string indexed(const char* prefix, int i, const char* suffix) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_%04d%s", prefix, i, suffix);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (width <= 0 || height <= 0 || bands <= 0) throw ConfigError("synth: width, height and bands must be positive");
  if (train_triplets < 0 || val_pairs < 0 || test_pairs < 0 || annotated_pairs < 0)
    throw ConfigError("synth: item counts must be non-negative");
  if (keypoints_per_pair < 0) throw ConfigError("synth: keypoints_per_pair must be non-negative");
  if (!(motion_amplitude >= 0.0) || motion_amplitude > kMargin)
    throw ConfigError("synth: motion_amplitude must lie in [0, " + std::to_string(kMargin) + "]");
  if (!(motion_sigma > 0.0)) throw ConfigError("synth: motion_sigma must be positive");
  if (!(blue_attenuation >= 0.0)) throw ConfigError("synth: blue_attenuation must be non-negative");
  if (!(blue_darkening_min >= 0.0 && blue_darkening_min <= 1.0))
    throw ConfigError("synth: blue_darkening_min must lie in [0, 1]");
  if (!(blue_darkening_sigma > 0.0)) throw ConfigError("synth: blue_darkening_sigma must be positive");
  if (!(blue_noise_sigma >= 0.0)) throw ConfigError("synth: blue_noise_sigma must be non-negative");
}

std::vector<HsiCube> SynthDataset::white_scenes() const {
  std::vector<HsiCube> out;
  for (const auto& t : triplets) out.push_back(t.a);
  return out;
}

ModalityRecipe dataset_blue_recipe(const SynthConfig& config) {
  ModalityRecipe r = ModalityRecipe::blue_default(config.bands, mix_seed(config.seed, kBlueMix));
  r.attenuation = config.blue_attenuation;
  r.darkening_min = config.blue_darkening_min;
  r.darkening_sigma = config.blue_darkening_sigma;
  r.noise_sigma = config.blue_noise_sigma;
  return r;
}

SynthDataset make_synth(const SynthConfig& config) {
  config.validate();
  const int W = config.width, H = config.height, BW = W + 2 * kMargin, BH = H + 2 * kMargin;
  const ModalityRecipe blue = dataset_blue_recipe(config);
  auto motion = [&](std::uint64_t seed) {
    return gen_deformation(BW, BH, DeformRecipe{seed, config.motion_sigma, config.motion_amplitude});
  };
  SynthDataset data;

  for (int i = 0; i < config.train_triplets; ++i) {
    const HsiCube scene = synth_scene(BW, BH, config.bands, item_seed(config.seed, kTriplet, i, 0));
    TrainingTriplet t;
    t.a = crop(scene, W, H);
    const HsiCube moved_b = apply_deformation(scene, motion(item_seed(config.seed, kTriplet, i, 1)));
    t.b = crop(to_blue(moved_b, blue, item_seed(config.seed, kTriplet, i, 2)), W, H);
    t.c = crop(apply_deformation(scene, motion(item_seed(config.seed, kTriplet, i, 3))), W, H);
    data.triplets.push_back(std::move(t));
  }

  auto aligned_pairs = [&](Salt salt, int count, std::vector<EvalPair>& out) {
    for (int i = 0; i < count; ++i) {
      const HsiCube scene = synth_scene(BW, BH, config.bands, item_seed(config.seed, salt, i, 0));
      out.push_back({crop(scene, W, H), crop(to_blue(scene, blue, item_seed(config.seed, salt, i, 1)), W, H)});
    }
  };
  aligned_pairs(kValidation, config.val_pairs, data.validation);
  aligned_pairs(kTest, config.test_pairs, data.test);

  for (int i = 0; i < config.annotated_pairs; ++i) {
    const HsiCube scene = synth_scene(BW, BH, config.bands, item_seed(config.seed, kAnnotated, i, 0));
    const FlowField big = motion(item_seed(config.seed, kAnnotated, i, 1));
    AnnotatedPair a;
    // White pixel x sits at scene position x + g(x), which is where the
    // aligned blue frame shows it: g is the exact white-to-blue flow.
    a.images.white = crop(apply_deformation(scene, big), W, H);
    a.images.blue = crop(to_blue(scene, blue, item_seed(config.seed, kAnnotated, i, 2)), W, H);
    const FlowField truth = crop(big, W, H);

    Rng rng(item_seed(config.seed, kAnnotated, i, 3));
    for (int tries = 0; static_cast<int>(a.keypoints.size()) < config.keypoints_per_pair && tries < 100 * W * H; ++tries) {
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(W)));
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(H)));
      const double tx = x + double{truth.u(x, y)}, ty = y + double{truth.v(x, y)};
      if (tx < 0 || ty < 0 || tx > W - 1 || ty > H - 1) continue;
      a.keypoints.push_back({static_cast<double>(x), static_cast<double>(y), tx, ty});
    }

    const auto blob = smooth_noise(W, H, 6.0, rng);
    ValidityMask mb(W, H, false);
    for (std::size_t p = 0; p < blob.size(); ++p) mb.valid[p] = blob[p] > 0.7 ? 1 : 0;
    a.white_mask = warp_mask(mb, truth);
    a.blue_mask = mb;
    a.truth_wb = truth;
    data.annotated.push_back(std::move(a));
  }
  return data;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < data.triplets.size(); ++i) {
    const auto& t = data.triplets[i];
    const int n = static_cast<int>(i);
    const std::string a = indexed("triplet", n, "_a.hsic"), b = indexed("triplet", n, "_b.hsic"),
                      c = indexed("triplet", n, "_c.hsic");
    write_cube(t.a, dir / a);
    write_cube(t.b, dir / b);
    write_cube(t.c, dir / c);
    manifest << "triplet " << a << ' ' << b << ' ' << c;
    if (t.teacher_ac) {
      const std::string ac = indexed("triplet", n, "_ac.flo");
      write_flo(*t.teacher_ac, dir / ac);
      manifest << " teacher " << ac;
      if (t.teacher_ca) {
        const std::string ca = indexed("triplet", n, "_ca.flo");
        write_flo(*t.teacher_ca, dir / ca);
        manifest << ' ' << ca;
      }
    }
    manifest << '\n';
  }
  auto pairs = [&](const char* kind, const std::vector<EvalPair>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string w = indexed(kind, static_cast<int>(i), "_white.hsic");
      const std::string b = indexed(kind, static_cast<int>(i), "_blue.hsic");
      write_cube(items[i].white, dir / w);
      write_cube(items[i].blue, dir / b);
      manifest << kind << ' ' << w << ' ' << b << '\n';
    }
  };
  pairs("val", data.validation);
  pairs("test", data.test);
  for (std::size_t i = 0; i < data.annotated.size(); ++i) {
    const auto& a = data.annotated[i];
    const int n = static_cast<int>(i);
    const std::string w = indexed("annotated", n, "_white.hsic"), b = indexed("annotated", n, "_blue.hsic");
    write_cube(a.images.white, dir / w);
    write_cube(a.images.blue, dir / b);
    std::string kp = "-", mw = "-", mb = "-";
    if (!a.keypoints.empty()) {
      kp = indexed("annotated", n, "_keypoints.txt");
      write_keypoints(a.keypoints, dir / kp);
    }
    if (a.white_mask) {
      mw = indexed("annotated", n, "_mask_white.pgm");
      write_mask_pgm(*a.white_mask, dir / mw);
    }
    if (a.blue_mask) {
      mb = indexed("annotated", n, "_mask_blue.pgm");
      write_mask_pgm(*a.blue_mask, dir / mb);
    }
    manifest << "annotated " << w << ' ' << b << ' ' << kp << ' ' << mw << ' ' << mb << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << manifest.str();
  if (!out) throw FormatError("cannot write " + (dir / "manifest.txt").string());
}

SynthDataset read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  SynthDataset data;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> f;
    for (std::string w; ss >> w;) f.push_back(w);
    if (f.empty() || f[0][0] == '#') continue;
    auto fail = [&](const std::string& why) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    auto cube = [&](const std::string& rel, Modality expect) {
      HsiCube c = read_cube(base / rel);
      if (c.modality != expect)
        fail(rel + " is a " + modality_name(c.modality) + " cube, expected " + modality_name(expect));
      return c;
    };
    const auto W = Modality::kWhite, B = Modality::kBlue;
    if (f[0] == "triplet") {
      if (f.size() != 4 && !(f.size() >= 6 && f.size() <= 7 && f[4] == "teacher"))
        fail("expected 'triplet <a> <b> <c> [teacher <ac.flo> [<ca.flo>]]'");
      TrainingTriplet t{cube(f[1], W), cube(f[2], B), cube(f[3], W), std::nullopt, std::nullopt};
      if (f.size() >= 6) t.teacher_ac = read_flo(base / f[5]);
      if (f.size() == 7) t.teacher_ca = read_flo(base / f[6]);
      data.triplets.push_back(std::move(t));
    } else if (f[0] == "val" || f[0] == "test") {
      if (f.size() != 3) fail("expected '" + f[0] + " <white> <blue>'");
      (f[0] == "val" ? data.validation : data.test).push_back({cube(f[1], W), cube(f[2], B)});
    } else if (f[0] == "annotated") {
      if (f.size() != 6) fail("expected 'annotated <white> <blue> <keypoints> <white_mask> <blue_mask>'");
      AnnotatedPair a;
      a.images = {cube(f[1], W), cube(f[2], B)};
      if (f[3] != "-") a.keypoints = read_keypoints(base / f[3]);
      if (f[4] != "-") a.white_mask = read_mask_pgm(base / f[4]);
      if (f[5] != "-") a.blue_mask = read_mask_pgm(base / f[5]);
      data.annotated.push_back(std::move(a));
    } else {
      fail("unknown entry '" + f[0] + "'");
    }
  }
  return data;
}

}  // namespace xraft
