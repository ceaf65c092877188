#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xraft/evaluation.hpp"
#include "xraft/imaging.hpp"
#include "xraft/training.hpp"

namespace xraft {

/// Sizes and recipes for a synthetic cross-modal dataset.
struct SynthConfig {
  int width = 64;
  int height = 64;
  int bands = 10;
  int train_triplets = 200;
  int val_pairs = 30;
  int test_pairs = 30;
  int annotated_pairs = 10;
  int keypoints_per_pair = 24;
  double motion_amplitude = 6.0;  // max displacement between triplet frames
  double motion_sigma = 8.0;
  // Blue-light recipe; the band mix itself is drawn from the seed.
  double blue_attenuation = 0.3;
  double blue_darkening_min = 0.2;
  double blue_darkening_sigma = 12.0;
  double blue_noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthDataset {
  std::vector<TrainingTriplet> triplets;
  std::vector<EvalPair> validation;
  std::vector<EvalPair> test;
  std::vector<AnnotatedPair> annotated;

  // White frames of the training triplets, used for pretraining.
  std::vector<HsiCube> white_scenes() const;
};

// Blue-light recipe shared by every item of the dataset.
ModalityRecipe dataset_blue_recipe(const SynthConfig& config);

SynthDataset make_synth(const SynthConfig& config);

// Writes cubes, flows, keypoints and masks under `dir` plus a manifest.txt
// whose paths are relative to `dir`.
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

// Manifest lines:
//   triplet <a> <b> <c> [teacher <ac.flo> [<ca.flo>]]
//   val <white> <blue>
//   test <white> <blue>
//   annotated <white> <blue> <keypoints|-> <white_mask|-> <blue_mask|->
SynthDataset read_manifest(const std::filesystem::path& manifest);

}  // namespace xraft
