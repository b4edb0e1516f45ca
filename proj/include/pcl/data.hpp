// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain datasets, the stage stream that hides every stage but the current
// one from the trainer, a synthetic lesion-image generator with per-domain
// acquisition shifts, and an image-folder reader.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pcl/rng.hpp"
#include "pcl/vit.hpp"

namespace pcl {

struct Sample {
  Image image;
  int label = 0;
  int domain = 0;  // stage index of the dataset the sample belongs to
  bool operator==(const Sample&) const = default;
};

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;  // test receives the remainder
};

struct DomainDataset {
  std::string name;
  int domain = 0;
  SplitFractions fractions;
  std::vector<Sample> train, val, test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

/// Read access to one stage's training data. Every sample carries the
/// stage's domain id; the trainer rejects batches that do not.
struct StageView {
  int stage = 0;
  std::span<const Sample> train;
  std::span<const Sample> val;
};

/// Ordered, rehearsal-free sequence of domain datasets.
class StageStream {
 public:
  StageStream() = default;
  explicit StageStream(std::vector<DomainDataset> domains);

  std::size_t stages() const { return domains_.size(); }
  int current_stage() const { return current_; }
  /// Moves forward one stage; earlier stages become unreachable for training.
  void advance();
  /// Training handle for `stage`; ContractError unless it is the current stage.
  StageView open(int stage) const;
  /// Held-out evaluation split of any task (used only by evaluation).
  std::span<const Sample> test_set(std::size_t task) const;
  const std::string& name(std::size_t task) const { return domains_.at(task).name; }
  const std::vector<DomainDataset>& domains() const { return domains_; }

 private:
  std::vector<DomainDataset> domains_;
  int current_ = 0;
};

/// Per-domain acquisition shift applied on top of the canonical rendering.
struct DomainStyle {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  double brightness = 0.0;
  double noise = 0.02;
};

struct SynthConfig {
  std::size_t domains = 3;
  std::size_t samples_per_domain = 1000;
  std::size_t pretrain_samples = 1200;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t num_classes = 3;
  SplitFractions fractions;
  /// Scales every domain's deviation from the canonical style.
  double shift_scale = 1.0;
  /// Class proportions per domain (cycled); empty rows fall back to uniform.
  std::vector<std::vector<double>> class_proportions = {
      {1805, 1562, 295}, {6266, 5343, 913}, {5000, 8608, 708}};

  bool operator==(const SynthConfig&) const = default;
};

/// Normalizes raw class counts to proportions.
std::vector<double> class_proportions(std::span<const double> counts);

/// Style of stage domain `domain` for `seed`.
DomainStyle domain_style(std::uint64_t seed, std::size_t domain, double shift_scale);

/// Canonical image of class `label` (lesion count grows with severity).
Image render_canonical(int label, std::size_t image_size, std::size_t channels, Rng& rng);
void apply_style(Image& image, const DomainStyle& style, Rng& rng);

/// `T` domain datasets in order; InputError when T < 2, n < 60, or a class
/// would be missing from any split.
StageStream synth_stream(std::uint64_t seed, const SynthConfig& config);
/// Disjoint pretraining data drawn with per-sample random mild styles.
DomainDataset synth_pretrain_split(std::uint64_t seed, const SynthConfig& config);

/// HorizontalFlip, VerticalFlip and a 90/180/270 degree rotation, each with
/// probability 0.5. Square images only for rotation.
Image augment(const Image& image, Rng& rng);

struct IngestReport {
  DomainDataset dataset;
  std::size_t skipped = 0;  // undecodable files
};

/// Reads `<root>/<class_id>/<image files>` in alphabetical order, resizes
/// to `image_size`, then performs a seeded stratified split.
IngestReport ingest_folder(const std::filesystem::path& root, std::size_t image_size,
                           std::size_t channels, std::size_t num_classes,
                           SplitFractions fractions, std::uint64_t seed, int domain = 0);

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1.
void write_netpbm(const Image& image, const std::filesystem::path& path);
/// Returns false when the file cannot be decoded.
bool read_image(const std::filesystem::path& path, std::size_t channels, Image& out);
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

}  // namespace pcl
