#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyres/image.hpp"

namespace anyres {

// In-memory labeled image set.
struct Dataset {
  std::string source;  // "synthetic" | "desk" | "image_folder"
  std::string split;   // "train" | "val"
  int num_classes = 0;
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return images.size(); }
};

// Deterministic striped test fixture. Class c renders a sinusoidal grating
// with orientation c % 2 (0 horizontal bands, 1 vertical bands) and
// frequency 1 + c/2 cycles per image, so the label is recoverable from the
// image itself at any resolution below Nyquist.
struct SyntheticSpec {
  int num_classes = 2;
  int samples_per_class = 32;
  int base_resolution = 32;
  std::uint64_t seed = 1;
};

Dataset make_synthetic(const SyntheticSpec& spec);

// The generating rule applied as a classifier: orientation from projection
// variances, frequency from the dominant DFT bin of the mean profile.
int synthetic_label_rule(const Image& img, int num_classes);

// Builtin 10-class procedural image set rendered at 48x48: filled disk,
// ring, square, triangle, cross, horizontal grating, vertical grating,
// checkerboard, dot grid, diagonal bar -- over textured noisy backgrounds.
// Fine-detail classes (ring vs disk, checker vs dots) degrade as resolution
// drops, so accuracy depends on the evaluation resolution.
struct DeskSpec {
  int train_per_class = 200;
  int val_per_class = 100;
  int base_resolution = 48;
  std::uint64_t seed = 99;
};

Dataset make_desk_dataset(const DeskSpec& spec, const std::string& split);

const std::vector<std::string>& desk_class_names();

// image_folder layout: root/<class_name>/<file>, PNG or JPEG.
Dataset load_image_folder(const std::string& root);
void export_image_folder(const Dataset& data, const std::string& root);

}  // namespace anyres
