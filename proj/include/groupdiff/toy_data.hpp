#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "groupdiff/tensor.hpp"

namespace groupdiff {

enum class ShapeKind : int { kDisk = 0, kSquare, kTriangle, kRing, kCross, kBar };
inline constexpr int kShapeKinds = 6;

/// Generator latents of one image.
struct StyleParams {
  double shape = 0.0;  // ShapeKind as a number so the record stays all-double
  double hue = 0.0;
  double scale = 0.0;
  double x = 0.0;
  double y = 0.0;
  double rotation = 0.0;

  bool operator==(const StyleParams&) const = default;
};

struct ToyImage {
  Tensor pixels;  // [H, W, 3], values in [0, 1]
  int class_id = 0;
  StyleParams style;
  std::uint64_t id = 0;
};

struct DatasetSpec {
  int num_classes = 8;
  int images_per_class = 64;
  int image_size = 16;
  std::uint64_t seed = 0;
  /// Within-class style variance relative to the default; 0 makes every image
  /// of a class identical.
  double within_class_spread = 0.5;
  /// Largest group the dataset must be able to fill from one class.
  int group_size_max = 4;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  int num_classes = 0;
  std::uint64_t seed = 0;
  std::size_t image_size = 0;
  std::size_t channels = 3;
  std::vector<ToyImage> images;
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kHistogramBins = 8;
inline constexpr std::size_t kFeatureDim = kHistogramBins * kImageChannels + 3;

/// K × images_per_class procedurally rendered images, ordered by class then index.
Dataset generate_dataset(const DatasetSpec& spec);

/// Renders one image from its latents. Pixels are rounded through float so the
/// dataset file stores them exactly.
Tensor render_image(const StyleParams& style, int class_id, std::size_t image_size);

/// Unit-norm handcrafted features: 8-bin-per-channel color histogram followed
/// by second-order central grayscale moments.
std::vector<double> encode(const Tensor& pixels);
inline std::vector<double> encode(const ToyImage& image) { return encode(image.pixels); }

double cosine(std::span<const double> a, std::span<const double> b);

/// "GDD1" u32 K, u32 count, u32 H, u32 W, u32 Ch, u64 seed, then per image:
/// u64 id, u32 class_id, 6×f64 style, H·W·Ch×f32 pixels.
void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

/// Pixels in [0,1] → model space [-1,1] and back (the inverse clamps).
Tensor to_model_space(const Tensor& pixels);
Tensor to_pixel_space(const Tensor& model);

/// Stacks images (optionally a subset by position) into [N, H, W, Ch].
Tensor stack_pixels(const Dataset& dataset, std::span<const std::size_t> positions);

}  // namespace groupdiff
