#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edsam/rng.hpp"
#include "edsam/tensor.hpp"

namespace edsam {

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kImageDim = kImageSide * kImageSide;
inline constexpr int kNumShapeClasses = 4;

enum class ShapeClass : int { disc = 0, cross = 1, horizontal_stripes = 2, vertical_stripes = 3 };

// Nuisance factors of one image domain.
struct DomainSpec {
  double background_mean = 0.1;
  double background_jitter = 0.05;
  double foreground_mean = 0.6;
  double foreground_jitter = 0.1;
  int center_jitter = 0;  // pixels, uniform integer offset in [-r, r] per axis
  double pixel_noise = 0.08;
  double contrast_flip_prob = 0.0;

  void validate() const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

void to_json(nlohmann::json& j, const DomainSpec& s);
void from_json(const nlohmann::json& j, DomainSpec& s);

struct PairedSample {
  Tensor image;  // flattened, values in [0, 1]
  int prompt = 0;

  friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

struct Dataset {
  std::vector<PairedSample> samples;
  DomainSpec domain;
  std::uint64_t seed = 0;
  int num_classes = kNumShapeClasses;

  std::size_t size() const { return samples.size(); }
  std::size_t dim() const;
  // [n x dim] matrix of all images.
  Tensor images() const;
  std::vector<int> prompts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Noise-free rendering of one class with the given placement and levels.
Tensor render_shape(ShapeClass cls, int dx, int dy, double background, double foreground);

// n samples with balanced classes (counts differ by at most one). Sample i is
// drawn from its own stream derived from (seed, i).
Dataset gen_dataset(const DomainSpec& spec, std::size_t n, std::uint64_t seed);

enum class DomainShift { background, intensity, noise, contrast };

DomainShift parse_shift(std::string_view name);
const char* shift_name(DomainShift s);
inline constexpr DomainShift kAllShifts[] = {DomainShift::background, DomainShift::intensity,
                                             DomainShift::noise, DomainShift::contrast};

// background +0.3, intensity x0.6, noise std +0.15, or contrast flip prob 1.
DomainSpec shift_domain(const DomainSpec& spec, DomainShift shift);
DomainSpec shift_domain(const DomainSpec& spec, std::string_view shift);

// "EDSD", u16 version, u32 K, u32 n, u32 dim, n x (u8 class, dim x f64),
// then a length-prefixed JSON trailer {"domain": ..., "seed": ...}.
inline constexpr std::uint16_t kDatasetFormatVersion = 1;
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::string encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::string& bytes);

}  // namespace edsam
