#include "edsam/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "edsam/binio.hpp"
#include "edsam/error.hpp"

namespace edsam {

void DomainSpec::validate() const {
  const auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
  if (bad(background_jitter) || bad(foreground_jitter) || bad(pixel_noise) || center_jitter < 0) {
    throw InvalidInput("DomainSpec: jitter and noise levels must be >= 0");
  }
  if (!(contrast_flip_prob >= 0.0 && contrast_flip_prob <= 1.0)) {
    throw InvalidInput("DomainSpec: contrast_flip_prob must lie in [0, 1]");
  }
  if (!std::isfinite(background_mean) || !std::isfinite(foreground_mean)) {
    throw InvalidInput("DomainSpec: levels must be finite");
  }
}

void to_json(nlohmann::json& j, const DomainSpec& s) {
  j = nlohmann::json{{"background_mean", s.background_mean},
                     {"background_jitter", s.background_jitter},
                     {"foreground_mean", s.foreground_mean},
                     {"foreground_jitter", s.foreground_jitter},
                     {"center_jitter", s.center_jitter},
                     {"pixel_noise", s.pixel_noise},
                     {"contrast_flip_prob", s.contrast_flip_prob}};
}

void from_json(const nlohmann::json& j, DomainSpec& s) {
  DomainSpec d;
  s.background_mean = j.value("background_mean", d.background_mean);
  s.background_jitter = j.value("background_jitter", d.background_jitter);
  s.foreground_mean = j.value("foreground_mean", d.foreground_mean);
  s.foreground_jitter = j.value("foreground_jitter", d.foreground_jitter);
  s.center_jitter = j.value("center_jitter", d.center_jitter);
  s.pixel_noise = j.value("pixel_noise", d.pixel_noise);
  s.contrast_flip_prob = j.value("contrast_flip_prob", d.contrast_flip_prob);
}

std::size_t Dataset::dim() const {
  if (samples.empty()) throw InvalidInput("dataset is empty");
  return samples.front().image.size();
}

Tensor Dataset::images() const {
  std::vector<Tensor> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(s.image);
  return stack_rows(rows);
}

std::vector<int> Dataset::prompts() const {
  std::vector<int> p;
  p.reserve(samples.size());
  for (const auto& s : samples) p.push_back(s.prompt);
  return p;
}

namespace {

bool in_shape(ShapeClass cls, int x, int y, int dx, int dy) {
  const double cx = 3.5 + dx;
  const double cy = 3.5 + dy;
  const double rx = x - cx;
  const double ry = y - cy;
  switch (cls) {
    case ShapeClass::disc:
      return rx * rx + ry * ry <= 2.5 * 2.5;
    case ShapeClass::cross:
      return (std::abs(rx) <= 0.5 && std::abs(ry) <= 2.5) ||
             (std::abs(ry) <= 0.5 && std::abs(rx) <= 2.5);
    case ShapeClass::horizontal_stripes:
      return std::abs(rx) <= 2.5 && std::abs(ry) <= 2.5 && ((y & 1) == 1);
    case ShapeClass::vertical_stripes:
      return std::abs(rx) <= 2.5 && std::abs(ry) <= 2.5 && ((x & 1) == 1);
  }
  return false;
}

}  // namespace

Tensor render_shape(ShapeClass cls, int dx, int dy, double background, double foreground) {
  Tensor img({kImageDim}, background);
  for (int y = 0; y < static_cast<int>(kImageSide); ++y) {
    for (int x = 0; x < static_cast<int>(kImageSide); ++x) {
      if (in_shape(cls, x, y, dx, dy)) img[static_cast<std::size_t>(y) * kImageSide + x] = foreground;
    }
  }
  return img;
}

Dataset gen_dataset(const DomainSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InvalidInput("gen_dataset: n must be >= 1");
  Dataset ds;
  ds.domain = spec;
  ds.seed = seed;
  ds.num_classes = kNumShapeClasses;

  std::vector<int> classes(n);
  for (std::size_t i = 0; i < n; ++i) classes[i] = static_cast<int>(i % kNumShapeClasses);
  SeededRng order(derive_seed(seed, {0xC1A55ULL}));
  for (std::size_t i = n; i-- > 1;) std::swap(classes[i], classes[order.below(i + 1)]);

  ds.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng rng(derive_seed(seed, {i}));
    const int r = spec.center_jitter;
    const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * r + 1))) - r;
    const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * r + 1))) - r;
    const double bg = spec.background_mean + spec.background_jitter * rng.uniform(-1.0, 1.0);
    const double fg = spec.foreground_mean + spec.foreground_jitter * rng.uniform(-1.0, 1.0);
    const bool flip = rng.uniform() < spec.contrast_flip_prob;
    Tensor img = render_shape(static_cast<ShapeClass>(classes[i]), dx, dy, bg, fg);
    for (std::size_t k = 0; k < img.size(); ++k) {
      double v = img[k] + spec.pixel_noise * rng.normal();
      if (flip) v = 1.0 - v;
      img[k] = std::clamp(v, 0.0, 1.0);
    }
    ds.samples[i] = PairedSample{std::move(img), classes[i]};
  }
  return ds;
}

DomainShift parse_shift(std::string_view name) {
  if (name == "background") return DomainShift::background;
  if (name == "intensity") return DomainShift::intensity;
  if (name == "noise") return DomainShift::noise;
  if (name == "contrast") return DomainShift::contrast;
  throw InvalidInput("unknown domain shift '" + std::string(name) +
                     "' (expected background, intensity, noise or contrast)");
}

const char* shift_name(DomainShift s) {
  switch (s) {
    case DomainShift::background:
      return "background";
    case DomainShift::intensity:
      return "intensity";
    case DomainShift::noise:
      return "noise";
    case DomainShift::contrast:
      return "contrast";
  }
  return "?";
}

DomainSpec shift_domain(const DomainSpec& spec, DomainShift shift) {
  DomainSpec out = spec;
  switch (shift) {
    case DomainShift::background:
      out.background_mean += 0.3;
      break;
    case DomainShift::intensity:
      out.foreground_mean *= 0.6;
      break;
    case DomainShift::noise:
      out.pixel_noise += 0.15;
      break;
    case DomainShift::contrast:
      out.contrast_flip_prob = 1.0;
      break;
  }
  return out;
}

DomainSpec shift_domain(const DomainSpec& spec, std::string_view shift) {
  return shift_domain(spec, parse_shift(shift));
}

std::string encode_dataset(const Dataset& ds) {
  std::ostringstream out(std::ios::binary);
  binio::write_bytes(out, "EDSD");
  binio::write_u16(out, kDatasetFormatVersion);
  const std::size_t dim = ds.dim();
  binio::write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
  binio::write_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
  binio::write_u32(out, static_cast<std::uint32_t>(dim));
  for (const auto& s : ds.samples) {
    if (s.image.size() != dim) throw InvalidInput("save_dataset: ragged images");
    binio::write_u8(out, static_cast<std::uint8_t>(s.prompt));
    for (double v : s.image.data()) binio::write_f64(out, v);
  }
  const nlohmann::json trailer{{"domain", ds.domain}, {"seed", ds.seed}};
  binio::write_blob(out, trailer.dump());
  return out.str();
}

Dataset decode_dataset(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  binio::expect_magic(in, "EDSD", "dataset");
  binio::expect_version(in, kDatasetFormatVersion, "dataset");
  Dataset ds;
  ds.num_classes = static_cast<int>(binio::read_u32(in, "class count"));
  const auto n = binio::read_u32(in, "sample count");
  const auto dim = binio::read_u32(in, "image dim");
  if (ds.num_classes <= 0 || ds.num_classes > 255 || n == 0 || dim == 0) {
    throw ParseError("dataset: invalid header");
  }
  if (static_cast<std::uint64_t>(n) * (1 + 8ULL * dim) > bytes.size()) {
    throw ParseError("truncated input: dataset payload shorter than header claims");
  }
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.prompt = binio::read_u8(in, "sample class");
    if (s.prompt >= ds.num_classes) throw ParseError("dataset: class id out of range");
    s.image = Tensor({dim});
    for (double& v : s.image.data()) v = binio::read_f64(in, "pixel");
  }
  const std::string trailer = binio::read_blob(in, "dataset trailer");
  try {
    const auto j = nlohmann::json::parse(trailer);
    ds.domain = j.at("domain").get<DomainSpec>();
    ds.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset: malformed trailer: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  binio::write_file(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(binio::read_file(path)); }

}  // namespace edsam
