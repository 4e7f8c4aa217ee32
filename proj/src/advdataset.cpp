#include "edsam/advdataset.hpp"

#include <cmath>
#include <sstream>

#include "edsam/binio.hpp"
#include "edsam/error.hpp"

namespace edsam {

const char* transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::transport:
      return "transport";
    case TransformKind::random:
      return "random";
    case TransformKind::ada:
      return "ada";
  }
  return "?";
}

TransformKind parse_transform(std::string_view name) {
  if (name == "transport") return TransformKind::transport;
  if (name == "random") return TransformKind::random;
  if (name == "ada") return TransformKind::ada;
  throw InvalidInput("unknown transform '" + std::string(name) + "'");
}

void GenConfig::validate() const {
  if (M < 1) throw InvalidInput("GenConfig: M must be >= 1");
  if (M > 0xFFFF) throw InvalidInput("GenConfig: M must fit in 16 bits");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidInput("GenConfig: rho must be >= 0");
  if (ddim_steps < 1) throw InvalidInput("GenConfig: ddim_steps must be >= 1");
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  j = nlohmann::json{{"M", c.M},
                     {"rho", c.rho},
                     {"ddim_steps", c.ddim_steps},
                     {"ddim_spacing", spacing_name(c.spacing)},
                     {"seed", c.seed},
                     {"transform", transform_name(c.transform)}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  GenConfig d;
  c.M = j.value("M", d.M);
  c.rho = j.value("rho", d.rho);
  c.ddim_steps = j.value("ddim_steps", d.ddim_steps);
  c.spacing = parse_spacing(j.value("ddim_spacing", std::string(spacing_name(d.spacing))));
  c.seed = j.value("seed", d.seed);
  c.transform = parse_transform(j.value("transform", std::string("transport")));
}

std::string encode_advset(const AdvDataset& adv) {
  std::ostringstream out(std::ios::binary);
  binio::write_bytes(out, "EDSA");
  binio::write_u16(out, kAdvFormatVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(adv.config.M));
  binio::write_f64(out, adv.config.rho);
  binio::write_u32(out, static_cast<std::uint32_t>(adv.entries.size()));
  binio::write_u32(out, static_cast<std::uint32_t>(adv.dim));
  for (const auto& e : adv.entries) {
    if (e.image.size() != adv.dim) throw InvalidInput("save_advset: entry image size != dim");
    binio::write_u32(out, e.source);
    binio::write_u16(out, e.variant);
    binio::write_u8(out, static_cast<std::uint8_t>(e.prompt));
    binio::write_f64(out, e.record.alpha);
    for (double v : e.image.data()) binio::write_f64(out, v);
  }
  const nlohmann::json trailer = adv.config;
  binio::write_blob(out, trailer.dump());
  return out.str();
}

AdvDataset decode_advset(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  binio::expect_magic(in, "EDSA", "advset");
  binio::expect_version(in, kAdvFormatVersion, "advset");
  AdvDataset adv;
  const auto M = binio::read_u32(in, "M");
  const double rho = binio::read_f64(in, "rho");
  const auto n = binio::read_u32(in, "entry count");
  adv.dim = binio::read_u32(in, "image dim");
  if (adv.dim == 0 || M == 0) throw ParseError("advset: invalid header");
  if (static_cast<std::uint64_t>(n) * (15 + 8ULL * adv.dim) > bytes.size()) {
    throw ParseError("truncated input: advset payload shorter than header claims");
  }
  adv.entries.resize(n);
  for (auto& e : adv.entries) {
    e.source = binio::read_u32(in, "entry source");
    e.variant = binio::read_u16(in, "entry variant");
    e.prompt = binio::read_u8(in, "entry class");
    e.record.alpha = binio::read_f64(in, "entry alpha");
    e.record.rho = rho;
    e.record.source_id = e.source;
    e.image = Tensor({adv.dim});
    for (double& v : e.image.data()) v = binio::read_f64(in, "entry pixel");
  }
  std::string trailer;
  try {
    trailer = binio::read_blob(in, "advset trailer");
  } catch (const ParseError&) {
    throw ParseError("advset: corrupt or missing GenConfig trailer");
  }
  try {
    adv.config = nlohmann::json::parse(trailer).get<GenConfig>();
  } catch (const std::exception& e) {
    throw ParseError(std::string("advset: corrupt GenConfig trailer: ") + e.what());
  }
  if (adv.config.M != M || adv.config.rho != rho) {
    throw ParseError("advset: trailer disagrees with header (M or rho)");
  }
  for (const auto& e : adv.entries) {
    if (std::abs(e.record.alpha) > rho) throw ParseError("advset: stored alpha exceeds the rho budget");
  }
  return adv;
}

void save_advset(const AdvDataset& adv, const std::filesystem::path& path) {
  binio::write_file(path, encode_advset(adv));
}

AdvDataset load_advset(const std::filesystem::path& path) { return decode_advset(binio::read_file(path)); }

}  // namespace edsam
