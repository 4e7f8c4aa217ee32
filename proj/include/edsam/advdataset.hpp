#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edsam/diffusion.hpp"
#include "edsam/tensor.hpp"
#include "edsam/transport.hpp"

namespace edsam {

// How the source latent is moved before decoding.
enum class TransformKind { transport, random, ada };

const char* transform_name(TransformKind k);
TransformKind parse_transform(std::string_view name);

struct GenConfig {
  std::size_t M = 10;
  double rho = 0.5;
  int ddim_steps = 10;
  std::uint64_t seed = 0;
  TransformKind transform = TransformKind::transport;
  // Decoding grid; uniform gave the steadier downstream gains in pilot runs.
  GridSpacing spacing = GridSpacing::uniform;

  void validate() const;
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct AdvEntry {
  std::uint32_t source = 0;
  std::uint16_t variant = 0;
  int prompt = 0;
  TransportRecord record;
  Tensor image;

  friend bool operator==(const AdvEntry&, const AdvEntry&) = default;
};

// Adversarial samples grouped by source: entries for one source are
// contiguous and ordered by variant.
struct AdvDataset {
  GenConfig config;
  std::size_t dim = 0;
  std::vector<AdvEntry> entries;
  std::vector<std::string> diagnostics;

  std::size_t M() const { return config.M; }
  double rho() const { return config.rho; }
  bool empty() const { return entries.empty(); }

  friend bool operator==(const AdvDataset& a, const AdvDataset& b) {
    return a.config == b.config && a.dim == b.dim && a.entries == b.entries;
  }
};

// "EDSA", u16 version, u32 M, f64 rho, u32 n, u32 dim, n x (u32 source,
// u16 variant, u8 class, f64 alpha, dim x f64), length-prefixed JSON GenConfig.
inline constexpr std::uint16_t kAdvFormatVersion = 1;
std::string encode_advset(const AdvDataset& adv);
AdvDataset decode_advset(const std::string& bytes);
void save_advset(const AdvDataset& adv, const std::filesystem::path& path);
AdvDataset load_advset(const std::filesystem::path& path);

}  // namespace edsam
