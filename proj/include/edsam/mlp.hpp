#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "edsam/rng.hpp"
#include "edsam/tensor.hpp"

namespace edsam {

enum class Activation : std::uint8_t { gelu = 0, relu = 1, tanh = 2 };

double activate(Activation a, double x);
double activate_derivative(Activation a, double x);
const char* activation_name(Activation a);

// widths = {input, hidden..., output}; one activation per hidden layer, final
// layer linear.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  static MlpSpec uniform(std::vector<std::size_t> widths, Activation act);

  void validate() const;
  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  std::size_t param_count() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// All weights and biases in one flat buffer; layer l holds W_l [in x out]
// followed by b_l [out]. Gradients use the same type.
class MlpParams {
 public:
  MlpParams() = default;
  explicit MlpParams(MlpSpec spec);

  static MlpParams zeros(const MlpSpec& spec);
  // Scaled-uniform init: W ~ U(-sqrt(6/(in+out)), +sqrt(6/(in+out))), b = 0.
  static MlpParams init(const MlpSpec& spec, SeededRng& rng);

  const MlpSpec& spec() const { return spec_; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;

 private:
  MlpSpec spec_;
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;
};

// Everything a backward pass needs. pre[l] is layer l's affine output,
// post[l] its input (post[0] is the network input).
struct MlpActivations {
  std::vector<Tensor> pre;
  std::vector<Tensor> post;
  std::uint64_t params_fingerprint = 0;

  const Tensor& output() const { return pre.back(); }
};

struct MlpGradients {
  MlpParams params;
  Tensor input;
};

// input is [batch x input_width] (or a single rank-1 row).
MlpActivations mlp_forward(const MlpParams& params, const Tensor& input);
MlpGradients mlp_backward(const MlpParams& params, const MlpActivations& acts,
                          const Tensor& grad_output);

std::uint64_t fingerprint(std::span<const double> values);

// Binary format: "EDSAM\0", u16 version, u32 layer-width count, u32 widths,
// u8 activation ids, then every parameter as little-endian f64.
inline constexpr std::uint16_t kMlpFormatVersion = 1;
void write_mlp(std::ostream& out, const MlpParams& params);
MlpParams read_mlp(std::istream& in);
void save_mlp(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_mlp(const std::filesystem::path& path);

}  // namespace edsam
