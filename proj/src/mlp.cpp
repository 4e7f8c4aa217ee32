#include "edsam/mlp.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "edsam/binio.hpp"
#include "edsam/error.hpp"
#include "edsam/kernels.hpp"

namespace edsam {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::tanh:
      return std::tanh(x);
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
      const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi * std::numbers::sqrt2 * 0.5;
      return cdf + x * pdf;
    }
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::gelu:
      return "gelu";
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
  }
  return "?";
}

MlpSpec MlpSpec::uniform(std::vector<std::size_t> widths, Activation act) {
  MlpSpec s;
  s.activations.assign(widths.size() >= 2 ? widths.size() - 2 : 0, act);
  s.widths = std::move(widths);
  return s;
}

void MlpSpec::validate() const {
  if (widths.size() < 3) throw InvalidInput("MlpSpec needs at least one hidden layer");
  for (auto w : widths) {
    if (w == 0) throw InvalidInput("MlpSpec layer widths must be >= 1");
  }
  if (activations.size() != widths.size() - 2) {
    throw InvalidInput("MlpSpec needs exactly one activation per hidden layer");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
  return n;
}

MlpParams::MlpParams(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
    offsets_.push_back(off);
    off += spec_.widths[l + 1] * (spec_.widths[l] + 1);
  }
  values_.assign(off, 0.0);
}

MlpParams MlpParams::zeros(const MlpSpec& spec) { return MlpParams(spec); }

MlpParams MlpParams::init(const MlpSpec& spec, SeededRng& rng) {
  MlpParams p(spec);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double in = static_cast<double>(spec.widths[l]);
    const double out = static_cast<double>(spec.widths[l + 1]);
    const double limit = std::sqrt(6.0 / (in + out));
    for (double& w : p.weights(l)) w = rng.uniform(-limit, limit);
  }
  return p;
}

std::span<double> MlpParams::weights(std::size_t l) {
  return std::span<double>(values_).subspan(offsets_.at(l), spec_.widths[l + 1] * spec_.widths[l]);
}
std::span<const double> MlpParams::weights(std::size_t l) const {
  return std::span<const double>(values_).subspan(offsets_.at(l),
                                                  spec_.widths[l + 1] * spec_.widths[l]);
}
std::span<double> MlpParams::bias(std::size_t l) {
  return std::span<double>(values_).subspan(offsets_.at(l) + spec_.widths[l + 1] * spec_.widths[l],
                                            spec_.widths[l + 1]);
}
std::span<const double> MlpParams::bias(std::size_t l) const {
  return std::span<const double>(values_).subspan(
      offsets_.at(l) + spec_.widths[l + 1] * spec_.widths[l], spec_.widths[l + 1]);
}

std::uint64_t fingerprint(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    h ^= std::bit_cast<std::uint64_t>(v);
    h *= 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return h ^ values.size();
}

namespace {

Tensor as_batch(const Tensor& input) {
  if (input.rank() == 1) return Tensor({1, input.size()}, input.values());
  if (input.rank() != 2) throw InvalidInput("mlp input must be rank 1 or 2");
  return input;
}

}  // namespace

MlpActivations mlp_forward(const MlpParams& params, const Tensor& input) {
  const MlpSpec& spec = params.spec();
  if (input.empty() || input.cols() != spec.input_width()) {
    throw InvalidInput("mlp_forward: input width " + std::to_string(input.empty() ? 0 : input.cols()) +
                       " does not match network input width " +
                       std::to_string(spec.input_width()));
  }
  MlpActivations acts;
  acts.params_fingerprint = fingerprint(params.values());
  acts.post.push_back(as_batch(input));
  const std::size_t rows = acts.post[0].rows();
  const std::size_t layers = spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const kernels::LinearDims d{rows, spec.widths[l], spec.widths[l + 1]};
    Tensor pre = Tensor::matrix(rows, d.out);
    kernels::linear_forward(d, acts.post[l].data(), params.weights(l), params.bias(l), pre.data());
    if (l + 1 < layers) {
      Tensor post = Tensor::matrix(rows, d.out);
      const Activation a = spec.activations[l];
      for (std::size_t i = 0; i < pre.size(); ++i) post[i] = activate(a, pre[i]);
      acts.post.push_back(std::move(post));
    }
    acts.pre.push_back(std::move(pre));
  }
  return acts;
}

MlpGradients mlp_backward(const MlpParams& params, const MlpActivations& acts,
                          const Tensor& grad_output) {
  const MlpSpec& spec = params.spec();
  const std::size_t layers = spec.num_layers();
  if (acts.pre.size() != layers || acts.post.size() != layers) {
    throw InvalidInput("mlp_backward: activations do not belong to this network");
  }
  if (acts.params_fingerprint != fingerprint(params.values())) {
    throw InvalidInput("mlp_backward: activations are stale (parameters changed since forward)");
  }
  const std::size_t rows = acts.post[0].rows();
  if (grad_output.size() != rows * spec.output_width()) {
    throw InvalidInput("mlp_backward: grad_output shape mismatch");
  }

  MlpGradients grads{MlpParams::zeros(spec), Tensor::matrix(rows, spec.input_width())};
  Tensor delta({rows, spec.output_width()}, grad_output.values());
  for (std::size_t l = layers; l-- > 0;) {
    const kernels::LinearDims d{rows, spec.widths[l], spec.widths[l + 1]};
    kernels::linear_backward_params(d, delta.data(), acts.post[l].data(), grads.params.weights(l),
                                    grads.params.bias(l));
    Tensor dpost = Tensor::matrix(rows, d.in);
    kernels::linear_backward_input(d, delta.data(), params.weights(l), dpost.data());
    if (l == 0) {
      grads.input = std::move(dpost);
    } else {
      const Activation a = spec.activations[l - 1];
      const Tensor& pre = acts.pre[l - 1];
      for (std::size_t i = 0; i < dpost.size(); ++i) dpost[i] *= activate_derivative(a, pre[i]);
      delta = std::move(dpost);
    }
  }
  return grads;
}

void write_mlp(std::ostream& out, const MlpParams& params) {
  const MlpSpec& spec = params.spec();
  binio::write_bytes(out, std::string_view("EDSAM\0", 6));
  binio::write_u16(out, kMlpFormatVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(spec.widths.size()));
  for (auto w : spec.widths) binio::write_u32(out, static_cast<std::uint32_t>(w));
  for (auto a : spec.activations) binio::write_u8(out, static_cast<std::uint8_t>(a));
  for (double v : params.values()) binio::write_f64(out, v);
}

MlpParams read_mlp(std::istream& in) {
  binio::expect_magic(in, std::string_view("EDSAM\0", 6), "mlp");
  binio::expect_version(in, kMlpFormatVersion, "mlp");
  MlpSpec spec;
  const auto count = binio::read_u32(in, "layer count");
  if (count < 3 || count > 64) throw ParseError("mlp: implausible layer count " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) spec.widths.push_back(binio::read_u32(in, "layer width"));
  for (std::uint32_t i = 0; i + 2 < count; ++i) {
    const auto id = binio::read_u8(in, "activation id");
    if (id > 2) throw ParseError("mlp: unknown activation id " + std::to_string(id));
    spec.activations.push_back(static_cast<Activation>(id));
  }
  try {
    spec.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("mlp: ") + e.what());
  }
  MlpParams params(spec);
  for (double& v : params.values()) v = binio::read_f64(in, "parameter");
  return params;
}

void save_mlp(const std::filesystem::path& path, const MlpParams& params) {
  auto out = binio::open_output(path);
  write_mlp(out, params);
  if (!out) throw Error("failed writing " + path.string());
}

MlpParams load_mlp(const std::filesystem::path& path) {
  auto in = binio::open_input(path);
  return read_mlp(in);
}

}  // namespace edsam
