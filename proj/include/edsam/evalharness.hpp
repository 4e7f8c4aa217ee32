#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "edsam/advdataset.hpp"
#include "edsam/advgen.hpp"
#include "edsam/contrastive.hpp"
#include "edsam/datagen.hpp"
#include "edsam/diffusion.hpp"

namespace edsam {

// Generation method of a grid cell. `none` is plain contrastive training.
enum class CellMethod { none, transport, random, ada };

const char* method_name(CellMethod m);
CellMethod parse_method(std::string_view name);

struct ExperimentConfig {
  DomainSpec source;
  std::vector<DomainShift> shifts{std::begin(kAllShifts), std::end(kAllShifts)};
  std::size_t n_train = 400;
  std::size_t n_test = 1000;

  std::size_t diffusion_steps = 3000;
  std::size_t diffusion_batch = 128;
  double diffusion_lr = 2e-3;
  std::vector<std::size_t> diffusion_hidden{128, 128};

  std::vector<CellMethod> methods{CellMethod::none, CellMethod::transport};
  std::vector<double> rhos{0.5};
  std::vector<std::size_t> Ms{10};
  int ddim_steps = 10;
  GridSpacing ddim_spacing = GenConfig{}.spacing;
  AdaConfig ada;

  std::size_t clip_batch = 32;
  std::size_t clip_epochs = 30;
  double clip_lr = 3e-3;

  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  // Seeds run concurrently up to this many at a time; results do not depend
  // on it.
  int jobs = 1;

  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Flat keys; unknown keys are rejected. `jobs` is an execution setting and is
// not part of the serialized config.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
// Overlays the keys present in j onto c.
void apply_config_json(const nlohmann::json& j, ExperimentConfig& c);

// git-style blob SHA-1 of the canonical config JSON, hex encoded.
std::string config_hash(const ExperimentConfig& c);
std::string git_blob_sha1(std::string_view content);

struct CellSpec {
  CellMethod method = CellMethod::none;
  double rho = 0.0;
  std::size_t M = 0;

  std::string id() const;
  friend bool operator==(const CellSpec&, const CellSpec&) = default;
};

std::vector<CellSpec> expand_cells(const ExperimentConfig& c);

// Metric names in report order for the configured shifts.
std::vector<std::string> metric_names(const ExperimentConfig& c);
inline constexpr const char* kShiftedMean = "shifted_mean_zero_shot";

struct SeedMetrics {
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::size_t adversarial_samples = 0;
  std::vector<std::string> diagnostics;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
  friend bool operator==(const SeedMetrics&, const SeedMetrics&) = default;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single seed
  std::size_t count = 0;
  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

struct CellReport {
  CellSpec spec;
  std::vector<SeedMetrics> seeds;
  std::map<std::string, MetricSummary> summary;
  friend bool operator==(const CellReport&, const CellReport&) = default;
};

// Wall-clock seconds per pipeline stage, summed over seeds. Kept out of the
// JSON report so that repeated runs serialize identically.
struct StageTimes {
  double data = 0.0;
  double diffusion = 0.0;
  double generation = 0.0;
  double contrastive = 0.0;
  double evaluation = 0.0;
  double total = 0.0;
};

struct Report {
  ExperimentConfig config;
  std::string config_hash;
  std::vector<std::string> metrics;
  std::vector<CellReport> cells;
  StageTimes runtime;

  const CellReport* find(const CellSpec& spec) const;
};

Report run_experiment(const ExperimentConfig& config);

// Recomputes every cell's summary from its seed metrics.
void summarize(CellReport& cell);

nlohmann::json report_json(const Report& r);
Report report_from_json(const nlohmann::json& j);
nlohmann::json run_manifest(const Report& r);

std::string report_csv(const Report& r);

enum class SweepAxis { rho, M };
// One polyline per shift domain over the transport cells, mean accuracy with
// seed standard-deviation error bars.
std::string sweep_svg(const Report& r, SweepAxis axis);

enum class ReportFormat { json, csv, svg };
ReportFormat parse_report_format(std::string_view name);
// json and csv write `path`; svg writes <path>_rho_sweep.svg and
// <path>_m_sweep.svg. Returns the files written.
std::vector<std::filesystem::path> emit_report(const Report& r, ReportFormat format,
                                               const std::filesystem::path& path);

}  // namespace edsam
