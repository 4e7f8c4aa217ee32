#include "edsam/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>

#include <openssl/sha.h>

#include "edsam/binio.hpp"
#include "edsam/error.hpp"

#ifdef EDSAM_HAVE_OPENMP
#include <omp.h>
#endif

namespace edsam {

const char* method_name(CellMethod m) {
  switch (m) {
    case CellMethod::none:
      return "none";
    case CellMethod::transport:
      return "transport";
    case CellMethod::random:
      return "random";
    case CellMethod::ada:
      return "ada";
  }
  return "?";
}

CellMethod parse_method(std::string_view name) {
  for (auto m : {CellMethod::none, CellMethod::transport, CellMethod::random, CellMethod::ada}) {
    if (name == method_name(m)) return m;
  }
  throw InvalidInput("unknown transform '" + std::string(name) +
                     "' (expected none, transport, random or ada)");
}

void ExperimentConfig::validate() const {
  source.validate();
  if (shifts.empty()) throw InvalidInput("experiment: shift list is empty");
  if (n_train < 2 || n_test < 1) throw InvalidInput("experiment: need n_train >= 2 and n_test >= 1");
  if (diffusion_steps < 1 || diffusion_batch < 1 || diffusion_hidden.empty()) {
    throw InvalidInput("experiment: diffusion steps, batch and hidden widths must be nonempty");
  }
  if (!(diffusion_lr > 0.0) || !(clip_lr > 0.0)) throw InvalidInput("experiment: learning rates must be > 0");
  if (methods.empty()) throw InvalidInput("experiment: transform list is empty");
  const bool sweeps = std::any_of(methods.begin(), methods.end(), [](CellMethod m) {
    return m == CellMethod::transport || m == CellMethod::random;
  });
  if (sweeps && (rhos.empty() || Ms.empty())) throw InvalidInput("experiment: rho and M grids must be nonempty");
  for (double r : rhos) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidInput("experiment: rho values must be >= 0");
  }
  for (std::size_t m : Ms) {
    if (m < 1 || m > 0xFFFF) throw InvalidInput("experiment: M values must lie in [1, 65535]");
  }
  if (ddim_steps < 1) throw InvalidInput("experiment: ddim_steps must be >= 1");
  ada.validate();
  if (clip_batch < 2 || clip_epochs < 1) throw InvalidInput("experiment: clip_batch >= 2 and clip_epochs >= 1");
  if (seeds.empty()) throw InvalidInput("experiment: seed list is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw InvalidInput("experiment: seeds must be distinct");
  }
  if (jobs < 1) throw InvalidInput("experiment: jobs must be >= 1");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> shifts;
  for (auto s : c.shifts) shifts.emplace_back(shift_name(s));
  std::vector<std::string> methods;
  for (auto m : c.methods) methods.emplace_back(method_name(m));
  j = nlohmann::json{{"background_mean", c.source.background_mean},
                     {"background_jitter", c.source.background_jitter},
                     {"foreground_mean", c.source.foreground_mean},
                     {"foreground_jitter", c.source.foreground_jitter},
                     {"center_jitter", c.source.center_jitter},
                     {"pixel_noise", c.source.pixel_noise},
                     {"contrast_flip_prob", c.source.contrast_flip_prob},
                     {"shifts", shifts},
                     {"n_train", c.n_train},
                     {"n_test", c.n_test},
                     {"diffusion_steps", c.diffusion_steps},
                     {"diffusion_batch", c.diffusion_batch},
                     {"diffusion_lr", c.diffusion_lr},
                     {"diffusion_hidden", c.diffusion_hidden},
                     {"transforms", methods},
                     {"rhos", c.rhos},
                     {"Ms", c.Ms},
                     {"ddim_steps", c.ddim_steps},
                     {"ddim_spacing", spacing_name(c.ddim_spacing)},
                     {"ada_lambda", c.ada.lambda},
                     {"ada_steps", c.ada.steps},
                     {"ada_step_size", c.ada.step_size},
                     {"clip_batch", c.clip_batch},
                     {"clip_epochs", c.clip_epochs},
                     {"clip_lr", c.clip_lr},
                     {"seeds", c.seeds}};
}

void apply_config_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ParseError("experiment config must be a JSON object");
  nlohmann::json known;
  to_json(known, ExperimentConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "jobs") continue;
    if (!known.contains(it.key())) throw InvalidInput("experiment config: unknown key '" + it.key() + "'");
  }
  try {
    const auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("background_mean", c.source.background_mean);
    get("background_jitter", c.source.background_jitter);
    get("foreground_mean", c.source.foreground_mean);
    get("foreground_jitter", c.source.foreground_jitter);
    get("center_jitter", c.source.center_jitter);
    get("pixel_noise", c.source.pixel_noise);
    get("contrast_flip_prob", c.source.contrast_flip_prob);
    if (j.contains("shifts")) {
      c.shifts.clear();
      for (const auto& s : j.at("shifts")) c.shifts.push_back(parse_shift(s.get<std::string>()));
    }
    get("n_train", c.n_train);
    get("n_test", c.n_test);
    get("diffusion_steps", c.diffusion_steps);
    get("diffusion_batch", c.diffusion_batch);
    get("diffusion_lr", c.diffusion_lr);
    get("diffusion_hidden", c.diffusion_hidden);
    if (j.contains("transforms")) {
      c.methods.clear();
      for (const auto& s : j.at("transforms")) c.methods.push_back(parse_method(s.get<std::string>()));
    }
    get("rhos", c.rhos);
    get("Ms", c.Ms);
    get("ddim_steps", c.ddim_steps);
    if (j.contains("ddim_spacing")) c.ddim_spacing = parse_spacing(j.at("ddim_spacing").get<std::string>());
    get("ada_lambda", c.ada.lambda);
    get("ada_steps", c.ada.steps);
    get("ada_step_size", c.ada.step_size);
    get("clip_batch", c.clip_batch);
    get("clip_epochs", c.clip_epochs);
    get("clip_lr", c.clip_lr);
    get("seeds", c.seeds);
    get("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  apply_config_json(j, c);
}

std::string git_blob_sha1(std::string_view content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + std::string(content);
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), md);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : md) {
    out += kHex[b >> 4];
    out += kHex[b & 0xF];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = c;
  return git_blob_sha1(j.dump());
}

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string CellSpec::id() const {
  switch (method) {
    case CellMethod::none:
    case CellMethod::ada:
      return method_name(method);
    default:
      return std::string(method_name(method)) + "/rho=" + format_number(rho) + "/M=" + std::to_string(M);
  }
}

std::vector<CellSpec> expand_cells(const ExperimentConfig& c) {
  std::vector<CellSpec> cells;
  for (auto m : c.methods) {
    if (m == CellMethod::none || m == CellMethod::ada) {
      const CellSpec cell{m, 0.0, m == CellMethod::ada ? 1u : 0u};
      if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
      continue;
    }
    for (double rho : c.rhos) {
      for (std::size_t M : c.Ms) {
        const CellSpec cell{m, rho, M};
        if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
      }
    }
  }
  return cells;
}

std::vector<std::string> metric_names(const ExperimentConfig& c) {
  std::vector<std::string> names{"in_domain_zero_shot"};
  for (auto s : c.shifts) names.push_back(std::string("shift_") + shift_name(s) + "_zero_shot");
  names.emplace_back(kShiftedMean);
  names.emplace_back("linear_probe");
  return names;
}

const CellReport* Report::find(const CellSpec& spec) const {
  for (const auto& c : cells) {
    if (c.spec == spec) return &c;
  }
  return nullptr;
}

void summarize(CellReport& cell) {
  cell.summary.clear();
  std::map<std::string, std::vector<double>> values;
  for (const auto& s : cell.seeds) {
    if (!s.ok()) continue;
    for (const auto& [k, v] : s.metrics) values[k].push_back(v);
  }
  for (const auto& [k, v] : values) {
    MetricSummary m;
    m.count = v.size();
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - m.mean) * (x - m.mean);
      m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    cell.summary[k] = m;
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Everything one seed needs; each stream is derived from the seed alone so a
// cell's metrics do not depend on which other cells are configured.
struct SeedData {
  Dataset train;
  Dataset test;
  std::vector<Dataset> shifted;
};

SeedData make_seed_data(const ExperimentConfig& c, std::uint64_t seed) {
  SeedData d;
  d.train = gen_dataset(c.source, c.n_train, derive_seed(seed, {1}));
  d.test = gen_dataset(c.source, c.n_test, derive_seed(seed, {2}));
  for (auto s : c.shifts) {
    d.shifted.push_back(
        gen_dataset(shift_domain(c.source, s), c.n_test, derive_seed(seed, {3, static_cast<std::uint64_t>(s)})));
  }
  return d;
}

TrainConfig clip_config(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.batch_size = c.clip_batch;
  t.epochs = c.clip_epochs;
  t.learning_rate = c.clip_lr;
  t.seed = seed;
  return t;
}

std::map<std::string, double> evaluate(const ExperimentConfig& c, const SeedData& d,
                                       const ContrastiveModel& model) {
  std::map<std::string, double> m;
  m["in_domain_zero_shot"] = zero_shot(model, d.test);
  double sum = 0.0;
  for (std::size_t k = 0; k < c.shifts.size(); ++k) {
    const double a = zero_shot(model, d.shifted[k]);
    m[std::string("shift_") + shift_name(c.shifts[k]) + "_zero_shot"] = a;
    sum += a;
  }
  m[kShiftedMean] = sum / static_cast<double>(c.shifts.size());
  m["linear_probe"] = linear_probe(model, d.train, d.test);
  return m;
}

struct SeedOutcome {
  std::vector<SeedMetrics> per_cell;
  StageTimes times;
};

SeedOutcome run_seed(const ExperimentConfig& c, const std::vector<CellSpec>& cells, std::uint64_t seed) {
  SeedOutcome out;
  out.per_cell.resize(cells.size());
  for (auto& m : out.per_cell) m.seed = seed;
  const auto fail_all = [&](const std::string& msg) {
    for (auto& m : out.per_cell) {
      if (m.ok() && m.metrics.empty()) m.error = msg;
    }
  };

  auto t0 = Clock::now();
  SeedData data;
  try {
    data = make_seed_data(c, seed);
  } catch (const std::exception& e) {
    fail_all(std::string("data generation failed: ") + e.what());
    return out;
  }
  out.times.data += seconds_since(t0);

  const auto schedule = default_schedule();
  const TrainConfig tc = clip_config(c, seed);
  // The denoiser and the baseline model are shared by all cells of the seed.
  std::optional<Denoiser> denoiser;
  std::string denoiser_error;
  std::optional<ContrastiveModel> baseline;
  std::string baseline_error;

  const auto need_denoiser = [&]() -> const Denoiser& {
    if (!denoiser && denoiser_error.empty()) {
      const auto t = Clock::now();
      try {
        DenoiserTrainConfig dc;
        dc.steps = c.diffusion_steps;
        dc.batch_size = c.diffusion_batch;
        dc.learning_rate = c.diffusion_lr;
        dc.hidden = c.diffusion_hidden;
        dc.seed = seed;
        denoiser = train_denoiser(data.train, schedule, dc);
      } catch (const std::exception& e) {
        denoiser_error = std::string("diffusion training failed: ") + e.what();
      }
      out.times.diffusion += seconds_since(t);
    }
    if (!denoiser) throw Error(denoiser_error);
    return *denoiser;
  };
  const auto need_baseline = [&]() -> const ContrastiveModel& {
    if (!baseline && baseline_error.empty()) {
      const auto t = Clock::now();
      try {
        baseline = train_baseline(data.train, tc).model;
      } catch (const std::exception& e) {
        baseline_error = std::string("baseline training failed: ") + e.what();
      }
      out.times.contrastive += seconds_since(t);
    }
    if (!baseline) throw Error(baseline_error);
    return *baseline;
  };

  for (std::size_t k = 0; k < cells.size(); ++k) {
    const CellSpec& cell = cells[k];
    SeedMetrics& res = out.per_cell[k];
    try {
      if (cell.method == CellMethod::none) {
        const auto& model = need_baseline();
        const auto t = Clock::now();
        res.metrics = evaluate(c, data, model);
        out.times.evaluation += seconds_since(t);
        continue;
      }
      AdvDataset adv;
      auto t = Clock::now();
      if (cell.method == CellMethod::ada) {
        const auto& model = need_baseline();
        t = Clock::now();
        adv = ada_adversarial_set(model, data.train, c.ada, c.clip_batch, seed);
      } else {
        const auto& den = need_denoiser();
        t = Clock::now();
        GenConfig gc;
        gc.M = cell.M;
        gc.rho = cell.rho;
        gc.ddim_steps = c.ddim_steps;
        gc.spacing = c.ddim_spacing;
        gc.seed = seed;
        gc.transform = cell.method == CellMethod::random ? TransformKind::random : TransformKind::transport;
        adv = generate_adversarial(data.train, den, schedule, gc);
      }
      out.times.generation += seconds_since(t);
      res.adversarial_samples = adv.entries.size();
      res.diagnostics = adv.diagnostics;
      t = Clock::now();
      const auto trained = train_edsam(data.train, adv, tc);
      out.times.contrastive += seconds_since(t);
      t = Clock::now();
      res.metrics = evaluate(c, data, trained.model);
      out.times.evaluation += seconds_since(t);
    } catch (const std::exception& e) {
      res.metrics.clear();
      res.error = e.what();
    }
  }
  return out;
}

}  // namespace

Report run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  Report report;
  report.config = config;
  report.config_hash = config_hash(config);
  report.metrics = metric_names(config);
  const auto cells = expand_cells(config);

  const std::size_t n_seeds = config.seeds.size();
  std::vector<SeedOutcome> outcomes(n_seeds);
#ifdef EDSAM_HAVE_OPENMP
  const int jobs = std::min<int>(config.jobs, static_cast<int>(n_seeds));
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs) if (jobs > 1)
  for (std::size_t i = 0; i < n_seeds; ++i) outcomes[i] = run_seed(config, cells, config.seeds[i]);
#else
  for (std::size_t i = 0; i < n_seeds; ++i) outcomes[i] = run_seed(config, cells, config.seeds[i]);
#endif

  // Single-writer reduction in configured seed order.
  for (std::size_t k = 0; k < cells.size(); ++k) {
    CellReport cell;
    cell.spec = cells[k];
    for (const auto& o : outcomes) cell.seeds.push_back(o.per_cell[k]);
    summarize(cell);
    report.cells.push_back(std::move(cell));
  }
  for (const auto& o : outcomes) {
    report.runtime.data += o.times.data;
    report.runtime.diffusion += o.times.diffusion;
    report.runtime.generation += o.times.generation;
    report.runtime.contrastive += o.times.contrastive;
    report.runtime.evaluation += o.times.evaluation;
  }
  report.runtime.total = seconds_since(t0);
  return report;
}

nlohmann::json report_json(const Report& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : c.seeds) {
      nlohmann::json js{{"seed", s.seed}, {"adversarial_samples", s.adversarial_samples}};
      js["metrics"] = s.metrics;
      js["diagnostics"] = s.diagnostics;
      if (!s.ok()) js["error"] = s.error;
      seeds.push_back(std::move(js));
    }
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [k, m] : c.summary) summary[k] = {{"mean", m.mean}, {"std", m.std}, {"count", m.count}};
    cells.push_back({{"id", c.spec.id()},
                     {"transform", method_name(c.spec.method)},
                     {"rho", c.spec.rho},
                     {"M", c.spec.M},
                     {"seeds", std::move(seeds)},
                     {"summary", std::move(summary)}});
  }
  return nlohmann::json{{"format", "edsam-report"},
                        {"version", 1},
                        {"config", r.config},
                        {"config_hash", r.config_hash},
                        {"seeds", r.config.seeds},
                        {"metrics", r.metrics},
                        {"cells", std::move(cells)}};
}

Report report_from_json(const nlohmann::json& j) {
  Report r;
  try {
    if (j.at("format") != "edsam-report") throw ParseError("report: wrong format tag");
    if (j.at("version") != 1) throw UnsupportedVersion("report: unsupported version " + j.at("version").dump());
    r.config = j.at("config").get<ExperimentConfig>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.metrics = j.at("metrics").get<std::vector<std::string>>();
    for (const auto& jc : j.at("cells")) {
      CellReport c;
      c.spec.method = parse_method(jc.at("transform").get<std::string>());
      c.spec.rho = jc.at("rho").get<double>();
      c.spec.M = jc.at("M").get<std::size_t>();
      for (const auto& js : jc.at("seeds")) {
        SeedMetrics s;
        s.seed = js.at("seed").get<std::uint64_t>();
        s.adversarial_samples = js.at("adversarial_samples").get<std::size_t>();
        s.metrics = js.at("metrics").get<std::map<std::string, double>>();
        s.diagnostics = js.at("diagnostics").get<std::vector<std::string>>();
        s.error = js.value("error", std::string());
        c.seeds.push_back(std::move(s));
      }
      for (auto it = jc.at("summary").begin(); it != jc.at("summary").end(); ++it) {
        MetricSummary m;
        m.mean = it->at("mean").get<double>();
        m.std = it->at("std").get<double>();
        m.count = it->at("count").get<std::size_t>();
        c.summary[it.key()] = m;
      }
      r.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return r;
}

nlohmann::json run_manifest(const Report& r) {
  return nlohmann::json{{"format", "edsam-run-manifest"},
                        {"version", 1},
                        {"config", r.config},
                        {"config_hash", r.config_hash},
                        {"seeds", r.config.seeds},
                        {"jobs", r.config.jobs},
                        {"cells", r.cells.size()},
                        {"stage_seconds",
                         {{"data", r.runtime.data},
                          {"diffusion", r.runtime.diffusion},
                          {"generation", r.runtime.generation},
                          {"contrastive", r.runtime.contrastive},
                          {"evaluation", r.runtime.evaluation}}},
                        {"total_seconds", r.runtime.total}};
}

std::string report_csv(const Report& r) {
  std::ostringstream os;
  os << "cell,transform,rho,M,seed,metric,value\n";
  for (const auto& c : r.cells) {
    for (const auto& s : c.seeds) {
      for (const auto& name : r.metrics) {
        os << c.spec.id() << ',' << method_name(c.spec.method) << ',' << format_number(c.spec.rho) << ','
           << c.spec.M << ',' << s.seed << ',' << name << ',';
        if (auto it = s.metrics.find(name); it != s.metrics.end()) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.17g", it->second);
          os << buf;
        }
        os << '\n';
      }
    }
  }
  return os.str();
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

}  // namespace

std::string sweep_svg(const Report& r, SweepAxis axis) {
  // Transport cells at the first M (rho sweep) or the first rho (M sweep).
  std::vector<const CellReport*> cells;
  for (const auto& c : r.cells) {
    if (c.spec.method != CellMethod::transport) continue;
    if (axis == SweepAxis::rho && !r.config.Ms.empty() && c.spec.M != r.config.Ms.front()) continue;
    if (axis == SweepAxis::M && !r.config.rhos.empty() && c.spec.rho != r.config.rhos.front()) continue;
    cells.push_back(&c);
  }
  const auto xval = [&](const CellReport* c) {
    return axis == SweepAxis::rho ? c->spec.rho : static_cast<double>(c->spec.M);
  };
  std::sort(cells.begin(), cells.end(), [&](auto* a, auto* b) { return xval(a) < xval(b); });

  constexpr double W = 640, H = 400, L = 60, R = 160, T = 30, B = 50;
  double xmin = 0.0, xmax = 1.0;
  if (!cells.empty()) {
    xmin = xval(cells.front());
    xmax = xval(cells.back());
    if (xmax == xmin) {
      xmin -= 0.5;
      xmax += 0.5;
    }
  }
  const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double y) { return H - B - std::clamp(y, 0.0, 1.0) * (H - T - B); };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream os;
  char buf[160];
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "  <line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B,
                W - R, H - B);
  os << buf;
  std::snprintf(buf, sizeof buf, "  <line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L,
                H - B);
  os << buf;
  for (double y : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof buf,
                  "  <text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n", L - 6, py(y) + 4,
                  y);
    os << buf;
  }
  for (const auto* c : cells) {
    std::snprintf(buf, sizeof buf, "  <text x=\"%.2f\" y=\"%g\" font-size=\"11\" text-anchor=\"middle\">%g</text>\n",
                  px(xval(c)), H - B + 16, xval(c));
    os << buf;
  }
  os << "  <text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 10)
     << "\" font-size=\"13\" text-anchor=\"middle\">" << (axis == SweepAxis::rho ? "rho" : "M") << "</text>\n";
  os << "  <text x=\"14\" y=\"" << (T + (H - T - B) / 2) << "\" font-size=\"13\" transform=\"rotate(-90 14 "
     << (T + (H - T - B) / 2) << ")\" text-anchor=\"middle\">shifted zero-shot accuracy</text>\n";

  for (std::size_t k = 0; k < r.config.shifts.size(); ++k) {
    const std::string shift = shift_name(r.config.shifts[k]);
    const std::string metric = "shift_" + shift + "_zero_shot";
    const char* color = kColors[k % std::size(kColors)];
    std::string points;
    std::string bars;
    for (const auto* c : cells) {
      auto it = c->summary.find(metric);
      if (it == c->summary.end()) continue;
      const double x = px(xval(c));
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", points.empty() ? "" : " ", x, py(it->second.mean));
      points += buf;
      std::snprintf(buf, sizeof buf,
                    "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>\n", x,
                    py(it->second.mean - it->second.std), x, py(it->second.mean + it->second.std), color);
      bars += buf;
    }
    os << "  <polyline data-shift=\"" << xml_escape(shift) << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
    os << bars;
    std::snprintf(buf, sizeof buf, "  <text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                  W - R + 12, T + 16.0 * static_cast<double>(k + 1), color, xml_escape(shift).c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  if (name == "svg" || name == "svg-plots") return ReportFormat::svg;
  throw InvalidInput("unknown report format '" + std::string(name) + "' (expected json, csv or svg)");
}

std::vector<std::filesystem::path> emit_report(const Report& r, ReportFormat format,
                                               const std::filesystem::path& path) {
  switch (format) {
    case ReportFormat::json:
      binio::write_file(path, report_json(r).dump(2) + "\n");
      return {path};
    case ReportFormat::csv:
      binio::write_file(path, report_csv(r));
      return {path};
    case ReportFormat::svg: {
      auto rho = path;
      rho += "_rho_sweep.svg";
      auto m = path;
      m += "_m_sweep.svg";
      binio::write_file(rho, sweep_svg(r, SweepAxis::rho));
      binio::write_file(m, sweep_svg(r, SweepAxis::M));
      return {rho, m};
    }
  }
  throw InvalidInput("emit_report: unknown format");
}

}  // namespace edsam
