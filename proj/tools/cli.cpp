#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "edsam/advgen.hpp"
#include "edsam/binio.hpp"
#include "edsam/error.hpp"
#include "edsam/evalharness.hpp"
#include "edsam/transport.hpp"

#ifdef EDSAM_HAVE_OPENMP
#include <omp.h>
#endif

namespace edsam::cli {

namespace fs = std::filesystem;

namespace {

struct OutputExists : Error {
  using Error::Error;
};

struct CheckFailed : Error {
  using Error::Error;
};

// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  bool force = false;
  int jobs = 1;
  bool verbose = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON file with flat keys; flags given on the command line win");
  sub->add_option("--seed", c.seed, "Seed (falls back to the config file, then EDSAM_SEED, then 0)");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  sub->add_flag("--force", c.force, "Overwrite existing outputs");
  sub->add_option("--jobs", c.jobs, "Maximum worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_flag("-v,--verbose", c.verbose, "Progress messages on stderr");
}

nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = binio::read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string option_key(const CLI::Option* opt) {
  std::string key = opt->get_name(false, false);
  while (!key.empty() && key.front() == '-') key.erase(key.begin());
  for (char& ch : key) {
    if (ch == '-') ch = '_';
  }
  return key;
}

// Feeds config-file values into every option the command line left unset.
void overlay_config(CLI::App* sub, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config file must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    CLI::Option* match = nullptr;
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_lnames().empty()) continue;
      if (option_key(opt) == it.key()) match = opt;
    }
    if (match == nullptr || it.key() == "config" || it.key() == "help") {
      throw InvalidInput("config file: unknown key '" + it.key() + "' for " + sub->get_name());
    }
    if (match->count() > 0) continue;
    std::vector<std::string> values;
    const auto text = [](const nlohmann::json& v) {
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    if (it->is_array()) {
      for (const auto& v : *it) values.push_back(text(v));
    } else {
      values.push_back(text(*it));
    }
    try {
      match->add_result(values);
      match->run_callback();
    } catch (const CLI::Error& e) {
      throw InvalidInput("config file: bad value for '" + it.key() + "': " + e.what());
    }
  }
}

std::uint64_t resolve_seed(const Common& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("EDSAM_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InvalidInput(std::string("EDSAM_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

void guard_outputs(const Common& c, const std::vector<fs::path>& paths) {
  if (c.force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) throw OutputExists("output exists (use --force to overwrite): " + p.string());
  }
}

fs::path with_suffix(const fs::path& base, const char* suffix) {
  auto p = base;
  p += suffix;
  return p;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw InvalidInput(std::string("missing required --") + what);
}

struct Logger {
  bool on;
  std::ostream& err;
  void operator()(const std::string& msg) const {
    if (on) err << "[edsam] " << msg << '\n';
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic-domain contrastive training with diffusion-based distribution moving", "edsam"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  std::function<void()> action;

  // gen-data
  DomainSpec domain;
  std::size_t n = 400;
  std::string shift;
  std::string name;
  auto* gen_data = app.add_subcommand("gen-data", "Render a synthetic image/prompt dataset");
  add_common(gen_data, common);
  gen_data->add_option("--n", n, "Number of samples")->capture_default_str();
  gen_data->add_option("--shift", shift, "Apply one shift: background, intensity, noise or contrast");
  gen_data->add_option("--background-mean", domain.background_mean, "Mean background level")->capture_default_str();
  gen_data->add_option("--background-jitter", domain.background_jitter, "Per-image background jitter (uniform half-width)")->capture_default_str();
  gen_data->add_option("--foreground-mean", domain.foreground_mean, "Mean shape intensity")->capture_default_str();
  gen_data->add_option("--foreground-jitter", domain.foreground_jitter, "Per-image shape intensity jitter")->capture_default_str();
  gen_data->add_option("--center-jitter", domain.center_jitter, "Shape offset radius in pixels")->capture_default_str();
  gen_data->add_option("--pixel-noise", domain.pixel_noise, "Gaussian pixel noise std")->capture_default_str();
  gen_data->add_option("--contrast-flip-prob", domain.contrast_flip_prob, "Probability of inverting an image")->capture_default_str();
  gen_data->add_option("--name", name, "Output file stem (default: dataset)");

  // train-diffusion
  std::string data_path;
  DenoiserTrainConfig dcfg;
  auto* train_diff = app.add_subcommand("train-diffusion", "Train the conditional denoiser");
  add_common(train_diff, common);
  train_diff->add_option("--data", data_path, "Training dataset (.edsd)");
  train_diff->add_option("--steps", dcfg.steps, "Optimizer steps")->capture_default_str();
  train_diff->add_option("--batch", dcfg.batch_size, "Batch size")->capture_default_str();
  train_diff->add_option("--lr", dcfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_diff->add_option("--hidden", dcfg.hidden, "Hidden widths")->capture_default_str()->delimiter(',');
  train_diff->add_option("--name", name, "Checkpoint stem (default: denoiser)");

  // verify-transport
  double rho = 0.5;
  std::size_t dim = 16;
  std::size_t samples = 100000;
  double tol = 0.03;
  auto* verify = app.add_subcommand("verify-transport", "Monte-Carlo check of the transport distance bound");
  add_common(verify, common);
  verify->add_option("--rho", rho, "Transport budget")->capture_default_str();
  verify->add_option("--dim", dim, "Latent dimension")->capture_default_str();
  verify->add_option("--n", samples, "Samples per population")->capture_default_str();
  verify->add_option("--tol", tol, "Distance tolerance")->capture_default_str();

  // gen-adv
  std::string denoiser_path;
  std::string model_path;
  GenConfig gcfg;
  std::string transform = "transport";
  std::string spacing = spacing_name(GenConfig{}.spacing);
  AdaConfig ada;
  auto* gen_adv = app.add_subcommand("gen-adv", "Generate adversarial variants of a dataset");
  add_common(gen_adv, common);
  gen_adv->add_option("--data", data_path, "Source dataset (.edsd)");
  gen_adv->add_option("--denoiser", denoiser_path, "Denoiser checkpoint stem (transport, random)");
  gen_adv->add_option("--model", model_path, "Contrastive checkpoint stem (ada)");
  gen_adv->add_option("--transform", transform, "transport, random or ada")->capture_default_str();
  gen_adv->add_option("--M", gcfg.M, "Variants per source")->capture_default_str();
  gen_adv->add_option("--rho", gcfg.rho, "Transport budget")->capture_default_str();
  gen_adv->add_option("--ddim-steps", gcfg.ddim_steps, "DDIM steps")->capture_default_str();
  gen_adv->add_option("--ddim-spacing", spacing, "DDIM grid spacing: uniform or quadratic")
      ->capture_default_str()
      ->check(CLI::IsMember({"uniform", "quadratic"}));
  gen_adv->add_option("--ada-lambda", ada.lambda, "ADA displacement penalty")->capture_default_str();
  gen_adv->add_option("--ada-steps", ada.steps, "ADA ascent steps")->capture_default_str();
  gen_adv->add_option("--ada-step-size", ada.step_size, "ADA step size")->capture_default_str();
  gen_adv->add_option("--name", name, "Output file stem (default: advset)");

  // train-clip
  std::string adv_path;
  TrainConfig tcfg;
  std::string mode = "baseline";
  auto* train_clip = app.add_subcommand("train-clip", "Train the contrastive model (baseline or edsam)");
  add_common(train_clip, common);
  train_clip->add_option("--data", data_path, "Training dataset (.edsd)");
  train_clip->add_option("--adv", adv_path, "Adversarial set (.edsa), required for edsam");
  train_clip->add_option("--mode", mode, "baseline or edsam")->capture_default_str()->check(
      CLI::IsMember({"baseline", "edsam"}));
  train_clip->add_option("--epochs", tcfg.epochs, "Training epochs")->capture_default_str();
  train_clip->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
  train_clip->add_option("--lr", tcfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_clip->add_option("--name", name, "Checkpoint stem (default: clip)");

  // eval
  std::vector<std::string> eval_data;
  std::string probe_train;
  auto* eval = app.add_subcommand("eval", "Zero-shot and linear-probe metrics of a checkpoint");
  add_common(eval, common);
  eval->add_option("--model", model_path, "Contrastive checkpoint stem");
  eval->add_option("--data", eval_data, "Evaluation datasets (.edsd)")->delimiter(',');
  eval->add_option("--probe-train", probe_train, "Dataset to fit the linear probe on");
  eval->add_option("--name", name, "Metrics file stem (default: metrics)");

  // experiment
  std::vector<std::uint64_t> seed_list;
  std::vector<std::string> formats{"json", "csv", "svg"};
  auto* experiment = app.add_subcommand("experiment", "Full grid: data, diffusion, generation, training, evaluation");
  experiment->add_option("--config", common.config, "Experiment JSON (flat keys)");
  experiment->add_option("--seed", common.seed, "First seed; the seed count is kept");
  experiment->add_option("--seeds", seed_list, "Explicit seed list")->delimiter(',');
  experiment->add_option("--out", common.out, "Output directory")->capture_default_str();
  experiment->add_flag("--force", common.force, "Overwrite existing outputs");
  experiment->add_option("--jobs", common.jobs, "Seeds run concurrently")->capture_default_str()->check(
      CLI::PositiveNumber);
  experiment->add_flag("-v,--verbose", common.verbose, "Progress messages on stderr");
  experiment->add_option("--formats", formats, "Report formats: json, csv, svg")->capture_default_str()->delimiter(
      ',');

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "edsam: error (invalid-argument): " << e.what() << '\n';
    return kInvalidArgument;
  }

  CLI::App* sub = app.get_subcommands().front();
  const Logger log{common.verbose, err};
  try {
    if (!common.config.empty() && sub != experiment) overlay_config(sub, read_json_file(common.config));
#ifdef EDSAM_HAVE_OPENMP
    omp_set_num_threads(common.jobs);
#endif
    const fs::path dir = common.out;

    if (sub == gen_data) {
      const fs::path path = dir / ((name.empty() ? "dataset" : name) + ".edsd");
      guard_outputs(common, {path});
      DomainSpec spec = shift.empty() ? domain : shift_domain(domain, shift);
      const auto ds = gen_dataset(spec, n, resolve_seed(common));
      save_dataset(ds, path);
      log("wrote " + std::to_string(ds.size()) + " samples");
      out << path.string() << '\n';
    } else if (sub == train_diff) {
      require_file(data_path, "data");
      const fs::path base = dir / (name.empty() ? "denoiser" : name);
      guard_outputs(common, {with_suffix(base, ".bin"), with_suffix(base, ".json")});
      const auto ds = load_dataset(data_path);
      dcfg.seed = resolve_seed(common);
      const auto schedule = default_schedule();
      log("training denoiser for " + std::to_string(dcfg.steps) + " steps");
      const auto model = train_denoiser(ds, schedule, dcfg);
      save_denoiser(base, model, schedule);
      log("final loss " + std::to_string(model.loss_trace.back()));
      out << base.string() << '\n';
    } else if (sub == verify) {
      SeededRng rng(resolve_seed(common));
      const auto report = verify_transport_bound(rho, dim, samples, rng, tol);
      const std::string text = report.to_json().dump(2) + "\n";
      if (verify->get_option("--out")->count() > 0) {
        const fs::path path = dir / "transport_check.json";
        guard_outputs(common, {path});
        binio::write_file(path, text);
      }
      out << text;
      if (!report.pass) throw CheckFailed("transport distance check failed");
    } else if (sub == gen_adv) {
      require_file(data_path, "data");
      const fs::path path = dir / ((name.empty() ? "advset" : name) + ".edsa");
      guard_outputs(common, {path});
      const auto ds = load_dataset(data_path);
      gcfg.transform = parse_transform(transform);
      gcfg.spacing = parse_spacing(spacing);
      gcfg.seed = resolve_seed(common);
      AdvDataset adv;
      if (gcfg.transform == TransformKind::ada) {
        require_file(model_path, "model");
        adv = ada_adversarial_set(load_contrastive(model_path), ds, ada, tcfg.batch_size, gcfg.seed);
      } else {
        require_file(denoiser_path, "denoiser");
        const auto den = load_denoiser(denoiser_path);
        adv = generate_adversarial(ds, den.model, den.schedule, gcfg);
      }
      for (const auto& d : adv.diagnostics) err << "edsam: " << d << '\n';
      save_advset(adv, path);
      log("wrote " + std::to_string(adv.entries.size()) + " entries");
      out << path.string() << '\n';
    } else if (sub == train_clip) {
      require_file(data_path, "data");
      const fs::path base = dir / (name.empty() ? "clip" : name);
      guard_outputs(common, {with_suffix(base, ".bin"), with_suffix(base, ".json")});
      const auto ds = load_dataset(data_path);
      tcfg.seed = resolve_seed(common);
      TrainResult res;
      if (mode == "edsam") {
        require_file(adv_path, "adv");
        res = train_edsam(ds, load_advset(adv_path), tcfg);
      } else {
        if (!adv_path.empty()) throw InvalidInput("--adv given with --mode baseline");
        res = train_baseline(ds, tcfg);
      }
      save_contrastive(base, res.model);
      log("final loss " + std::to_string(res.loss_trace.back()));
      out << base.string() << '\n';
    } else if (sub == eval) {
      require_file(model_path, "model");
      if (eval_data.empty()) throw InvalidInput("missing required --data");
      const fs::path path = dir / ((name.empty() ? "metrics" : name) + ".json");
      guard_outputs(common, {path});
      const auto model = load_contrastive(model_path);
      nlohmann::json metrics{{"model", model_path}};
      nlohmann::json zs = nlohmann::json::object();
      std::optional<Dataset> first;
      for (const auto& f : eval_data) {
        auto ds = load_dataset(f);
        zs[fs::path(f).stem().string()] = zero_shot(model, ds);
        if (!first) first = std::move(ds);
      }
      metrics["zero_shot"] = zs;
      if (!probe_train.empty()) metrics["linear_probe"] = linear_probe(model, load_dataset(probe_train), *first);
      const std::string text = metrics.dump(2) + "\n";
      binio::write_file(path, text);
      out << text;
    } else if (sub == experiment) {
      ExperimentConfig cfg;
      if (!common.config.empty()) apply_config_json(read_json_file(common.config), cfg);
      if (!seed_list.empty()) {
        cfg.seeds = seed_list;
      } else if (common.seed || std::getenv("EDSAM_SEED") != nullptr) {
        const bool file_has_seeds = !common.config.empty() && read_json_file(common.config).contains("seeds");
        if (common.seed || !file_has_seeds) {
          const std::uint64_t first = resolve_seed(common);
          for (std::size_t i = 0; i < cfg.seeds.size(); ++i) cfg.seeds[i] = first + i;
        }
      }
      if (experiment->get_option("--jobs")->count() > 0) cfg.jobs = common.jobs;
      cfg.validate();
      std::vector<ReportFormat> fmts;
      std::vector<fs::path> planned{dir / "run_manifest.json"};
      for (const auto& f : formats) {
        const auto fmt = parse_report_format(f);
        fmts.push_back(fmt);
        if (fmt == ReportFormat::json) planned.push_back(dir / "report.json");
        if (fmt == ReportFormat::csv) planned.push_back(dir / "report.csv");
        if (fmt == ReportFormat::svg) {
          planned.push_back(dir / "report_rho_sweep.svg");
          planned.push_back(dir / "report_m_sweep.svg");
        }
      }
      guard_outputs(common, planned);
      log("running " + std::to_string(expand_cells(cfg).size()) + " cells x " + std::to_string(cfg.seeds.size()) +
          " seeds");
      const Report report = run_experiment(cfg);
      for (auto fmt : fmts) {
        const fs::path target = fmt == ReportFormat::json ? dir / "report.json"
                                : fmt == ReportFormat::csv ? dir / "report.csv"
                                                           : dir / "report";
        emit_report(report, fmt, target);
      }
      binio::write_file(dir / "run_manifest.json", run_manifest(report).dump(2) + "\n");
      for (const auto& cell : report.cells) {
        for (const auto& s : cell.seeds) {
          if (!s.ok()) err << "edsam: cell " << cell.spec.id() << " seed " << s.seed << " failed: " << s.error << '\n';
        }
        if (auto it = cell.summary.find(kShiftedMean); it != cell.summary.end()) {
          char line[160];
          std::snprintf(line, sizeof line, "%-28s shifted %.4f +- %.4f\n", cell.spec.id().c_str(), it->second.mean,
                        it->second.std);
          out << line;
        }
      }
      log("total " + std::to_string(report.runtime.total) + " s");
    }
  } catch (const MissingArtifact& e) {
    err << "edsam: error (missing-artifact): " << e.what() << '\n';
    return kMissingFile;
  } catch (const UnsupportedVersion& e) {
    err << "edsam: error (version-mismatch): " << e.what() << '\n';
    return kVersionMismatch;
  } catch (const ParseError& e) {
    err << "edsam: error (malformed-input): " << e.what() << '\n';
    return kMalformedInput;
  } catch (const InvalidInput& e) {
    err << "edsam: error (invalid-argument): " << e.what() << '\n';
    return kInvalidArgument;
  } catch (const OutputExists& e) {
    err << "edsam: error (output-exists): " << e.what() << '\n';
    return kOutputExists;
  } catch (const CheckFailed& e) {
    err << "edsam: error (check-failed): " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    err << "edsam: error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

namespace {

int run_sub(const char* name, const std::vector<std::string>& args) {
  std::vector<std::string> full{name};
  full.insert(full.end(), args.begin(), args.end());
  return run_cli(full, std::cout, std::cerr);
}

}  // namespace

int cmd_gen_data(const std::vector<std::string>& args) { return run_sub("gen-data", args); }
int cmd_train_diffusion(const std::vector<std::string>& args) { return run_sub("train-diffusion", args); }
int cmd_verify_transport(const std::vector<std::string>& args) { return run_sub("verify-transport", args); }
int cmd_gen_adv(const std::vector<std::string>& args) { return run_sub("gen-adv", args); }
int cmd_train_clip(const std::vector<std::string>& args) { return run_sub("train-clip", args); }
int cmd_eval(const std::vector<std::string>& args) { return run_sub("eval", args); }
int cmd_experiment(const std::vector<std::string>& args) { return run_sub("experiment", args); }

}  // namespace edsam::cli
