// psic: phantom generation, SH fitting, metrics, training, prediction and
// cohort evaluation from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "psic/dti_metrics.hpp"
#include "psic/error.hpp"
#include "psic/io.hpp"
#include "psic/manifest.hpp"
#include "psic/model_file.hpp"
#include "psic/parallel.hpp"
#include "psic/phantom.hpp"
#include "psic/pipeline.hpp"

namespace fs = std::filesystem;
using namespace psic;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

void log(const std::string& msg) { std::cerr << "psic: " << msg << '\n'; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

pipeline::RunConfig load_run_config(const std::string& path, const Globals& g) {
  pipeline::RunConfig cfg = path.empty() ? pipeline::RunConfig{} : pipeline::read_run_config(path);
  if (g.seed) {
    cfg.network.seed = *g.seed;
    cfg.training.seed = *g.seed;
  }
  cfg.training.threads = resolve_threads(g.threads);
  return cfg;
}

int cmd_gen_phantom(const std::string& spec_path, const std::string& out, const Globals& g) {
  phantom::PhantomSpec spec = phantom::read_phantom_spec(spec_path);
  if (g.seed) spec.seed = *g.seed;
  const auto manifest = phantom::gen_cohort(spec, out, resolve_threads(g.threads));
  log("wrote " + std::to_string(manifest.subjects.size()) + " subjects and " + (fs::path(out) / "manifest.json").string());
  return 0;
}

int cmd_fit_sh(const std::string& in, const std::string& mask_path, int n_max, double reg, int radius,
               const std::string& out, const Globals& g) {
  const io::Volume volume = io::read_volume(in);
  const io::Mask mask = io::read_mask(mask_path);
  if (volume.dims != mask.dims) throw ShapeError("mask dimensions differ from the volume");
  const io::ShVolume coeffs = io::fit_sh_volume(volume, n_max, reg, resolve_threads(g.threads));
  const auto centers = io::interior_voxels(mask, radius);

  fs::create_directories(out);
  io::write_volume(fs::path(out) / "sh.dcb", io::sh_volume_container(coeffs));
  std::ostringstream csv;
  csv << "x,y,z\n";
  for (const auto& c : centers) csv << c[0] << ',' << c[1] << ',' << c[2] << '\n';
  io::write_text_atomic(fs::path(out) / "cubes.csv", csv.str());
  log(std::to_string(sh::num_coeffs(n_max)) + " coefficients per voxel, " + std::to_string(centers.size()) +
      " diffusion cubes of radius " + std::to_string(radius));
  return 0;
}

int cmd_metrics(const std::string& in, const std::string& mask_path, const std::string& out) {
  const io::Volume volume = io::read_volume(in);
  const io::Mask mask = io::read_mask(mask_path);
  if (volume.dims != mask.dims) throw ShapeError("mask dimensions differ from the volume");
  const dti::TensorFitter fitter(volume.scheme());
  std::ostringstream csv;
  csv << "x,y,z";
  for (auto name : dti::kMetricNames) csv << ',' << name;
  csv << ",flagged\n";
  for (std::uint32_t x = 0; x < volume.dims[0]; ++x) {
    for (std::uint32_t y = 0; y < volume.dims[1]; ++y) {
      for (std::uint32_t z = 0; z < volume.dims[2]; ++z) {
        const auto idx = volume.voxel_index(x, y, z);
        if (!mask.inside(idx)) continue;
        const auto v = volume.voxel(idx);
        const std::vector<double> signal(v.begin(), v.end());
        const auto m = dti::metric_vector(signal, fitter);
        csv << x << ',' << y << ',' << z;
        for (double a : m.to_array()) csv << ',' << fmt(a);
        csv << ',' << (m.flagged ? 1 : 0) << '\n';
      }
    }
  }
  io::write_text_atomic(out, csv.str());
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& roi, const std::string& config_path,
              const std::string& out, const Globals& g) {
  const auto cfg = load_run_config(config_path, g);
  const auto manifest = io::read_manifest(manifest_path);
  const auto subjects = pipeline::prepare_cohort(manifest, roi, cfg, cfg.training.threads);
  const auto set = pipeline::build_dc_set(subjects, cfg.network.radius);
  log(std::to_string(set.size()) + " diffusion cubes from " + std::to_string(subjects.size()) + " subjects");

  const auto result = training::train(set, cfg.network, cfg.training);
  training::write_history_csv(std::cout, result.history);

  io::ModelFile model;
  model.config = cfg.network;
  model.seed = cfg.training.seed;
  model.sh_regularization = cfg.sh_regularization;
  model.fingerprint = io::training_fingerprint(set, cfg.network, cfg.training);
  const auto values = result.params.values();
  model.params.assign(values.begin(), values.end());
  io::write_model(out, model);
  if (!result.history.empty()) {
    log("validation PA " + fmt(result.history.back().valid_pa) + " after " + std::to_string(result.history.size()) +
        " epochs");
  }
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& in, const std::string& mask_path,
                const std::string& out, const Globals& g) {
  const io::ModelFile model = io::read_model(model_path);
  const io::Volume volume = io::read_volume(in);
  const io::Mask mask = io::read_mask(mask_path);
  const auto pred =
      pipeline::predict_volume(model.network(), volume, mask, model.sh_regularization, resolve_threads(g.threads));
  const auto slices = io::export_psic(out, pred.map, mask);
  if (!pred.scores.empty()) {
    const auto decision = eval::median_psic_decision(pred.scores);
    log("median PSIC " + fmt(decision.median) + " -> " + io::group_name(decision.label) + " (" +
        std::to_string(pred.scores.size()) + " voxels, " + std::to_string(slices.size()) + " slice images)");
  }
  return 0;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& config_path, const std::vector<std::string>& rois,
                 bool no_dnn, const std::string& out, const Globals& g) {
  const auto cfg = load_run_config(config_path, g);
  const auto manifest = io::read_manifest(manifest_path);
  pipeline::EvaluateOptions opts;
  opts.threads = cfg.training.threads;
  opts.run_dnn = !no_dnn;
  opts.rois = rois;
  const auto report = pipeline::evaluate(manifest, cfg, opts);
  for (const auto& r : report.rois) {
    for (std::size_t f = 0; f < r.dnn_fold_valid_pa.size(); ++f) {
      log(r.roi + ": network fold " + std::to_string(f + 1) + " validation PA " + fmt(r.dnn_fold_valid_pa[f]));
    }
  }
  std::ostringstream csv;
  pipeline::write_report_csv(csv, report);
  io::write_text_atomic(out, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSIC diffusion-cube network and reference classifiers"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random stream (overrides config files)");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();

  std::string spec, out, in, mask, manifest, roi, config, model;
  int n_max = 6;
  int radius = 1;
  double reg = sh::kDefaultShRegularization;
  std::vector<std::string> rois;
  bool no_dnn = false;

  auto* gen = app.add_subcommand("gen-phantom", "Generate a synthetic two-class cohort");
  gen->add_option("--spec", spec, "Phantom spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* fit = app.add_subcommand("fit-sh", "Fit SH coefficients and list the diffusion cubes of an ROI");
  fit->add_option("--in", in, "Diffusion volume (DCB)")->required()->check(CLI::ExistingFile);
  fit->add_option("--mask", mask, "ROI mask (DCB)")->required()->check(CLI::ExistingFile);
  fit->add_option("--nmax", n_max, "Maximum even SH degree")->capture_default_str();
  fit->add_option("--reg", reg, "Laplace-Beltrami regularization")->capture_default_str();
  fit->add_option("--radius", radius, "Cube radius L (M = 2L + 1)")->capture_default_str();
  fit->add_option("--out", out, "Output directory")->required();

  auto* met = app.add_subcommand("metrics", "Per-voxel diffusion metrics over an ROI");
  met->add_option("--in", in, "Diffusion volume (DCB)")->required()->check(CLI::ExistingFile);
  met->add_option("--mask", mask, "ROI mask (DCB)")->required()->check(CLI::ExistingFile);
  met->add_option("--out", out, "Output CSV")->required();

  auto* tr = app.add_subcommand("train", "Train the network on one ROI of a cohort");
  tr->add_option("--manifest", manifest, "Cohort manifest (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--roi", roi, "ROI name")->required();
  tr->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Model file")->required();

  auto* pr = app.add_subcommand("predict", "Compute the PSIC map of a volume");
  pr->add_option("--model", model, "Model file")->required()->check(CLI::ExistingFile);
  pr->add_option("--in", in, "Diffusion volume (DCB)")->required()->check(CLI::ExistingFile);
  pr->add_option("--mask", mask, "ROI mask (DCB)")->required()->check(CLI::ExistingFile);
  pr->add_option("--out", out, "PSIC map (DCB); slice images are written next to it")->required();

  auto* ev = app.add_subcommand("evaluate", "Cross-validated comparison of the network and metric classifiers");
  ev->add_option("--manifest", manifest, "Cohort manifest (JSON)")->required()->check(CLI::ExistingFile);
  ev->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  ev->add_option("--roi", rois, "Restrict to these ROIs");
  ev->add_flag("--no-dnn", no_dnn, "Skip the network column");
  ev->add_option("--out", out, "Report CSV")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*gen) return cmd_gen_phantom(spec, out, g);
    if (*fit) return cmd_fit_sh(in, mask, n_max, reg, radius, out, g);
    if (*met) return cmd_metrics(in, mask, out);
    if (*tr) return cmd_train(manifest, roi, config, out, g);
    if (*pr) return cmd_predict(model, in, mask, out, g);
    if (*ev) return cmd_evaluate(manifest, config, rois, no_dnn, out, g);
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 2;
}
