#include "cli.hpp"

#include "nuq/error.hpp"
#include "nuq/group.hpp"
#include "nuq/metric.hpp"
#include "nuq/parallel.hpp"
#include "nuq/phantom.hpp"
#include "nuq/posterior.hpp"
#include "nuq/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <cmath>
#include <optional>

namespace nuq::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct DatasetFlags {
  std::string dir;
  std::string dwi, bval, bvec, mask;
  double b0_threshold = kDefaultB0Threshold;

  void add_to(CLI::App *cmd, const std::string &prefix = "") {
    cmd->add_option("--" + prefix + "dataset", dir,
                    "Dataset directory holding dwi.nii[.gz], dwi.bval, dwi.bvec and optional mask.nii[.gz]");
    if (prefix.empty()) {
      cmd->add_option("--dwi", dwi, "4D diffusion NIfTI (overrides --dataset)");
      cmd->add_option("--bval", bval, "FSL bval file");
      cmd->add_option("--bvec", bvec, "FSL bvec file");
      cmd->add_option("--mask", mask, "3D mask NIfTI (nonzero = inside)");
    }
    cmd->add_option("--b0-threshold", b0_threshold, "b-values at or below this count as b=0 (s/mm^2)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
  }

  DwiDataset load() const {
    DatasetPaths paths;
    if (!dir.empty()) paths = DatasetPaths::in_directory(dir);
    if (!dwi.empty()) paths.dwi = dwi;
    if (!bval.empty()) paths.bval = bval;
    if (!bvec.empty()) paths.bvec = bvec;
    if (!mask.empty()) paths.mask = fs::path(mask);
    if (paths.dwi.empty()) throw ContractError("no dataset given (use --dataset or --dwi/--bval/--bvec)");
    return load_dataset(paths, b0_threshold);
  }
};

struct FitFlags {
  double lambda = 0.0;
  std::string weighting = "wls";

  void add_to(CLI::App *cmd) {
    cmd->add_option("--lambda", lambda, "Ridge coefficient (Lambda = lambda * I)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--weighting", weighting, "Fit weights: wls (squared predicted signal) or ols")
        ->capture_default_str()
        ->check(CLI::IsMember({"wls", "ols"}));
  }

  FitOptions options() const {
    FitOptions o;
    o.reg.lambda = lambda;
    o.weighting = weighting == "ols" ? Weighting::identity : Weighting::wls;
    return o;
  }
};

struct KernelFlags {
  std::string kind = "auto";
  int degree = 2;
  double scale = 0.0;
  double offset = 1.0;

  void add_to(CLI::App *cmd) {
    cmd->add_option("--kernel", kind,
                    "MMD kernel: auto (linear for subject/voxel, polynomial for slice/patch), linear, polynomial, rbf")
        ->capture_default_str()
        ->check(CLI::IsMember({"auto", "linear", "polynomial", "rbf"}));
    cmd->add_option("--degree", degree, "Polynomial kernel degree")->capture_default_str()->check(CLI::Range(2, 16));
    cmd->add_option("--scale", scale,
                    "Kernel scale; 0 = default (vector dimension for polynomial, median heuristic for rbf)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--offset", offset, "Polynomial kernel offset")->capture_default_str();
  }

  std::optional<KernelSpec> spec() const {
    if (kind == "auto") return std::nullopt;
    KernelSpec k;
    k.kind = parse_kernel_kind(kind);
    k.degree = degree;
    k.scale = scale;
    k.offset = offset;
    return k;
  }
};

void write_json(const fs::path &path, const json &doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << doc.dump(2) << '\n';
}

void configure_threads(int flag) {
  if (flag > 0) {
    set_thread_count(static_cast<unsigned>(flag));
    return;
  }
  if (const char *env = std::getenv("NUQ_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) {
        set_thread_count(static_cast<unsigned>(n));
        return;
      }
    } catch (const std::exception &) {
    }
    throw ContractError(std::string("NUQ_THREADS must be a positive integer, got '") + env + "'");
  }
  set_thread_count(0);
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"nuq: noise uncertainty quantification for diffusion MRI"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = NUQ_THREADS or hardware concurrency)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  // phantom
  auto *phantom = app.add_subcommand("phantom", "Generate a synthetic diffusion dataset with known tensors");
  std::string ph_out, ph_preset = "fa_gradient", ph_noise = "rician";
  std::vector<std::size_t> ph_dims{20, 20, 20};
  double ph_sigma = 0.0, ph_s0 = 1.0, ph_bval = 1000.0, ph_md = 0.7e-3;
  std::size_t ph_dirs = 32, ph_b0 = 4;
  int ph_axis = 0;
  std::uint64_t ph_seed = 0;
  phantom->add_option("--out", ph_out, "Output directory")->required();
  phantom->add_option("--preset", ph_preset, "uniform_iso, crossing_free or fa_gradient")
      ->capture_default_str()
      ->check(CLI::IsMember({"uniform_iso", "crossing_free", "fa_gradient"}));
  phantom->add_option("--dims", ph_dims, "Spatial extents x y z")->expected(3)->capture_default_str();
  phantom->add_option("--noise", ph_noise, "Noise model: rician, gaussian or none")
      ->capture_default_str()
      ->check(CLI::IsMember({"rician", "gaussian", "none"}));
  phantom->add_option("--sigma", ph_sigma, "Noise standard deviation in signal units (>= 0)")->capture_default_str();
  phantom->add_option("--s0", ph_s0, "Baseline (b=0) signal")->capture_default_str()->check(CLI::PositiveNumber);
  phantom->add_option("--directions", ph_dirs, "Number of diffusion directions")->capture_default_str()->check(CLI::Range(6, 10000));
  phantom->add_option("--b0", ph_b0, "Number of b=0 measurements")->capture_default_str()->check(CLI::Range(1, 1000));
  phantom->add_option("--bval", ph_bval, "b-value of the diffusion-weighted shell (s/mm^2)")->capture_default_str()->check(CLI::PositiveNumber);
  phantom->add_option("--md", ph_md, "Mean diffusivity of the preset tensors (mm^2/s)")->capture_default_str()->check(CLI::PositiveNumber);
  phantom->add_option("--axis", ph_axis, "Axis of the fa_gradient preset (0, 1, 2)")->capture_default_str()->check(CLI::Range(0, 2));
  phantom->add_option("--seed", ph_seed, "Noise seed")->capture_default_str();

  // fit
  auto *fit = app.add_subcommand("fit", "Fit per-voxel posteriors and persist them");
  DatasetFlags fit_data;
  FitFlags fit_flags;
  std::string fit_out;
  fit_data.add_to(fit);
  fit_flags.add_to(fit);
  fit->add_option("--out", fit_out, "Posterior output directory")->required();

  // sample
  auto *sample = app.add_subcommand("sample", "Draw posterior property maps as a 4D NIfTI");
  std::string sm_post, sm_out, sm_prop = "fa";
  std::size_t sm_draws = 100;
  std::uint64_t sm_seed = 0;
  sample->add_option("--posterior", sm_post, "Posterior directory written by fit")->required();
  sample->add_option("--out", sm_out, "Output NIfTI (4th axis = draws)")->required();
  sample->add_option("--property", sm_prop, "fa or md")->capture_default_str()->check(CLI::IsMember({"fa", "md"}));
  sample->add_option("--draws", sm_draws, "Number of draws")->capture_default_str()->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  sample->add_option("--seed", sm_seed, "Sampling seed")->capture_default_str();

  // map
  auto *map = app.add_subcommand("map", "Voxel-level NUQ map (mean |z1 - z2| over draw pairs)");
  std::string mp_post, mp_out, mp_prop = "fa";
  std::size_t mp_pairs = 1;
  std::uint64_t mp_seed = 0;
  map->add_option("--posterior", mp_post, "Posterior directory written by fit")->required();
  map->add_option("--out", mp_out, "Output NIfTI")->required();
  map->add_option("--property", mp_prop, "fa or md")->capture_default_str()->check(CLI::IsMember({"fa", "md"}));
  map->add_option("--pairs", mp_pairs, "Draw pairs averaged per voxel (>= 1)")->capture_default_str();
  map->add_option("--seed", mp_seed, "Sampling seed")->capture_default_str();

  // score
  auto *score = app.add_subcommand("score", "Pooled NUQ score (MMD^2) over the subject or a region");
  std::string sc_post, sc_out, sc_prop = "fa", sc_region;
  std::size_t sc_draws = kDefaultDrawsPerSet;
  std::uint64_t sc_seed = 0;
  KernelFlags sc_kernel;
  score->add_option("--posterior", sc_post, "Posterior directory written by fit")->required();
  score->add_option("--out", sc_out, "Report JSON path (default: <posterior>/nuq_report.json)");
  score->add_option("--property", sc_prop, "fa or md")->capture_default_str()->check(CLI::IsMember({"fa", "md"}));
  score->add_option("--region", sc_region, "Inclusive voxel box x0:x1,y0:y1,z0:z1 (default: whole mask)");
  score->add_option("--draws", sc_draws, "Draws per sample set (m)")->capture_default_str()->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  score->add_option("--seed", sc_seed, "Sampling seed")->capture_default_str();
  sc_kernel.add_to(score);

  // compare
  auto *compare = app.add_subcommand("compare", "Score raw and processed datasets; exit 3 if processed is worse");
  DatasetFlags cmp_raw, cmp_proc;
  FitFlags cmp_fit;
  KernelFlags cmp_kernel;
  std::string cmp_out, cmp_prop = "fa";
  std::size_t cmp_draws = kDefaultDrawsPerSet, cmp_pairs = 1;
  std::uint64_t cmp_seed = 0;
  compare->add_option("--raw", cmp_raw.dir, "Raw dataset directory")->required();
  compare->add_option("--processed", cmp_proc.dir, "Processed (e.g. denoised) dataset directory")->required();
  compare->add_option("--out", cmp_out, "Output directory for compare.json and the two NUQ maps")->required();
  compare->add_option("--b0-threshold", cmp_raw.b0_threshold, "b-values at or below this count as b=0")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  compare->add_option("--property", cmp_prop, "fa or md")->capture_default_str()->check(CLI::IsMember({"fa", "md"}));
  compare->add_option("--draws", cmp_draws, "Draws per sample set (m)")->capture_default_str()->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  compare->add_option("--pairs", cmp_pairs, "Draw pairs per voxel for the maps")->capture_default_str();
  compare->add_option("--seed", cmp_seed, "Sampling seed")->capture_default_str();
  cmp_fit.add_to(compare);
  cmp_kernel.add_to(compare);

  // group
  auto *group = app.add_subcommand("group", "Bayesian t-score map from per-subject posterior draws");
  std::string gr_manifest, gr_out, gr_mode = "voxel";
  group->add_option("--manifest", gr_manifest, "Cohort manifest JSON")->required();
  group->add_option("--out", gr_out, "Output directory")->required();
  group->add_option("--weight-mode", gr_mode, "voxel (per-voxel posterior std) or global (median std per subject)")
      ->capture_default_str()
      ->check(CLI::IsMember({"voxel", "global"}));

  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    configure_threads(threads);

    if (*phantom) {
      if (ph_sigma < 0.0) throw ContractError("--sigma must be >= 0");
      PhantomSpec spec;
      spec.dims = {ph_dims[0], ph_dims[1], ph_dims[2]};
      spec.preset = parse_preset(ph_preset);
      spec.gradient_axis = ph_axis;
      spec.mean_diffusivity = ph_md;
      spec.s0 = ph_s0;
      spec.gradients = default_gradient_table(ph_dirs, ph_b0, ph_bval);
      spec.noise = {parse_noise_kind(ph_noise), ph_sigma};
      if (spec.noise.kind == NoiseKind::none) spec.noise.sigma = 0.0;
      spec.seed = ph_seed;
      const Phantom ph = simulate_signal(spec);
      save_phantom(ph, ph_out);
      out << json{{"output", ph_out},
                  {"preset", ph_preset},
                  {"dims", spec.dims},
                  {"measurements", spec.gradients.size()},
                  {"noise", ph_noise},
                  {"sigma", spec.noise.sigma},
                  {"seed", ph_seed}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*fit) {
      const DwiDataset ds = fit_data.load();
      const PosteriorVolume pv = fit_volume(ds, fit_flags.options());
      save_posterior(pv, fit_out);
      const auto rv = residual_variance_map(pv);
      for (const auto &w : pv.warnings) err << "warning: " << w << '\n';
      out << json{{"masked_voxels", pv.voxel_count()},
                  {"valid_voxels", pv.voxel_count() - pv.invalid_count()},
                  {"invalid_voxels", pv.invalid_count()},
                  {"sigma2_median", rv.count ? json(rv.median) : json(nullptr)},
                  {"sigma2_iqr", rv.count ? json(rv.iqr()) : json(nullptr)},
                  {"gradient_fingerprint", pv.fingerprint}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*sample) {
      const PosteriorVolume pv = load_posterior(sm_post);
      const auto draws = sample_property(pv, parse_property(sm_prop), sm_draws, sm_seed);
      write_nifti(property_samples_volume(pv, draws), sm_out);
      out << json{{"output", sm_out}, {"draws", sm_draws}, {"seed", sm_seed}, {"property", sm_prop},
                  {"voxel_count", pv.voxel_count()}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*map) {
      if (mp_pairs < 1) throw ContractError("--pairs must be >= 1");
      const PosteriorVolume pv = load_posterior(mp_post);
      const NiftiVolume m = voxel_nuq_map(pv, parse_property(mp_prop), mp_pairs, mp_seed);
      write_nifti(m, mp_out);
      std::vector<double> values;
      for (std::size_t v : pv.voxels) values.push_back(m.data[v]);
      const double med = quantile(values, 0.5);
      out << json{{"output", mp_out}, {"pairs", mp_pairs}, {"seed", mp_seed}, {"property", mp_prop},
                  {"median", std::isfinite(med) ? json(med) : json(nullptr)}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }

    if (*score) {
      if (!fs::is_directory(sc_post)) throw IoError("posterior directory not found: " + sc_post);
      const PosteriorVolume pv = load_posterior(sc_post);
      const Region region = sc_region.empty() ? Region::subject(pv.dims) : Region::parse(sc_region, pv.dims);
      const NuqReport report = region_nuq_score(pv, parse_property(sc_prop), region, sc_kernel.spec(),
                                                sc_draws, sc_seed);
      const json doc = report.to_json();
      write_json(sc_out.empty() ? fs::path(sc_post) / "nuq_report.json" : fs::path(sc_out), doc);
      out << doc.dump(2) << '\n';
      return kExitOk;
    }

    if (*compare) {
      cmp_proc.b0_threshold = cmp_raw.b0_threshold;
      const DwiDataset raw = cmp_raw.load();
      const DwiDataset processed = cmp_proc.load();
      CompareConfig config;
      config.fit = cmp_fit.options();
      config.property = parse_property(cmp_prop);
      config.kernel = cmp_kernel.spec();
      config.m = cmp_draws;
      config.pairs = cmp_pairs;
      config.seed = cmp_seed;
      if (config.pairs < 1) throw ContractError("--pairs must be >= 1");
      const ComparisonReport report = compare_datasets(raw, processed, config);
      fs::create_directories(cmp_out);
      write_nifti(report.raw_map, fs::path(cmp_out) / "raw_nuq_map.nii.gz");
      write_nifti(report.processed_map, fs::path(cmp_out) / "processed_nuq_map.nii.gz");
      const json doc = report.to_json();
      write_json(fs::path(cmp_out) / "compare.json", doc);
      out << doc.dump(2) << '\n';
      if (report.processed_worse()) {
        err << "processed data scores worse than raw (delta " << report.delta << ")\n";
        return kExitQualityGate;
      }
      return kExitOk;
    }

    if (*group) {
      const CohortSamples cohort = load_cohort(gr_manifest);
      const GroupReport report =
          bayesian_t_map(cohort, gr_mode == "global" ? WeightMode::global : WeightMode::per_voxel);
      fs::create_directories(gr_out);
      write_nifti(cohort_map(cohort, report.t), fs::path(gr_out) / "t_map.nii.gz");
      write_nifti(cohort_map(cohort, report.mean_diff), fs::path(gr_out) / "mean_diff_map.nii.gz");
      json doc = report.summary();
      doc["subjects"] = cohort.subjects.size();
      doc["draws"] = cohort.draws();
      doc["weight_mode"] = gr_mode;
      doc["version"] = kVersion;
      write_json(fs::path(gr_out) / "group_summary.json", doc);
      out << doc.dump(2) << '\n';
      return kExitOk;
    }
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

} // namespace nuq::cli
