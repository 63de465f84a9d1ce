// jdd: command-line front end. Logs go to stderr, data to stdout or files.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "jdd/checkpoint.hpp"
#include "jdd/eval.hpp"
#include "jdd/imgio.hpp"
#include "jdd/noise.hpp"
#include "jdd/resdnet.hpp"
#include "jdd/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using namespace jdd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

fs::path default_checkpoint_dir() {
  if (const char* env = std::getenv("JDD_CHECKPOINT_DIR"); env && *env) return env;
  return "checkpoints";
}

void require_manifest(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("manifest not found: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

CfaPattern pattern_arg(const std::string& s) {
  const auto p = parse_pattern(s);
  if (!p) throw UsageError("unknown CFA pattern '" + s + "' (rggb, grbg, gbrg, bggr, xtrans)");
  return *p;
}

CfaPhase phase_arg(const std::string& s) {
  CfaPhase ph;
  char comma = 0;
  std::istringstream in(s);
  if (!(in >> ph.row >> comma >> ph.col) || comma != ',' || ph.row < 0 || ph.col < 0 || !(in >> std::ws).eof())
    throw UsageError("phase must be 'row,col' with non-negative offsets, got '" + s + "'");
  return ph;
}

SigmaSource sigma_source_arg(const std::string& s) {
  const auto src = parse_sigma_source(s);
  if (!src) throw UsageError("unknown sigma source '" + s + "' (oracle, estimate, fixed)");
  return *src;
}

InitMode init_arg(const std::string& s) {
  if (s == "auto") return InitMode::Auto;
  if (s == "bilinear") return InitMode::Bilinear;
  if (s == "zero") return InitMode::ZeroFill;
  throw UsageError("unknown initialization '" + s + "' (auto, bilinear, zero)");
}

Eigen::Matrix3f color_matrix_arg(const std::vector<float>& v) {
  if (v.empty()) return Eigen::Matrix3f::Identity();
  if (v.size() != 9) throw UsageError("--color-matrix needs 9 values (row-major)");
  Eigen::Matrix3f m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[static_cast<std::size_t>(i)];
  return m;
}

void log_settings(const std::string& cmd, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cerr << "[" << cmd << "] resolved configuration\n";
  for (const auto& [k, v] : kv) std::cerr << "  " << k << " = " << v << '\n';
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// ------------------------------------------------------------ training flags

// Flags mapped one-to-one onto TrainConfig keys; applied after --config and --set.
struct TrainFlags {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::optional<std::string>>> keyed;
  std::optional<int> threads;

  void add(CLI::App* cmd, bool joint) {
    cmd->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "extra key=value override (repeatable)");
    auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
      keyed.emplace_back(key, std::nullopt);
      cmd->add_option(name, keyed.back().second, help);
    };
    keyed.reserve(32);
    flag("--depth", "depth", "residual pairs D");
    flag("--features", "features", "feature channels");
    flag("--lr", "lr", "initial learning rate");
    flag("--lr-decay", "lr_decay", "learning-rate decay factor");
    flag("--lr-decay-every", "lr_decay_every", "epochs between decays");
    flag("--epochs", "epochs", "total epochs");
    flag("--batch-size", "batch_size", "mini-batch size");
    flag("--patch-size", "patch_size", "square training crop (0: whole images, auto: 128 Bayer / 126 X-Trans)");
    flag("--seed", "seed", "random seed");
    flag("--augment", "augment", "random flips (true/false)");
    flag("--memory-budget-mb", "memory_budget_mb", "activation memory budget");
    if (joint) {
      flag("--K", "K", "unrolled iterations");
      flag("--stage", "stage", "TBPTT stage size k (default K)");
      flag("--gamma-max", "gamma_max", "first projection exponent");
      flag("--gamma-min", "gamma_min", "last projection exponent");
      flag("--pattern", "pattern", "CFA pattern");
      flag("--intermediate-loss-weight", "intermediate_loss_weight", "weight of non-final stage losses");
      flag("--resample-noise", "resample_noise", "redraw AWGN every epoch (true/false)");
      flag("--init", "init", "initial estimate (auto: zero for X-Trans, bilinear otherwise; bilinear; zero)");
      flag("--sigma-source", "sigma_source", "noise level fed to the network (oracle, estimate, fixed)");
      flag("--fixed-sigma", "fixed_sigma", "sigma for --sigma-source fixed");
    } else {
      flag("--sigma-min", "sigma_min", "lowest training noise level");
      flag("--sigma-max", "sigma_max", "highest training noise level");
      flag("--val-sigma", "val_sigma", "validation noise level");
    }
    cmd->add_option("--threads", threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  }

  /// Layers --config, --set and the flags over `c`.
  TrainConfig resolve(TrainConfig c = {}) const {
    try {
      if (!config.empty()) c = load_train_config(config, c);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
        apply_train_setting(c, s.substr(0, eq), s.substr(eq + 1));
      }
      for (const auto& [key, value] : keyed)
        if (value) apply_train_setting(c, key, *value);
      c.threads = threads.value_or(default_threads());
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

std::vector<DatasetSample> load_samples(const fs::path& manifest, CfaPattern pattern, CfaPhase phase = {}) {
  require_manifest(manifest);
  auto s = load_dataset(manifest, pattern, phase);
  if (s.empty()) throw UsageError("manifest lists no images: " + manifest.string());
  return s;
}

std::vector<PlanarImage> truths(const std::vector<DatasetSample>& s) {
  std::vector<PlanarImage> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.truth);
  return out;
}

// ----------------------------------------------------------------- commands

struct PretrainArgs {
  fs::path manifest, val_manifest, out_dir = default_checkpoint_dir();
  TrainFlags flags;
};

int cmd_pretrain(const PretrainArgs& a) {
  TrainConfig cfg = a.flags.resolve();
  require_manifest(a.manifest);
  if (!a.val_manifest.empty()) require_manifest(a.val_manifest);
  std::cerr << "[pretrain] resolved configuration\n" << describe(cfg);
  std::cerr << "  manifest = " << a.manifest.string() << "\n  val_manifest = " << (a.val_manifest.empty() ? "-" : a.val_manifest.string())
            << "\n  out_dir = " << a.out_dir.string() << '\n';
  const auto train = truths(load_samples(a.manifest, CfaPattern::Full));
  const auto val = a.val_manifest.empty() ? train : truths(load_samples(a.val_manifest, CfaPattern::Full));
  if (a.val_manifest.empty()) std::cerr << "[pretrain] no validation manifest; validating on the training images\n";
  TrainHooks h;
  h.checkpoint_dir = a.out_dir;
  h.csv_log = a.out_dir / "pretrain_log.csv";
  h.log = &std::cerr;
  const TrainResult r = pretrain_denoiser(train, val, cfg, h);
  std::cerr << "[pretrain] best validation PSNR " << fmt(r.best.meta.best_val_psnr) << " dB; checkpoints in " << a.out_dir.string()
            << '\n';
  return kExitOk;
}

struct TrainArgs {
  fs::path manifest, val_manifest, pretrained, resume, out_dir = default_checkpoint_dir();
  std::string phase = "0,0";
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a) {
  require_manifest(a.manifest);
  if (!a.val_manifest.empty()) require_manifest(a.val_manifest);
  if (!a.pretrained.empty()) require_file(a.pretrained, "pretrained checkpoint");
  std::optional<Checkpoint> pre, resume;
  TrainConfig base;
  if (!a.resume.empty()) {
    require_file(a.resume, "resume checkpoint");
    // The checkpoint supplies the model shape; explicit settings still override it and are then checked against it.
    resume = load_checkpoint(a.resume);
    const MMNetConfig& m = resume->meta.model;
    base.depth = m.denoiser.depth;
    base.features = m.denoiser.features;
    base.iterations = m.iterations;
    base.gamma_max = m.gamma_max;
    base.gamma_min = m.gamma_min;
    base.pattern = resume->meta.pattern;
  }
  const TrainConfig cfg = a.flags.resolve(base);
  if (resume) resume = load_checkpoint(a.resume, cfg.model());
  const CfaPhase phase = phase_arg(a.phase);
  std::cerr << "[train] resolved configuration\n" << describe(cfg);
  std::cerr << "  manifest = " << a.manifest.string() << "\n  val_manifest = " << (a.val_manifest.empty() ? "-" : a.val_manifest.string())
            << "\n  pretrained = " << (a.pretrained.empty() ? "-" : a.pretrained.string())
            << "\n  resume = " << (a.resume.empty() ? "-" : a.resume.string()) << "\n  out_dir = " << a.out_dir.string()
            << "\n  phase = " << phase.row << ',' << phase.col << '\n';
  const auto train = load_samples(a.manifest, cfg.pattern, phase);
  const auto val = a.val_manifest.empty() ? train : load_samples(a.val_manifest, cfg.pattern, phase);
  if (a.val_manifest.empty()) std::cerr << "[train] no validation manifest; validating on the training images\n";

  if (!a.pretrained.empty()) pre = load_checkpoint(a.pretrained);
  TrainHooks h;
  h.checkpoint_dir = a.out_dir;
  h.csv_log = a.out_dir / "train_log.csv";
  h.log = &std::cerr;
  const TrainResult r = train_joint(train, val, cfg, pre ? &pre->params : nullptr, resume ? &*resume : nullptr, h);
  std::cerr << "[train] best validation PSNR " << fmt(r.best.meta.best_val_psnr) << " dB (linRGB); checkpoints in " << a.out_dir.string()
            << '\n';
  return kExitOk;
}

struct DemosaickArgs {
  fs::path input, checkpoint, out, srgb_out;
  std::optional<std::string> pattern;
  std::string phase = "0,0";
  std::string init = "auto";
  std::optional<double> sigma;
  bool estimate = false;
  int iterations = -1;
  std::vector<float> color_matrix;
};

int cmd_demosaick(const DemosaickArgs& a) {
  require_file(a.input, "input image");
  if (a.sigma && a.estimate) throw UsageError("--sigma and --estimate-sigma are mutually exclusive");
  if (a.sigma && *a.sigma < 0) throw UsageError("--sigma must be non-negative");
  std::optional<Checkpoint> model;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    model = load_checkpoint(a.checkpoint);
    if (model->meta.pattern == CfaPattern::Full) throw UsageError("checkpoint holds a pretrained denoiser, not a demosaicking model");
  }
  CfaPattern pattern = model ? model->meta.pattern : CfaPattern::BayerRGGB;
  if (a.pattern) {
    const CfaPattern req = pattern_arg(*a.pattern);
    if (model && is_bayer(req) != is_bayer(model->meta.pattern))
      throw UsageError("pattern " + std::string(to_string(req)) + " does not match the checkpoint's " +
                       std::string(to_string(model->meta.pattern)));
    pattern = req;
  }
  const CfaPhase phase = phase_arg(a.phase);
  const Eigen::Matrix3f cm = color_matrix_arg(a.color_matrix);
  const InitMode init = init_arg(a.init);

  const PngInfo info = probe_png(a.input);
  const CfaMask mask = make_mask(info.height, info.width, pattern, phase);
  PlanarImage y;
  if (info.channels == 1) {
    y = expand_plane(load_plane(a.input, info.bit_depth), mask);
  } else {
    std::cerr << "[demosaick] input has " << info.channels << " channels; sampling it with the CFA\n";
    y = mosaick(load_image(a.input, info.bit_depth), mask);
  }
  float sigma = 0.0f;
  std::string sigma_origin;
  if (a.sigma) {
    sigma = static_cast<float>(*a.sigma);
    sigma_origin = "given";
  } else {
    sigma = static_cast<float>(estimate_sigma(y));
    sigma_origin = "wavelet-MAD estimate";
  }
  const fs::path out = a.out.empty() ? fs::path(fs::path(a.input).replace_extension("").string() + "_rgb.png") : a.out;
  log_settings("demosaick", {{"input", a.input.string()},
                             {"size", std::to_string(info.height) + "x" + std::to_string(info.width)},
                             {"bit_depth", std::to_string(info.bit_depth)},
                             {"checkpoint", a.checkpoint.empty() ? "- (bilinear)" : a.checkpoint.string()},
                             {"pattern", std::string(to_string(pattern))},
                             {"phase", std::to_string(phase.row) + "," + std::to_string(phase.col)},
                             {"sigma", fmt(sigma) + " (" + sigma_origin + ")"},
                             {"K", a.iterations > 0 ? std::to_string(a.iterations) : "trained"},
                             {"init", a.init},
                             {"out", out.string()},
                             {"srgb_out", a.srgb_out.empty() ? "-" : a.srgb_out.string()}});

  PlanarImage x;
  if (model) {
    const PlanarImageT<float> r =
        mmnet_forward<float>(y, mask, sigma, model->params, model->meta.model.denoiser, init, a.iterations);
    x = PlanarImage(ops::clip_0_255(r.data), r.height, r.width);
  } else {
    x = bilinear_init(y, mask);
  }
  save_image(out, x, 16);
  if (!a.srgb_out.empty()) save_image(a.srgb_out, linrgb_to_srgb(x, cm), 8);
  std::cerr << "[demosaick] wrote " << out.string() << '\n';
  return kExitOk;
}

int cmd_estimate_noise(const fs::path& input) {
  require_file(input, "input image");
  const PngInfo info = probe_png(input);
  const double s = info.channels == 1 ? estimate_sigma(load_plane(input, info.bit_depth))
                                      : estimate_sigma(load_image(input, info.bit_depth));
  std::cout << std::setprecision(6) << s << '\n';
  return kExitOk;
}

struct EvalArgs {
  fs::path manifest, checkpoint, csv;
  std::string pattern = "rggb", phase = "0,0", sigma_source = "oracle", init = "auto";
  double fixed_sigma = 1.0;
  int iterations = -1;
  std::optional<int> threads;
  bool json = false, show_all = false;
  std::vector<float> color_matrix;
};

int cmd_eval(const EvalArgs& a) {
  require_manifest(a.manifest);
  if (!a.checkpoint.empty()) require_file(a.checkpoint, "checkpoint");
  EvalOptions opt;
  opt.sigma_source = sigma_source_arg(a.sigma_source);
  opt.fixed_sigma = a.fixed_sigma;
  opt.iterations = a.iterations;
  opt.init = init_arg(a.init);
  opt.color_matrix = color_matrix_arg(a.color_matrix);
  opt.threads = a.threads.value_or(default_threads());
  const CfaPattern pattern = pattern_arg(a.pattern);
  const CfaPhase phase = phase_arg(a.phase);
  log_settings("eval", {{"manifest", a.manifest.string()},
                        {"checkpoint", a.checkpoint.empty() ? "- (bilinear)" : a.checkpoint.string()},
                        {"pattern", std::string(to_string(pattern))},
                        {"phase", a.phase},
                        {"sigma_source", std::string(to_string(opt.sigma_source))},
                        {"fixed_sigma", fmt(opt.fixed_sigma)},
                        {"K", a.iterations > 0 ? std::to_string(a.iterations) : "trained"},
                        {"init", a.init},
                        {"threads", std::to_string(opt.threads)}});
  const EvalReport r = evaluate_dataset(a.manifest, a.checkpoint.empty() ? std::nullopt : std::optional<fs::path>(a.checkpoint),
                                        pattern, phase, opt);
  std::cout << (a.json ? report_json(r) + "\n" : report_table(r, a.show_all));
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw std::runtime_error("cannot write " + a.csv.string());
    f << report_csv(r);
  }
  return kExitOk;
}

struct BenchArgs {
  fs::path checkpoint;
  std::vector<int> iterations{1, 5, 10, 20};
  double megapixels = 0.25;
  int runs = 10;
  int depth = 5, features = 64;
  std::string pattern = "rggb";
  std::uint64_t seed = 0;
  bool json = false;
};

int cmd_bench(const BenchArgs& a) {
  Checkpoint ck;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    ck = load_checkpoint(a.checkpoint);
  } else {
    ck.meta.model.denoiser.depth = a.depth;
    ck.meta.model.denoiser.features = a.features;
    ck.meta.model.iterations = 1;
    ck.meta.model.gamma_max = 2.0;
    ck.meta.pattern = pattern_arg(a.pattern);
    try {
      ck.meta.model.denoiser.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    ck.params = init_mmnet<float>(ck.meta.model, a.seed);
  }
  std::string ks;
  for (int k : a.iterations) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  log_settings("bench", {{"checkpoint", a.checkpoint.empty() ? "- (untrained weights)" : a.checkpoint.string()},
                         {"depth", std::to_string(ck.meta.model.denoiser.depth)},
                         {"features", std::to_string(ck.meta.model.denoiser.features)},
                         {"pattern", std::string(to_string(ck.meta.pattern))},
                         {"K", ks},
                         {"megapixels", fmt(a.megapixels)},
                         {"runs", std::to_string(a.runs)}});
  EvalReport r;
  r.method = "mmnet";
  r.runtime = benchmark_runtime(ck, a.iterations, a.megapixels, a.runs, a.seed);
  std::cout << (a.json ? report_json(r) + "\n" : report_table(r));
  return kExitOk;
}

struct MaskArgs {
  std::string pattern = "rggb", phase = "0,0";
  Index height = 6, width = 6;
  fs::path out;
};

int cmd_export_mask(const MaskArgs& a) {
  const CfaPattern p = pattern_arg(a.pattern);
  const CfaMask m = make_mask(a.height, a.width, p, phase_arg(a.phase));
  save_mask_png(a.out, m);
  std::cerr << "[export-mask] " << to_string(p) << ' ' << a.height << 'x' << a.width << " -> " << a.out.string() << '\n';
  return kExitOk;
}

struct SynthArgs {
  fs::path out_dir;
  int count = 20;
  Index size = 64;
  double sigma_min = 1.0, sigma_max = 10.0;
  std::string pattern = "rggb";
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.sigma_min < 0 || a.sigma_max < a.sigma_min) throw UsageError("need 0 <= sigma-min <= sigma-max");
  const CfaPattern p = pattern_arg(a.pattern);
  fs::create_directories(a.out_dir);
  log_settings("synth", {{"out_dir", a.out_dir.string()},
                         {"count", std::to_string(a.count)},
                         {"size", std::to_string(a.size)},
                         {"sigma", "[" + fmt(a.sigma_min) + ", " + fmt(a.sigma_max) + "]"},
                         {"pattern", std::string(to_string(p))},
                         {"seed", std::to_string(a.seed)}});
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t s = a.seed * 1000003ULL + static_cast<std::uint64_t>(i);
    const PlanarImage truth = synthesize_image(a.size, a.size, s);
    const CfaMask mask = make_mask(a.size, a.size, p);
    CounterRng rng(s, 0x516);
    const double sigma = rng.uniform(a.sigma_min, a.sigma_max);
    // The 16-bit raw file clips noise excursions outside [0, 255].
    const PlanarImage y = mosaick(add_awgn(truth, sigma, s), mask);
    char name[32];
    std::snprintf(name, sizeof name, "%04d", i);
    save_image(a.out_dir / (std::string(name) + "_truth.png"), truth, 16);
    save_plane(a.out_dir / (std::string(name) + "_raw.png"), mosaic_plane(y), 16);
    entries.push_back({std::string(name) + "_truth.png", std::string(name) + "_raw.png", static_cast<float>(sigma)});
  }
  write_manifest(a.out_dir / "manifest.txt", entries);
  std::cerr << "[synth] wrote " << a.count << " samples and " << (a.out_dir / "manifest.txt").string() << '\n';
  return kExitOk;
}

int cmd_count_params(int depth, int features, int iterations, bool json) {
  ResDNetConfig cfg;
  cfg.depth = depth;
  cfg.features = features;
  ParameterCount c;
  try {
    if (iterations < 1) throw std::invalid_argument("K must be >= 1");
    c = count_parameters(cfg, iterations);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (json) {
    nlohmann::json j{{"depth", depth},
                     {"features", features},
                     {"K", iterations},
                     {"filter_raw", c.filter_raw},
                     {"filter_scale", c.filter_scale},
                     {"prelu_slope", c.prelu_slope},
                     {"projection_gamma", c.projection_gamma},
                     {"extrapolation", c.extrapolation},
                     {"total", c.total()}};
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "filter_raw        " << c.filter_raw << "\nfilter_scale      " << c.filter_scale << "\nprelu_slope       "
              << c.prelu_slope << "\nprojection_gamma  " << c.projection_gamma << "\nextrapolation     " << c.extrapolation
              << "\ntotal             " << c.total() << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint demosaicking and denoising with an unrolled majorization-minimization network"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all subcommands' help");

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "Train the residual denoiser on AWGN removal (M = I)");
  c_pre->add_option("--manifest", pre.manifest, "training manifest (truth images)")->required();
  c_pre->add_option("--val-manifest", pre.val_manifest, "validation manifest");
  c_pre->add_option("--out-dir", pre.out_dir, "checkpoint and log directory (default: $JDD_CHECKPOINT_DIR or ./checkpoints)");
  pre.flags.add(c_pre, false);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the unrolled solver end to end (BPTT, or truncated BPTT when --stage < --K)");
  c_train->add_option("--manifest", tr.manifest, "training manifest")->required();
  c_train->add_option("--val-manifest", tr.val_manifest, "validation manifest");
  c_train->add_option("--pretrained", tr.pretrained, "pretrained denoiser checkpoint");
  c_train->add_option("--resume", tr.resume, "continue from this checkpoint (e.g. <out-dir>/last.ckpt)");
  c_train->add_option("--out-dir", tr.out_dir, "checkpoint and log directory (default: $JDD_CHECKPOINT_DIR or ./checkpoints)");
  c_train->add_option("--phase", tr.phase, "CFA phase offset 'row,col'");
  tr.flags.add(c_train, true);

  DemosaickArgs dm;
  auto* c_dm = app.add_subcommand("demosaick", "Reconstruct an RGB image from a raw CFA PNG");
  c_dm->add_option("input", dm.input, "raw CFA image (1-channel PNG; 3-channel input is sampled with the CFA)")->required();
  c_dm->add_option("--checkpoint", dm.checkpoint, "trained model (bilinear interpolation when omitted)");
  c_dm->add_option("-o,--out", dm.out, "linRGB output, 16-bit PNG (default <input>_rgb.png)");
  c_dm->add_option("--srgb-out", dm.srgb_out, "optional sRGB output, 8-bit PNG");
  c_dm->add_option("--pattern", dm.pattern, "CFA pattern (default: the checkpoint's)");
  c_dm->add_option("--phase", dm.phase, "CFA phase offset 'row,col'");
  c_dm->add_option("--K", dm.iterations, "iterations (default: trained K)")->check(CLI::PositiveNumber);
  c_dm->add_option("--sigma", dm.sigma, "noise level in [0, 255] units");
  c_dm->add_flag("--estimate-sigma", dm.estimate, "estimate the noise level (default when --sigma is omitted)");
  c_dm->add_option("--init", dm.init, "initial estimate (auto: zero for X-Trans, bilinear otherwise; bilinear; zero)");
  c_dm->add_option("--color-matrix", dm.color_matrix, "3x3 camera-to-sRGB matrix, row-major")->delimiter(',');

  fs::path en_input;
  auto* c_en = app.add_subcommand("estimate-noise", "Print the wavelet-MAD noise estimate of a raw image");
  c_en->add_option("input", en_input, "raw CFA image (PNG)")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score a model (or bilinear) on a dataset in linRGB and sRGB PSNR");
  c_ev->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  c_ev->add_option("--checkpoint", ev.checkpoint, "trained model (bilinear baseline when omitted)");
  c_ev->add_option("--pattern", ev.pattern, "CFA pattern");
  c_ev->add_option("--phase", ev.phase, "CFA phase offset 'row,col'");
  c_ev->add_option("--sigma-source", ev.sigma_source, "oracle, estimate or fixed");
  c_ev->add_option("--fixed-sigma", ev.fixed_sigma, "sigma for --sigma-source fixed");
  c_ev->add_option("--K", ev.iterations, "iterations (default: trained K)")->check(CLI::PositiveNumber);
  c_ev->add_option("--init", ev.init, "initial estimate (auto: zero for X-Trans, bilinear otherwise; bilinear; zero)");
  c_ev->add_option("--threads", ev.threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  c_ev->add_option("--csv", ev.csv, "also write per-image rows to this CSV file");
  c_ev->add_option("--color-matrix", ev.color_matrix, "3x3 camera-to-sRGB matrix, row-major")->delimiter(',');
  c_ev->add_flag("--json", ev.json, "print JSON instead of a table");
  c_ev->add_flag("--show-all", ev.show_all, "print baseline scores on noisy data too");

  BenchArgs be;
  auto* c_be = app.add_subcommand("bench", "Time reconstructions for a sweep of K");
  c_be->add_option("--checkpoint", be.checkpoint, "model to time (untrained weights of --depth/--features when omitted)");
  c_be->add_option("--K", be.iterations, "iteration counts, one row each")->delimiter(',')->check(CLI::PositiveNumber);
  c_be->add_option("--megapixels", be.megapixels, "image size")->check(CLI::PositiveNumber);
  c_be->add_option("--runs", be.runs, "timed runs per K")->check(CLI::PositiveNumber);
  c_be->add_option("--depth", be.depth, "depth without a checkpoint");
  c_be->add_option("--features", be.features, "features without a checkpoint");
  c_be->add_option("--pattern", be.pattern, "CFA pattern without a checkpoint");
  c_be->add_option("--seed", be.seed, "seed of the synthetic test image");
  c_be->add_flag("--json", be.json, "print JSON instead of a table");

  MaskArgs mk;
  auto* c_mk = app.add_subcommand("export-mask", "Write a CFA layout as an RGB PNG");
  c_mk->add_option("--pattern", mk.pattern, "CFA pattern");
  c_mk->add_option("--phase", mk.phase, "CFA phase offset 'row,col'");
  c_mk->add_option("--height", mk.height, "rows")->check(CLI::PositiveNumber);
  c_mk->add_option("--width", mk.width, "columns")->check(CLI::PositiveNumber);
  c_mk->add_option("-o,--out", mk.out, "output PNG")->required();

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Write a synthetic noisy mosaicked dataset and its manifest");
  c_sy->add_option("--out-dir", sy.out_dir, "output directory")->required();
  c_sy->add_option("--count", sy.count, "number of images")->check(CLI::PositiveNumber);
  c_sy->add_option("--size", sy.size, "image side in pixels")->check(CLI::Range(6, 8192));
  c_sy->add_option("--sigma-min", sy.sigma_min, "lowest AWGN level");
  c_sy->add_option("--sigma-max", sy.sigma_max, "highest AWGN level");
  c_sy->add_option("--pattern", sy.pattern, "CFA pattern");
  c_sy->add_option("--seed", sy.seed, "random seed");

  int cp_depth = 5, cp_features = 64, cp_k = 10;
  bool cp_json = false;
  auto* c_cp = app.add_subcommand("count-params", "Print the trainable-parameter breakdown of a configuration");
  c_cp->add_option("--depth", cp_depth, "residual pairs D");
  c_cp->add_option("--features", cp_features, "feature channels");
  c_cp->add_option("--K", cp_k, "iterations");
  c_cp->add_flag("--json", cp_json, "print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_train) return cmd_train(tr);
    if (*c_dm) return cmd_demosaick(dm);
    if (*c_en) return cmd_estimate_noise(en_input);
    if (*c_ev) return cmd_eval(ev);
    if (*c_be) return cmd_bench(be);
    if (*c_mk) return cmd_export_mask(mk);
    if (*c_sy) return cmd_synth(sy);
    if (*c_cp) return cmd_count_params(cp_depth, cp_features, cp_k, cp_json);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
