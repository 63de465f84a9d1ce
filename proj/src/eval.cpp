#include "jdd/eval.hpp"

#include "jdd/parallel.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace jdd {

double psnr(const Planes<float>& x, const Planes<float>& ref, double peak) {
  if (x.rows() != ref.rows() || x.cols() != ref.cols()) throw ShapeError("psnr: shape mismatch");
  if (x.size() == 0) throw ShapeError("psnr: empty image");
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - static_cast<double>(ref.data()[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const PlanarImage& x, const PlanarImage& ref, double peak) {
  require_same_shape(x.height, x.width, ref.height, ref.width, "psnr");
  return psnr(x.data, ref.data, peak);
}

namespace {

void check_same(const Planes<double>& a, const Planes<double>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace

double majorizer_distance(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& bits, double sigma, double alpha) {
  check_same(x, x0, "majorizer_distance");
  check_same(x, bits, "majorizer_distance");
  if (!(sigma > 0.0)) throw std::invalid_argument("majorizer_distance: sigma must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("majorizer_distance: alpha must be non-negative");
  const auto d = (x - x0).array();
  return (d * d * (alpha - bits.array())).sum() / (2.0 * sigma * sigma);
}

Planes<double> surrogate_center(const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits, double alpha) {
  check_same(x0, y, "surrogate_center");
  check_same(x0, bits, "surrogate_center");
  if (!(alpha > 0.0)) throw std::invalid_argument("surrogate_center: alpha must be positive");
  return x0 + (y - bits.cwiseProduct(x0)) / alpha;
}

double surrogate_constant(const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits, double sigma, double alpha) {
  const Planes<double> z = surrogate_center(x0, y, bits, alpha);
  const double quad = (x0.array() * x0.array() * (alpha - bits.array())).sum();
  return (y.squaredNorm() + quad - alpha * z.squaredNorm()) / (2.0 * sigma * sigma);
}

MajorizerCheck majorizer_gap(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& y, const Planes<double>& bits,
                             double sigma, double alpha) {
  if (!(alpha > 1.0)) throw std::invalid_argument("majorizer_gap: alpha must exceed 1 (the largest eigenvalue of M)");
  if (!(sigma > 0.0)) throw std::invalid_argument("majorizer_gap: sigma must be positive");
  check_same(x, y, "majorizer_gap");
  MajorizerCheck out;
  out.gap = majorizer_distance(x, x0, bits, sigma, alpha);
  const double s2 = 2.0 * sigma * sigma;
  const double original = (y - bits.cwiseProduct(x)).squaredNorm() / s2 + out.gap;
  const Planes<double> z = surrogate_center(x0, y, bits, alpha);
  const double rewritten = alpha / s2 * (x - z).squaredNorm() + surrogate_constant(x0, y, bits, sigma, alpha);
  out.identity_residual = std::abs(rewritten - original);
  out.relative_residual = out.identity_residual / std::max(std::abs(original), 1e-300);
  return out;
}

MajorizerCheck majorizer_gap(const Planes<double>& x, const Planes<double>& x0, const Planes<double>& y, const CfaMask& mask,
                             double sigma, double alpha) {
  return majorizer_gap(x, x0, y, mask.bits_as<double>(), sigma, alpha);
}

EvalReport evaluate_samples(const std::vector<DatasetSample>& samples, const Checkpoint* model, const EvalOptions& opt) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalReport rep;
  rep.method = model ? "mmnet" : "bilinear";
  bool any_sigma = false;
  for (const auto& s : samples) any_sigma = any_sigma || (s.sigma && *s.sigma > 0.0f);
  rep.noisy_dataset = opt.noisy_dataset.value_or(any_sigma);
  rep.config["method"] = rep.method;
  rep.config["sigma_source"] = std::string(to_string(opt.sigma_source));
  if (opt.sigma_source == SigmaSource::Fixed) rep.config["sigma"] = std::to_string(opt.fixed_sigma);
  if (model) {
    const int k = opt.iterations > 0 ? opt.iterations : model->meta.model.iterations;
    rep.config["iterations"] = std::to_string(k);
    rep.config["trained_iterations"] = std::to_string(model->meta.model.iterations);
    rep.config["depth"] = std::to_string(model->meta.model.denoiser.depth);
    rep.config["features"] = std::to_string(model->meta.model.denoiser.features);
  }
  rep.images.resize(samples.size());
  parallel_for(samples.size(), opt.threads, [&](std::size_t i) {
    const DatasetSample& s = samples[i];
    ImageScore& row = rep.images[i];
    row.name = s.name;
    PlanarImage out;
    if (model) {
      const float sigma = resolve_sigma(s, opt.sigma_source, opt.fixed_sigma);
      row.sigma = sigma;
      out = mmnet_forward<float>(s.observed, s.mask, sigma, model->params, model->meta.model.denoiser, opt.init, opt.iterations);
    } else {
      row.sigma = s.sigma.value_or(0.0f);
      out = bilinear_init(s.observed, s.mask);
    }
    out.data = ops::clip_0_255(out.data);
    row.psnr_lin = psnr(out, s.truth);
    row.psnr_srgb = psnr(linrgb_to_srgb(out, opt.color_matrix), linrgb_to_srgb(s.truth, opt.color_matrix));
  });
  double sum_lin = 0.0, sum_srgb = 0.0;
  int n_lin = 0, n_srgb = 0;
  for (const auto& r : rep.images) {
    if (std::isinf(r.psnr_lin)) {
      ++rep.infinite_lin;
    } else {
      sum_lin += r.psnr_lin;
      ++n_lin;
    }
    if (std::isinf(r.psnr_srgb)) {
      ++rep.infinite_srgb;
    } else {
      sum_srgb += r.psnr_srgb;
      ++n_srgb;
    }
  }
  if (n_lin) rep.mean_psnr_lin = sum_lin / n_lin;
  if (n_srgb) rep.mean_psnr_srgb = sum_srgb / n_srgb;
  return rep;
}

EvalReport evaluate_dataset(const std::filesystem::path& manifest, const std::optional<std::filesystem::path>& checkpoint,
                            CfaPattern pattern, CfaPhase phase, const EvalOptions& opt) {
  const auto samples = load_dataset(manifest, pattern, phase);
  std::optional<Checkpoint> model;
  if (checkpoint) {
    model = load_checkpoint(*checkpoint);
    if (model->meta.pattern != pattern && pattern != CfaPattern::Full)
      std::cerr << "warning: checkpoint trained on " << to_string(model->meta.pattern) << ", evaluating on " << to_string(pattern)
                << '\n';
  }
  EvalReport rep = evaluate_samples(samples, model ? &*model : nullptr, opt);
  rep.config["manifest"] = manifest.string();
  rep.config["pattern"] = std::string(to_string(pattern));
  if (checkpoint) rep.config["checkpoint"] = checkpoint->string();
  return rep;
}

std::vector<RuntimeRow> benchmark_runtime(const Checkpoint& model, const std::vector<int>& iterations, double megapixels, int runs,
                                          std::uint64_t seed) {
  if (!(megapixels > 0.0)) throw std::invalid_argument("benchmark: megapixels must be positive");
  if (runs < 1) throw std::invalid_argument("benchmark: need at least one timed run");
  const int period = pattern_period(model.meta.pattern);
  Index side = static_cast<Index>(std::lround(std::sqrt(megapixels * 1e6)));
  side = std::max<Index>(period * 2, side - side % period);
  const PlanarImage truth = synthesize_image(side, side, seed);
  const CfaMask mask = make_mask(side, side, model.meta.pattern);
  const PlanarImage y = mosaick(truth, mask);
  const double mp = static_cast<double>(side * side) / 1e6;
  std::vector<RuntimeRow> rows;
  for (int k : iterations) {
    if (k < 1) throw std::invalid_argument("benchmark: K must be >= 1");
    auto run_once = [&] {
      const auto t0 = std::chrono::steady_clock::now();
      const PlanarImage out = mmnet_forward<float>(y, mask, 5.0f, model.params, model.meta.model.denoiser, InitMode::Auto, k);
      const auto t1 = std::chrono::steady_clock::now();
      if (out.height != side) throw std::logic_error("benchmark: unexpected output size");
      return std::chrono::duration<double>(t1 - t0).count();
    };
    // Silence the K-mismatch warning while timing.
    std::streambuf* saved = std::cerr.rdbuf(nullptr);
    std::vector<double> t;
    try {
      (void)run_once();
      for (int r = 0; r < runs; ++r) t.push_back(run_once());
    } catch (...) {
      std::cerr.rdbuf(saved);
      throw;
    }
    std::cerr.rdbuf(saved);
    RuntimeRow row;
    row.iterations = k;
    row.megapixels = mp;
    row.runs = runs;
    double sum = 0.0;
    for (double v : t) sum += v;
    row.mean_seconds = sum / runs;
    double var = 0.0;
    for (double v : t) var += (v - row.mean_seconds) * (v - row.mean_seconds);
    row.stddev_seconds = runs > 1 ? std::sqrt(var / (runs - 1)) : 0.0;
    row.sec_per_mpixel = row.mean_seconds / mp;
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string fmt(double v, int prec = 2) {
  if (std::isinf(v)) return "inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

nlohmann::json num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::string report_table(const EvalReport& r, bool show_all) {
  const bool hide = r.method == "bilinear" && r.noisy_dataset && !show_all;
  std::ostringstream os;
  os << "method: " << r.method << (r.noisy_dataset ? " (noisy data)" : "") << '\n';
  for (const auto& [k, v] : r.config) os << "  " << k << " = " << v << '\n';
  if (!r.images.empty()) {
    os << std::left << std::setw(28) << "image" << std::right << std::setw(8) << "sigma" << std::setw(12) << "linRGB" << std::setw(12)
       << "sRGB" << '\n';
    for (const auto& im : r.images)
      os << std::left << std::setw(28) << im.name << std::right << std::setw(8) << fmt(im.sigma) << std::setw(12)
         << (hide ? "n/a" : fmt(im.psnr_lin)) << std::setw(12) << (hide ? "n/a" : fmt(im.psnr_srgb)) << '\n';
    os << std::left << std::setw(36) << "mean" << std::right << std::setw(12) << (hide ? "n/a" : fmt(r.mean_psnr_lin)) << std::setw(12)
       << (hide ? "n/a" : fmt(r.mean_psnr_srgb)) << '\n';
    if (r.infinite_lin || r.infinite_srgb)
      os << "excluded infinite PSNR rows: linRGB " << r.infinite_lin << ", sRGB " << r.infinite_srgb << '\n';
  }
  if (!r.runtime.empty()) {
    os << std::setw(6) << "K" << std::setw(12) << "Mpixel" << std::setw(14) << "mean s" << std::setw(14) << "stddev s" << std::setw(14)
       << "s/Mpixel" << '\n';
    for (const auto& t : r.runtime)
      os << std::setw(6) << t.iterations << std::setw(12) << fmt(t.megapixels, 4) << std::setw(14) << fmt(t.mean_seconds, 4)
         << std::setw(14) << fmt(t.stddev_seconds, 4) << std::setw(14) << fmt(t.sec_per_mpixel, 4) << '\n';
  }
  return os.str();
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  if (!r.images.empty()) {
    os << "image,sigma,psnr_lin,psnr_srgb\n";
    for (const auto& im : r.images) os << im.name << ',' << im.sigma << ',' << fmt(im.psnr_lin, 6) << ',' << fmt(im.psnr_srgb, 6) << '\n';
    os << "mean,," << fmt(r.mean_psnr_lin, 6) << ',' << fmt(r.mean_psnr_srgb, 6) << '\n';
  }
  if (!r.runtime.empty()) {
    os << "K,megapixels,runs,mean_seconds,stddev_seconds,sec_per_mpixel\n";
    for (const auto& t : r.runtime)
      os << t.iterations << ',' << t.megapixels << ',' << t.runs << ',' << t.mean_seconds << ',' << t.stddev_seconds << ','
         << t.sec_per_mpixel << '\n';
  }
  return os.str();
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["noisy_dataset"] = r.noisy_dataset;
  j["config"] = r.config;
  j["images"] = nlohmann::json::array();
  for (const auto& im : r.images)
    j["images"].push_back({{"name", im.name}, {"sigma", im.sigma}, {"psnr_lin", num(im.psnr_lin)}, {"psnr_srgb", num(im.psnr_srgb)}});
  j["mean_psnr_lin"] = num(r.mean_psnr_lin);
  j["mean_psnr_srgb"] = num(r.mean_psnr_srgb);
  j["infinite_lin"] = r.infinite_lin;
  j["infinite_srgb"] = r.infinite_srgb;
  j["runtime"] = nlohmann::json::array();
  for (const auto& t : r.runtime)
    j["runtime"].push_back({{"K", t.iterations},
                            {"megapixels", t.megapixels},
                            {"runs", t.runs},
                            {"mean_seconds", t.mean_seconds},
                            {"stddev_seconds", t.stddev_seconds},
                            {"sec_per_mpixel", t.sec_per_mpixel}});
  return j.dump(2);
}

}  // namespace jdd
