#include "jdd/train.hpp"

#include "jdd/eval.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace jdd {

namespace {

std::string_view init_name(InitMode m) {
  switch (m) {
    case InitMode::Auto: return "auto";
    case InitMode::Bilinear: return "bilinear";
    case InitMode::ZeroFill: return "zero";
    case InitMode::Custom: return "custom";
  }
  return "?";
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config '" + key + "': not a number: '" + v + "'");
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("config '" + key + "': not an integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config '" + key + "': not a boolean: '" + v + "'");
}

// Independent, addressable seeds per (purpose, epoch, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t epoch, std::uint64_t index) {
  const Philox4x32 gen(seed);
  const auto b = gen({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(purpose),
                      static_cast<std::uint32_t>(index >> 32)});
  return (std::uint64_t{b[1]} << 32) | b[0];
}

constexpr std::uint64_t kShuffle = 1, kCrop = 2, kFlip = 3, kNoise = 4, kSigma = 5, kValNoise = 6;

void say(const TrainHooks& hooks, const std::string& msg) {
  if (hooks.log) *hooks.log << msg << std::endl;
}

std::string fixed(double v, int p = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(p) << v;
  return os.str();
}

Checkpoint make_checkpoint(const ParameterStore<float>& params, const MMNetConfig& model, CfaPattern pattern, int epoch, double best) {
  Checkpoint c;
  c.meta.model = model;
  c.meta.pattern = pattern;
  c.meta.epoch = epoch;
  c.meta.best_val_psnr = best;
  c.params = params;
  return c;
}

void persist(const TrainHooks& hooks, const Checkpoint& ckpt, const char* file) {
  if (hooks.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(hooks.checkpoint_dir);
  save_checkpoint(hooks.checkpoint_dir / file, ckpt, true);
}

}  // namespace

MMNetConfig TrainConfig::model() const {
  MMNetConfig m;
  m.denoiser.depth = depth;
  m.denoiser.features = features;
  m.iterations = iterations;
  m.gamma_max = gamma_max;
  m.gamma_min = gamma_min;
  return m;
}

void TrainConfig::validate() const {
  model().denoiser.validate();
  if (iterations < 1) throw std::invalid_argument("K must be >= 1");
  if (stage < 0 || effective_stage() > iterations) throw std::invalid_argument("stage size k must satisfy 1 <= k <= K");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be positive");
  if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patch_size < -1) throw std::invalid_argument("patch_size must be >= 0, or -1 for the pattern default");
  if (!(intermediate_loss_weight > 0.0)) throw std::invalid_argument("intermediate_loss_weight must be positive");
  if (!(sigma_min >= 0.0 && sigma_max >= sigma_min)) throw std::invalid_argument("need 0 <= sigma_min <= sigma_max");
  if (!(val_sigma >= 0.0)) throw std::invalid_argument("val_sigma must be non-negative");
  if (!(gamma_max >= gamma_min && gamma_min >= 0.0)) throw std::invalid_argument("need gamma_max >= gamma_min >= 0");
  if (init == InitMode::Custom) throw std::invalid_argument("custom initialization is not available for training");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (!(memory_budget_mb > 0.0)) throw std::invalid_argument("memory_budget_mb must be positive");
}

void apply_train_setting(TrainConfig& c, const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in), v = trim(value_in);
  auto i = [&] { return static_cast<int>(to_integer(key, v)); };
  auto d = [&] { return to_double(key, v); };
  if (key == "depth") c.depth = i();
  else if (key == "features") c.features = i();
  else if (key == "K" || key == "iterations") c.iterations = i();
  else if (key == "gamma_max") c.gamma_max = d();
  else if (key == "gamma_min") c.gamma_min = d();
  else if (key == "pattern") {
    const auto p = parse_pattern(v);
    if (!p) throw std::invalid_argument("config 'pattern': unknown CFA pattern '" + v + "'");
    c.pattern = *p;
  } else if (key == "lr") c.lr = d();
  else if (key == "lr_decay") c.lr_decay = d();
  else if (key == "lr_decay_every") c.lr_decay_every = i();
  else if (key == "beta1") c.beta1 = d();
  else if (key == "beta2") c.beta2 = d();
  else if (key == "eps") c.eps = d();
  else if (key == "epochs") c.epochs = i();
  else if (key == "batch_size") c.batch_size = i();
  else if (key == "patch_size") c.patch_size = v == "auto" ? -1 : i();
  else if (key == "stage" || key == "tbptt_stage") c.stage = i();
  else if (key == "intermediate_loss_weight") c.intermediate_loss_weight = d();
  else if (key == "sigma_min") c.sigma_min = d();
  else if (key == "sigma_max") c.sigma_max = d();
  else if (key == "val_sigma") c.val_sigma = d();
  else if (key == "augment") c.augment = to_bool(key, v);
  else if (key == "resample_noise") c.resample_noise = to_bool(key, v);
  else if (key == "init") {
    if (v == "auto") c.init = InitMode::Auto;
    else if (v == "bilinear") c.init = InitMode::Bilinear;
    else if (v == "zero") c.init = InitMode::ZeroFill;
    else throw std::invalid_argument("config 'init': expected auto, bilinear or zero, got '" + v + "'");
  } else if (key == "sigma_source") {
    const auto s = parse_sigma_source(v);
    if (!s) throw std::invalid_argument("config 'sigma_source': expected oracle, estimate or fixed");
    c.sigma_source = *s;
  } else if (key == "fixed_sigma") c.fixed_sigma = d();
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_integer(key, v));
  else if (key == "threads") c.threads = i();
  else if (key == "memory_budget_mb") c.memory_budget_mb = d();
  else throw std::invalid_argument("unknown training setting '" + key + "'");
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config file not found: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    apply_train_setting(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

std::string describe(const TrainConfig& c) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "depth = " << c.depth << "\nfeatures = " << c.features << "\nK = " << c.iterations << "\ngamma_max = " << c.gamma_max
     << "\ngamma_min = " << c.gamma_min << "\npattern = " << to_string(c.pattern) << "\nlr = " << c.lr << "\nlr_decay = " << c.lr_decay
     << "\nlr_decay_every = " << c.lr_decay_every << "\nbeta1 = " << c.beta1 << "\nbeta2 = " << c.beta2 << "\neps = " << c.eps
     << "\nepochs = " << c.epochs << "\nbatch_size = " << c.batch_size << "\npatch_size = " << c.effective_patch()
     << "\nstage = " << c.effective_stage() << "\nintermediate_loss_weight = " << c.intermediate_loss_weight
     << "\nsigma_min = " << c.sigma_min << "\nsigma_max = " << c.sigma_max << "\nval_sigma = " << c.val_sigma
     << "\naugment = " << (c.augment ? "true" : "false") << "\nresample_noise = " << (c.resample_noise ? "true" : "false")
     << "\ninit = " << init_name(c.init) << "\nsigma_source = " << to_string(c.sigma_source) << "\nfixed_sigma = " << c.fixed_sigma
     << "\nseed = " << c.seed << "\nthreads = " << c.threads << "\nmemory_budget_mb = " << c.memory_budget_mb << '\n';
  return os.str();
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

namespace {

double batch_mean_loss(LossKind kind, const std::vector<PlanarImage>& pred, const std::vector<PlanarImage>& truth) {
  if (pred.size() != truth.size()) throw ShapeError("loss: batch sizes differ");
  if (pred.empty()) throw ShapeError("loss: empty batch");
  double acc = 0.0, n = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require_same_shape(pred[i].height, pred[i].width, truth[i].height, truth[i].width, "loss");
    acc += loss_sum(kind, pred[i].data, truth[i].data);
    n += static_cast<double>(pred[i].data.size());
  }
  return acc / n;
}

}  // namespace

double l1_loss(const std::vector<PlanarImage>& pred, const std::vector<PlanarImage>& truth) {
  return batch_mean_loss(LossKind::L1, pred, truth);
}
double mse_loss(const std::vector<PlanarImage>& pred, const std::vector<PlanarImage>& truth) {
  return batch_mean_loss(LossKind::MSE, pred, truth);
}

void check_memory_budget(const TrainConfig& cfg, Index pixels) {
  const double bytes = static_cast<double>(activation_bytes_per_pixel(cfg.model().denoiser)) * static_cast<double>(pixels) *
                       cfg.effective_stage() * cfg.batch_size;
  const double mb = bytes / (1024.0 * 1024.0);
  if (mb > cfg.memory_budget_mb) {
    std::ostringstream os;
    os << "unrolling " << cfg.effective_stage() << " iterations over a batch of " << cfg.batch_size << " needs about " << std::fixed
       << std::setprecision(0) << mb << " MB of activations (budget " << cfg.memory_budget_mb
       << " MB); reduce the batch size or patch size, or train with truncated BPTT (stage < K)";
    throw std::runtime_error(os.str());
  }
}

void append_epoch_csv(const std::filesystem::path& path, const EpochLog& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write training log: " + path.string());
  if (fresh) out << "epoch,lr,train_loss,val_psnr_lin,val_psnr_srgb\n";
  out << std::setprecision(10) << row.epoch << ',' << row.lr << ',' << row.train_loss << ',' << row.val_psnr_lin << ','
      << row.val_psnr_srgb << '\n';
}

// ------------------------------------------------------------ pretraining

namespace {

MMNetConfig pretrain_model(const TrainConfig& cfg) {
  MMNetConfig m = cfg.model();
  m.iterations = 1;
  m.gamma_max = 0.0;
  m.gamma_min = 0.0;
  return m;
}

TrainItem<float> denoising_item(const PlanarImage& clean, double sigma, std::uint64_t noise_seed) {
  TrainItem<float> it;
  it.height = clean.height;
  it.width = clean.width;
  it.truth = clean.data;
  it.y = add_awgn(clean, sigma, noise_seed).data;
  it.bits = Planes<float>::Ones(clean.data.rows(), clean.data.cols());
  it.x_init = it.y;
  it.sigma = static_cast<float>(sigma);
  return it;
}

PlanarImage center_crop(const PlanarImage& img, int patch) {
  if (patch <= 0 || (patch >= img.height && patch >= img.width)) return img;
  const Index h = std::min<Index>(patch, img.height), w = std::min<Index>(patch, img.width);
  return augment(img, Crop{(img.height - h) / 2, (img.width - w) / 2, h, w});
}

struct DenoiseValidation {
  double psnr_out = 0.0;
  double psnr_srgb = 0.0;
};

DenoiseValidation validate_denoiser(const ParameterStore<float>& params, const ResDNetConfig& cfg, const std::vector<TrainItem<float>>& val) {
  const DenoiserWeights<float> weights = materialize(params, cfg);
  const float gamma = params["gamma"].value(0, 0);
  DenoiseValidation r;
  for (const auto& it : val) {
    const Planes<float> out = resdnet_forward<float>(it.y, it.height, it.width, it.sigma, gamma, weights);
    const PlanarImage o(out, it.height, it.width), t(it.truth, it.height, it.width);
    r.psnr_out += psnr(o, t);
    r.psnr_srgb += psnr(linrgb_to_srgb(o), linrgb_to_srgb(t));
  }
  r.psnr_out /= static_cast<double>(val.size());
  r.psnr_srgb /= static_cast<double>(val.size());
  return r;
}

}  // namespace

TrainResult pretrain_denoiser(const std::vector<PlanarImage>& train, const std::vector<PlanarImage>& val, const TrainConfig& cfg,
                              const TrainHooks& hooks) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
  const MMNetConfig model = pretrain_model(cfg);
  const int crop = cfg.effective_patch();
  Index max_pixels = 0;
  for (const auto& im : train)
    max_pixels = std::max(max_pixels, crop > 0 ? std::min<Index>(Index{crop} * crop, im.height * im.width) : im.height * im.width);
  TrainConfig budget = cfg;
  budget.iterations = 1;
  budget.stage = 1;
  check_memory_budget(budget, max_pixels);

  ParameterStore<float> params = init_mmnet<float>(model, cfg.seed);
  std::vector<TrainItem<float>> val_items;
  for (std::size_t i = 0; i < val.size(); ++i)
    val_items.push_back(denoising_item(center_crop(val[i], crop), cfg.val_sigma, derive_seed(cfg.seed, kValNoise, 0, i)));

  TrainResult result;
  double best = -kInfinitePsnr;
  if (!val_items.empty()) {
    double noisy = 0.0;
    for (const auto& it : val_items)
      noisy += psnr(PlanarImage(it.y, it.height, it.width), PlanarImage(it.truth, it.height, it.width));
    say(hooks, "pretrain: validation noisy-input PSNR at sigma " + fixed(cfg.val_sigma, 1) + ": " +
                   fixed(noisy / static_cast<double>(val_items.size()), 2) + " dB");
  }
  const AmsgradSettings opt{cfg.beta1, cfg.beta2, cfg.eps};
  result.best = make_checkpoint(params, model, CfaPattern::Full, -1, best);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffler(derive_seed(cfg.seed, kShuffle, static_cast<std::uint64_t>(epoch), 0));
    shuffler.shuffle(order);
    double loss_sum_epoch = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<TrainItem<float>> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        const std::size_t idx = order[j];
        const auto e = static_cast<std::uint64_t>(epoch);
        PlanarImage patch = train[idx];
        if (crop > 0 && (crop < patch.height || crop < patch.width)) {
          const Index ph = std::min<Index>(crop, patch.height), pw = std::min<Index>(crop, patch.width);
          patch = augment(patch, RandomCrop{ph, pw, 1}, derive_seed(cfg.seed, kCrop, e, idx));
        }
        CounterRng rng(derive_seed(cfg.seed, kFlip, e, idx));
        if (cfg.augment) {
          if (rng.uniform() < 0.5) patch = augment(patch, HFlip{});
          if (rng.uniform() < 0.5) patch = augment(patch, VFlip{});
        }
        CounterRng srng(derive_seed(cfg.seed, kSigma, e, idx));
        const double sigma = srng.uniform(cfg.sigma_min, cfg.sigma_max);
        batch.push_back(denoising_item(patch, sigma, derive_seed(cfg.seed, kNoise, e, idx)));
      }
      loss_sum_epoch += bptt_gradients(params, model.denoiser, batch, LossKind::MSE, cfg.threads);
      amsgrad_step(params, lr, opt);
      ++batches;
    }
    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum_epoch / std::max(1, batches);
    if (!val_items.empty()) {
      const auto v = validate_denoiser(params, model.denoiser, val_items);
      row.val_psnr_lin = v.psnr_out;
      row.val_psnr_srgb = v.psnr_srgb;
    }
    result.history.push_back(row);
    const bool improved = val_items.empty() || row.val_psnr_lin > best;
    if (improved) best = val_items.empty() ? best : row.val_psnr_lin;
    result.last = make_checkpoint(params, model, CfaPattern::Full, epoch, best);
    persist(hooks, result.last, "last.ckpt");
    if (improved) {
      result.best = make_checkpoint(params, model, CfaPattern::Full, epoch, best);
      persist(hooks, result.best, "best.ckpt");
    }
    if (!hooks.csv_log.empty()) append_epoch_csv(hooks.csv_log, row);
    say(hooks, "pretrain epoch " + std::to_string(epoch) + " lr " + fixed(lr, 6) + " loss " + fixed(row.train_loss, 4) + " val PSNR " +
                   fixed(row.val_psnr_lin, 2) + (improved ? " *" : ""));
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  if (cfg.epochs == 0) result.last = result.best;
  return result;
}

// ---------------------------------------------------------- joint training

ValidationResult validate_joint(const ParameterStore<float>& params, const TrainConfig& cfg, const std::vector<DatasetSample>& val) {
  ValidationResult r;
  if (val.empty()) return r;
  const int k = static_cast<int>(params["w"].size());
  const auto schedule = stage_schedule(k, std::min(cfg.effective_stage(), k));
  r.stage_psnr.assign(schedule.size(), 0.0);
  for (const auto& s : val) {
    const float sigma = resolve_sigma(s, cfg.sigma_source, cfg.fixed_sigma);
    std::size_t stage_idx = 0;
    IterateObserver<float> observe = [&](int i, const Planes<float>&, const Planes<float>& next) {
      const auto& [first, count] = schedule[stage_idx];
      if (i == first + count - 1) {
        r.stage_psnr[stage_idx] += psnr(ops::clip_0_255(next), s.truth.data);
        ++stage_idx;
      }
    };
    PlanarImage out = mmnet_forward<float>(s.observed, s.mask, sigma, params, cfg.model().denoiser, cfg.init, k, nullptr, observe);
    out.data = ops::clip_0_255(out.data);
    r.psnr_lin += psnr(out, s.truth);
    r.psnr_srgb += psnr(linrgb_to_srgb(out), linrgb_to_srgb(s.truth));
  }
  const auto n = static_cast<double>(val.size());
  r.psnr_lin /= n;
  r.psnr_srgb /= n;
  for (auto& p : r.stage_psnr) p /= n;
  return r;
}

TrainResult train_joint(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, const TrainConfig& cfg,
                        const ParameterStore<float>* pretrained, const Checkpoint* resume, const TrainHooks& hooks) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  const MMNetConfig model = cfg.model();
  const int k = cfg.effective_stage();
  const int crop = cfg.effective_patch();
  Index max_pixels = 0;
  for (const auto& s : train)
    max_pixels = std::max(max_pixels, crop > 0 ? std::min<Index>(Index{crop} * crop, s.truth.height * s.truth.width)
                                               : s.truth.height * s.truth.width);
  check_memory_budget(cfg, max_pixels);

  ParameterStore<float> params;
  int start_epoch = 0;
  double best = -kInfinitePsnr;
  if (resume) {
    if (!(resume->meta.model.denoiser == model.denoiser) || resume->meta.model.iterations != model.iterations)
      throw std::invalid_argument("resume checkpoint does not match the training configuration");
    params = resume->params;
    start_epoch = resume->meta.epoch + 1;
    if (!std::isnan(resume->meta.best_val_psnr)) best = resume->meta.best_val_psnr;
    say(hooks, "resuming at epoch " + std::to_string(start_epoch));
  } else {
    params = init_mmnet<float>(model, cfg.seed);
    if (pretrained) {
      for (auto& e : params.entries()) {
        if (e.group == ParamGroup::ProjectionGamma || e.group == ParamGroup::Extrapolation) continue;
        if (!pretrained->contains(e.name)) throw std::invalid_argument("pretrained checkpoint lacks '" + e.name + "'");
        const auto& src = (*pretrained)[e.name];
        if (src.shape != e.shape) throw std::invalid_argument("pretrained '" + e.name + "' has a different shape");
        e.value = src.value;
      }
    }
  }

  const auto schedule = stage_schedule(model.iterations, k);
  if (schedule.size() == 1)
    say(hooks, "unrolling all " + std::to_string(model.iterations) + " iterations per update (BPTT-equivalent)");
  else
    say(hooks, "truncated BPTT: " + std::to_string(schedule.size()) + " stages of up to " + std::to_string(k) + " iterations");

  TrainResult result;
  result.best = make_checkpoint(params, model, cfg.pattern, start_epoch - 1, best);
  result.last = result.best;
  const AmsgradSettings opt{cfg.beta1, cfg.beta2, cfg.eps};
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    const auto e = static_cast<std::uint64_t>(epoch);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffler(derive_seed(cfg.seed, kShuffle, e, 0));
    shuffler.shuffle(order);
    double final_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<TrainItem<float>> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++j) {
        const std::size_t idx = order[j];
        DatasetSample s = train[idx];
        if (crop > 0 && (crop < s.truth.height || crop < s.truth.width)) {
          const Index ph = std::min<Index>(crop, s.truth.height), pw = std::min<Index>(crop, s.truth.width);
          s = augment(s, RandomCrop{ph, pw, 1}, derive_seed(cfg.seed, kCrop, e, idx));
        }
        if (cfg.augment) {
          CounterRng rng(derive_seed(cfg.seed, kFlip, e, idx));
          if (rng.uniform() < 0.5) s = augment(s, HFlip{});
          if (rng.uniform() < 0.5) s = augment(s, VFlip{});
        }
        if (cfg.resample_noise && s.sigma && *s.sigma > 0.0f)
          s.observed = mosaick(add_awgn(s.truth, *s.sigma, derive_seed(cfg.seed, kNoise, e, idx)), s.mask);
        batch.push_back(make_train_item<float>(s, resolve_sigma(s, cfg.sigma_source, cfg.fixed_sigma), cfg.init));
      }
      const auto reports = tbptt_gradients<float>(
          params, model.denoiser, batch, k, cfg.intermediate_loss_weight, LossKind::L1,
          [&](const StageReport&) { amsgrad_step(params, lr, opt); }, cfg.threads);
      final_loss += reports.back().loss;
      ++batches;
    }
    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = final_loss / std::max(1, batches);
    if (!val.empty()) {
      const ValidationResult v = validate_joint(params, cfg, val);
      row.val_psnr_lin = v.psnr_lin;
      row.val_psnr_srgb = v.psnr_srgb;
      row.stage_val_psnr = v.stage_psnr;
      for (std::size_t s = 0; s + 1 < v.stage_psnr.size(); ++s)
        if (v.stage_psnr[s] > v.stage_psnr.back())
          say(hooks, "note: stage " + std::to_string(s) + " validation PSNR " + fixed(v.stage_psnr[s], 2) + " exceeds the final " +
                         fixed(v.stage_psnr.back(), 2));
    }
    result.history.push_back(row);
    const bool improved = val.empty() || row.val_psnr_lin > best;
    if (improved && !val.empty()) best = row.val_psnr_lin;
    result.last = make_checkpoint(params, model, cfg.pattern, epoch, best);
    persist(hooks, result.last, "last.ckpt");
    if (improved) {
      result.best = result.last;
      persist(hooks, result.best, "best.ckpt");
    }
    if (!hooks.csv_log.empty()) append_epoch_csv(hooks.csv_log, row);
    say(hooks, "epoch " + std::to_string(epoch) + " lr " + fixed(lr, 6) + " loss " + fixed(row.train_loss, 4) + " val PSNR " +
                   fixed(row.val_psnr_lin, 2) + " / " + fixed(row.val_psnr_srgb, 2) + (improved ? " *" : ""));
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return result;
}

TrainResult train_joint_bptt(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, TrainConfig cfg,
                             const ParameterStore<float>* pretrained, const TrainHooks& hooks) {
  cfg.stage = cfg.iterations;
  return train_joint(train, val, cfg, pretrained, nullptr, hooks);
}

TrainResult train_joint_tbptt(const std::vector<DatasetSample>& train, const std::vector<DatasetSample>& val, const TrainConfig& cfg,
                              const ParameterStore<float>* pretrained, const TrainHooks& hooks) {
  return train_joint(train, val, cfg, pretrained, nullptr, hooks);
}

}  // namespace jdd
