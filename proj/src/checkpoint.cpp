#include "jdd/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace jdd {

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::FilterRaw: return "filter_raw";
    case ParamGroup::FilterScale: return "filter_scale";
    case ParamGroup::PreluSlope: return "prelu_slope";
    case ParamGroup::ProjectionGamma: return "projection_gamma";
    case ParamGroup::Extrapolation: return "extrapolation";
  }
  return "?";
}

namespace {

std::optional<ParamGroup> parse_group(const std::string& s) {
  for (auto g : {ParamGroup::FilterRaw, ParamGroup::FilterScale, ParamGroup::PreluSlope, ParamGroup::ProjectionGamma,
                 ParamGroup::Extrapolation})
    if (s == to_string(g)) return g;
  return std::nullopt;
}

void write_floats(std::ostream& out, const Planes<float>& p) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(p.size()));
  std::memcpy(words.data(), p.data(), words.size() * sizeof(float));
  if constexpr (std::endian::native == std::endian::big)
    for (auto& w : words) w = __builtin_bswap32(w);
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

void read_floats(std::istream& in, Planes<float>& p) {
  std::vector<std::uint32_t> words(static_cast<std::size_t>(p.size()));
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!in) throw CheckpointError("checkpoint payload truncated");
  if constexpr (std::endian::native == std::endian::big)
    for (auto& w : words) w = __builtin_bswap32(w);
  std::memcpy(p.data(), words.data(), words.size() * sizeof(float));
}

struct TensorHeader {
  std::string name;
  ParamGroup group;
  std::vector<Index> shape;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, bool with_optimizer_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  const auto& m = ckpt.meta;
  const auto& d = m.model.denoiser;
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "JDDCKPT " << kCheckpointVersion << '\n';
  hdr << "depth " << d.depth << '\n' << "features " << d.features << '\n';
  hdr << "head_kernel " << d.head_kernel << '\n' << "block_kernel " << d.block_kernel << '\n' << "tail_kernel " << d.tail_kernel << '\n';
  hdr << "iterations " << m.model.iterations << '\n';
  hdr << "gamma_max " << m.model.gamma_max << '\n' << "gamma_min " << m.model.gamma_min << '\n';
  hdr << "pattern " << to_string(m.pattern) << '\n';
  hdr << "epoch " << m.epoch << '\n';
  hdr << "best_val_psnr " << m.best_val_psnr << '\n';
  auto tensor_line = [&](const std::string& name, const ParamEntry<float>& e) {
    hdr << "tensor " << name << " f32 " << to_string(e.group) << ' ' << e.shape.size();
    for (Index s : e.shape) hdr << ' ' << s;
    hdr << '\n';
  };
  for (const auto& e : ckpt.params.entries()) tensor_line(e.name, e);
  if (with_optimizer_state) {
    for (const auto& e : ckpt.params.entries()) {
      tensor_line("m:" + e.name, e);
      tensor_line("v:" + e.name, e);
      tensor_line("vhat:" + e.name, e);
    }
  }
  hdr << "end\n";
  const std::string h = hdr.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& e : ckpt.params.entries()) write_floats(out, e.value);
  if (with_optimizer_state) {
    for (const auto& e : ckpt.params.entries()) {
      write_floats(out, e.m);
      write_floats(out, e.v);
      write_floats(out, e.vhat);
    }
  }
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

FilterAudit audit_filters(const ParameterStore<float>& params, const ResDNetConfig& cfg) {
  FilterAudit audit;
  auto check = [&](const std::string& prefix) {
    const Planes<double> u = params[prefix + ".u"].value.cast<double>();
    const Vector<double> s = entry_vector(params[prefix + ".s"]).cast<double>();
    const auto bank = ops::materialize_filters<double>(u, s);
    for (Index f = 0; f < bank.v.rows(); ++f) {
      audit.max_abs_mean = std::max(audit.max_abs_mean, std::abs(bank.v.row(f).mean()));
      audit.max_norm_deviation = std::max(audit.max_norm_deviation, std::abs(bank.v.row(f).norm() - std::abs(s[f])));
      ++audit.filters;
    }
  };
  check("head");
  for (int b = 0; b < cfg.blocks(); ++b) check(block_name(b));
  check("tail");
  return audit;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<MMNetConfig>& expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint: " + path.string());
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != "JDDCKPT") throw CheckpointError("not a checkpoint file: " + path.string());
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  std::map<std::string, std::string> kv;
  std::vector<TensorHeader> tensors;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "tensor") {
      TensorHeader t;
      std::string dtype, group;
      std::size_t ndim = 0;
      ls >> t.name >> dtype >> group >> ndim;
      if (dtype != "f32") throw CheckpointError("unsupported element type '" + dtype + "' for " + t.name);
      const auto g = parse_group(group);
      if (!g) throw CheckpointError("unknown parameter group '" + group + "'");
      t.group = *g;
      t.shape.resize(ndim);
      for (auto& s : t.shape) ls >> s;
      if (!ls) throw CheckpointError("malformed tensor line: " + line);
      tensors.push_back(std::move(t));
    } else {
      std::string value;
      std::getline(ls >> std::ws, value);
      kv[key] = value;
    }
  }
  if (!ended) throw CheckpointError("checkpoint header not terminated");

  auto get_int = [&](const char* k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw CheckpointError(std::string("checkpoint missing '") + k + "'");
    return std::stoi(it->second);
  };
  auto get_double = [&](const char* k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw CheckpointError(std::string("checkpoint missing '") + k + "'");
    return std::stod(it->second);
  };
  Checkpoint ckpt;
  auto& m = ckpt.meta;
  m.model.denoiser.depth = get_int("depth");
  m.model.denoiser.features = get_int("features");
  m.model.denoiser.head_kernel = get_int("head_kernel");
  m.model.denoiser.block_kernel = get_int("block_kernel");
  m.model.denoiser.tail_kernel = get_int("tail_kernel");
  m.model.iterations = get_int("iterations");
  m.model.gamma_max = get_double("gamma_max");
  m.model.gamma_min = get_double("gamma_min");
  m.epoch = get_int("epoch");
  m.best_val_psnr = get_double("best_val_psnr");
  const auto pattern = parse_pattern(kv.count("pattern") ? kv["pattern"] : "");
  if (!pattern) throw CheckpointError("checkpoint has an unknown CFA pattern");
  m.pattern = *pattern;

  if (expect) {
    if (!(expect->denoiser == m.model.denoiser) || expect->iterations != m.model.iterations)
      throw CheckpointError("checkpoint configuration does not match the requested model (depth " + std::to_string(m.model.denoiser.depth) +
                            ", features " + std::to_string(m.model.denoiser.features) + ", K " +
                            std::to_string(m.model.iterations) + ")");
  }

  std::map<std::string, Planes<float>> slots;
  for (const auto& t : tensors) {
    const auto [rows, cols] = matrix_extent(t.shape);
    Planes<float> p(rows, cols);
    read_floats(in, p);
    const auto colon = t.name.find(':');
    if (colon == std::string::npos) {
      ckpt.params.add(t.name, t.group, t.shape, std::move(p));
    } else {
      slots[t.name] = std::move(p);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint has trailing bytes after the payload");
  for (auto& e : ckpt.params.entries()) {
    for (const char* slot : {"m", "v", "vhat"}) {
      const auto it = slots.find(std::string(slot) + ":" + e.name);
      if (it == slots.end()) continue;
      if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
        throw CheckpointError("optimizer slot shape mismatch for " + e.name);
      Planes<float>& dst = std::string(slot) == "m" ? e.m : (std::string(slot) == "v" ? e.v : e.vhat);
      dst = std::move(it->second);
    }
  }

  // Structural check against the echoed configuration, then the filter audit.
  try {
    (void)materialize(ckpt.params, m.model.denoiser);
  } catch (const std::exception& ex) {
    throw CheckpointError(std::string("checkpoint tensors inconsistent with its configuration: ") + ex.what());
  }
  for (const char* name : {"gamma", "w"}) {
    if (!ckpt.params.contains(name) || ckpt.params[name].size() != m.model.iterations)
      throw CheckpointError(std::string("checkpoint '") + name + "' does not hold one entry per iteration");
  }
  const FilterAudit audit = audit_filters(ckpt.params, m.model.denoiser);
  if (!(audit.max_abs_mean < kFilterMeanTolerance) || !(audit.max_norm_deviation < kFilterNormTolerance))
    throw CheckpointError("filter parametrization violated (max |mean| " + std::to_string(audit.max_abs_mean) +
                          ", max norm deviation " + std::to_string(audit.max_norm_deviation) + ")");
  return ckpt;
}

}  // namespace jdd
