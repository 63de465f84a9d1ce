#include "jdd/imgio.hpp"

#include "jdd/random.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace jdd {

namespace {

struct PngReadHandle {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadHandle() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriteHandle {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteHandle() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

void silent_warning(png_structp, png_const_charp) {}

// The setjmp frames below hold only trivially destructible locals.
bool read_header(png_structp png, png_infop info, std::FILE* fp, PngInfo* out) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out->width = static_cast<Index>(png_get_image_width(png, info));
  out->height = static_cast<Index>(png_get_image_height(png, info));
  out->channels = png_get_channels(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  return true;
}

bool read_rows(png_structp png, png_infop info, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, info);
  return true;
}

bool write_all(png_structp png, png_infop info, std::FILE* fp, png_uint_32 w, png_uint_32 h, int depth, int color_type,
               png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, info);
  return true;
}

struct DecodedPng {
  PngInfo info;
  std::vector<std::uint16_t> samples;  // interleaved, row-major
};

DecodedPng decode_png(const std::filesystem::path& path) {
  PngReadHandle h;
  h.fp = std::fopen(path.c_str(), "rb");
  if (!h.fp) throw ImageIoError("cannot open image: " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, h.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw ImageIoError("not a PNG file: " + path.string());
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (!h.png) throw ImageIoError("libpng init failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw ImageIoError("libpng init failed");
  png_set_sig_bytes(h.png, 8);

  DecodedPng out;
  if (!read_header(h.png, h.info, h.fp, &out.info)) throw ImageIoError("corrupt PNG header: " + path.string());
  const std::size_t rowbytes = png_get_rowbytes(h.png, h.info);
  std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(out.info.height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.info.height));
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = buffer.data() + r * rowbytes;
  if (!read_rows(h.png, h.info, rows.data())) throw ImageIoError("corrupt PNG data: " + path.string());

  const std::size_t n = static_cast<std::size_t>(out.info.height * out.info.width * out.info.channels);
  out.samples.resize(n);
  if (out.info.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

float code_to_intensity(std::uint16_t code, int bit_depth) {
  return bit_depth == 16 ? static_cast<float>(code) / 257.0f : static_cast<float>(code);
}

std::uint16_t intensity_to_code(float v, int bit_depth) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 255.0);
  return static_cast<std::uint16_t>(std::lround(bit_depth == 16 ? c * 257.0 : c));
}

void check_depth(int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
}

void encode_png(const std::filesystem::path& path, Index h, Index w, int channels, int bit_depth,
                const std::vector<std::uint16_t>& samples) {
  check_depth(bit_depth);
  const std::size_t bytes_per = bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(w * channels) * bytes_per;
  std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bit_depth == 16) {
      buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xFF);
    } else {
      buffer[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = buffer.data() + r * rowbytes;

  PngWriteHandle hd;
  hd.fp = std::fopen(path.c_str(), "wb");
  if (!hd.fp) throw ImageIoError("cannot write image: " + path.string());
  hd.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (!hd.png) throw ImageIoError("libpng init failed");
  hd.info = png_create_info_struct(hd.png);
  if (!hd.info) throw ImageIoError("libpng init failed");
  const int color_type = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  if (!write_all(hd.png, hd.info, hd.fp, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth, color_type,
                 rows.data()))
    throw ImageIoError("PNG encode failed: " + path.string());
}

}  // namespace

PngInfo probe_png(const std::filesystem::path& path) {
  PngReadHandle h;
  h.fp = std::fopen(path.c_str(), "rb");
  if (!h.fp) throw ImageIoError("cannot open image: " + path.string());
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  h.info = png_create_info_struct(h.png);
  PngInfo info;
  if (!h.png || !h.info || !read_header(h.png, h.info, h.fp, &info)) throw ImageIoError("cannot decode PNG: " + path.string());
  return info;
}

PlanarImage load_image(const std::filesystem::path& path, int bit_depth, ColorSpace cs, bool replicate_grey) {
  check_depth(bit_depth);
  const DecodedPng png = decode_png(path);
  if (png.info.bit_depth != bit_depth)
    throw ImageIoError(path.string() + ": file is " + std::to_string(png.info.bit_depth) + "-bit, expected " +
                       std::to_string(bit_depth));
  const int ch = png.info.channels;
  if (ch != 3 && !(ch == 1 && replicate_grey))
    throw ImageIoError(path.string() + ": unsupported channel count " + std::to_string(ch));
  PlanarImage img(png.info.height, png.info.width, cs);
  for (Index p = 0; p < img.pixels(); ++p) {
    for (Index c = 0; c < 3; ++c) {
      const std::size_t src = static_cast<std::size_t>(ch == 3 ? p * 3 + c : p);
      img.data(c, p) = code_to_intensity(png.samples[src], bit_depth);
    }
  }
  return img;
}

Plane load_plane(const std::filesystem::path& path, int bit_depth) {
  check_depth(bit_depth);
  const DecodedPng png = decode_png(path);
  if (png.info.bit_depth != bit_depth)
    throw ImageIoError(path.string() + ": file is " + std::to_string(png.info.bit_depth) + "-bit, expected " +
                       std::to_string(bit_depth));
  if (png.info.channels != 1) throw ImageIoError(path.string() + ": raw plane must have one channel");
  Plane out(png.info.height, png.info.width);
  for (Index p = 0; p < out.size(); ++p) out.data()[p] = code_to_intensity(png.samples[static_cast<std::size_t>(p)], bit_depth);
  return out;
}

void save_image(const std::filesystem::path& path, const PlanarImage& img, int bit_depth) {
  check_depth(bit_depth);
  std::vector<std::uint16_t> samples(static_cast<std::size_t>(img.pixels() * 3));
  for (Index p = 0; p < img.pixels(); ++p)
    for (Index c = 0; c < 3; ++c) samples[static_cast<std::size_t>(p * 3 + c)] = intensity_to_code(img.data(c, p), bit_depth);
  encode_png(path, img.height, img.width, 3, bit_depth, samples);
}

void save_plane(const std::filesystem::path& path, const Plane& plane, int bit_depth) {
  check_depth(bit_depth);
  std::vector<std::uint16_t> samples(static_cast<std::size_t>(plane.size()));
  for (Index p = 0; p < plane.size(); ++p) samples[static_cast<std::size_t>(p)] = intensity_to_code(plane.data()[p], bit_depth);
  encode_png(path, plane.rows(), plane.cols(), 1, bit_depth, samples);
}

void save_mask_png(const std::filesystem::path& path, const CfaMask& mask) {
  const auto map = mask.index_map();
  std::vector<std::uint16_t> samples(map.data(), map.data() + map.size());
  encode_png(path, mask.height(), mask.width(), 1, 8, samples);
}

double srgb_encode(double linear) {
  linear = std::clamp(linear, 0.0, 1.0);
  return linear <= 0.0031308 ? 12.92 * linear : 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

PlanarImage linrgb_to_srgb(const PlanarImage& img, const Eigen::Matrix3f& color_matrix) {
  if (img.colorspace != ColorSpace::LinRGB) throw std::invalid_argument("linrgb_to_srgb: input must be linear RGB");
  if (((color_matrix.rowwise().sum().array() - 1.0f).abs() > 1e-3f).any())
    throw std::invalid_argument("linrgb_to_srgb: colour matrix rows must sum to 1");
  PlanarImage out(img.height, img.width, ColorSpace::SRGB);
  const Planes<float> mixed = color_matrix * img.data;
  for (Index i = 0; i < mixed.size(); ++i) {
    const double v = srgb_encode(static_cast<double>(mixed.data()[i]) / 255.0) * 255.0;
    out.data.data()[i] = static_cast<float>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

namespace {

PlanarImage crop_image(const PlanarImage& img, Index y, Index x, Index h, Index w) {
  if (y < 0 || x < 0 || h <= 0 || w <= 0 || y + h > img.height || x + w > img.width)
    throw std::out_of_range("augment: crop rectangle outside the image");
  PlanarImage out(h, w, img.colorspace);
  for (Index c = 0; c < 3; ++c)
    for (Index r = 0; r < h; ++r) out.data.row(c).segment(r * w, w) = img.data.row(c).segment((y + r) * img.width + x, w);
  return out;
}

Crop resolve_crop(const AugmentOp& op, Index height, Index width, std::uint64_t seed) {
  if (const auto* c = std::get_if<Crop>(&op)) return *c;
  const auto& rc = std::get<RandomCrop>(op);
  if (rc.h <= 0 || rc.w <= 0 || rc.h > height || rc.w > width) throw std::out_of_range("augment: crop larger than image");
  const Index align = std::max<Index>(1, rc.align);
  CounterRng rng(seed, 0xC209);
  const auto ny = static_cast<std::uint64_t>((height - rc.h) / align + 1);
  const auto nx = static_cast<std::uint64_t>((width - rc.w) / align + 1);
  const Index y = static_cast<Index>(rng.below(ny)) * align;
  const Index x = static_cast<Index>(rng.below(nx)) * align;
  return {y, x, rc.h, rc.w};
}

}  // namespace

PlanarImage augment(const PlanarImage& img, const AugmentOp& op, std::uint64_t seed) {
  if (std::holds_alternative<HFlip>(op)) {
    PlanarImage out(img.height, img.width, img.colorspace);
    for (Index c = 0; c < 3; ++c)
      for (Index r = 0; r < img.height; ++r)
        out.data.row(c).segment(r * img.width, img.width) = img.data.row(c).segment(r * img.width, img.width).reverse();
    return out;
  }
  if (std::holds_alternative<VFlip>(op)) {
    PlanarImage out(img.height, img.width, img.colorspace);
    for (Index c = 0; c < 3; ++c)
      for (Index r = 0; r < img.height; ++r)
        out.data.row(c).segment(r * img.width, img.width) = img.data.row(c).segment((img.height - 1 - r) * img.width, img.width);
    return out;
  }
  const Crop c = resolve_crop(op, img.height, img.width, seed);
  return crop_image(img, c.y, c.x, c.h, c.w);
}

DatasetSample augment(const DatasetSample& s, const AugmentOp& op, std::uint64_t seed) {
  DatasetSample out;
  out.name = s.name;
  out.sigma = s.sigma;
  if (std::holds_alternative<HFlip>(op)) {
    out.truth = augment(s.truth, op, seed);
    out.observed = augment(s.observed, op, seed);
    out.mask = s.mask.hflip();
  } else if (std::holds_alternative<VFlip>(op)) {
    out.truth = augment(s.truth, op, seed);
    out.observed = augment(s.observed, op, seed);
    out.mask = s.mask.vflip();
  } else {
    const Crop c = resolve_crop(op, s.truth.height, s.truth.width, seed);
    out.truth = crop_image(s.truth, c.y, c.x, c.h, c.w);
    out.observed = crop_image(s.observed, c.y, c.x, c.h, c.w);
    out.mask = s.mask.crop(c.y, c.x, c.h, c.w);
  }
  return out;
}

Plane mosaic_plane(const PlanarImage& mosaicked) {
  Plane out(mosaicked.height, mosaicked.width);
  Eigen::Map<Eigen::RowVectorXf>(out.data(), out.size()) = mosaicked.data.colwise().sum();
  return out;
}

PlanarImage expand_plane(const Plane& raw, const CfaMask& mask) {
  require_same_shape(raw.rows(), raw.cols(), mask.height(), mask.width(), "expand_plane");
  PlanarImage out(mask.height(), mask.width());
  const Eigen::Map<const Eigen::RowVectorXf> flat(raw.data(), raw.size());
  for (Index c = 0; c < 3; ++c) out.data.row(c) = flat.cwiseProduct(mask.bits().row(c));
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ImageIoError("manifest not found: " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw ImageIoError(path.string() + ":" + std::to_string(lineno) + ": expected truth<TAB>raw<TAB>sigma");
    ManifestEntry e;
    e.truth = resolve(fields[0]);
    if (fields[1] != "-") e.raw = resolve(fields[1]);
    if (fields[2] != "-") {
      try {
        e.sigma = std::stof(fields[2]);
      } catch (const std::exception&) {
        throw ImageIoError(path.string() + ":" + std::to_string(lineno) + ": bad sigma '" + fields[2] + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw ImageIoError("cannot write manifest: " + path.string());
  for (const auto& e : entries) {
    out << e.truth.string() << '\t' << (e.raw ? e.raw->string() : "-") << '\t';
    if (e.sigma) out << *e.sigma;
    else out << '-';
    out << '\n';
  }
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& manifest, CfaPattern pattern, CfaPhase phase) {
  std::vector<DatasetSample> samples;
  for (const auto& e : read_manifest(manifest)) {
    DatasetSample s;
    s.name = e.truth.filename().string();
    const PngInfo info = probe_png(e.truth);
    s.truth = load_image(e.truth, info.bit_depth, ColorSpace::LinRGB);
    s.mask = make_mask(s.truth.height, s.truth.width, pattern, phase);
    if (e.raw) {
      const PngInfo rinfo = probe_png(*e.raw);
      if (rinfo.channels == 1) {
        s.observed = expand_plane(load_plane(*e.raw, rinfo.bit_depth), s.mask);
      } else {
        s.observed = mosaick(load_image(*e.raw, rinfo.bit_depth), s.mask);
      }
      require_same_shape(s.observed.height, s.observed.width, s.truth.height, s.truth.width, "load_dataset");
    } else {
      s.observed = mosaick(s.truth, s.mask);
    }
    s.sigma = e.sigma;
    samples.push_back(std::move(s));
  }
  return samples;
}

PlanarImage synthesize_image(Index h, Index w, std::uint64_t seed) {
  CounterRng rng(seed, 0x5E7);
  PlanarImage img(h, w);
  const double scale = static_cast<double>(std::max(h, w));

  // Smooth luminance and chroma fields from a few low-frequency waves.
  Eigen::Array3d base_chroma(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> lum_waves, chroma_waves;
  for (int i = 0; i < 3; ++i) lum_waves.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 6.3), rng.uniform(10, 30)});
  for (int i = 0; i < 3; ++i) chroma_waves.push_back({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(0, 6.3), 0.1});
  const double lum0 = rng.uniform(70, 170);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double lum = lum0;
      for (const auto& wv : lum_waves) lum += wv.amp * std::cos(6.2832 * (wv.fy * y + wv.fx * x) / scale + wv.phase);
      Eigen::Array3d chroma = base_chroma;
      for (int c = 0; c < 3; ++c) {
        const auto& wv = chroma_waves[static_cast<std::size_t>(c)];
        chroma[c] += wv.amp * std::cos(6.2832 * (wv.fy * y + wv.fx * x) / scale + wv.phase);
      }
      for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(lum * (1.0 + chroma[c]));
    }
  }

  // Hard-edged shapes in correlated colours.
  const int shapes = 6 + static_cast<int>(rng.below(7));
  for (int s = 0; s < shapes; ++s) {
    const double lum = rng.uniform(20, 235);
    Eigen::Array3d col;
    for (int c = 0; c < 3; ++c) col[c] = lum * (1.0 + rng.uniform(-0.35, 0.35));
    const double cy = rng.uniform(0, static_cast<double>(h)), cx = rng.uniform(0, static_cast<double>(w));
    const double ry = rng.uniform(0.05, 0.3) * scale, rx = rng.uniform(0.05, 0.3) * scale;
    const int kind = static_cast<int>(rng.below(3));
    const double angle = rng.uniform(0, 3.1416);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double freq = rng.uniform(0.15, 0.6);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double dy = (y - cy), dx = (x - cx);
        const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
        bool inside = false;
        double mod = 1.0;
        if (kind == 0) inside = (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
        else if (kind == 1) inside = std::abs(u) <= rx && std::abs(v) <= ry;
        else {
          inside = std::abs(u) <= rx && std::abs(v) <= ry;
          mod = 0.75 + 0.25 * std::cos(freq * u);
        }
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(col[c] * mod);
      }
    }
  }
  img.data = img.data.cwiseMax(8.0f).cwiseMin(247.0f);
  return img;
}

}  // namespace jdd
