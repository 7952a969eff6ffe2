#include "groupdiff/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "groupdiff/binary_io.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/rng.hpp"

namespace groupdiff {

namespace {

constexpr double kGolden = 0.6180339887498949;

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double class_hue(int class_id) {
  const double h = class_id * kGolden;
  return h - std::floor(h);
}

// Signed distance to a unit-sized shape (negative inside).
double shape_sdf(ShapeKind kind, double x, double y) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (kind) {
    case ShapeKind::kDisk: return std::hypot(x, y) - 1.0;
    case ShapeKind::kSquare: return std::max(ax, ay) - 0.8;
    case ShapeKind::kTriangle: {
      double d = -1e9;
      for (int i = 0; i < 3; ++i) {
        const double a = std::numbers::pi / 2.0 + i * 2.0 * std::numbers::pi / 3.0;
        d = std::max(d, -(std::cos(a) * x + std::sin(a) * y) - 0.55);
      }
      return d;
    }
    case ShapeKind::kRing: return std::abs(std::hypot(x, y) - 0.7) - 0.3;
    case ShapeKind::kCross:
      return std::min(std::max(ax - 1.0, ay - 0.3), std::max(ax - 0.3, ay - 1.0));
    case ShapeKind::kBar: return std::max(ax - 1.0, ay - 0.35);
  }
  return 1.0;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ValidationError("dataset: need at least 2 classes");
  if (image_size < 8) throw ValidationError("dataset: image_size must be >= 8");
  if (images_per_class < 1) throw ValidationError("dataset: images_per_class must be >= 1");
  if (images_per_class < group_size_max) {
    throw ValidationError("dataset: images_per_class must be >= group_size_max");
  }
  if (!(within_class_spread >= 0.0) || !std::isfinite(within_class_spread)) {
    throw ValidationError("dataset: within_class_spread must be finite and >= 0");
  }
}

Tensor render_image(const StyleParams& style, int class_id, std::size_t image_size) {
  const auto kind = static_cast<ShapeKind>(static_cast<int>(style.shape) % kShapeKinds);
  const Rgb fg = hsv_to_rgb(style.hue, 0.85, 0.95);
  const double bg_hue = class_hue(class_id) + 0.5;
  const Rgb bg = hsv_to_rgb(bg_hue, 0.55, 0.18 + 0.08 * (class_id % 3));
  const double c = std::cos(style.rotation), s = std::sin(style.rotation);
  const double half = static_cast<double>(image_size) / 2.0;

  Tensor px(Shape{image_size, image_size, kImageChannels});
  for (std::size_t i = 0; i < image_size; ++i) {
    for (std::size_t j = 0; j < image_size; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / half - 1.0;
      const double v = (static_cast<double>(i) + 0.5) / half - 1.0;
      const double dx = u - style.x, dy = v - style.y;
      const double lx = (c * dx + s * dy) / style.scale;
      const double ly = (-s * dx + c * dy) / style.scale;
      const double d_px = shape_sdf(kind, lx, ly) * style.scale * half;
      const double cover = std::clamp(0.5 - d_px, 0.0, 1.0);
      double* out = px.data() + (i * image_size + j) * kImageChannels;
      const double rgb[3] = {bg.r + cover * (fg.r - bg.r), bg.g + cover * (fg.g - bg.g), bg.b + cover * (fg.b - bg.b)};
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        out[ch] = static_cast<double>(static_cast<float>(std::clamp(rgb[ch], 0.0, 1.0)));
      }
    }
  }
  return px;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.seed = spec.seed;
  ds.image_size = static_cast<std::size_t>(spec.image_size);
  ds.channels = kImageChannels;

  const double a = spec.within_class_spread;
  std::uint64_t next_id = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(k)));
    for (int n = 0; n < spec.images_per_class; ++n) {
      StyleParams st;
      st.shape = static_cast<double>(k % kShapeKinds);
      st.hue = class_hue(k) + a * uniform(rng, -0.03, 0.03);
      st.scale = 0.55 * (1.0 + a * uniform(rng, -0.25, 0.25));
      st.x = a * uniform(rng, -0.25, 0.25);
      st.y = a * uniform(rng, -0.25, 0.25);
      st.rotation = a * uniform(rng, -0.6, 0.6);
      ToyImage img;
      img.pixels = render_image(st, k, ds.image_size);
      img.class_id = k;
      img.style = st;
      img.id = next_id++;
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

std::vector<double> encode(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(2) != kImageChannels || pixels.dim(0) == 0 || pixels.dim(1) == 0) {
    throw DimensionError("encode: expected [H,W,3] pixels, got " + shape_str(pixels.shape()));
  }
  pixels.require_finite("encode");
  const std::size_t h = pixels.dim(0), w = pixels.dim(1);
  const double count = static_cast<double>(h * w);
  std::vector<double> f(kFeatureDim, 0.0);

  double mass = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double* p = pixels.data() + (i * w + j) * kImageChannels;
      double gray = 0.0;
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        const double v = std::clamp(p[ch], 0.0, 1.0);
        const auto bin = std::min<std::size_t>(kHistogramBins - 1, static_cast<std::size_t>(v * kHistogramBins));
        f[ch * kHistogramBins + bin] += 1.0 / count;
        gray += v / kImageChannels;
      }
      const double x = (static_cast<double>(j) + 0.5) / (w / 2.0) - 1.0;
      const double y = (static_cast<double>(i) + 0.5) / (h / 2.0) - 1.0;
      mass += gray;
      mx += gray * x;
      my += gray * y;
    }
  }
  if (mass > 0.0) {
    mx /= mass;
    my /= mass;
    double m20 = 0.0, m02 = 0.0, m11 = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double* p = pixels.data() + (i * w + j) * kImageChannels;
        const double gray = (std::clamp(p[0], 0.0, 1.0) + std::clamp(p[1], 0.0, 1.0) + std::clamp(p[2], 0.0, 1.0)) /
                            kImageChannels;
        const double x = (static_cast<double>(j) + 0.5) / (w / 2.0) - 1.0 - mx;
        const double y = (static_cast<double>(i) + 0.5) / (h / 2.0) - 1.0 - my;
        m20 += gray * x * x;
        m02 += gray * y * y;
        m11 += gray * x * y;
      }
    }
    const std::size_t base = kHistogramBins * kImageChannels;
    f[base + 0] = m20 / mass;
    f[base + 1] = m02 / mass;
    f[base + 2] = m11 / mass;
  }
  const double norm = l2_norm(f);
  for (auto& v : f) v /= norm;
  return f;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine of a zero vector");
  return dot(a, b) / (na * nb);
}

void write_dataset(const std::string& path, const Dataset& ds) {
  io::BinaryWriter w(path);
  w.magic("GDD1");
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.images.size()));
  w.u32(static_cast<std::uint32_t>(ds.image_size));
  w.u32(static_cast<std::uint32_t>(ds.image_size));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u64(ds.seed);
  std::vector<float> buf;
  for (const auto& img : ds.images) {
    w.u64(img.id);
    w.u32(static_cast<std::uint32_t>(img.class_id));
    for (double v : {img.style.shape, img.style.hue, img.style.scale, img.style.x, img.style.y, img.style.rotation}) {
      w.f64(v);
    }
    buf.assign(img.pixels.values().begin(), img.pixels.values().end());
    w.f32s(buf);
  }
  w.close();
}

Dataset read_dataset(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic("GDD1");
  Dataset ds;
  ds.num_classes = static_cast<int>(r.u32());
  const auto count = r.u32();
  const auto h = r.u32(), w = r.u32(), ch = r.u32();
  ds.seed = r.u64();
  if (h != w || h < 8 || ch != kImageChannels || h > 4096) throw IoError(path + ": unsupported image geometry");
  if (ds.num_classes < 1) throw IoError(path + ": invalid class count");
  ds.image_size = h;
  ds.channels = ch;
  std::vector<float> buf(static_cast<std::size_t>(h) * w * ch);
  for (std::uint32_t i = 0; i < count; ++i) {
    ToyImage img;
    img.id = r.u64();
    img.class_id = static_cast<int>(r.u32());
    if (img.class_id < 0 || img.class_id >= ds.num_classes) throw IoError(path + ": class id out of range");
    img.style.shape = r.f64();
    img.style.hue = r.f64();
    img.style.scale = r.f64();
    img.style.x = r.f64();
    img.style.y = r.f64();
    img.style.rotation = r.f64();
    r.f32s(buf);
    img.pixels = Tensor(Shape{h, w, ch}, std::vector<double>(buf.begin(), buf.end()));
    ds.images.push_back(std::move(img));
  }
  if (!r.at_end()) throw IoError(path + ": trailing bytes after dataset records");
  return ds;
}

Tensor to_model_space(const Tensor& pixels) {
  Tensor out = pixels;
  for (auto& v : out.values()) v = 2.0 * v - 1.0;
  return out;
}

Tensor to_pixel_space(const Tensor& model) {
  Tensor out = model;
  for (auto& v : out.values()) v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  return out;
}

Tensor stack_pixels(const Dataset& ds, std::span<const std::size_t> positions) {
  const std::size_t per = ds.image_size * ds.image_size * ds.channels;
  Tensor out(Shape{positions.size(), ds.image_size, ds.image_size, ds.channels});
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= ds.images.size()) throw DimensionError("stack_pixels: position out of range");
    std::copy_n(ds.images[positions[i]].pixels.data(), per, out.data() + i * per);
  }
  return out;
}

}  // namespace groupdiff
