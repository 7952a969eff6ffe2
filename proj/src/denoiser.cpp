#include "groupdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "groupdiff/attention_kernel.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/rng.hpp"

namespace groupdiff {

void ModelConfig::validate() const {
  if (depth < 1) throw ValidationError("model: depth must be >= 1");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) {
    throw ValidationError("model: hidden dim must be a positive multiple of heads");
  }
  if (patch < 1 || image_size % patch != 0) throw ValidationError("model: image size must be divisible by patch");
  if (channels < 1) throw ValidationError("model: channels must be >= 1");
  if (num_classes < 1) throw ValidationError("model: num_classes must be >= 1");
  if (max_group < 1) throw ValidationError("model: max_group must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ValidationError("model: time_embed_dim must be even");
  if (hidden % 4 != 0) throw ValidationError("model: hidden dim must be divisible by 4 (2-D positional table)");
  if (mlp_ratio < 1) throw ValidationError("model: mlp_ratio must be >= 1");
}

bool AttnCaptureSpec::includes(std::size_t layer) const {
  return enabled && (layers.empty() || std::find(layers.begin(), layers.end(), layer) != layers.end());
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4) throw DimensionError("patchify: expected [N,H,W,Ch], got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), ch = images.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * ch;
  Tensor out(Shape{n, gh * gw, pd});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        double* dst = out.data() + ((b * gh + py) * gw + px) * pd;
        for (std::size_t r = 0; r < patch; ++r) {
          const double* src = images.data() + ((b * h + py * patch + r) * w + px * patch) * ch;
          std::copy_n(src, patch * ch, dst + r * patch * ch);
        }
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t patch, std::size_t image_size, std::size_t channels) {
  if (patch == 0 || image_size % patch != 0) throw DimensionError("unpatchify: size not divisible by patch");
  const std::size_t g = image_size / patch, pd = patch * patch * channels;
  if (patches.rank() != 3 || patches.dim(1) != g * g || patches.dim(2) != pd) {
    throw DimensionError("unpatchify: unexpected patch tensor " + shape_str(patches.shape()));
  }
  const std::size_t n = patches.dim(0);
  Tensor out(Shape{n, image_size, image_size, channels});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t py = 0; py < g; ++py) {
      for (std::size_t px = 0; px < g; ++px) {
        const double* src = patches.data() + ((b * g + py) * g + px) * pd;
        for (std::size_t r = 0; r < patch; ++r) {
          double* dst = out.data() + ((b * image_size + py * patch + r) * image_size + px * patch) * channels;
          std::copy_n(src + r * patch * channels, patch * channels, dst);
        }
      }
    }
  }
  return out;
}

Tensor add_sample_embedding(const Tensor& h, const Tensor& slot_table) {
  if (h.rank() != 3) throw DimensionError("add_sample_embedding: expected [N,L,C]");
  const std::size_t n = h.dim(0);
  return ag::add_sample_embedding(ag::constant(h), ag::constant(slot_table), n == 0 ? 1 : n).value();
}

namespace {

// Rows of a [B·L, stride] buffer starting at column `offset`.
struct StridedRows {
  const double* base;
  std::size_t stride;
  std::size_t offset;
  const double* row(std::size_t r) const { return base + r * stride + offset; }
};

struct AttentionGeometry {
  std::size_t batch;
  std::size_t tokens;
  std::size_t width;  // C
  std::size_t heads;
  std::size_t seq_images;  // images per attention sequence
  std::size_t capture_group;  // images per reported group
};

AttentionGeometry make_geometry(const Shape& shape, std::size_t width, const GroupAttentionOptions& o) {
  const std::size_t batch = shape[0], tokens = shape[1];
  if (o.heads == 0 || width % o.heads != 0) {
    throw DimensionError("group_attention: width " + std::to_string(width) + " not divisible by heads");
  }
  if (o.group_size == 0 || batch % o.group_size != 0) {
    throw DimensionError("group_attention: batch " + std::to_string(batch) + " not a multiple of group size " +
                         std::to_string(o.group_size));
  }
  if (tokens == 0) throw DimensionError("group_attention: zero tokens");
  return {batch, tokens, width, o.heads, o.group_on ? o.group_size : 1, o.group_size};
}

void identity_capture(const AttentionGeometry& g, std::size_t layer, std::vector<AttentionBlockSums>& out) {
  const std::size_t n = g.capture_group;
  for (std::size_t grp = 0; grp < g.batch / n; ++grp) {
    AttentionBlockSums rec{layer, 0, grp, n, std::vector<double>(n * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) rec.at(i, i) = 1.0;
    out.push_back(std::move(rec));
  }
}

// Runs attention for every sequence and head; writes out[B·L, C]. When
// `probs` is non-null every (sequence, head) softmax matrix is appended.
void attention_pass(StridedRows q, StridedRows k, StridedRows v, const AttentionGeometry& g, double* out,
                    std::vector<AlignedBuffer>* probs, std::vector<AttentionBlockSums>* capture,
                    std::size_t layer) {
  const std::size_t d = g.width / g.heads;
  const std::size_t seq = g.seq_images * g.tokens;
  const std::size_t num_seq = g.batch / g.seq_images;
  AlignedBuffer qb(seq * d), kb(seq * d), vb(seq * d), ob(seq * d), pb(seq * seq);
  const bool grouped_capture = capture && g.seq_images > 1;
  if (capture && !grouped_capture) identity_capture(g, layer, *capture);

  for (std::size_t s = 0; s < num_seq; ++s) {
    const std::size_t row0 = s * seq;
    AttentionBlockSums rec;
    if (grouped_capture) rec = {layer, 0, s, g.seq_images, std::vector<double>(g.seq_images * g.seq_images, 0.0)};
    for (std::size_t h = 0; h < g.heads; ++h) {
      for (std::size_t t = 0; t < seq; ++t) {
        std::copy_n(q.row(row0 + t) + h * d, d, qb.data() + t * d);
        std::copy_n(k.row(row0 + t) + h * d, d, kb.data() + t * d);
        std::copy_n(v.row(row0 + t) + h * d, d, vb.data() + t * d);
      }
      kernel::attention_forward(seq, d, qb.data(), kb.data(), vb.data(), ob.data(), pb.data());
      for (std::size_t t = 0; t < seq; ++t) std::copy_n(ob.data() + t * d, d, out + (row0 + t) * g.width + h * d);
      if (grouped_capture) {
        for (std::size_t qi = 0; qi < seq; ++qi) {
          const std::size_t img_i = qi / g.tokens;
          const double* prow = pb.data() + qi * seq;
          for (std::size_t j = 0; j < g.seq_images; ++j) {
            double m = 0.0;
            for (std::size_t kk = j * g.tokens; kk < (j + 1) * g.tokens; ++kk) m += prow[kk];
            rec.at(img_i, j) += m;
          }
        }
      }
      if (probs) probs->push_back(pb);
    }
    if (grouped_capture) {
      const double norm = 1.0 / static_cast<double>(g.tokens * g.heads);
      for (auto& m : rec.mass) m *= norm;
      capture->push_back(std::move(rec));
    }
  }
}

}  // namespace

Tensor group_attention(const Tensor& q, const Tensor& k, const Tensor& v, const GroupAttentionOptions& options,
                       std::vector<AttentionBlockSums>* capture) {
  if (q.rank() != 3) throw DimensionError("group_attention: expected [B,L,C], got " + shape_str(q.shape()));
  require_same_shape(q, k, "group_attention");
  require_same_shape(q, v, "group_attention");
  q.require_finite("group_attention q");
  k.require_finite("group_attention k");
  v.require_finite("group_attention v");
  const std::size_t width = q.dim(2);
  const auto geo = make_geometry(q.shape(), width, options);
  Tensor out(q.shape());
  attention_pass({q.data(), width, 0}, {k.data(), width, 0}, {v.data(), width, 0}, geo, out.data(), nullptr, capture,
                 0);
  return out;
}

ag::Var group_attention(const ag::Var& qkv, const GroupAttentionOptions& options,
                        std::vector<AttentionBlockSums>* capture, std::size_t layer) {
  const Tensor& x = qkv.value();
  if (x.rank() != 3 || x.dim(2) % 3 != 0) {
    throw DimensionError("group_attention: expected packed [B,L,3C], got " + shape_str(x.shape()));
  }
  x.require_finite("group_attention qkv");
  const std::size_t width = x.dim(2) / 3;
  const auto geo = make_geometry(x.shape(), width, options);
  Tensor out(Shape{geo.batch, geo.tokens, width});
  const std::size_t stride = 3 * width;
  auto probs = qkv.requires_grad() ? std::make_shared<std::vector<AlignedBuffer>>() : nullptr;
  attention_pass({x.data(), stride, 0}, {x.data(), stride, width}, {x.data(), stride, 2 * width}, geo, out.data(),
                 probs.get(), capture, layer);

  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  if (qkv.requires_grad()) {
    node->requires_grad = true;
    node->parents.push_back(qkv.ptr());
    auto parent = qkv.ptr();
    node->backward = [parent, probs, geo](ag::Node& self) {
      if (parent->grad.shape() != parent->value.shape()) parent->grad = Tensor(parent->value.shape());
      const std::size_t d = geo.width / geo.heads;
      const std::size_t seq = geo.seq_images * geo.tokens;
      const std::size_t stride3 = 3 * geo.width;
      const double* xv = parent->value.data();
      double* gx = parent->grad.data();
      AlignedBuffer qb(seq * d), kb(seq * d), vb(seq * d), dob(seq * d), dq(seq * d), dk(seq * d), dv(seq * d);
      std::size_t pi = 0;
      for (std::size_t s = 0; s < geo.batch / geo.seq_images; ++s) {
        const std::size_t row0 = s * seq;
        for (std::size_t h = 0; h < geo.heads; ++h, ++pi) {
          for (std::size_t t = 0; t < seq; ++t) {
            const double* r = xv + (row0 + t) * stride3 + h * d;
            std::copy_n(r, d, qb.data() + t * d);
            std::copy_n(r + geo.width, d, kb.data() + t * d);
            std::copy_n(r + 2 * geo.width, d, vb.data() + t * d);
            std::copy_n(self.grad.data() + (row0 + t) * geo.width + h * d, d, dob.data() + t * d);
          }
          kernel::attention_backward(seq, d, qb.data(), kb.data(), vb.data(), (*probs)[pi].data(), dob.data(),
                                     dq.data(), dk.data(), dv.data());
          for (std::size_t t = 0; t < seq; ++t) {
            double* g = gx + (row0 + t) * stride3 + h * d;
            for (std::size_t j = 0; j < d; ++j) {
              g[j] += dq[t * d + j];
              g[geo.width + j] += dk[t * d + j];
              g[2 * geo.width + j] += dv[t * d + j];
            }
          }
        }
      }
    };
  }
  return ag::Var(std::move(node));
}

Tensor timestep_embedding(std::span<const int> timesteps, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor out(Shape{timesteps.size(), dim});
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(timesteps[b]) * freq;
      out[b * dim + i] = std::cos(arg);
      out[b * dim + half + i] = std::sin(arg);
    }
  }
  return out;
}

Tensor positional_embedding_2d(std::size_t grid, std::size_t dim) {
  // Half of the channels encode the row, half the column; each half is sin|cos.
  const std::size_t quarter = dim / 4;
  Tensor out(Shape{grid * grid, dim});
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      double* row = out.data() + (r * grid + c) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = std::sin(static_cast<double>(r) * omega);
        row[quarter + i] = std::cos(static_cast<double>(r) * omega);
        row[2 * quarter + i] = std::sin(static_cast<double>(c) * omega);
        row[3 * quarter + i] = std::cos(static_cast<double>(c) * omega);
      }
    }
  }
  return out;
}

namespace {

std::vector<NamedTensor> parameter_layout(const ModelConfig& c) {
  const std::size_t C = c.hidden, P = c.patch_dim(), M = c.hidden * c.mlp_ratio;
  std::vector<NamedTensor> p;
  auto add = [&](std::string name, Shape shape) { p.push_back({std::move(name), Tensor(std::move(shape))}); };
  add("patch.w", {P, C});
  add("patch.b", {C});
  add("slots", {c.max_group, C});
  add("time.w1", {c.time_embed_dim, C});
  add("time.b1", {C});
  add("time.w2", {C, C});
  add("time.b2", {C});
  add("class.table", {c.num_classes + 1, C});
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    add(b + "ada.w", {C, 6 * C});
    add(b + "ada.b", {6 * C});
    add(b + "qkv.w", {C, 3 * C});
    add(b + "qkv.b", {3 * C});
    add(b + "proj.w", {C, C});
    add(b + "proj.b", {C});
    add(b + "mlp1.w", {C, M});
    add(b + "mlp1.b", {M});
    add(b + "mlp2.w", {M, C});
    add(b + "mlp2.b", {C});
  }
  add("final.ada.w", {C, 2 * C});
  add("final.ada.b", {2 * C});
  add("final.out.w", {C, P});
  add("final.out.b", {P});
  return p;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

void xavier(Tensor& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
  for (auto& x : w.values()) x = uniform(rng, -bound, bound);
}

}  // namespace

Denoiser::Denoiser(ModelConfig config, std::uint64_t seed, Init init) : config_(config) {
  config_.validate();
  params_ = parameter_layout(config_);
  pos_embed_ = positional_embedding_2d(config_.image_size / config_.patch, config_.hidden);
  Rng rng(derive_seed(seed, 0x1d1));
  for (auto& [name, t] : params_) {
    const bool is_bias = t.rank() == 1;
    if (init == Init::kRandom) {
      if (is_bias) {
        for (auto& x : t.values()) x = 0.1 * standard_normal(rng);
      } else {
        xavier(t, rng);
      }
      continue;
    }
    if (name == "slots" || name == "class.table" || name.starts_with("time.w")) {
      for (auto& x : t.values()) x = 0.02 * standard_normal(rng);
    } else if (is_bias || ends_with(name, "ada.w") || name == "final.out.w") {
      t.fill(0.0);  // adaLN-zero: blocks start as identity, output starts at zero
    } else {
      xavier(t, rng);
    }
  }
}

Denoiser::Denoiser(ModelConfig config, std::vector<NamedTensor> parameters) : config_(config) {
  config_.validate();
  params_ = parameter_layout(config_);
  pos_embed_ = positional_embedding_2d(config_.image_size / config_.patch, config_.hidden);
  if (parameters.size() != params_.size()) throw ValidationError("denoiser: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (parameters[i].name != params_[i].name || parameters[i].value.shape() != params_[i].value.shape()) {
      throw ValidationError("denoiser: unexpected parameter " + parameters[i].name + " " +
                            shape_str(parameters[i].value.shape()));
    }
    params_[i].value = std::move(parameters[i].value);
  }
}

std::size_t Denoiser::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ValidationError("denoiser has no parameter " + std::string(name));
}

Tensor& Denoiser::parameter(std::string_view name) { return params_[index_of(name)].value; }
const Tensor& Denoiser::parameter(std::string_view name) const { return params_[index_of(name)].value; }

std::size_t Denoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

bool Denoiser::output_head_is_zero() const {
  for (double v : parameter("final.out.w").values()) {
    if (v != 0.0) return false;
  }
  return true;
}

ag::Var Denoiser::forward_graph(std::span<const ag::Var> params, const Tensor& x_t, std::span<const int> timesteps,
                                std::span<const int> labels, const ForwardOptions& options,
                                ForwardResult* side) const {
  const auto& c = config_;
  if (params.size() != params_.size()) throw DimensionError("forward: parameter count mismatch");
  if (x_t.rank() != 4 || x_t.dim(1) != c.image_size || x_t.dim(2) != c.image_size || x_t.dim(3) != c.channels) {
    throw DimensionError("forward: expected [B," + std::to_string(c.image_size) + "," + std::to_string(c.image_size) +
                         "," + std::to_string(c.channels) + "], got " + shape_str(x_t.shape()));
  }
  const std::size_t batch = x_t.dim(0);
  if (batch == 0) throw DimensionError("forward: empty batch");
  if (timesteps.size() != batch || labels.size() != batch) {
    throw DimensionError("forward: timesteps/labels must have one entry per image");
  }
  for (int lab : labels) {
    if (lab < 0 || lab > c.null_class()) throw ValidationError("forward: label " + std::to_string(lab) + " out of range");
  }
  if (options.group_size == 0 || batch % options.group_size != 0) {
    throw DimensionError("forward: batch not a multiple of group size");
  }
  if (options.group_size > c.max_group) {
    throw DimensionError("forward: group size " + std::to_string(options.group_size) + " exceeds max_group " +
                         std::to_string(c.max_group));
  }
  if (!options.layer_group_mask.empty() && options.layer_group_mask.size() != c.depth) {
    throw DimensionError("forward: layer mask must have one entry per layer");
  }
  x_t.require_finite("forward input");

  // A pass without any group attention treats every member as a group of one.
  const std::size_t n_eff = options.group_on ? options.group_size : 1;
  std::size_t p = 0;
  auto next = [&]() -> const ag::Var& { return params[p++]; };

  const ag::Var& patch_w = next();
  const ag::Var& patch_b = next();
  const ag::Var& slots = next();
  const ag::Var& time_w1 = next();
  const ag::Var& time_b1 = next();
  const ag::Var& time_w2 = next();
  const ag::Var& time_b2 = next();
  const ag::Var& class_table = next();

  ag::Var h = ag::linear(ag::constant(patchify(x_t, c.patch)), patch_w, patch_b);
  h = ag::add_token_broadcast(h, ag::constant(pos_embed_));
  h = ag::add_sample_embedding(h, slots, n_eff);

  ag::Var temb = ag::constant(timestep_embedding(timesteps, c.time_embed_dim));
  temb = ag::linear(ag::silu(ag::linear(temb, time_w1, time_b1)), time_w2, time_b2);
  const ag::Var cond = ag::silu(ag::add(temb, ag::embedding(class_table, labels)));

  const std::size_t C = c.hidden;
  std::vector<AttentionBlockSums>* capture = side ? &side->attention : nullptr;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const ag::Var& ada_w = next();
    const ag::Var& ada_b = next();
    const ag::Var& qkv_w = next();
    const ag::Var& qkv_b = next();
    const ag::Var& proj_w = next();
    const ag::Var& proj_b = next();
    const ag::Var& mlp1_w = next();
    const ag::Var& mlp1_b = next();
    const ag::Var& mlp2_w = next();
    const ag::Var& mlp2_b = next();

    const ag::Var mod = ag::linear(cond, ada_w, ada_b);
    const ag::Var shift1 = ag::slice_columns(mod, 0, C);
    const ag::Var scale1 = ag::slice_columns(mod, C, C);
    const ag::Var gate1 = ag::slice_columns(mod, 2 * C, C);
    const ag::Var shift2 = ag::slice_columns(mod, 3 * C, C);
    const ag::Var scale2 = ag::slice_columns(mod, 4 * C, C);
    const ag::Var gate2 = ag::slice_columns(mod, 5 * C, C);

    GroupAttentionOptions attn;
    attn.heads = c.heads;
    attn.group_size = options.group_size;
    attn.group_on = options.group_on && (options.layer_group_mask.empty() || options.layer_group_mask[l]);
    const bool capture_here = capture && options.capture.includes(l);

    ag::Var x = ag::modulate(ag::layer_norm(h), shift1, scale1);
    ag::Var a = group_attention(ag::linear(x, qkv_w, qkv_b), attn, capture_here ? capture : nullptr, l);
    h = ag::gated_add(h, gate1, ag::linear(a, proj_w, proj_b));
    x = ag::modulate(ag::layer_norm(h), shift2, scale2);
    h = ag::gated_add(h, gate2, ag::linear(ag::gelu(ag::linear(x, mlp1_w, mlp1_b)), mlp2_w, mlp2_b));

    if (side && options.feature_layer && *options.feature_layer == l) {
      const std::size_t tokens = c.tokens();
      Tensor f(Shape{batch, C});
      const Tensor& hv = h.value();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < tokens; ++t) {
          for (std::size_t j = 0; j < C; ++j) f[b * C + j] += hv[(b * tokens + t) * C + j];
        }
      }
      for (auto& v : f.values()) v /= static_cast<double>(tokens);
      side->features = std::move(f);
    }
  }
  if (options.feature_layer && *options.feature_layer >= c.depth) {
    throw ValidationError("forward: feature layer out of range");
  }

  const ag::Var& fada_w = next();
  const ag::Var& fada_b = next();
  const ag::Var& out_w = next();
  const ag::Var& out_b = next();
  const ag::Var fmod = ag::linear(cond, fada_w, fada_b);
  h = ag::modulate(ag::layer_norm(h), ag::slice_columns(fmod, 0, C), ag::slice_columns(fmod, C, C));
  ag::Var out = ag::linear(h, out_w, out_b);
  out.value().require_finite("forward output");
  return out;
}

ForwardResult Denoiser::forward(const Tensor& x_t, std::span<const int> timesteps, std::span<const int> labels,
                                const ForwardOptions& options) const {
  std::vector<ag::Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(ag::constant(p.value));
  ForwardResult result;
  const ag::Var out = forward_graph(vars, x_t, timesteps, labels, options, &result);
  result.eps = unpatchify(out.value(), config_.patch, config_.image_size, config_.channels);
  return result;
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["depth"] = c.depth;
  j["hidden"] = c.hidden;
  j["heads"] = c.heads;
  j["patch"] = c.patch;
  j["image_size"] = c.image_size;
  j["channels"] = c.channels;
  j["num_classes"] = c.num_classes;
  j["max_group"] = c.max_group;
  j["time_embed_dim"] = c.time_embed_dim;
  j["mlp_ratio"] = c.mlp_ratio;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  if (j.contains("model")) j = j["model"];
  ModelConfig c;
  const std::pair<const char*, std::size_t*> fields[] = {
      {"depth", &c.depth},         {"hidden", &c.hidden},           {"heads", &c.heads},
      {"patch", &c.patch},         {"image_size", &c.image_size},   {"channels", &c.channels},
      {"num_classes", &c.num_classes}, {"max_group", &c.max_group}, {"time_embed_dim", &c.time_embed_dim},
      {"mlp_ratio", &c.mlp_ratio}};
  for (const auto& [key, dst] : fields) {
    if (!j.contains(key)) throw ValidationError(std::string("model config: missing ") + key);
    *dst = j[key].get<std::size_t>();
  }
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const auto& f : fields) known = known || key == f.first;
    if (!known) throw ValidationError("model config: unknown key " + key);
  }
  c.validate();
  return c;
}

Checkpoint Denoiser::to_checkpoint() const {
  nlohmann::ordered_json header;
  header["format"] = "groupdiff-denoiser";
  header["version"] = 1;
  header["model"] = nlohmann::ordered_json::parse(model_config_to_json(config_));
  return Checkpoint{header.dump(), params_};
}

Denoiser Denoiser::from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(ckpt.header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "groupdiff-denoiser" || header.value("version", 0) != 1) {
    throw IoError("checkpoint header: not a groupdiff denoiser v1");
  }
  return Denoiser(model_config_from_json(header["model"].dump()), ckpt.tensors);
}

void Denoiser::save(const std::string& path) const { write_checkpoint(path, to_checkpoint()); }

Denoiser Denoiser::load(const std::string& path) { return from_checkpoint(read_checkpoint(path)); }

}  // namespace groupdiff
