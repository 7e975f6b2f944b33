#ifndef CONVITAC_NN_VIT_HPP
#define CONVITAC_NN_VIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "core/ops.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace convitac {

template <class T>
struct ParamT {
  std::string name;
  TensorT<T> value;
};
using Param = ParamT<float>;

struct EncoderConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  std::uint64_t seed = 0;

  std::size_t patches() const { return (image_h / patch) * (image_w / patch); }
  std::size_t patch_elems() const { return patch * patch * channels; }

  void validate() const {
    if (image_h == 0 || image_w == 0 || patch == 0 || dim == 0 || depth == 0 || heads == 0) {
      throw ValidationError("encoder config: all sizes must be positive");
    }
    if (channels != 1 && channels != 3) {
      throw ValidationError("encoder config: channels must be 1 or 3, got " +
                            std::to_string(channels));
    }
    if (image_h % patch != 0 || image_w % patch != 0) {
      throw ValidationError("encoder config: image " + std::to_string(image_h) + "x" +
                            std::to_string(image_w) + " not divisible by patch " +
                            std::to_string(patch));
    }
    if (dim % heads != 0) {
      throw ValidationError("encoder config: dim " + std::to_string(dim) +
                            " not divisible by heads " + std::to_string(heads));
    }
    if (mlp_ratio <= 0) throw ValidationError("encoder config: mlp_ratio must be positive");
  }
};

template <class T>
void validate_image(const TensorT<T>& image, const EncoderConfig& cfg) {
  if (image.rank() != 3) {
    throw ValidationError("image: expected HxWxC, got " + shape_str(image.shape()));
  }
  if (image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w || image.dim(2) != cfg.channels) {
    throw ValidationError("image: expected " + std::to_string(cfg.image_h) + "x" +
                          std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels) +
                          ", got " + shape_str(image.shape()));
  }
}

// Splits an H x W x C image into non-overlapping patches, ordered row-major
// over the patch grid. Each output row is one flattened patch (row-major
// within the patch, channel-last).
template <class T>
TensorT<T> patchify(TapeT<T>* tape, const TensorT<T>& image, std::size_t patch) {
  if (image.rank() != 3) {
    throw ValidationError("patchify: expected HxWxC image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ValidationError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t p = gh * gw, k = patch * patch * c;
  std::vector<std::size_t> index_map(p * k);
  std::size_t pos = 0;
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      for (std::size_t py = 0; py < patch; ++py) {
        for (std::size_t px = 0; px < patch; ++px) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            index_map[pos++] = ((gy * patch + py) * w + (gx * patch + px)) * c + ch;
          }
        }
      }
    }
  }
  return gather_elems(tape, image, {p, k}, index_map);
}

template <class T>
struct LinearT {
  TensorT<T> w;  // in x out
  TensorT<T> b;  // out

  static LinearT init(std::size_t in, std::size_t out, Rng& rng) {
    LinearT l;
    l.w = TensorT<T>::zeros({in, out}, true);
    for (auto& v : l.w.values()) v = static_cast<T>(rng.trunc_normal(0.02));
    l.b = TensorT<T>::zeros({out}, true);
    return l;
  }

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    return add_rowvec(tape, matmul(tape, x, w), b);
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }

  template <class U>
  LinearT<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
};

template <class T>
struct LayerNormT {
  TensorT<T> gamma;
  TensorT<T> beta;
  double eps = 1e-5;

  static LayerNormT init(std::size_t d) {
    LayerNormT ln;
    ln.gamma = TensorT<T>::full({d}, T(1), true);
    ln.beta = TensorT<T>::zeros({d}, true);
    return ln;
  }

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x) const {
    return layer_norm(tape, x, gamma, beta, eps);
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    out.push_back({prefix + ".g", gamma});
    out.push_back({prefix + ".b", beta});
  }

  template <class U>
  LayerNormT<U> cast() const {
    return {gamma.template cast<U>(), beta.template cast<U>(), eps};
  }
};

// One attention head: D x d projections for query, key, value.
template <class T>
struct AttentionHeadT {
  TensorT<T> wq, wk, wv;

  static AttentionHeadT init(std::size_t dim, std::size_t head_dim, Rng& rng) {
    AttentionHeadT h;
    for (TensorT<T>* w : {&h.wq, &h.wk, &h.wv}) {
      *w = TensorT<T>::zeros({dim, head_dim}, true);
      for (auto& v : w->values()) v = static_cast<T>(rng.trunc_normal(0.02));
    }
    return h;
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".wv", wv});
  }

  template <class U>
  AttentionHeadT<U> cast() const {
    return {wq.template cast<U>(), wk.template cast<U>(), wv.template cast<U>()};
  }
};

// softmax(q k^T / sqrt(d)) v for one head; query rows come from `e`,
// key/value rows from `f`. Optionally exposes the attention matrix.
template <class T>
TensorT<T> attention_head_forward(TapeT<T>* tape, const AttentionHeadT<T>& head,
                                  const TensorT<T>& e, const TensorT<T>& f,
                                  TensorT<T>* attn_out = nullptr) {
  const std::size_t hd = head.wq.dim(1);
  auto q = matmul(tape, e, head.wq);
  auto k = matmul(tape, f, head.wk);
  auto v = matmul(tape, f, head.wv);
  auto scores = scale(tape, matmul(tape, q, transpose(tape, k)), 1.0 / std::sqrt(double(hd)));
  auto attn = softmax(tape, scores, 1);
  if (attn_out) *attn_out = attn;
  return matmul(tape, attn, v);
}

// Pre-norm transformer block: LN -> multi-head self-attention -> residual,
// LN -> MLP(gelu) -> residual.
template <class T>
struct BlockT {
  LayerNormT<T> ln1, ln2;
  std::vector<AttentionHeadT<T>> heads;
  LinearT<T> attn_proj;  // (h*d) x D
  LinearT<T> fc1, fc2;

  static BlockT init(std::size_t dim, std::size_t n_heads, double mlp_ratio, Rng& rng) {
    BlockT blk;
    blk.ln1 = LayerNormT<T>::init(dim);
    blk.ln2 = LayerNormT<T>::init(dim);
    const std::size_t hd = dim / n_heads;
    for (std::size_t i = 0; i < n_heads; ++i) blk.heads.push_back(AttentionHeadT<T>::init(dim, hd, rng));
    blk.attn_proj = LinearT<T>::init(n_heads * hd, dim, rng);
    const std::size_t hidden = static_cast<std::size_t>(mlp_ratio * double(dim));
    blk.fc1 = LinearT<T>::init(dim, hidden, rng);
    blk.fc2 = LinearT<T>::init(hidden, dim, rng);
    return blk;
  }

  TensorT<T> forward(TapeT<T>* tape, const TensorT<T>& x,
                     std::vector<TensorT<T>>* attn_trace = nullptr) const {
    auto normed = ln1.forward(tape, x);
    std::vector<TensorT<T>> head_outs;
    head_outs.reserve(heads.size());
    for (const auto& h : heads) {
      TensorT<T> attn;
      head_outs.push_back(attention_head_forward(tape, h, normed, normed, &attn));
      if (attn_trace) attn_trace->push_back(attn);
    }
    auto attn_cat = concat(tape, head_outs, 1);
    auto x1 = add(tape, x, attn_proj.forward(tape, attn_cat));
    auto normed2 = ln2.forward(tape, x1);
    auto mlp = fc2.forward(tape, gelu(tape, fc1.forward(tape, normed2)));
    return add(tape, x1, mlp);
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    ln2.collect(out, prefix + ".ln2");
    for (std::size_t i = 0; i < heads.size(); ++i)
      heads[i].collect(out, prefix + ".h" + std::to_string(i));
    attn_proj.collect(out, prefix + ".proj");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }

  template <class U>
  BlockT<U> cast() const {
    BlockT<U> blk;
    blk.ln1 = ln1.template cast<U>();
    blk.ln2 = ln2.template cast<U>();
    for (const auto& h : heads) blk.heads.push_back(h.template cast<U>());
    blk.attn_proj = attn_proj.template cast<U>();
    blk.fc1 = fc1.template cast<U>();
    blk.fc2 = fc2.template cast<U>();
    return blk;
  }
};

// Patchify -> linear embed + positional embedding -> transformer blocks.
// Produces a P x D patch sequence; no class token, pooling happens at the
// consumer.
template <class T>
struct VitEncoderT {
  EncoderConfig cfg;
  LinearT<T> embed;
  TensorT<T> pos;  // P x D
  std::vector<BlockT<T>> blocks;

  static VitEncoderT init(const EncoderConfig& cfg) {
    cfg.validate();
    VitEncoderT enc;
    enc.cfg = cfg;
    Rng rng(cfg.seed);
    enc.embed = LinearT<T>::init(cfg.patch_elems(), cfg.dim, rng);
    enc.pos = TensorT<T>::zeros({cfg.patches(), cfg.dim}, true);
    for (auto& v : enc.pos.values()) v = static_cast<T>(rng.trunc_normal(0.02));
    for (std::size_t i = 0; i < cfg.depth; ++i)
      enc.blocks.push_back(BlockT<T>::init(cfg.dim, cfg.heads, cfg.mlp_ratio, rng));
    return enc;
  }

  TensorT<T> encode(TapeT<T>* tape, const TensorT<T>& image,
                    std::vector<TensorT<T>>* attn_trace = nullptr) const {
    validate_image(image, cfg);
    auto patches = patchify(tape, image, cfg.patch);
    auto x = add(tape, embed.forward(tape, patches), pos);
    for (const auto& blk : blocks) x = blk.forward(tape, x, attn_trace);
    return x;
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    embed.collect(out, prefix + ".embed");
    out.push_back({prefix + ".pos", pos});
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(out, prefix + ".blk" + std::to_string(i));
  }

  template <class U>
  VitEncoderT<U> cast() const {
    VitEncoderT<U> enc;
    enc.cfg = cfg;
    enc.embed = embed.template cast<U>();
    enc.pos = pos.template cast<U>();
    for (const auto& b : blocks) enc.blocks.push_back(b.template cast<U>());
    return enc;
  }
};

using VitEncoder = VitEncoderT<float>;

}  // namespace convitac

#endif
