#ifndef CONVITAC_NN_CONTRASTIVE_HPP
#define CONVITAC_NN_CONTRASTIVE_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nn/vit.hpp"

namespace convitac {

// Shared encoder for both modalities plus a pooled projection head:
// mean over patches -> linear D x D_proj (bias-free) -> L2 normalize.
// Once frozen its weights never receive gradients or optimizer updates.
template <class T>
struct ContrastiveEncoderT {
  VitEncoderT<T> enc;
  TensorT<T> proj;  // D x D_proj
  std::size_t proj_dim = 0;
  bool frozen = false;

  static ContrastiveEncoderT init(const EncoderConfig& cfg, std::size_t proj_dim) {
    if (proj_dim == 0) throw ValidationError("contrastive encoder: proj_dim must be positive");
    ContrastiveEncoderT c;
    c.enc = VitEncoderT<T>::init(cfg);
    Rng rng(mix_seed(cfg.seed, 0x9Au));
    c.proj = TensorT<T>::zeros({cfg.dim, proj_dim}, true);
    for (auto& v : c.proj.values()) v = static_cast<T>(rng.trunc_normal(0.02));
    c.proj_dim = proj_dim;
    return c;
  }

  struct Projection {
    TensorT<T> patch_map;  // P x D
    TensorT<T> pooled;     // unit vector, D_proj
  };

  Projection project(TapeT<T>* tape, const TensorT<T>& image) const {
    Projection out;
    out.patch_map = enc.encode(tape, image);
    auto pooled = mean_pool(tape, out.patch_map);
    auto projected = matmul(tape, reshape(tape, pooled, {1, enc.cfg.dim}), proj);
    out.pooled = l2_normalize(tape, reshape(tape, projected, {proj_dim}));
    return out;
  }

  void freeze() {
    frozen = true;
    std::vector<ParamT<T>> ps;
    collect(ps, "c");
    for (auto& p : ps) p.value.set_requires_grad(false);
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    enc.collect(out, prefix);
    out.push_back({prefix + ".projection_head", proj});
  }

  template <class U>
  ContrastiveEncoderT<U> cast() const {
    ContrastiveEncoderT<U> c;
    c.enc = enc.template cast<U>();
    c.proj = proj.template cast<U>();
    c.proj_dim = proj_dim;
    c.frozen = frozen;
    return c;
  }
};

using ContrastiveEncoder = ContrastiveEncoderT<float>;

// Condition embedding: per-frame patch maps from the shared encoder,
// visual block first, then tactile, flattened to (2N*P) x D.
template <class T>
struct ConditionEmbeddingT {
  TensorT<T> flat;  // (2N*P) x D
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::size_t dim = 0;
};

template <class T>
ConditionEmbeddingT<T> condition_embedding(TapeT<T>* tape, const ContrastiveEncoderT<T>& encoder,
                                           const std::vector<TensorT<T>>& v_frames,
                                           const std::vector<TensorT<T>>& t_frames) {
  if (v_frames.empty() || v_frames.size() != t_frames.size()) {
    throw ValidationError("condition_embedding: need equal non-empty frame lists, got " +
                          std::to_string(v_frames.size()) + " visual vs " +
                          std::to_string(t_frames.size()) + " tactile");
  }
  std::vector<TensorT<T>> maps;
  maps.reserve(2 * v_frames.size());
  for (const auto& v : v_frames) maps.push_back(encoder.enc.encode(tape, v));
  for (const auto& t : t_frames) maps.push_back(encoder.enc.encode(tape, t));
  ConditionEmbeddingT<T> out;
  out.flat = concat(tape, maps, 0);
  out.frames = v_frames.size();
  out.patches = encoder.enc.cfg.patches();
  out.dim = encoder.enc.cfg.dim;
  return out;
}

// Temperature-scaled similarity matrix of stacked pooled embeddings
// (rows: B visual then B tactile). The diagonal is masked to -inf so a
// sample never counts as its own negative.
template <class T>
TensorT<T> similarity_matrix(TapeT<T>* tape, const TensorT<T>& pooled_rows, double tau) {
  if (tau <= 0) throw ValidationError("similarity_matrix: tau must be positive, got " +
                                      std::to_string(tau));
  if (pooled_rows.rank() != 2) {
    throw DimensionError("similarity_matrix: expected 2-D embeddings, got " +
                         shape_str(pooled_rows.shape()));
  }
  auto s = scale(tape, matmul(tape, pooled_rows, transpose(tape, pooled_rows)), 1.0 / tau);
  return mask_diagonal(tape, s, -std::numeric_limits<T>::infinity());
}

// Contrastive loss over a masked 2B x 2B similarity matrix. The positive
// for row i sits B rows away (wrapping), i.e. the other modality of the
// same sample; the denominator runs over every j != i via log-sum-exp.
template <class T>
TensorT<T> nt_xent_loss(TapeT<T>* tape, const TensorT<T>& sim, std::size_t batch) {
  if (batch < 1) throw ValidationError("nt_xent_loss: batch must be >= 1");
  const std::size_t n = 2 * batch;
  if (sim.rank() != 2 || sim.dim(0) != n || sim.dim(1) != n) {
    throw DimensionError("nt_xent_loss: expected " + std::to_string(n) + "x" + std::to_string(n) +
                         " similarity matrix, got " + shape_str(sim.shape()));
  }
  std::vector<int> positives(n);
  for (std::size_t i = 0; i < n; ++i) positives[i] = static_cast<int>((i + batch) % n);
  auto lse = logsumexp_rows(tape, sim);
  auto pos = pick(tape, sim, positives);
  return sum(tape, sub(tape, lse, pos));
}

}  // namespace convitac

#endif
