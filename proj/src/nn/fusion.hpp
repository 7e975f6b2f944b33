#ifndef CONVITAC_NN_FUSION_HPP
#define CONVITAC_NN_FUSION_HPP

#include <string>
#include <vector>

#include "nn/vit.hpp"

namespace convitac {

enum class FusionKind { Add, Concat, Sws };

inline const char* fusion_name(FusionKind k) {
  switch (k) {
    case FusionKind::Add: return "add";
    case FusionKind::Concat: return "concat";
    case FusionKind::Sws: return "sws";
  }
  return "?";
}

inline FusionKind parse_fusion(const std::string& s) {
  if (s == "add") return FusionKind::Add;
  if (s == "concat") return FusionKind::Concat;
  if (s == "sws") return FusionKind::Sws;
  throw ValidationError("unknown fusion kind: " + s);
}

// Concatenates N per-frame P x D feature maps along the patch axis,
// frame order preserved.
template <class T>
TensorT<T> stack_frames(TapeT<T>* tape, const std::vector<TensorT<T>>& frames) {
  if (frames.empty()) throw ValidationError("stack_frames: no frames");
  for (const auto& f : frames) {
    if (f.rank() != 2 || f.shape() != frames[0].shape()) {
      throw DimensionError("stack_frames: " + shape_str(f.shape()) + " vs " +
                           shape_str(frames[0].shape()));
    }
  }
  return concat(tape, frames, 0);
}

// Per-modality token-wise linear projections and the pluggable fusion op.
// Add and Sws keep N*P rows; Concat stacks to 2N*P rows.
template <class T>
struct FusionBlockT {
  FusionKind kind = FusionKind::Concat;
  LinearT<T> lv, lt;  // D -> D, distinct weights per modality
  TensorT<T> gates;   // 2 learnable logits, Sws only

  static FusionBlockT init(std::size_t dim, FusionKind kind, Rng& rng) {
    FusionBlockT f;
    f.kind = kind;
    f.lv = LinearT<T>::init(dim, dim, rng);
    f.lt = LinearT<T>::init(dim, dim, rng);
    f.gates = TensorT<T>::zeros({2}, true);
    return f;
  }

  TensorT<T> project_visual(TapeT<T>* tape, const TensorT<T>& stacked) const {
    return lv.forward(tape, stacked);
  }
  TensorT<T> project_tactile(TapeT<T>* tape, const TensorT<T>& stacked) const {
    return lt.forward(tape, stacked);
  }

  TensorT<T> fuse(TapeT<T>* tape, const TensorT<T>& pv, const TensorT<T>& pt) const {
    check_same_shape("fuse", pv, pt);
    switch (kind) {
      case FusionKind::Add:
        return add(tape, pv, pt);
      case FusionKind::Concat:
        return concat(tape, {pv, pt}, 0);
      case FusionKind::Sws: {
        auto w = softmax(tape, gates, 0);
        auto w0 = slice(tape, w, 0, 0, 1);
        auto w1 = slice(tape, w, 0, 1, 2);
        return add(tape, scale_by(tape, w0, pv), scale_by(tape, w1, pt));
      }
    }
    throw ValidationError("fuse: unknown fusion kind");
  }

  // Full path: stack each modality's frames, project, fuse.
  TensorT<T> forward(TapeT<T>* tape, const std::vector<TensorT<T>>& v_features,
                     const std::vector<TensorT<T>>& t_features) const {
    auto sv = stack_frames(tape, v_features);
    auto st = stack_frames(tape, t_features);
    return fuse(tape, project_visual(tape, sv), project_tactile(tape, st));
  }

  void collect(std::vector<ParamT<T>>& out, const std::string& prefix) const {
    lv.collect(out, prefix + ".lv");
    lt.collect(out, prefix + ".lt");
    if (kind == FusionKind::Sws) out.push_back({prefix + ".gates", gates});
  }

  template <class U>
  FusionBlockT<U> cast() const {
    FusionBlockT<U> f;
    f.kind = kind;
    f.lv = lv.template cast<U>();
    f.lt = lt.template cast<U>();
    f.gates = gates.template cast<U>();
    return f;
  }
};

}  // namespace convitac

#endif
