#ifndef CONVITAC_CORE_OPS_HPP
#define CONVITAC_CORE_OPS_HPP

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "core/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, computes the
// forward result, and (when a tape is given and an input carries gradient)
// records a closure that accumulates adjoints into the inputs. Gradients
// fan in additively, so a tensor used twice receives the sum of both paths.
namespace convitac {

template <class T>
inline void debug_check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  for (const T& v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      assert(false && "non-finite value produced by op");
      (void)op;
      break;
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

template <class T>
inline void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape("add", a, b);
  auto out = TensorT<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  bool rec = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape("sub", a, b);
  auto out = TensorT<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  bool rec = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape("mul", a, b);
  auto out = TensorT<T>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  bool rec = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

// y = c * x with a compile-time-constant scalar.
template <class T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, double c) {
  auto out = TensorT<T>::zeros(x.shape());
  const T cv = static_cast<T>(c);
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = cv * x.data()[i];
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, cv]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += cv * g[i];
    });
  }
  return out;
}

// y = s * x where s is a learnable scalar tensor (size 1, any rank).
template <class T>
TensorT<T> scale_by(TapeT<T>* tape, const TensorT<T>& s, const TensorT<T>& x) {
  if (s.size() != 1) {
    throw DimensionError("scale_by: gate must be scalar, got " + shape_str(s.shape()));
  }
  auto out = TensorT<T>::zeros(x.shape());
  const T sv = s.data()[0];
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = sv * x.data()[i];
  bool rec = s.requires_grad() || x.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([s, x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (s.requires_grad()) {
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.data()[i];
        s.grad()[0] += acc;
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        const T sv2 = s.data()[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv2 * g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> matmul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = TensorT<T>::zeros({m, n});
  {
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        const T ail = pa[i * k + l];
        const T* pbl = pb + l * n;
        T* pci = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) pci[j] += ail * pbl[j];
      }
    }
  }
  debug_check_finite(out, "matmul");
  bool rec = a.requires_grad() || b.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) {
        // dA = dC * B^T
        T* ga = a.grad().data();
        const T* pb = b.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            T acc = T(0);
            const T* gi = g + i * n;
            const T* bl = pb + l * n;
            for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bl[j];
            ga[i * k + l] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB = A^T * dC
        T* gb = b.grad().data();
        const T* pa = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            const T ail = pa[i * k + l];
            const T* gi = g + i * n;
            T* gbl = gb + l * n;
            for (std::size_t j = 0; j < n; ++j) gbl[j] += ail * gi[j];
          }
        }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> transpose(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = TensorT<T>::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// Adds a length-N row vector to every row of an M x N matrix.
template <class T>
TensorT<T> add_rowvec(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = TensorT<T>::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + b.data()[j];
  bool rec = x.requires_grad() || b.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([x, b, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

// Numerically stabilized softmax along `axis`. -inf inputs map to exactly
// zero probability; each slice sums to one.
template <class T>
TensorT<T> softmax(TapeT<T>* tape, const TensorT<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.data();
  T* py = out.data();
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T m = neg_inf;
      for (std::size_t k = 0; k < n; ++k) m = std::max(m, px[base + k * inner]);
      if (m == neg_inf) continue;  // fully masked slice stays all-zero
      T denom = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T v = px[base + k * inner];
        const T e = (v == neg_inf) ? T(0) : std::exp(v - m);
        py[base + k * inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < n; ++k) py[base + k * inner] /= denom;
    }
  }
  debug_check_finite(out, "softmax");
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, outer, inner, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      const T* py = out.data();
      auto& gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = T(0);
          for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * py[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = base + k * inner;
            gx[idx] += py[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Row-wise log(sum(exp)) of a 2-D tensor; tolerates -inf entries.
template <class T>
TensorT<T> logsumexp_rows(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.rank() != 2) throw DimensionError("logsumexp_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = TensorT<T>::zeros({m});
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    T mx = neg_inf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x.data()[i * n + j]);
    if (mx == neg_inf) {
      out.data()[i] = neg_inf;
      continue;
    }
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T v = x.data()[i * n + j];
      if (v != neg_inf) acc += std::exp(v - mx);
    }
    out.data()[i] = mx + std::log(acc);
  }
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      const T neg_inf2 = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        const T lse = out.data()[i];
        if (lse == neg_inf2 || g[i] == T(0)) continue;
        for (std::size_t j = 0; j < n; ++j) {
          const T v = x.data()[i * n + j];
          if (v != neg_inf2) gx[i * n + j] += g[i] * std::exp(v - lse);
        }
      }
    });
  }
  return out;
}

// Layer normalization over the last dimension with affine parameters.
// eps sits inside the square root.
template <class T>
TensorT<T> layer_norm(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank 0 input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match feature dim " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  auto out = TensorT<T>::zeros(x.shape());
  auto xhat = TensorT<T>::zeros(x.shape());   // cached for backward
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += px[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = px[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (px[j] - mean) * istd;
      xhat.data()[r * d + j] = h;
      out.data()[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  debug_check_finite(out, "layer_norm");
  bool rec = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([x, gamma, beta, out, xhat, inv_std, rows, d]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gh = g.data() + r * d;
        const T* h = xhat.data() + r * d;
        if (gamma.requires_grad()) {
          auto& gg = gamma.grad();
          for (std::size_t j = 0; j < d; ++j) gg[j] += gh[j] * h[j];
        }
        if (beta.requires_grad()) {
          auto& gb = beta.grad();
          for (std::size_t j = 0; j < d; ++j) gb[j] += gh[j];
        }
        if (x.requires_grad()) {
          // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
          T m1 = T(0), m2 = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gh[j] * gamma.data()[j];
            m1 += dh;
            m2 += dh * h[j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          auto& gx = x.grad();
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gh[j] * gamma.data()[j];
            gx[r * d + j] += inv_std[r] * (dh - m1 - h[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// x * Phi(x), tanh approximation.
template <class T>
TensorT<T> gelu(TapeT<T>* tape, const TensorT<T>& x) {
  auto out = TensorT<T>::zeros(x.shape());
  const T a = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T b = static_cast<T>(0.044715);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    const T t = std::tanh(a * (v + b * v * v * v));
    out.data()[i] = T(0.5) * v * (T(1) + t);
  }
  debug_check_finite(out, "gelu");
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, a, b]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = x.data()[i];
        const T t = std::tanh(a * (v + b * v * v * v));
        const T dt = (T(1) - t * t) * a * (T(1) + T(3) * b * v * v);
        gx[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    });
  }
  return out;
}

// Concatenation along `axis`; all other dimensions must agree.
template <class T>
TensorT<T> concat(TapeT<T>* tape, const std::vector<TensorT<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ValidationError("concat: no parts");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  }
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    }
    for (std::size_t i = 0; i < s0.size(); ++i) {
      if (i != axis && p.dim(i) != s0[i]) {
        throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(s0) +
                             " along non-axis dim " + std::to_string(i));
      }
    }
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  auto out = TensorT<T>::zeros(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  std::size_t offset = 0;
  bool rec = false;
  for (const auto& p : parts) {
    const std::size_t np = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(p.data() + o * np * inner, p.data() + (o + 1) * np * inner,
                out.data() + (o * total + offset) * inner);
    }
    offset += np;
    rec = rec || p.requires_grad();
  }
  out.set_requires_grad(rec);
  if (tape && rec) {
    tape->record([parts, out, outer, inner, total]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      // Route slices of the output gradient back to each part in order.
      std::size_t offset2 = 0;
      for (auto p : parts) {
        const std::size_t ax_size = p.size() / (outer * inner);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = g.data() + (o * total + offset2) * inner;
            T* dst = gp.data() + o * ax_size * inner;
            for (std::size_t i = 0; i < ax_size * inner; ++i) dst[i] += src[i];
          }
        }
        offset2 += ax_size;
      }
    });
  }
  return out;
}

// Contiguous slice [from, to) along `axis`.
template <class T>
TensorT<T> slice(TapeT<T>* tape, const TensorT<T>& x, std::size_t axis, std::size_t from,
                 std::size_t to) {
  if (axis >= x.rank() || from > to || to > x.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(from) + "," + std::to_string(to) +
                         ") along axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  out_shape[axis] = to - from;
  auto out = TensorT<T>::zeros(out_shape);
  const std::size_t len = to - from;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(x.data() + (o * n + from) * inner, x.data() + (o * n + to) * inner,
              out.data() + o * len * inner);
  }
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, outer, inner, n, from, len]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = g.data() + o * len * inner;
        T* dst = gx.data() + (o * n + from) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// Arithmetic mean over axis 0 of an S x D matrix.
template <class T>
TensorT<T> mean_pool(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.rank() != 2 || x.dim(0) == 0) {
    throw DimensionError("mean_pool: expected non-empty rank 2, got " + shape_str(x.shape()));
  }
  const std::size_t s = x.dim(0), d = x.dim(1);
  auto out = TensorT<T>::zeros({d});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data()[j] += x.data()[i * d + j];
  for (std::size_t j = 0; j < d; ++j) out.data()[j] /= static_cast<T>(s);
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, s, d]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      const T inv = T(1) / static_cast<T>(s);
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
    });
  }
  return out;
}

template <class T>
TensorT<T> sum(TapeT<T>* tape, const TensorT<T>& x) {
  auto out = TensorT<T>::zeros({});
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

// Picks x[i, idx[i]] for every row.
template <class T>
TensorT<T> pick(TapeT<T>* tape, const TensorT<T>& x, const std::vector<int>& idx) {
  if (x.rank() != 2 || idx.size() != x.dim(0)) {
    throw DimensionError("pick: " + shape_str(x.shape()) + " with " + std::to_string(idx.size()) +
                         " indices");
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n) {
      throw ValidationError("pick: index " + std::to_string(idx[i]) + " out of range for row width " +
                            std::to_string(n));
    }
  }
  auto out = TensorT<T>::zeros({m});
  for (std::size_t i = 0; i < m; ++i) out.data()[i] = x.data()[i * n + idx[i]];
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, idx, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i * n + idx[i]] += g[i];
    });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <class T>
TensorT<T> cross_entropy(TapeT<T>* tape, const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: " + shape_str(logits.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t bsz = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < bsz; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(k) + " classes");
    }
  }
  auto out = TensorT<T>::zeros({});
  T acc = T(0);
  for (std::size_t i = 0; i < bsz; ++i) {
    const T* row = logits.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    acc += (mx + std::log(denom)) - row[labels[i]];
  }
  out.data()[0] = acc / static_cast<T>(bsz);
  debug_check_finite(out, "cross_entropy");
  out.set_requires_grad(logits.requires_grad());
  if (tape && logits.requires_grad()) {
    tape->record([logits, out, labels, bsz, k]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto& gx = logits.grad();
      for (std::size_t i = 0; i < bsz; ++i) {
        const T* row = logits.data() + i * k;
        T mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < k; ++j) {
          const T p = std::exp(row[j] - mx) / denom;
          const T ind = (static_cast<std::size_t>(labels[i]) == j) ? T(1) : T(0);
          gx[i * k + j] += g * (p - ind) / static_cast<T>(bsz);
        }
      }
    });
  }
  return out;
}

// Normalizes a vector to unit L2 norm (tiny stabilizer inside the sqrt).
template <class T>
TensorT<T> l2_normalize(TapeT<T>* tape, const TensorT<T>& x) {
  if (x.rank() != 1) throw DimensionError("l2_normalize: expected rank 1, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  T sq = T(0);
  for (std::size_t i = 0; i < n; ++i) sq += x.data()[i] * x.data()[i];
  const T norm = std::sqrt(sq + static_cast<T>(1e-24));
  auto out = TensorT<T>::zeros({n});
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] / norm;
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, norm, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      T dot = T(0);
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * out.data()[i];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += (g[i] - out.data()[i] * dot) / norm;
    });
  }
  return out;
}

// Copies x with the main diagonal replaced by `value`. The diagonal output
// is constant with respect to x, so no gradient flows through it.
template <class T>
TensorT<T> mask_diagonal(TapeT<T>* tape, const TensorT<T>& x, T value) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1)) {
    throw DimensionError("mask_diagonal: expected square matrix, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  auto out = TensorT<T>::zeros({n, n});
  std::copy(x.data(), x.data() + n * n, out.data());
  for (std::size_t i = 0; i < n; ++i) out.data()[i * n + i] = value;
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) gx[i * n + j] += g[i * n + j];
    });
  }
  return out;
}

template <class T>
TensorT<T> reshape(TapeT<T>* tape, const TensorT<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape));
  }
  auto out = TensorT<T>::from(std::move(new_shape), x.values());
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

// out[k] = x[index_map[k]]; used for patch extraction.
template <class T>
TensorT<T> gather_elems(TapeT<T>* tape, const TensorT<T>& x, Shape out_shape,
                        const std::vector<std::size_t>& index_map) {
  if (shape_numel(out_shape) != index_map.size()) {
    throw DimensionError("gather_elems: map size " + std::to_string(index_map.size()) +
                         " vs shape " + shape_str(out_shape));
  }
  auto out = TensorT<T>::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < index_map.size(); ++i) out.data()[i] = x.data()[index_map[i]];
  out.set_requires_grad(x.requires_grad());
  if (tape && x.requires_grad()) {
    tape->record([x, out, index_map]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[index_map[i]] += g[i];
    });
  }
  return out;
}

// Stacks N rank-1 vectors of equal length into an N x D matrix.
template <class T>
TensorT<T> stack_rows(TapeT<T>* tape, const std::vector<TensorT<T>>& rows) {
  if (rows.empty()) throw ValidationError("stack_rows: no rows");
  std::vector<TensorT<T>> reshaped;
  reshaped.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) throw DimensionError("stack_rows: expected rank 1, got " + shape_str(r.shape()));
    reshaped.push_back(reshape(tape, r, {1, r.dim(0)}));
  }
  return concat(tape, reshaped, 0);
}

}  // namespace convitac

#endif
