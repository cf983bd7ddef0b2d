#include "invdriver/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "invdriver/errors.hpp"

namespace invd::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Shape leading(const Shape& s, std::size_t drop) { return Shape(s.begin(), s.end() - static_cast<long>(drop)); }

Buffer& gbuf(const std::shared_ptr<Node>& n) { return n->grad_buffer(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2)
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const Shape ba = leading(a.shape(), 2), bb = leading(b.shape(), 2);
  Shape batch;
  bool bcast_a = false, bcast_b = false;
  if (bb.empty()) {
    batch = ba;
    bcast_b = true;
  } else if (ba.empty()) {
    batch = bb;
    bcast_a = true;
  } else if (ba == bb) {
    batch = ba;
  } else {
    throw DimensionError("matmul batch dimensions not broadcastable: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t nb = numel_of(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  Buffer out(nb * m * n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < nb; ++i) {
    MapC A(pa + (bcast_a ? 0 : i * m * k), m, k);
    MapC B(pb + (bcast_b ? 0 : i * k * n), k, n);
    Map C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }

  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(std::move(out_shape), std::move(out), {a, b}, [an, bn, nb, m, k, n, bcast_a, bcast_b](Node& self) {
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < nb; ++i) {
      MapC G(g + i * m * n, m, n);
      MapC A(an->value.data() + (bcast_a ? 0 : i * m * k), m, k);
      MapC B(bn->value.data() + (bcast_b ? 0 : i * k * n), k, n);
      if (an->requires_grad) {
        Map dA(gbuf(an).data() + (bcast_a ? 0 : i * m * k), m, k);
        dA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        Map dB(gbuf(bn).data() + (bcast_b ? 0 : i * k * n), k, n);
        dB.noalias() += A.transpose() * G;
      }
    }
  });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1), nb = x.numel() / (r * c);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Buffer out(x.numel());
  const double* v = x.values().data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = v[b * r * c + i * c + j];
  auto xn = x.node_ptr();
  return make_result(std::move(s), std::move(out), {x}, [xn, r, c, nb](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

namespace {

// Shared implementation of add/sub: out = a + sign * b, b same-shaped or suffix-broadcast.
Tensor add_signed(const Tensor& a, const Tensor& b, double sign, const char* op) {
  if (!is_suffix(b.shape(), a.shape()))
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  const std::size_t inner = b.numel(), outer = a.numel() / inner;
  Buffer out(a.values().begin(), a.values().end());
  const double* bv = b.values().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += sign * bv[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn, inner, outer, sign](Node& self) {
    if (an->requires_grad) {
      auto& g = gbuf(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = gbuf(bn);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += sign * self.grad[o * inner + i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_signed(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_signed(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = gbuf(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = gbuf(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  Buffer out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= s;
  auto xn = x.node_ptr();
  return make_result(x.shape(), std::move(out), {x}, [xn, s](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  auto xn = x.node_ptr();
  return make_result(x.shape(), std::move(out), {x}, [xn](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xn->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.node_ptr();
  return make_result({1}, {s}, {x}, [xn](Node& self) {
    auto& g = gbuf(xn);
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  auto xn = x.node_ptr();
  return make_result(std::move(shape), Buffer(x.values().begin(), x.values().end()), {x},
                     [xn](Node& self) {
                       auto& g = gbuf(xn);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor swap_axes01(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("swap_axes01 needs rank 3, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  Buffer out(x.numel());
  const double* v = x.values().data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(v + (a * B + b) * C, C, out.data() + (b * A + a) * C);
  auto xn = x.node_ptr();
  return make_result({B, A, C}, std::move(out), {x}, [xn, A, B, C](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += self.grad[(b * A + a) * C + c];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t rows = x.dim(0);
  if (count == 0 || begin + count > rows)
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  const std::size_t row = x.numel() / rows;
  Shape s = x.shape();
  s[0] = count;
  Buffer out(x.values().begin() + static_cast<long>(begin * row),
                          x.values().begin() + static_cast<long>((begin + count) * row));
  auto xn = x.node_ptr();
  return make_result(std::move(s), std::move(out), {x}, [xn, begin, row](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * row + i] += self.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero tensors");
  const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  Buffer out;
  std::vector<Tensor> parents;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail)
      throw DimensionError("concat_rows trailing shape mismatch " + shape_str(p.shape()) + " vs " +
                           shape_str(parts[0].shape()));
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p);
  }
  Shape s = parts[0].shape();
  s[0] = rows;
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_result(std::move(s), std::move(out), std::move(parents), [nodes](Node& self) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        auto& g = gbuf(n);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[off + i];
      }
      off += n->value.size();
    }
  });
}

Tensor mean_axis1(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("mean_axis1 needs rank 3, got " + shape_str(x.shape()));
  const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
  const double inv = 1.0 / static_cast<double>(B);
  Buffer out(A * C, 0.0);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) out[a * C + c] += x[(a * B + b) * C + c];
  for (auto& v : out) v *= inv;
  auto xn = x.node_ptr();
  return make_result({A, C}, std::move(out), {x}, [xn, A, B, C, inv](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[(a * B + b) * C + c] += inv * self.grad[a * C + c];
  });
}

Tensor cumsum_points(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("cumsum_points needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t P = x.dim(-2), F = x.dim(-1), nb = x.numel() / (P * F);
  Buffer out(x.values().begin(), x.values().end());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 1; t < P; ++t)
      for (std::size_t f = 0; f < F; ++f) out[(b * P + t) * F + f] += out[(b * P + t - 1) * F + f];
  auto xn = x.node_ptr();
  return make_result(x.shape(), std::move(out), {x}, [xn, P, F, nb](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (std::size_t t = P; t-- > 0;) {
          acc += self.grad[(b * P + t) * F + f];
          g[(b * P + t) * F + f] += acc;
        }
      }
  });
}

Tensor pairwise_add(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("pairwise_add width mismatch: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.dim(0), p = b.dim(0), d = a.dim(1);
  Buffer out(n * p * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t c = 0; c < d; ++c) out[(i * p + j) * d + c] = a[i * d + c] + b[j * d + c];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return make_result({n * p, d}, std::move(out), {a, b}, [an, bn, n, p, d](Node& self) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t c = 0; c < d; ++c) {
          const double g = self.grad[(i * p + j) * d + c];
          if (an->requires_grad) gbuf(an)[i * d + c] += g;
          if (bn->requires_grad) gbuf(bn)[j * d + c] += g;
        }
  });
}

namespace {

Tensor softmax_impl(const Tensor& logits, const IntraInstanceMask* mask) {
  if (logits.rank() < 2) throw DimensionError("softmax needs rank >= 2, got " + shape_str(logits.shape()));
  const std::size_t q = logits.dim(-2), k = logits.dim(-1), nb = logits.numel() / (q * k);
  if (mask) {
    if (mask->rows() != q || mask->cols() != k)
      throw DimensionError("mask shape [" + std::to_string(mask->rows()) + ", " + std::to_string(mask->cols()) +
                           "] does not match logits " + shape_str(logits.shape()));
    if (const auto r = mask->first_empty_row(); r != q)
      throw DegenerateMaskError("mask row " + std::to_string(r) + " blocks every key");
  }
  Buffer out(logits.numel(), 0.0);
  const double* x = logits.values().data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < q; ++i) {
      const double* xr = x + (b * q + i) * k;
      double* yr = out.data() + (b * q + i) * k;
      const std::uint8_t* mr = mask ? mask->row(i) : nullptr;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j)
        if (!mr || mr[j]) mx = std::max(mx, xr[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j)
        if (!mr || mr[j]) {
          yr[j] = std::exp(xr[j] - mx);
          z += yr[j];
        }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < k; ++j)
        if (!mr || mr[j]) yr[j] *= inv;
    }
  auto xn = logits.node_ptr();
  // The mask is copied so the closure stays valid after the caller's mask dies.
  std::shared_ptr<const IntraInstanceMask> m = mask ? std::make_shared<IntraInstanceMask>(*mask) : nullptr;
  return make_result(logits.shape(), std::move(out), {logits}, [xn, m, q, k, nb](Node& self) {
    auto& g = gbuf(xn);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < q; ++i) {
        const std::size_t off = (b * q + i) * k;
        const std::uint8_t* mr = m ? m->row(i) : nullptr;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          if (!mr || mr[j]) dot += self.value[off + j] * self.grad[off + j];
        for (std::size_t j = 0; j < k; ++j)
          if (!mr || mr[j]) g[off + j] += self.value[off + j] * (self.grad[off + j] - dot);
      }
  });
}

}  // namespace

Tensor masked_softmax(const Tensor& logits, const IntraInstanceMask& mask) { return softmax_impl(logits, &mask); }
Tensor softmax(const Tensor& logits) { return softmax_impl(logits, nullptr); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.dim(-1);
  if (d < 2) throw DimensionError("layer_norm needs width >= 2, got " + shape_str(x.shape()));
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm affine shapes " + shape_str(gain.shape()) + ", " + shape_str(bias.shape()) +
                         " do not match width " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel()), xhat(x.numel()), inv_std(rows);
  const double* xv = x.values().data();
  const double* gv = gain.values().data();
  const double* bv = bias.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mu) * inv_std[r];
      out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    }
  }
  auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [xn, gn, bn, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const double inv_d = 1.0 / static_cast<double>(d);
                       Buffer dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gy = self.grad.data() + r * d;
                         const double* xh = xhat.data() + r * d;
                         if (gn->requires_grad) {
                           auto& gg = gbuf(gn);
                           for (std::size_t c = 0; c < d; ++c) gg[c] += gy[c] * xh[c];
                         }
                         if (bn->requires_grad) {
                           auto& gb = gbuf(bn);
                           for (std::size_t c = 0; c < d; ++c) gb[c] += gy[c];
                         }
                         if (xn->requires_grad) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t c = 0; c < d; ++c) {
                             dxhat[c] = gy[c] * gn->value[c];
                             m1 += dxhat[c];
                             m2 += dxhat[c] * xh[c];
                           }
                           m1 *= inv_d;
                           m2 *= inv_d;
                           auto& gx = gbuf(xn);
                           for (std::size_t c = 0; c < d; ++c)
                             gx[r * d + c] += inv_std[r] * (dxhat[c] - m1 - xh[c] * m2);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t din = x.dim(-1);
  if (w.rank() != 2 || w.dim(0) != din || b.shape() != Shape{w.dim(1)})
    throw DimensionError("linear shape mismatch: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) +
                         ", b " + shape_str(b.shape()));
  const std::size_t dout = w.dim(1), rows = x.numel() / din;
  Shape s = x.shape();
  s.back() = dout;
  Buffer out(rows * dout);
  MapC X(x.values().data(), rows, din);
  MapC W(w.values().data(), din, dout);
  Map Y(out.data(), rows, dout);
  Y.noalias() = X * W;
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), dout);
  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
  return make_result(std::move(s), std::move(out), {x, w, b}, [xn, wn, bn, rows, din, dout](Node& self) {
    MapC G(self.grad.data(), rows, dout);
    if (xn->requires_grad) {
      Map dX(gbuf(xn).data(), rows, din);
      dX.noalias() += G * MapC(wn->value.data(), din, dout).transpose();
    }
    if (wn->requires_grad) {
      Map dW(gbuf(wn).data(), din, dout);
      dW.noalias() += MapC(xn->value.data(), rows, din).transpose() * G;
    }
    if (bn->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> db(gbuf(bn).data(), dout);
      db += G.colwise().sum();
    }
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1_loss");
  const std::size_t n = pred.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(pred[i] - target[i]);
  const double inv = 1.0 / static_cast<double>(n);
  auto pn = pred.node_ptr(), tn = target.node_ptr();
  return make_result({1}, {s * inv}, {pred, target}, [pn, tn, n, inv](Node& self) {
    const double g0 = self.grad[0] * inv;
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = pn->value[i] - tn->value[i];
      const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (pn->requires_grad) gbuf(pn)[i] += g0 * sg;
      if (tn->requires_grad) gbuf(tn)[i] -= g0 * sg;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw DimensionError("cross_entropy expects [n, C] logits with n targets, got " + shape_str(logits.shape()) +
                         " and " + std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.dim(0), C = logits.dim(1);
  Buffer probs(n * C);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= C) throw InputError("cross_entropy target out of range");
    const double* l = logits.values().data() + i * C;
    const double mx = *std::max_element(l, l + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(l[c] - mx);
    const double lse = mx + std::log(z);
    loss += lse - l[targets[i]];
    for (std::size_t c = 0; c < C; ++c) probs[i * C + c] = std::exp(l[c] - lse);
  }
  const double inv = 1.0 / static_cast<double>(n);
  auto ln = logits.node_ptr();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_result({1}, {loss * inv}, {logits},
                     [ln, n, C, inv, probs = std::move(probs), tg = std::move(tg)](Node& self) {
                       auto& g = gbuf(ln);
                       const double g0 = self.grad[0] * inv;
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t c = 0; c < C; ++c)
                           g[i * C + c] += g0 * (probs[i * C + c] - (c == tg[i] ? 1.0 : 0.0));
                     });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (logits.numel() != targets.size())
    throw DimensionError("bce_with_logits: " + shape_str(logits.shape()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  const std::size_t n = targets.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits[i];
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double inv = 1.0 / static_cast<double>(n);
  auto ln = logits.node_ptr();
  Buffer tg(targets.begin(), targets.end());
  return make_result({1}, {loss * inv}, {logits}, [ln, n, inv, tg = std::move(tg)](Node& self) {
    auto& g = gbuf(ln);
    const double g0 = self.grad[0] * inv;
    for (std::size_t i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-ln->value[i]));
      g[i] += g0 * (sig - tg[i]);
    }
  });
}

Tensor direction_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "direction_loss");
  if (pred.rank() != 2 || pred.dim(1) != 2 || pred.dim(0) < 2)
    throw DimensionError("direction_loss expects [p >= 2, 2] polylines, got " + shape_str(pred.shape()));
  constexpr double kTiny = 1e-12;
  const std::size_t edges = pred.dim(0) - 1;
  const double inv = 1.0 / static_cast<double>(edges);
  double loss = 0.0;
  for (std::size_t e = 0; e < edges; ++e) {
    const double px = pred[2 * e + 2] - pred[2 * e], py = pred[2 * e + 3] - pred[2 * e + 1];
    const double gx = target[2 * e + 2] - target[2 * e], gy = target[2 * e + 3] - target[2 * e + 1];
    const double np = std::hypot(px, py), ng = std::hypot(gx, gy);
    if (ng < kTiny) continue;
    if (np < kTiny) {
      loss += 1.0;
      continue;
    }
    loss += 1.0 - (px * gx + py * gy) / (np * ng);
  }
  auto pn = pred.node_ptr(), tn = target.node_ptr();
  return make_result({1}, {loss * inv}, {pred, target}, [pn, tn, edges, inv](Node& self) {
    const double g0 = self.grad[0] * inv;
    const auto& p = pn->value;
    const auto& t = tn->value;
    for (std::size_t e = 0; e < edges; ++e) {
      const double px = p[2 * e + 2] - p[2 * e], py = p[2 * e + 3] - p[2 * e + 1];
      const double gx = t[2 * e + 2] - t[2 * e], gy = t[2 * e + 3] - t[2 * e + 1];
      const double np = std::hypot(px, py), ng = std::hypot(gx, gy);
      if (ng < kTiny || np < kTiny) continue;
      const double cosv = (px * gx + py * gy) / (np * ng);
      // d(1 - cos)/d(edge) for each side of the pair.
      const double dpx = -(gx / (np * ng) - cosv * px / (np * np));
      const double dpy = -(gy / (np * ng) - cosv * py / (np * np));
      const double dgx = -(px / (np * ng) - cosv * gx / (ng * ng));
      const double dgy = -(py / (np * ng) - cosv * gy / (ng * ng));
      if (pn->requires_grad) {
        auto& g = gbuf(pn);
        g[2 * e + 2] += g0 * dpx;
        g[2 * e + 3] += g0 * dpy;
        g[2 * e] -= g0 * dpx;
        g[2 * e + 1] -= g0 * dpy;
      }
      if (tn->requires_grad) {
        auto& g = gbuf(tn);
        g[2 * e + 2] += g0 * dgx;
        g[2 * e + 3] += g0 * dgy;
        g[2 * e] -= g0 * dgx;
        g[2 * e + 1] -= g0 * dgy;
      }
    }
  });
}

}  // namespace invd::ad
