#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "core/parallel.hpp"

namespace avloc::ops {

namespace {

Graph& same_graph(Var a, Var b) {
  if (a.g != b.g) throw ValidationError("operands belong to different graphs");
  return *a.g;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
  int pa = a.id, pb = b.id;
  int id = g.add_node(std::move(out), {pa, pb}, [pa, pb](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(pa)) {
      Tensor& ga = gr.grad(pa);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(pb)) {
      Tensor& gb = gr.grad(pb);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i];
    }
  });
  return {&g, id};
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
  int pa = a.id, pb = b.id;
  int id = g.add_node(std::move(out), {pa, pb}, [pa, pb](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(pa)) {
      Tensor& ga = gr.grad(pa);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(pb)) {
      Tensor& gb = gr.grad(pb);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
    }
  });
  return {&g, id};
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  int pa = a.id, pb = b.id;
  int id = g.add_node(std::move(out), {pa, pb}, [pa, pb](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& va = gr.value(pa);
    const Tensor& vb = gr.value(pb);
    if (gr.requires_grad(pa)) {
      Tensor& ga = gr.grad(pa);
      for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * vb[i];
    }
    if (gr.requires_grad(pb)) {
      Tensor& gb = gr.grad(pb);
      for (std::size_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * va[i];
    }
  });
  return {&g, id};
}

Var add_scalar(Var a, double s) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s;
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
  });
  return {&g, id};
}

Var mul_scalar(Var a, double s) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, s](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
  });
  return {&g, id};
}

Var sub_from_scalar(double s, Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = s - out[i];
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] -= go[i];
  });
  return {&g, id};
}

Var sigmoid(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
  });
  return {&g, id};
}

Var tanh_act(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
  });
  return {&g, id};
}

Var exp_elem(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * y[i];
  });
  return {&g, id};
}

Var log_elem(Var a) {
  Graph& g = *a.g;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (out[i] <= 0.0) throw NumericalError("log of non-positive value");
    out[i] = std::log(out[i]);
  }
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& x = gr.value(pa);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / x[i];
  });
  return {&g, id};
}

Var sum_all(Var a) {
  Graph& g = *a.g;
  double s = 0.0;
  for (std::size_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  int pa = a.id;
  int id = g.add_node(Tensor::scalar(s), {pa}, [pa](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const double go = gr.grad(self)[0];
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go;
  });
  return {&g, id};
}

Var mean_all(Var a) {
  Graph& g = *a.g;
  const std::size_t n = a.val().numel();
  if (n == 0) throw ValidationError("mean of empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a.val()[i];
  s /= static_cast<double>(n);
  int pa = a.id;
  int id = g.add_node(Tensor::scalar(s), {pa}, [pa, n](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const double go = gr.grad(self)[0] / static_cast<double>(n);
    Tensor& ga = gr.grad(pa);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go;
  });
  return {&g, id};
}

Var sum_axis0(Var a) {
  Graph& g = *a.g;
  if (a.val().ndim() != 2) throw ValidationError("sum_axis0 expects a matrix");
  const int m = a.val().dim(0), n = a.val().dim(1);
  Tensor out({n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] += a.val().at(i, j);
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, m, n](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.at(i, j) += go[static_cast<std::size_t>(j)];
  });
  return {&g, id};
}

Var select_axis1(Var a, int k) {
  Graph& g = *a.g;
  if (a.val().ndim() != 3) throw ValidationError("select_axis1 expects (B,K,c)");
  const int B = a.val().dim(0), K = a.val().dim(1), c = a.val().dim(2);
  if (k < 0 || k >= K) throw ValidationError("select_axis1 index out of range");
  Tensor out({B, c});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < c; ++j) out.at(b, j) = a.val().at(b, k, j);
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, B, c, k](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < c; ++j) ga.at(b, k, j) += go.at(b, j);
  });
  return {&g, id};
}

Var mean_axis1(Var a) {
  Graph& g = *a.g;
  if (a.val().ndim() != 3) throw ValidationError("mean_axis1 expects (B,K,c)");
  const int B = a.val().dim(0), K = a.val().dim(1), c = a.val().dim(2);
  if (K == 0) throw ValidationError("mean over empty axis");
  Tensor out({B, c});
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < c; ++j) out.at(b, j) += a.val().at(b, k, j) / K;
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, B, K, c](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < c; ++j) ga.at(b, k, j) += go.at(b, j) / K;
  });
  return {&g, id};
}

Var slice_flatten(Var a, int b) {
  Graph& g = *a.g;
  if (a.val().ndim() != 3) throw ValidationError("slice_flatten expects (B,d1,d2)");
  const int B = a.val().dim(0), d1 = a.val().dim(1), d2 = a.val().dim(2);
  if (b < 0 || b >= B) throw ValidationError("slice_flatten batch index out of range");
  const int n = d1 * d2;
  Tensor out({n});
  const std::size_t base = static_cast<std::size_t>(b) * n;
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a.val()[base + i];
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, base, n](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (int i = 0; i < n; ++i) ga[base + i] += go[static_cast<std::size_t>(i)];
  });
  return {&g, id};
}

Var nchw_to_nhwc(Var a) {
  Graph& g = *a.g;
  if (a.val().ndim() != 4) throw ValidationError("nchw_to_nhwc expects rank 4");
  const int B = a.val().dim(0), C = a.val().dim(1), H = a.val().dim(2), W = a.val().dim(3);
  Tensor out({B, H, W, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out.at(b, y, x, c) = a.val().at(b, c, y, x);
  int pa = a.id;
  int id = g.add_node(std::move(out), {pa}, [pa, B, C, H, W](Graph& gr, int self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& go = gr.grad(self);
    Tensor& ga = gr.grad(pa);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) ga.at(b, c, y, x) += go.at(b, y, x, c);
  });
  return {&g, id};
}

Var conv2d(Var x, Var w, int stride, int pad, int threads) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  if (xv.ndim() != 4 || wv.ndim() != 4) throw ValidationError("conv2d expects rank-4 tensors");
  const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  if (wv.dim(1) != Ci) throw ValidationError("conv2d channel mismatch");
  if (stride < 1) throw ValidationError("conv2d stride must be >= 1");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ValidationError("conv2d output would be empty");

  Tensor out({B, Co, Ho, Wo});
  auto fwd_item = [&](int b) {
    for (int co = 0; co < Co; ++co) {
      double* yrow0 = out.data() + out.off(b, co, 0, 0);
      for (int ci = 0; ci < Ci; ++ci)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const double wvv = wv.at(co, ci, ky, kx);
            if (wvv == 0.0) continue;
            for (int oy = 0; oy < Ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = xv.data() + xv.off(b, ci, iy, 0);
              double* yrow = yrow0 + static_cast<std::size_t>(oy) * Wo;
              int ox0 = 0;
              while (ox0 * stride - pad + kx < 0) ++ox0;
              int ox1 = Wo;
              while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= W) --ox1;
              const double* xp = xrow + (ox0 * stride - pad + kx);
              for (int ox = ox0; ox < ox1; ++ox, xp += stride) yrow[ox] += wvv * *xp;
            }
          }
    }
  };
  parallel_for(B, threads, fwd_item);

  int px = x.id, pw = w.id;
  int id = g.add_node(
      std::move(out), {px, pw},
      [px, pw, B, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad, threads](Graph& gr, int self) {
        const Tensor& go = gr.grad(self);
        const Tensor& xv2 = gr.value(px);
        const Tensor& wv2 = gr.value(pw);
        if (gr.requires_grad(px)) {
          Tensor& gx = gr.grad(px);
          parallel_for(B, threads, [&](int b) {
            for (int co = 0; co < Co; ++co)
              for (int ci = 0; ci < Ci; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx) {
                    const double wvv = wv2.at(co, ci, ky, kx);
                    if (wvv == 0.0) continue;
                    for (int oy = 0; oy < Ho; ++oy) {
                      const int iy = oy * stride - pad + ky;
                      if (iy < 0 || iy >= H) continue;
                      const double* grow = go.data() + go.off(b, co, oy, 0);
                      double* gxrow = gx.data() + gx.off(b, ci, iy, 0);
                      int ox0 = 0;
                      while (ox0 * stride - pad + kx < 0) ++ox0;
                      int ox1 = Wo;
                      while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= W) --ox1;
                      double* gp = gxrow + (ox0 * stride - pad + kx);
                      for (int ox = ox0; ox < ox1; ++ox, gp += stride) *gp += wvv * grow[ox];
                    }
                  }
          });
        }
        if (gr.requires_grad(pw)) {
          // Per-chunk weight-gradient buffers, reduced in chunk order.
          const int T = std::min(resolve_threads(threads), B);
          const int chunk = (B + T - 1) / T;
          std::vector<Tensor> partials(static_cast<std::size_t>(T), Tensor(wv2.shape()));
          parallel_for(T, T, [&](int t) {
            Tensor& gw = partials[static_cast<std::size_t>(t)];
            const int blo = t * chunk, bhi = std::min(B, blo + chunk);
            for (int b = blo; b < bhi; ++b)
              for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < Ci; ++ci)
                  for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                      double acc = 0.0;
                      for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* grow = go.data() + go.off(b, co, oy, 0);
                        const double* xrow = xv2.data() + xv2.off(b, ci, iy, 0);
                        int ox0 = 0;
                        while (ox0 * stride - pad + kx < 0) ++ox0;
                        int ox1 = Wo;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kx >= W) --ox1;
                        const double* xp = xrow + (ox0 * stride - pad + kx);
                        for (int ox = ox0; ox < ox1; ++ox, xp += stride) acc += grow[ox] * *xp;
                      }
                      gw.at(co, ci, ky, kx) += acc;
                    }
          });
          Tensor& gw = gr.grad(pw);
          for (const Tensor& part : partials)
            for (std::size_t i = 0; i < gw.numel(); ++i) gw[i] += part[i];
        }
      });
  return {&g, id};
}

Var replicate_pad(Var x, int pad) {
  Graph& g = *x.g;
  const Tensor& xv = x.val();
  if (xv.ndim() != 4) throw ValidationError("replicate_pad expects rank 4");
  if (pad < 0) throw ValidationError("replicate_pad: negative padding");
  if (pad == 0) return x;
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({B, C, H + 2 * pad, W + 2 * pad});
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H + 2 * pad; ++y) {
        const double* src = xv.data() + xv.off(b, c, clampi(y - pad, H), 0);
        double* dst = out.data() + out.off(b, c, y, 0);
        for (int xx = 0; xx < W + 2 * pad; ++xx) dst[xx] = src[clampi(xx - pad, W)];
      }
  int px = x.id;
  int id = g.add_node(std::move(out), {px}, [px, B, C, H, W, pad](Graph& gr, int self) {
    if (!gr.requires_grad(px)) return;
    const Tensor& go = gr.grad(self);
    Tensor& gx = gr.grad(px);
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H + 2 * pad; ++y) {
          double* dst = gx.data() + gx.off(b, c, clampi(y - pad, H), 0);
          const double* src = go.data() + go.off(b, c, y, 0);
          for (int xx = 0; xx < W + 2 * pad; ++xx) dst[clampi(xx - pad, W)] += src[xx];
        }
  });
  return {&g, id};
}

Var linear(Var x, Var w) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1))
    throw ValidationError("linear: expects (B,f) x (o,f)");
  const int B = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
  Tensor out({B, o});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < o; ++j) {
      double acc = 0.0;
      for (int k = 0; k < f; ++k) acc += xv.at(b, k) * wv.at(j, k);
      out.at(b, j) = acc;
    }
  int px = x.id, pw = w.id;
  int id = g.add_node(std::move(out), {px, pw}, [px, pw, B, f, o](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& xv2 = gr.value(px);
    const Tensor& wv2 = gr.value(pw);
    if (gr.requires_grad(px)) {
      Tensor& gx = gr.grad(px);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < o; ++j)
          for (int k = 0; k < f; ++k) gx.at(b, k) += go.at(b, j) * wv2.at(j, k);
    }
    if (gr.requires_grad(pw)) {
      Tensor& gw = gr.grad(pw);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < o; ++j)
          for (int k = 0; k < f; ++k) gw.at(j, k) += go.at(b, j) * xv2.at(b, k);
    }
  });
  return {&g, id};
}

Var global_mean_nchw(Var x) {
  Graph& g = *x.g;
  const Tensor& xv = x.val();
  if (xv.ndim() != 4) throw ValidationError("global_mean_nchw expects rank 4");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      const double* row = xv.data() + xv.off(b, c, 0, 0);
      for (int i = 0; i < H * W; ++i) acc += row[i];
      out.at(b, c) = acc * inv;
    }
  int px = x.id;
  int id = g.add_node(std::move(out), {px}, [px, B, C, H, W, inv](Graph& gr, int self) {
    if (!gr.requires_grad(px)) return;
    const Tensor& go = gr.grad(self);
    Tensor& gx = gr.grad(px);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double v = go.at(b, c) * inv;
        double* row = gx.data() + gx.off(b, c, 0, 0);
        for (int i = 0; i < H * W; ++i) row[i] += v;
      }
  });
  return {&g, id};
}

Var l2_normalize_rows(Var x) {
  Graph& g = *x.g;
  const Tensor& xv = x.val();
  if (xv.ndim() != 2) throw ValidationError("l2_normalize_rows expects (B,c)");
  const int B = xv.dim(0), c = xv.dim(1);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
  Tensor out({B, c});
  for (int b = 0; b < B; ++b) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += xv.at(b, j) * xv.at(b, j);
    const double n = std::max(std::sqrt(s), kNormFloor);
    (*norms)[static_cast<std::size_t>(b)] = n;
    for (int j = 0; j < c; ++j) out.at(b, j) = xv.at(b, j) / n;
  }
  int px = x.id;
  int id = g.add_node(std::move(out), {px}, [px, B, c, norms](Graph& gr, int self) {
    if (!gr.requires_grad(px)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad(px);
    for (int b = 0; b < B; ++b) {
      const double n = (*norms)[static_cast<std::size_t>(b)];
      const bool floored = n <= kNormFloor;
      double dot = 0.0;
      if (!floored)
        for (int j = 0; j < c; ++j) dot += go.at(b, j) * y.at(b, j);
      for (int j = 0; j < c; ++j)
        gx.at(b, j) += floored ? go.at(b, j) / n : (go.at(b, j) - dot * y.at(b, j)) / n;
    }
  });
  return {&g, id};
}

Var standardize_items(Var x) {
  Graph& g = *x.g;
  const Tensor& xv = x.val();
  if (xv.ndim() < 2) throw ValidationError("standardize_items expects a batched tensor");
  const int B = xv.dim(0);
  const std::size_t n = xv.numel() / static_cast<std::size_t>(B);
  if (n == 0) throw ValidationError("standardize_items: empty items");
  auto mu = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
  auto sd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B));
  Tensor out(xv.shape());
  for (int b = 0; b < B; ++b) {
    const double* src = xv.data() + static_cast<std::size_t>(b) * n;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += src[i];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - m) * (src[i] - m);
    const double s = std::max(std::sqrt(var / static_cast<double>(n)), 1e-6);
    (*mu)[static_cast<std::size_t>(b)] = m;
    (*sd)[static_cast<std::size_t>(b)] = s;
    double* dst = out.data() + static_cast<std::size_t>(b) * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - m) / s;
  }
  int px = x.id;
  int id = g.add_node(std::move(out), {px}, [px, B, n, mu, sd](Graph& gr, int self) {
    if (!gr.requires_grad(px)) return;
    const Tensor& go = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad(px);
    for (int b = 0; b < B; ++b) {
      const double s = (*sd)[static_cast<std::size_t>(b)];
      const double* gph = go.data() + static_cast<std::size_t>(b) * n;
      const double* yph = y.data() + static_cast<std::size_t>(b) * n;
      double* dst = gx.data() + static_cast<std::size_t>(b) * n;
      double gbar = 0.0, gy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gbar += gph[i];
        gy += gph[i] * yph[i];
      }
      gbar /= static_cast<double>(n);
      gy /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) dst[i] += (gph[i] - gbar - yph[i] * gy) / s;
    }
  });
  return {&g, id};
}

namespace {

// Shared cosine kernel: s = <f,a> / (max(|f|,eps) * max(|a|,eps)).
struct CosPair {
  double s, nf, na;
};

inline CosPair cos_of(const double* f, const double* a, int c) {
  double dot = 0.0, sf = 0.0, sa = 0.0;
  for (int j = 0; j < c; ++j) {
    dot += f[j] * a[j];
    sf += f[j] * f[j];
    sa += a[j] * a[j];
  }
  const double nf = std::max(std::sqrt(sf), kNormFloor);
  const double na = std::max(std::sqrt(sa), kNormFloor);
  return {dot / (nf * na), nf, na};
}

// d s / d f = a/(nf*na) - s*f/nf^2 (zero second term when the norm is floored);
// symmetric for a.
inline void cos_backward(double go, const double* f, const double* a, int c, const CosPair& p,
                         double* gf, double* ga) {
  const bool ffl = p.nf <= kNormFloor;
  const bool afl = p.na <= kNormFloor;
  const double inv = 1.0 / (p.nf * p.na);
  for (int j = 0; j < c; ++j) {
    if (gf) gf[j] += go * (a[j] * inv - (ffl ? 0.0 : p.s * f[j] / (p.nf * p.nf)));
    if (ga) ga[j] += go * (f[j] * inv - (afl ? 0.0 : p.s * a[j] / (p.na * p.na)));
  }
}

}  // namespace

Var cosine_map(Var feat, Var q) {
  Graph& g = same_graph(feat, q);
  const Tensor& fv = feat.val();
  const Tensor& qv = q.val();
  if (fv.ndim() != 4 || qv.ndim() != 2)
    throw ValidationError("cosine_map expects (B,d1,d2,c) and (B,c)");
  if (fv.dim(0) != qv.dim(0) || fv.dim(3) != qv.dim(1))
    throw ValidationError("cosine_map: batch/channel mismatch " + fv.shape_str() + " vs " +
                          qv.shape_str());
  const int B = fv.dim(0), d1 = fv.dim(1), d2 = fv.dim(2), c = fv.dim(3);
  Tensor out({B, d1, d2});
  for (int b = 0; b < B; ++b) {
    const double* a = qv.data() + qv.off(b, 0);
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j)
        out.at(b, i, j) = cos_of(fv.data() + fv.off(b, i, j, 0), a, c).s;
  }
  int pf = feat.id, pq = q.id;
  int id = g.add_node(std::move(out), {pf, pq}, [pf, pq, B, d1, d2, c](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& fv2 = gr.value(pf);
    const Tensor& qv2 = gr.value(pq);
    const bool wf = gr.requires_grad(pf);
    const bool wq = gr.requires_grad(pq);
    if (!wf && !wq) return;
    Tensor* gf = wf ? &gr.grad(pf) : nullptr;
    Tensor* gq = wq ? &gr.grad(pq) : nullptr;
    for (int b = 0; b < B; ++b) {
      const double* a = qv2.data() + qv2.off(b, 0);
      double* ga = gq ? &(*gq)[gq->off(b, 0)] : nullptr;
      for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d2; ++j) {
          const double* f = fv2.data() + fv2.off(b, i, j, 0);
          const CosPair p = cos_of(f, a, c);
          cos_backward(go.at(b, i, j), f, a, c, p, gf ? &(*gf)[gf->off(b, i, j, 0)] : nullptr,
                       ga);
        }
    }
  });
  return {&g, id};
}

Var cosine_rows(Var x, Var y) {
  Graph& g = same_graph(x, y);
  const Tensor& xv = x.val();
  const Tensor& yv = y.val();
  if (xv.ndim() != 2 || !xv.same_shape(yv))
    throw ValidationError("cosine_rows expects two (B,c) tensors of equal shape");
  const int B = xv.dim(0), c = xv.dim(1);
  Tensor out({B});
  for (int b = 0; b < B; ++b)
    out[static_cast<std::size_t>(b)] = cos_of(xv.data() + xv.off(b, 0), yv.data() + yv.off(b, 0), c).s;
  int px = x.id, py = y.id;
  int id = g.add_node(std::move(out), {px, py}, [px, py, B, c](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& xv2 = gr.value(px);
    const Tensor& yv2 = gr.value(py);
    const bool wx = gr.requires_grad(px);
    const bool wy = gr.requires_grad(py);
    if (!wx && !wy) return;
    Tensor* gx = wx ? &gr.grad(px) : nullptr;
    Tensor* gy = wy ? &gr.grad(py) : nullptr;
    for (int b = 0; b < B; ++b) {
      const double* f = xv2.data() + xv2.off(b, 0);
      const double* a = yv2.data() + yv2.off(b, 0);
      const CosPair p = cos_of(f, a, c);
      cos_backward(go[static_cast<std::size_t>(b)], f, a, c, p,
                   gx ? &(*gx)[gx->off(b, 0)] : nullptr, gy ? &(*gy)[gy->off(b, 0)] : nullptr);
    }
  });
  return {&g, id};
}

Var cosine_cross(Var x, Var y) {
  Graph& g = same_graph(x, y);
  const Tensor& xv = x.val();
  const Tensor& yv = y.val();
  if (xv.ndim() != 2 || yv.ndim() != 2 || xv.dim(1) != yv.dim(1))
    throw ValidationError("cosine_cross expects (B,c) x (B2,c)");
  const int Bx = xv.dim(0), By = yv.dim(0), c = xv.dim(1);
  Tensor out({Bx, By});
  for (int i = 0; i < Bx; ++i)
    for (int j = 0; j < By; ++j)
      out.at(i, j) = cos_of(xv.data() + xv.off(i, 0), yv.data() + yv.off(j, 0), c).s;
  int px = x.id, py = y.id;
  int id = g.add_node(std::move(out), {px, py}, [px, py, Bx, By, c](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& xv2 = gr.value(px);
    const Tensor& yv2 = gr.value(py);
    const bool wx = gr.requires_grad(px);
    const bool wy = gr.requires_grad(py);
    if (!wx && !wy) return;
    Tensor* gx = wx ? &gr.grad(px) : nullptr;
    Tensor* gy = wy ? &gr.grad(py) : nullptr;
    for (int i = 0; i < Bx; ++i)
      for (int j = 0; j < By; ++j) {
        const double* f = xv2.data() + xv2.off(i, 0);
        const double* a = yv2.data() + yv2.off(j, 0);
        const CosPair p = cos_of(f, a, c);
        cos_backward(go.at(i, j), f, a, c, p, gx ? &(*gx)[gx->off(i, 0)] : nullptr,
                     gy ? &(*gy)[gy->off(j, 0)] : nullptr);
      }
  });
  return {&g, id};
}

Var scale_by_map(Var feat, Var m) {
  Graph& g = same_graph(feat, m);
  const Tensor& fv = feat.val();
  const Tensor& mv = m.val();
  if (fv.ndim() != 4 || mv.ndim() != 3 || fv.dim(0) != mv.dim(0) || fv.dim(1) != mv.dim(1) ||
      fv.dim(2) != mv.dim(2))
    throw ValidationError("scale_by_map: spatial shape mismatch");
  const int B = fv.dim(0), d1 = fv.dim(1), d2 = fv.dim(2), c = fv.dim(3);
  Tensor out(fv.shape());
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j) {
        const double s = mv.at(b, i, j);
        for (int k = 0; k < c; ++k) out.at(b, i, j, k) = fv.at(b, i, j, k) * s;
      }
  int pf = feat.id, pm = m.id;
  int id = g.add_node(std::move(out), {pf, pm}, [pf, pm, B, d1, d2, c](Graph& gr, int self) {
    const Tensor& go = gr.grad(self);
    const Tensor& fv2 = gr.value(pf);
    const Tensor& mv2 = gr.value(pm);
    if (gr.requires_grad(pf)) {
      Tensor& gf = gr.grad(pf);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < d1; ++i)
          for (int j = 0; j < d2; ++j) {
            const double s = mv2.at(b, i, j);
            for (int k = 0; k < c; ++k) gf.at(b, i, j, k) += go.at(b, i, j, k) * s;
          }
    }
    if (gr.requires_grad(pm)) {
      Tensor& gm = gr.grad(pm);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < d1; ++i)
          for (int j = 0; j < d2; ++j) {
            double acc = 0.0;
            for (int k = 0; k < c; ++k) acc += go.at(b, i, j, k) * fv2.at(b, i, j, k);
            gm.at(b, i, j) += acc;
          }
    }
  });
  return {&g, id};
}

Var spatial_mean(Var feat) {
  Graph& g = *feat.g;
  const Tensor& fv = feat.val();
  if (fv.ndim() != 4) throw ValidationError("spatial_mean expects (B,d1,d2,c)");
  const int B = fv.dim(0), d1 = fv.dim(1), d2 = fv.dim(2), c = fv.dim(3);
  const double inv = 1.0 / (static_cast<double>(d1) * d2);
  Tensor out({B, c});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d2; ++j)
        for (int k = 0; k < c; ++k) out.at(b, k) += fv.at(b, i, j, k) * inv;
  int pf = feat.id;
  int id = g.add_node(std::move(out), {pf}, [pf, B, d1, d2, c, inv](Graph& gr, int self) {
    if (!gr.requires_grad(pf)) return;
    const Tensor& go = gr.grad(self);
    Tensor& gf = gr.grad(pf);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d2; ++j)
          for (int k = 0; k < c; ++k) gf.at(b, i, j, k) += go.at(b, k) * inv;
  });
  return {&g, id};
}

}  // namespace avloc::ops
