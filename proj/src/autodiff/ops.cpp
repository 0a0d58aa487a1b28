#include "retina/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "retina/common/error.hpp"

namespace retina::ad {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
  }
}

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
  return a.tape();
}

// Elements per channel slice for NCHW / NC layouts.
std::size_t inner_extent(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return inner;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tape& tape = same_tape(a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.needs_grad(in)) continue;
      auto gi = t.grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tape& tape = same_tape(a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tape& tape = same_tape(a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto av = t.value_of(ia).data();
    auto bv = t.value_of(ib).data();
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, factor](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (double& v : out.data()) v += offset;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto x = t.value_of(ia).data();
    auto ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto y = t.value_of(self).data();
    auto ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, lo, hi](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto x = t.value_of(ia).data();
    auto ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > lo && x[i] < hi) ga[i] += g[i];
    }
  });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total), {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    for (double& gi : t.grad_of(ia)) gi += g;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(total / static_cast<double>(n)), {ia},
                         [ia, n](Tape& t, std::size_t self) {
                           const double g = t.grad_of(self)[0] / static_cast<double>(n);
                           for (double& gi : t.grad_of(ia)) gi += g;
                         });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " . " +
                         shape_string(b.shape()));
  }
  Tape& tape = same_tape(a, b);
  Tensor out(Shape{m, n});
  auto av = a.value().data();
  auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += aip * bv[p * n + j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto av = t.value_of(ia).data();
    auto bv = t.value_of(ib).data();
    if (t.needs_grad(ia)) {
      auto ga = t.grad_of(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dOptions& opt) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("conv2d: expected NCHW input and OIKK kernel, got " + shape_string(input) +
                         " and " + shape_string(kernel));
  }
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d: input has " + std::to_string(input[1]) +
                         " channels but kernel expects " + std::to_string(kernel[1]));
  }
  if (opt.stride_h == 0 || opt.stride_w == 0) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t padded_h = input[2] + 2 * opt.pad_h;
  const std::size_t padded_w = input[3] + 2 * opt.pad_w;
  if (padded_h < kernel[2] || padded_w < kernel[3]) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel) + " larger than padded input " +
                         shape_string(input));
  }
  return {input[0], kernel[0], (padded_h - kernel[2]) / opt.stride_h + 1,
          (padded_w - kernel[3]) / opt.stride_w + 1};
}

namespace {

struct ConvGeometry {
  std::size_t n, ci, h, w, co, kh, kw, oh, ow, sh, sw, ph, pw;
};

// Visits every (output pixel, input pixel, kernel tap) triple of one
// (image, out-channel, in-channel) plane; fn(out_index, in_index, kernel_index).
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  for (std::size_t ky = 0; ky < g.kh; ++ky) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) -
                                static_cast<std::ptrdiff_t>(g.ph);
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        // Valid ox satisfy 0 <= ox*sw + kx - pw < w.
        std::size_t ox_begin = 0;
        if (kx < g.pw) ox_begin = (g.pw - kx + g.sw - 1) / g.sw;
        std::size_t ox_end = g.ow;
        if (g.w + g.pw > kx) {
          ox_end = std::min(g.ow, (g.w + g.pw - kx - 1) / g.sw + 1);
        } else {
          ox_end = 0;
        }
        const std::size_t krow = ky * g.kw + kx;
        for (std::size_t ox = ox_begin; ox < ox_end; ++ox) {
          const std::size_t ix = ox * g.sw + kx - g.pw;
          fn(oy * g.ow + ox, static_cast<std::size_t>(iy) * g.w + ix, krow);
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const Conv2dOptions& opt) {
  const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), opt);
  Tape& tape = same_tape(input, kernel);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  const ConvGeometry geo{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3],
                         out_shape[2], out_shape[3], opt.stride_h, opt.stride_w, opt.pad_h, opt.pad_w};
  Tensor out(out_shape);
  auto x = input.value().data();
  auto k = kernel.value().data();
  auto o = out.data();
  const std::size_t in_plane = geo.h * geo.w, out_plane = geo.oh * geo.ow, k_plane = geo.kh * geo.kw;
  for (std::size_t n = 0; n < geo.n; ++n)
    for (std::size_t oc = 0; oc < geo.co; ++oc) {
      double* op = o.data() + (n * geo.co + oc) * out_plane;
      for (std::size_t ic = 0; ic < geo.ci; ++ic) {
        const double* xp = x.data() + (n * geo.ci + ic) * in_plane;
        const double* kp = k.data() + (oc * geo.ci + ic) * k_plane;
        for_each_tap(geo, [&](std::size_t oi, std::size_t ii, std::size_t ki) { op[oi] += kp[ki] * xp[ii]; });
      }
    }
  const std::size_t ix = input.id(), ik = kernel.id();
  return tape.record(std::move(out), {ix, ik}, [ix, ik, geo](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto x = t.value_of(ix).data();
    auto k = t.value_of(ik).data();
    const std::size_t in_plane = geo.h * geo.w, out_plane = geo.oh * geo.ow, k_plane = geo.kh * geo.kw;
    const bool want_x = t.needs_grad(ix), want_k = t.needs_grad(ik);
    std::span<double> gx, gk;
    if (want_x) gx = t.grad_of(ix);
    if (want_k) gk = t.grad_of(ik);
    for (std::size_t n = 0; n < geo.n; ++n)
      for (std::size_t oc = 0; oc < geo.co; ++oc) {
        const double* gp = g.data() + (n * geo.co + oc) * out_plane;
        for (std::size_t ic = 0; ic < geo.ci; ++ic) {
          const std::size_t xoff = (n * geo.ci + ic) * in_plane;
          const std::size_t koff = (oc * geo.ci + ic) * k_plane;
          if (want_x) {
            double* gxp = gx.data() + xoff;
            const double* kp = k.data() + koff;
            for_each_tap(geo, [&](std::size_t oi, std::size_t ii, std::size_t ki) { gxp[ii] += kp[ki] * gp[oi]; });
          }
          if (want_k) {
            double* gkp = gk.data() + koff;
            const double* xp = x.data() + xoff;
            for_each_tap(geo, [&](std::size_t oi, std::size_t ii, std::size_t ki) { gkp[ki] += gp[oi] * xp[ii]; });
          }
        }
      }
  });
}

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  return conv2d(input, kernel, Conv2dOptions{stride, stride, padding, padding});
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Shape& s = x.shape();
  if (s.size() < 2 || bias.value().rank() != 1 || bias.shape()[0] != s[1]) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bias.shape()) +
                         " does not match channels of " + shape_string(s));
  }
  Tape& tape = same_tape(x, bias);
  const std::size_t n = s[0], c = s[1], inner = inner_extent(s);
  Tensor out = x.value();
  auto o = out.data();
  auto b = bias.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < inner; ++j) o[(i * c + ch) * inner + j] += b[ch];
  const std::size_t ix = x.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, ib}, [ix, ib, n, c, inner](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    if (t.needs_grad(ix)) {
      auto gx = t.grad_of(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_of(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t j = 0; j < inner; ++j) acc += g[(i * c + ch) * inner + j];
          gb[ch] += acc;
        }
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no operands");
  const Shape& first = parts[0].shape();
  if (first.size() != 4) throw DimensionError("concat_channels: expected NCHW, got " + shape_string(first));
  std::size_t channels = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw DimensionError("concat_channels: " + shape_string(s) + " incompatible with " +
                           shape_string(first));
    }
    if (&p.tape() != &parts[0].tape()) throw std::logic_error("operands recorded on different tapes");
    channels += s[1];
    ids.push_back(p.id());
    widths.push_back(s[1]);
  }
  const std::size_t n = first[0], plane = first[2] * first[3];
  Tensor out(Shape{n, channels, first[2], first[3]});
  auto o = out.data();
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto v = p.value().data();
    const std::size_t c = p.shape()[1];
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * c * plane), c * plane,
                  o.begin() + static_cast<std::ptrdiff_t>((i * channels + offset) * plane));
    offset += c;
  }
  return parts[0].tape().record(
      std::move(out), ids, [ids, widths, n, channels, plane](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t c = widths[p];
          if (t.needs_grad(ids[p])) {
            auto gp = t.grad_of(ids[p]);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c * plane; ++j)
                gp[i * c * plane + j] += g[(i * channels + offset) * plane + j];
          }
          offset += c;
        }
      });
}

Var avg_pool2d(const Var& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require_rank("avg_pool2d", x, 4);
  if (kernel == 0 || stride == 0) throw ConfigError("avg_pool2d: kernel and stride must be >= 1");
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
    throw DimensionError("avg_pool2d: window larger than padded input " + shape_string(s));
  }
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;
  const double inv_area = 1.0 / static_cast<double>(kernel * kernel);
  Tensor out(Shape{n, c, oh, ow});
  auto o = out.data();
  auto v = x.value().data();
  auto visit = [=](auto&& fn) {
    for (std::size_t plane = 0; plane < n * c; ++plane)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              fn((plane * oh + oy) * ow + ox,
                 (plane * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
            }
          }
  };
  visit([&](std::size_t oi, std::size_t ii) { o[oi] += inv_area * v[ii]; });
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id, visit, inv_area](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(id);
    visit([&](std::size_t oi, std::size_t ii) { gx[ii] += inv_area * g[oi]; });
  });
}

Var global_avg_pool(const Var& x) {
  require_rank("global_avg_pool", x, 4);
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  Tensor out(Shape{n, c});
  auto v = x.value().data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += v[i * plane + j];
    out[i] = acc / static_cast<double>(plane);
  }
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id, n, c, plane](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(id);
    for (std::size_t i = 0; i < n * c; ++i) {
      const double gi = g[i] / static_cast<double>(plane);
      for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += gi;
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var softmax_rows(const Var& x) {
  require_rank("softmax_rows", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = x.value();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = o.data() + r * cols;
    const double peak = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += (row[j] = std::exp(row[j] - peak));
    for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
  }
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id, rows, cols](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto y = t.value_of(self).data();
    auto gx = t.grad_of(id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Var select_column(const Var& x, std::size_t column) {
  require_rank("select_column", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (column >= cols) throw DimensionError("select_column: column out of range");
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * cols + column];
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id, rows, cols, column](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(id);
    for (std::size_t r = 0; r < rows; ++r) gx[r * cols + column] += g[r];
  });
}

Var scale_channels(const Var& x, const Var& weights) {
  require_rank("scale_channels", x, 4);
  const Shape& s = x.shape();
  if (weights.value().rank() != 1 || weights.shape()[0] != s[1]) {
    throw DimensionError("scale_channels: weights " + shape_string(weights.shape()) +
                         " do not match channels of " + shape_string(s));
  }
  Tape& tape = same_tape(x, weights);
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  Tensor out = x.value();
  auto o = out.data();
  auto w = weights.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < plane; ++j) o[(i * c + ch) * plane + j] *= w[ch];
  const std::size_t ix = x.id(), iw = weights.id();
  return tape.record(std::move(out), {ix, iw}, [ix, iw, n, c, plane](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto xv = t.value_of(ix).data();
    auto wv = t.value_of(iw).data();
    const bool want_x = t.needs_grad(ix), want_w = t.needs_grad(iw);
    std::span<double> gx, gw;
    if (want_x) gx = t.grad_of(ix);
    if (want_w) gw = t.grad_of(iw);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) {
          const std::size_t k = (i * c + ch) * plane + j;
          if (want_x) gx[k] += g[k] * wv[ch];
          acc += g[k] * xv[k];
        }
        if (want_w) gw[ch] += acc;
      }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, Mode mode,
               double momentum, double epsilon) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 4) {
    throw DimensionError("batch_norm: expected N x C or NCHW input, got " + shape_string(s));
  }
  const std::size_t n = s[0], c = s[1], inner = inner_extent(s);
  for (const Var* p : {&gamma, &beta}) {
    if (p->value().rank() != 1 || p->shape()[0] != c) {
      throw DimensionError("batch_norm: affine parameter " + shape_string(p->shape()) +
                           " does not match " + std::to_string(c) + " channels");
    }
  }
  if (stats.running_mean.size() != c || stats.running_var.size() != c) {
    throw DimensionError("batch_norm: running statistics do not match channel count");
  }
  Tape& tape = same_tape(x, gamma);
  const std::size_t count = n * inner;
  auto xv = x.value().data();
  auto gv = gamma.value().data();
  auto bv = beta.value().data();

  std::vector<double> mu(c), inv_std(c);
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < inner; ++j) acc += xv[(i * c + ch) * inner + j];
      mu[ch] = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < inner; ++j) {
          const double d = xv[(i * c + ch) * inner + j] - mu[ch];
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * mu[ch];
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + epsilon);
    }
  }

  Tensor xhat(s);
  Tensor out(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t k = (i * c + ch) * inner + j;
        xhat[k] = (xv[k] - mu[ch]) * inv_std[ch];
        out[k] = gv[ch] * xhat[k] + bv[ch];
      }

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool train = mode == Mode::train;
  return tape.record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, c, inner, count, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto gv = t.value_of(ig).data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t k = (i * c + ch) * inner + j;
              sum_g += g[k];
              sum_gx += g[k] * xhat[k];
            }
          if (t.needs_grad(ig)) t.grad_of(ig)[ch] += sum_gx;
          if (t.needs_grad(ib)) t.grad_of(ib)[ch] += sum_g;
          if (!t.needs_grad(ix)) continue;
          auto gx = t.grad_of(ix);
          const double scale = gv[ch] * inv_std[ch];
          const double m = static_cast<double>(count);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < inner; ++j) {
              const std::size_t k = (i * c + ch) * inner + j;
              if (train) {
                gx[k] += scale * (g[k] - sum_g / m - xhat[k] * sum_gx / m);
              } else {
                gx[k] += scale * g[k];
              }
            }
        }
      });
}

Var dropout(const Var& x, double rate, std::uint64_t seed, Mode mode,
            std::span<const std::uint64_t> sample_keys) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const Shape& s = x.shape();
  const std::size_t rows = s.empty() ? 1 : s[0];
  if (!sample_keys.empty() && sample_keys.size() != rows) {
    throw DimensionError("dropout: " + std::to_string(sample_keys.size()) + " sample keys for " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t per_row = x.value().size() / rows;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(derive_seed(seed, sample_keys.empty() ? r : sample_keys[r]));
    for (std::size_t j = 0; j < per_row; ++j) mask[r * per_row + j] = rng.uniform() < rate ? 0.0 : keep_scale;
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
  const std::size_t id = x.id();
  return x.tape().record(std::move(out), {id}, [id, mask = std::move(mask)](Tape& t, std::size_t self) {
    auto g = t.grad_of(self);
    auto gx = t.grad_of(id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& targets) {
  require_rank("softmax_cross_entropy", logits, 2);
  if (targets.shape() != logits.shape()) {
    throw DimensionError("softmax_cross_entropy: targets " + shape_string(targets.shape()) +
                         " vs logits " + shape_string(logits.shape()));
  }
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  auto z = logits.value().data();
  Tensor probs(logits.shape());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.data() + r * cols;
    const double peak = *std::max_element(zr, zr + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += std::exp(zr[j] - peak);
    const double log_total = std::log(total) + peak;
    double loss = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double log_p = zr[j] - log_total;
      probs[r * cols + j] = std::exp(log_p);
      loss -= targets[r * cols + j] * log_p;
    }
    out[r] = loss;
  }
  const std::size_t id = logits.id();
  return logits.tape().record(
      std::move(out), {id},
      [id, rows, cols, probs = std::move(probs), targets](Tape& t, std::size_t self) {
        auto g = t.grad_of(self);
        auto gz = t.grad_of(id);
        for (std::size_t r = 0; r < rows; ++r) {
          double mass = 0.0;
          for (std::size_t j = 0; j < cols; ++j) mass += targets[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t k = r * cols + j;
            gz[k] += g[r] * (probs[k] * mass - targets[k]);
          }
        }
      });
}

Var weighted_mean(const Var& values, std::span<const double> weights) {
  require_rank("weighted_mean", values, 1);
  if (values.shape()[0] != weights.size()) {
    throw DimensionError("weighted_mean: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(values.shape()[0]) + " values");
  }
  double total_weight = 0.0;
  for (double w : weights) total_weight += w;
  if (total_weight == 0.0) throw ConfigError("weighted_mean: weights sum to zero");
  double acc = 0.0;
  auto v = values.value().data();
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * v[i];
  const std::size_t id = values.id();
  std::vector<double> w(weights.begin(), weights.end());
  return values.tape().record(Tensor::scalar(acc / total_weight), {id},
                              [id, w = std::move(w), total_weight](Tape& t, std::size_t self) {
                                const double g = t.grad_of(self)[0];
                                auto gv = t.grad_of(id);
                                for (std::size_t i = 0; i < w.size(); ++i) gv[i] += g * w[i] / total_weight;
                              });
}

}  // namespace retina::ad
