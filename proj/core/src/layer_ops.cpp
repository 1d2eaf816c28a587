#include "layer_ops.hpp"

#include <algorithm>
#include <cmath>

#include "nncov/errors.hpp"

namespace nncov::detail {
namespace {

Tensor dense_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x) {
  Tensor out({spec.out_units});
  const double* wp = w.data().data();
  const double* xp = x.data().data();
  for (std::size_t o = 0; o < spec.out_units; ++o) {
    const double* row = wp + o * spec.in_units;
    double acc = b[o];
    for (std::size_t i = 0; i < spec.in_units; ++i) acc += row[i] * xp[i];
    out[o] = acc;
  }
  return out;
}

Tensor conv_forward(const LayerSpec& spec, const Tensor& w, const Tensor& b, const Tensor& x,
                    const Shape& out_shape) {
  Tensor out(out_shape);
  const std::size_t in_h = x.shape()[1], in_w = x.shape()[2];
  const std::size_t out_h = out_shape[1], out_w = out_shape[2];
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w, stride = spec.stride;
  double* op = out.data().data();
  const double* xp = x.data().data();
  const double* wp = w.data().data();
  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    double* plane = op + oc * out_h * out_w;
    std::fill(plane, plane + out_h * out_w, b[oc]);
    for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
      const double* in_plane = xp + ic * in_h * in_w;
      const double* kernel = wp + (oc * spec.in_channels + ic) * kh * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double weight = kernel[ky * kw + kx];
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            double* out_row = plane + oy * out_w;
            const double* in_row = in_plane + (oy * stride + ky) * in_w + kx;
            if (stride == 1) {
              for (std::size_t ox = 0; ox < out_w; ++ox) out_row[ox] += weight * in_row[ox];
            } else {
              for (std::size_t ox = 0; ox < out_w; ++ox) out_row[ox] += weight * in_row[ox * stride];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor pool_forward(const LayerSpec& spec, const Tensor& x, const Shape& out_shape) {
  Tensor out(out_shape);
  const std::size_t channels = x.shape()[0], in_h = x.shape()[1], in_w = x.shape()[2];
  const std::size_t out_h = out_shape[1], out_w = out_shape[2];
  for (std::size_t c = 0; c < channels; ++c) {
    const double* in_plane = x.data().data() + c * in_h * in_w;
    double* out_plane = out.data().data() + c * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double* base = in_plane + oy * spec.pool_stride * in_w + ox * spec.pool_stride;
        double best = base[0];
        for (std::size_t dy = 0; dy < spec.window; ++dy) {
          for (std::size_t dx = 0; dx < spec.window; ++dx) best = std::max(best, base[dy * in_w + dx]);
        }
        out_plane[oy * out_w + ox] = best;
      }
    }
  }
  return out;
}

}  // namespace

Tensor layer_forward(const Network& net, std::size_t index, const Tensor& input) {
  const LayerSpec& spec = net.layers()[index];
  const Shape& out_shape = net.output_shape(index);
  switch (spec.kind) {
    case LayerKind::kDense:
      return dense_forward(spec, net.param(spec.weight_name), net.param(spec.bias_name), input);
    case LayerKind::kConv2D:
      return conv_forward(spec, net.param(spec.weight_name), net.param(spec.bias_name), input,
                          out_shape);
    case LayerKind::kReLU: {
      Tensor out = input;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case LayerKind::kMaxPool2D:
      return pool_forward(spec, input, out_shape);
    case LayerKind::kFlatten:
      return input.reshaped(out_shape);
    case LayerKind::kSoftmax:
      return Tensor(out_shape, softmax(input.data()));
  }
  throw ShapeError("unknown layer kind");
}

Tensor layer_backward(const Network& net, std::size_t index, const Tensor& input,
                      const Tensor& output, const Tensor& grad_output,
                      std::map<std::string, Tensor>* param_grads, bool need_input_grad) {
  const LayerSpec& spec = net.layers()[index];
  const Shape& in_shape = input.shape();
  switch (spec.kind) {
    case LayerKind::kDense: {
      const double* wp = net.param(spec.weight_name).data().data();
      const double* g = grad_output.data().data();
      if (param_grads) {
        double* gw = param_grads->at(spec.weight_name).data().data();
        double* gb = param_grads->at(spec.bias_name).data().data();
        const double* xp = input.data().data();
        for (std::size_t o = 0; o < spec.out_units; ++o) {
          const double go = g[o];
          gb[o] += go;
          if (go == 0.0) continue;
          double* row = gw + o * spec.in_units;
          for (std::size_t i = 0; i < spec.in_units; ++i) row[i] += go * xp[i];
        }
      }
      if (!need_input_grad) return {};
      Tensor gin(in_shape);
      double* gi = gin.data().data();
      for (std::size_t o = 0; o < spec.out_units; ++o) {
        const double go = g[o];
        if (go == 0.0) continue;
        const double* row = wp + o * spec.in_units;
        for (std::size_t i = 0; i < spec.in_units; ++i) gi[i] += go * row[i];
      }
      return gin;
    }
    case LayerKind::kConv2D: {
      const std::size_t in_h = in_shape[1], in_w = in_shape[2];
      const std::size_t out_h = output.shape()[1], out_w = output.shape()[2];
      const std::size_t kh = spec.kernel_h, kw = spec.kernel_w, stride = spec.stride;
      const double* wp = net.param(spec.weight_name).data().data();
      const double* g = grad_output.data().data();
      const double* xp = input.data().data();
      Tensor gin;
      double* gi = nullptr;
      if (need_input_grad) {
        gin = Tensor(in_shape);
        gi = gin.data().data();
      }
      double* gw = param_grads ? param_grads->at(spec.weight_name).data().data() : nullptr;
      double* gb = param_grads ? param_grads->at(spec.bias_name).data().data() : nullptr;
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const double* g_plane = g + oc * out_h * out_w;
        if (gb) {
          double total = 0.0;
          for (std::size_t k = 0; k < out_h * out_w; ++k) total += g_plane[k];
          gb[oc] += total;
        }
        for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
          const std::size_t kernel_offset = (oc * spec.in_channels + ic) * kh * kw;
          const double* in_plane = xp + ic * in_h * in_w;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const double weight = wp[kernel_offset + ky * kw + kx];
              double wgrad = 0.0;
              for (std::size_t oy = 0; oy < out_h; ++oy) {
                const double* g_row = g_plane + oy * out_w;
                const std::size_t in_offset = (oy * stride + ky) * in_w + kx;
                if (gi) {
                  double* gi_row = gi + ic * in_h * in_w + in_offset;
                  for (std::size_t ox = 0; ox < out_w; ++ox) gi_row[ox * stride] += weight * g_row[ox];
                }
                if (gw) {
                  const double* in_row = in_plane + in_offset;
                  for (std::size_t ox = 0; ox < out_w; ++ox) wgrad += g_row[ox] * in_row[ox * stride];
                }
              }
              if (gw) gw[kernel_offset + ky * kw + kx] += wgrad;
            }
          }
        }
      }
      return gin;
    }
    case LayerKind::kReLU: {
      if (!need_input_grad) return {};
      Tensor gin = grad_output;
      const double* xp = input.data().data();
      double* gi = gin.data().data();
      // The subgradient at exactly zero is zero.
      for (std::size_t i = 0; i < gin.size(); ++i) {
        if (!(xp[i] > 0.0)) gi[i] = 0.0;
      }
      return gin;
    }
    case LayerKind::kMaxPool2D: {
      if (!need_input_grad) return {};
      Tensor gin(in_shape);
      const std::size_t channels = in_shape[0], in_h = in_shape[1], in_w = in_shape[2];
      const std::size_t out_h = output.shape()[1], out_w = output.shape()[2];
      for (std::size_t c = 0; c < channels; ++c) {
        const double* in_plane = input.data().data() + c * in_h * in_w;
        double* gi_plane = gin.data().data() + c * in_h * in_w;
        const double* g_plane = grad_output.data().data() + c * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::size_t base = oy * spec.pool_stride * in_w + ox * spec.pool_stride;
            // Route to the first maximal element in row-major order.
            std::size_t best = base;
            for (std::size_t dy = 0; dy < spec.window; ++dy) {
              for (std::size_t dx = 0; dx < spec.window; ++dx) {
                const std::size_t at = base + dy * in_w + dx;
                if (in_plane[at] > in_plane[best]) best = at;
              }
            }
            gi_plane[best] += g_plane[oy * out_w + ox];
          }
        }
      }
      return gin;
    }
    case LayerKind::kFlatten:
      if (!need_input_grad) return {};
      return grad_output.reshaped(in_shape);
    case LayerKind::kSoftmax: {
      if (!need_input_grad) return {};
      const double* p = output.data().data();
      const double* g = grad_output.data().data();
      double dot = 0.0;
      for (std::size_t k = 0; k < output.size(); ++k) dot += g[k] * p[k];
      Tensor gin(in_shape);
      for (std::size_t k = 0; k < output.size(); ++k) gin[k] = p[k] * (g[k] - dot);
      return gin;
    }
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace nncov::detail
