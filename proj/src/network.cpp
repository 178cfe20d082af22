#include "tapid/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tapid/errors.hpp"
#include "tapid/random.hpp"
#include "tapid/simd/kernels.hpp"

namespace tapid {

// ---------------------------------------------------------------------------
// NetworkSpec

NetworkSpec NetworkSpec::standard(int depth, std::size_t embedding_width,
                                  std::size_t num_classes, double dropout_rate) {
  int repeat = 0;
  switch (depth) {
    case 6: repeat = 1; break;
    case 9: repeat = 2; break;
    case 12: repeat = 3; break;
    default: throw InvalidInput("depth must be 6, 9 or 12");
  }
  NetworkSpec spec;
  spec.depth_variant = depth;
  spec.embedding_width = embedding_width;
  spec.num_classes = num_classes;
  spec.dropout_rate = dropout_rate;
  for (std::size_t filters : {32u, 64u, 128u}) {
    for (int r = 0; r < repeat; ++r) spec.convs.push_back({filters, r == repeat - 1});
  }
  spec.validate();
  return spec;
}

void NetworkSpec::validate() const {
  if (input_height == 0 || input_width == 0) throw InvalidInput("network: empty input");
  if (embedding_width == 0) throw InvalidInput("network: embedding width must be positive");
  if (num_classes < 1) throw InvalidInput("network: num_classes must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidInput("network: dropout rate must be in [0, 1)");
  }
  for (const auto& c : convs) {
    if (c.filters == 0) throw InvalidInput("network: conv layer with zero filters");
  }
  if (flatten_size() == 0) throw InvalidInput("network: pooling collapses the feature map");
}

std::vector<FeatureShape> NetworkSpec::shape_chain() const {
  std::vector<FeatureShape> chain;
  FeatureShape s{1, input_height, input_width};
  for (const auto& c : convs) {
    s.channels = c.filters;
    if (c.pool_after) {
      s.height /= 2;
      s.width /= 2;
    }
    chain.push_back(s);
  }
  return chain;
}

std::size_t NetworkSpec::flatten_size() const {
  const auto chain = shape_chain();
  return chain.empty() ? input_height * input_width : chain.back().size();
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> NetworkSpec::parameter_layout()
    const {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto name = "conv" + std::to_string(i + 1);
    layout.push_back({name + ".weight", {convs[i].filters, in_ch, 3, 3}});
    layout.push_back({name + ".bias", {convs[i].filters}});
    in_ch = convs[i].filters;
  }
  layout.push_back({"fc1.weight", {embedding_width, flatten_size()}});
  layout.push_back({"fc1.bias", {embedding_width}});
  layout.push_back({"fc2.weight", {embedding_width, embedding_width}});
  layout.push_back({"fc2.bias", {embedding_width}});
  layout.push_back({"fc3.weight", {num_classes, embedding_width}});
  layout.push_back({"fc3.bias", {num_classes}});
  return layout;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout()) total += shape_size(shape);
  return total;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace {

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// cols[(c*9 + ky*3 + kx), y*W + x] = in[c, y+ky-1, x+kx-1] (zero outside).
template <class T>
void im2col(const T* in, std::size_t ch, std::size_t h, std::size_t w, T* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = in + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulate cols back into the image gradient.
template <class T>
void col2im(const T* cols, std::size_t ch, std::size_t h, std::size_t w, T* out) {
  const std::size_t hw = h * w;
  std::fill(out, out + ch * hw, T(0));
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = cols + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = out + (c * h + static_cast<std::size_t>(sy)) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

template <class T>
void max_pool(const T* in, std::size_t ch, std::size_t h, std::size_t w, T* out,
              std::uint32_t* argmax) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (c * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * h + 2 * y + dy) * w + 2 * x + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + y) * ow + x;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

template <class T>
void relu_inplace(std::vector<T>& v) {
  for (auto& x : v) x = x > T(0) ? x : T(0);
}

// y[B, out] = x[B, in] * W^T + b
template <class T>
void dense_forward(const T* x, std::size_t batch, std::size_t in, const Tensor<T>& weight,
                   const Tensor<T>& bias, T* y) {
  const std::size_t out = weight.dim(0);
  std::vector<T> xt(in * batch), yt(out * batch);
  transpose(x, batch, in, xt.data());
  simd::gemm(out, batch, in, weight.ptr(), in, xt.data(), batch, yt.data(), batch, false);
  transpose(yt.data(), out, batch, y);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) y[b * out + o] += bias.data[o];
  }
}

// Given dz[B, out], accumulate dW, db and (optionally) produce dx[B, in].
template <class T>
void dense_backward(const T* x, const T* dz, std::size_t batch, std::size_t in,
                    const Tensor<T>& weight, Tensor<T>& dweight, Tensor<T>& dbias, T* dx) {
  const std::size_t out = weight.dim(0);
  std::vector<T> dzt(out * batch);
  transpose(dz, batch, out, dzt.data());
  simd::gemm(out, in, batch, dzt.data(), batch, x, in, dweight.ptr(), in, false);
  for (std::size_t o = 0; o < out; ++o) {
    T s = T(0);
    for (std::size_t b = 0; b < batch; ++b) s += dzt[o * batch + b];
    dbias.data[o] = s;
  }
  if (dx) simd::gemm(batch, in, out, dz, out, weight.ptr(), in, dx, in, false);
}

template <class T>
std::vector<T> dropout_mask(std::size_t n, double rate, std::mt19937_64& rng) {
  std::vector<T> mask(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = uniform01(rng) < rate ? T(0) : keep_scale;
  return mask;
}

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) throw InvalidInput("labels: count does not match batch");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw InvalidInput("labels: label " + std::to_string(l) + " outside [0, " +
                         std::to_string(classes) + ")");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

template <class T>
Network<T>::Network(NetworkSpec spec, std::vector<NamedTensor<T>> weights)
    : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  const auto layout = spec_.parameter_layout();
  if (layout.size() != weights_.size()) {
    throw InvalidInput("network: expected " + std::to_string(layout.size()) +
                       " weight arrays, got " + std::to_string(weights_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (weights_[i].name != layout[i].first || weights_[i].tensor.shape != layout[i].second ||
        weights_[i].tensor.size() != shape_size(layout[i].second)) {
      throw InvalidInput("network: weight array " + std::to_string(i) + " ('" +
                         weights_[i].name + "' " + shape_string(weights_[i].tensor.shape) +
                         ") does not match expected '" + layout[i].first + "' " +
                         shape_string(layout[i].second));
    }
  }
}

template <class T>
Network<T> Network<T>::initialized(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor<T>> weights;
  for (const auto& [name, shape] : spec.parameter_layout()) {
    Tensor<T> t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = t.size() / shape[0];
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(sd * standard_normal(rng));
    }
    weights.push_back({name, std::move(t)});
  }
  return Network(spec, std::move(weights));
}

template <class T>
ForwardCache<T> Network<T>::forward(const Tensor<T>& batch, bool train_mode,
                                    std::uint64_t seed) const {
  if (batch.shape.size() != 4 || batch.dim(1) != 1 || batch.dim(2) != spec_.input_height ||
      batch.dim(3) != spec_.input_width || batch.dim(0) == 0) {
    throw InvalidInput("forward: expected batch shape [B,1," + std::to_string(spec_.input_height) +
                       "," + std::to_string(spec_.input_width) + "], got " +
                       shape_string(batch.shape));
  }
  const std::size_t B = batch.dim(0);
  ForwardCache<T> cache;
  cache.batch = B;

  std::vector<T> act = batch.data;
  std::size_t ch = 1, h = spec_.input_height, w = spec_.input_width;
  std::vector<T> cols;
  for (std::size_t li = 0; li < spec_.convs.size(); ++li) {
    const auto& layer = spec_.convs[li];
    const auto& weight = weights_[2 * li].tensor;
    const auto& bias = weights_[2 * li + 1].tensor;
    const std::size_t F = layer.filters, hw = h * w, k = ch * 9;
    cols.resize(k * hw);
    std::vector<T> out(B * F * hw);
    for (std::size_t b = 0; b < B; ++b) {
      im2col(act.data() + b * ch * hw, ch, h, w, cols.data());
      T* ob = out.data() + b * F * hw;
      simd::gemm(F, hw, k, weight.ptr(), k, cols.data(), hw, ob, hw, false);
      for (std::size_t f = 0; f < F; ++f) {
        T* row = ob + f * hw;
        const T bf = bias.data[f];
        for (std::size_t p = 0; p < hw; ++p) {
          const T v = row[p] + bf;
          row[p] = v > T(0) ? v : T(0);
        }
      }
    }
    cache.conv_inputs.push_back(std::move(act));
    if (layer.pool_after) {
      const std::size_t oh = h / 2, ow = w / 2;
      std::vector<T> pooled(B * F * oh * ow);
      std::vector<std::uint32_t> argmax(pooled.size());
      for (std::size_t b = 0; b < B; ++b) {
        max_pool(out.data() + b * F * hw, F, h, w, pooled.data() + b * F * oh * ow,
                 argmax.data() + b * F * oh * ow);
      }
      cache.conv_relu.push_back(std::move(out));
      cache.pool_argmax.push_back(std::move(argmax));
      act = std::move(pooled);
      h = oh;
      w = ow;
    } else {
      cache.conv_relu.push_back(out);
      cache.pool_argmax.emplace_back();
      act = std::move(out);
    }
    ch = F;
  }

  const std::size_t flat = spec_.flatten_size();
  const std::size_t E = spec_.embedding_width, C = spec_.num_classes;
  cache.flat = std::move(act);
  const std::size_t nl = 2 * spec_.convs.size();

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  cache.hidden1.resize(B * E);
  dense_forward(cache.flat.data(), B, flat, weights_[nl].tensor, weights_[nl + 1].tensor,
                cache.hidden1.data());
  relu_inplace(cache.hidden1);
  cache.dropped1 = cache.hidden1;
  if (train_mode && spec_.dropout_rate > 0.0) {
    cache.mask1 = dropout_mask<T>(B * E, spec_.dropout_rate, rng);
    for (std::size_t i = 0; i < cache.dropped1.size(); ++i) cache.dropped1[i] *= cache.mask1[i];
  }

  cache.hidden2.resize(B * E);
  dense_forward(cache.dropped1.data(), B, E, weights_[nl + 2].tensor, weights_[nl + 3].tensor,
                cache.hidden2.data());
  relu_inplace(cache.hidden2);
  cache.dropped2 = cache.hidden2;
  if (train_mode && spec_.dropout_rate > 0.0) {
    cache.mask2 = dropout_mask<T>(B * E, spec_.dropout_rate, rng);
    for (std::size_t i = 0; i < cache.dropped2.size(); ++i) cache.dropped2[i] *= cache.mask2[i];
  }

  cache.logits = Tensor<T>({B, C});
  dense_forward(cache.dropped2.data(), B, E, weights_[nl + 4].tensor, weights_[nl + 5].tensor,
                cache.logits.ptr());

  cache.probabilities = Tensor<T>({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = cache.logits.ptr() + b * C;
    T* p = cache.probabilities.ptr() + b * C;
    const double zmax = static_cast<double>(*std::max_element(z, z + C));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(z[c]) - zmax);
    for (std::size_t c = 0; c < C; ++c) {
      p[c] = static_cast<T>(std::exp(static_cast<double>(z[c]) - zmax) / sum);
    }
  }
  return cache;
}

template <class T>
GradientResult<T> Network<T>::backward(const ForwardCache<T>& cache,
                                       std::span<const int> labels) const {
  const std::size_t B = cache.batch;
  const std::size_t E = spec_.embedding_width, C = spec_.num_classes;
  check_labels(labels, B, C);

  GradientResult<T> result;
  for (const auto& w : weights_) result.gradients.push_back({w.name, Tensor<T>(w.tensor.shape)});
  auto grad = [&](std::size_t i) -> Tensor<T>& { return result.gradients[i].tensor; };

  // Loss from logits (log-sum-exp) for accuracy; dL/dz = (p - onehot) / B.
  double loss = 0.0;
  std::vector<T> dlogits(B * C);
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = cache.logits.ptr() + b * C;
    const double zmax = static_cast<double>(*std::max_element(z, z + C));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(static_cast<double>(z[c]) - zmax);
    loss += zmax + std::log(sum) - static_cast<double>(z[labels[b]]);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(static_cast<double>(z[c]) - zmax) / sum;
      dlogits[b * C + c] =
          static_cast<T>((p - (static_cast<int>(c) == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B));
    }
  }
  result.loss = loss / static_cast<double>(B);

  const std::size_t nl = 2 * spec_.convs.size();
  const std::size_t flat = spec_.flatten_size();

  std::vector<T> d2(B * E);
  dense_backward(cache.dropped2.data(), dlogits.data(), B, E, weights_[nl + 4].tensor,
                 grad(nl + 4), grad(nl + 5), d2.data());
  for (std::size_t i = 0; i < d2.size(); ++i) {
    if (!cache.mask2.empty()) d2[i] *= cache.mask2[i];
    if (!(cache.hidden2[i] > T(0))) d2[i] = T(0);
  }

  std::vector<T> d1(B * E);
  dense_backward(cache.dropped1.data(), d2.data(), B, E, weights_[nl + 2].tensor, grad(nl + 2),
                 grad(nl + 3), d1.data());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    if (!cache.mask1.empty()) d1[i] *= cache.mask1[i];
    if (!(cache.hidden1[i] > T(0))) d1[i] = T(0);
  }

  std::vector<T> dact(spec_.convs.empty() ? 0 : B * flat);
  dense_backward(cache.flat.data(), d1.data(), B, flat, weights_[nl].tensor, grad(nl),
                 grad(nl + 1), spec_.convs.empty() ? nullptr : dact.data());

  // Walk the conv stack in reverse.
  std::vector<std::size_t> in_ch{1}, in_h{spec_.input_height}, in_w{spec_.input_width};
  for (const auto& c : spec_.convs) {
    in_ch.push_back(c.filters);
    in_h.push_back(c.pool_after ? in_h.back() / 2 : in_h.back());
    in_w.push_back(c.pool_after ? in_w.back() / 2 : in_w.back());
  }
  std::vector<T> cols, rows, wt, dcols;
  for (std::size_t li = spec_.convs.size(); li-- > 0;) {
    const auto& layer = spec_.convs[li];
    const std::size_t ch = in_ch[li], h = in_h[li], w = in_w[li];
    const std::size_t F = layer.filters, hw = h * w, k = ch * 9;
    const auto& relu_out = cache.conv_relu[li];

    // Gradient w.r.t. the post-ReLU map, then through the ReLU.
    std::vector<T> dz;
    if (layer.pool_after) {
      dz.assign(B * F * hw, T(0));
      const std::size_t pooled = F * (h / 2) * (w / 2);
      const auto& argmax = cache.pool_argmax[li];
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < pooled; ++o) {
          dz[b * F * hw + argmax[b * pooled + o]] += dact[b * pooled + o];
        }
      }
    } else {
      dz = std::move(dact);
    }
    for (std::size_t i = 0; i < dz.size(); ++i) {
      if (!(relu_out[i] > T(0))) dz[i] = T(0);
    }

    auto& dweight = grad(2 * li);
    auto& dbias = grad(2 * li + 1);
    const auto& weight = weights_[2 * li].tensor;
    const auto& input = cache.conv_inputs[li];
    const bool need_dx = li > 0;
    rows.resize(hw * k);
    cols.resize(k * hw);
    if (need_dx) {
      wt.resize(k * F);
      transpose(weight.ptr(), F, k, wt.data());
      dcols.resize(k * hw);
      dact.assign(B * ch * hw, T(0));
    }
    for (std::size_t b = 0; b < B; ++b) {
      const T* dzb = dz.data() + b * F * hw;
      im2col(input.data() + b * ch * hw, ch, h, w, cols.data());
      transpose(cols.data(), k, hw, rows.data());
      simd::gemm(F, k, hw, dzb, hw, rows.data(), k, dweight.ptr(), k, b > 0);
      for (std::size_t f = 0; f < F; ++f) {
        T s = T(0);
        for (std::size_t p = 0; p < hw; ++p) s += dzb[f * hw + p];
        dbias.data[f] += s;
      }
      if (need_dx) {
        simd::gemm(k, hw, F, wt.data(), F, dzb, hw, dcols.data(), hw, false);
        col2im(dcols.data(), ch, h, w, dact.data() + b * ch * hw);
      }
    }
  }
  return result;
}

template <class T>
GradientResult<T> Network<T>::gradients(const Tensor<T>& batch, std::span<const int> labels,
                                        bool train_mode, std::uint64_t seed) const {
  check_labels(labels, batch.shape.empty() ? 0 : batch.dim(0), spec_.num_classes);
  return backward(forward(batch, train_mode, seed), labels);
}

template <class T>
Tensor<T> Network<T>::embed(const Tensor<T>& batch) const {
  auto cache = forward(batch, false);
  return Tensor<T>({cache.batch, spec_.embedding_width}, std::move(cache.hidden2));
}

template <class T>
double cross_entropy(const Tensor<T>& probabilities, std::span<const int> labels) {
  const std::size_t B = probabilities.dim(0), C = probabilities.dim(1);
  check_labels(labels, B, C);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double p = static_cast<double>(probabilities.data[b * C + static_cast<std::size_t>(labels[b])]);
    loss -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  return loss / static_cast<double>(B);
}

template class Network<float>;
template class Network<double>;
template double cross_entropy(const Tensor<float>&, std::span<const int>);
template double cross_entropy(const Tensor<double>&, std::span<const int>);

}  // namespace tapid
