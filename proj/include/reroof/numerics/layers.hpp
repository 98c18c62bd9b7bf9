#pragma once

#include <cmath>
#include <string>

#include "reroof/numerics/params.hpp"

namespace reroof::nn {

/// Uniform(-bound, bound) with bound = sqrt(6 / fan_in) (He-uniform), drawn
/// in row-major order from `rng`.
template <class T>
BasicTensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Initialisation used for every layer: He-uniform weights, zero bias,
/// except `zero` which gives all-zero weights (used for output heads in
/// tests and for residual branches that should start as identity).
enum class Init { he, zero };

template <class T>
struct DenseLayer {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [out]

  static DenseLayer create(BasicParamStore<T>& store, const std::string& prefix,
                           std::size_t in, std::size_t out, Rng& rng, Init init = Init::he) {
    BasicTensor<T> w = init == Init::he ? he_uniform<T>(Shape{in, out}, in, rng)
                                        : BasicTensor<T>(Shape{in, out});
    DenseLayer l;
    l.weight = store.add(prefix + ".weight", std::move(w));
    l.bias = store.add(prefix + ".bias", BasicTensor<T>(Shape{out}));
    return l;
  }

  static DenseLayer bind(const BasicParamStore<T>& store, const std::string& prefix) {
    return {store.var(prefix + ".weight"), store.var(prefix + ".bias")};
  }

  Var<T> operator()(const Var<T>& x) const { return dense(x, weight, bias); }
};

template <class T>
struct Conv2dLayer {
  Var<T> weight;  // [out, in, k, k]
  Var<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2dLayer create(BasicParamStore<T>& store, const std::string& prefix,
                            std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, std::size_t padding, Rng& rng) {
    Conv2dLayer l;
    l.weight = store.add(prefix + ".weight",
                         he_uniform<T>(Shape{out, in, kernel, kernel}, in * kernel * kernel, rng));
    l.bias = store.add(prefix + ".bias", BasicTensor<T>(Shape{out}));
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  static Conv2dLayer bind(const BasicParamStore<T>& store, const std::string& prefix,
                          std::size_t stride, std::size_t padding) {
    return {store.var(prefix + ".weight"), store.var(prefix + ".bias"), stride, padding};
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <class T>
struct ConvTranspose2dLayer {
  Var<T> weight;  // [in, out, k, k]
  Var<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static ConvTranspose2dLayer create(BasicParamStore<T>& store, const std::string& prefix,
                                     std::size_t in, std::size_t out, std::size_t kernel,
                                     std::size_t stride, std::size_t padding, Rng& rng) {
    // Each output pixel receives about in*k*k/stride^2 contributions.
    const std::size_t fan_in = std::max<std::size_t>(1, in * kernel * kernel / (stride * stride));
    ConvTranspose2dLayer l;
    l.weight = store.add(prefix + ".weight",
                         he_uniform<T>(Shape{in, out, kernel, kernel}, fan_in, rng));
    l.bias = store.add(prefix + ".bias", BasicTensor<T>(Shape{out}));
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  static ConvTranspose2dLayer bind(const BasicParamStore<T>& store, const std::string& prefix,
                                   std::size_t stride, std::size_t padding) {
    return {store.var(prefix + ".weight"), store.var(prefix + ".bias"), stride, padding};
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding);
  }
};

/// x + F(x) with F = dense -> relu -> dense, width preserved.
template <class T>
struct ResidualBlock {
  DenseLayer<T> inner;
  DenseLayer<T> outer;

  static ResidualBlock create(BasicParamStore<T>& store, const std::string& prefix,
                              std::size_t width, Rng& rng, Init init = Init::he) {
    ResidualBlock b;
    b.inner = DenseLayer<T>::create(store, prefix + ".fc1", width, width, rng, init);
    b.outer = DenseLayer<T>::create(store, prefix + ".fc2", width, width, rng, init);
    return b;
  }

  static ResidualBlock bind(const BasicParamStore<T>& store, const std::string& prefix) {
    return {DenseLayer<T>::bind(store, prefix + ".fc1"), DenseLayer<T>::bind(store, prefix + ".fc2")};
  }

  std::size_t width() const { return inner.weight.shape()[0]; }

  Var<T> operator()(const Var<T>& x) const { return residual_block_forward(x, *this); }
};

template <class T>
Var<T> residual_block_forward(const Var<T>& x, const ResidualBlock<T>& block) {
  const std::size_t w = block.width();
  if (block.inner.weight.shape() != Shape{w, w} || block.outer.weight.shape() != Shape{w, w}) {
    throw DimensionError("residual block must preserve width; got inner " +
                         shape_string(block.inner.weight.shape()) + " and outer " +
                         shape_string(block.outer.weight.shape()));
  }
  if (x.value().rank() != 2 || x.shape()[1] != w) {
    throw DimensionError("residual block of width " + std::to_string(w) + " given input " +
                         shape_string(x.shape()));
  }
  return add(x, block.outer(relu(block.inner(x))));
}

}  // namespace reroof::nn
