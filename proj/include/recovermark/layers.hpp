#pragma once

#include <memory>
#include <string>
#include <vector>

#include "recovermark/rng.hpp"
#include "recovermark/tensor.hpp"

namespace recovermark {

/// A named trainable array with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Layers are stateless during forward; backward receives the forward input
/// and output and accumulates parameter gradients.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x) const = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                                  const BasicTensor<T>& grad_y) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
};

/// Square-kernel convolution, stride 1, zero "same" padding.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, Rng& rng,
         double init_gain = 1.0);

  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                          const BasicTensor<T>& grad_y) override;
  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int in_, out_, kernel_;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(T slope = T(0.2)) : slope_(slope) {}
  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                          const BasicTensor<T>& grad_y) override;

 private:
  T slope_;
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                          const BasicTensor<T>& grad_y) override;
};

/// 2×2 average pooling; spatial dims must be even.
template <typename T>
class AvgPool2 final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                          const BasicTensor<T>& grad_y) override;
};

/// Nearest-neighbour 2× upsampling.
template <typename T>
class Upsample2 final : public Layer<T> {
 public:
  BasicTensor<T> forward(const BasicTensor<T>& x) const override;
  BasicTensor<T> backward(const BasicTensor<T>& x, const BasicTensor<T>& y,
                          const BasicTensor<T>& grad_y) override;
};

/// Activations recorded by Sequential::forward: acts[0] is the input,
/// acts[i + 1] the output of layer i.
template <typename T>
struct Trace {
  std::vector<BasicTensor<T>> acts;
  const BasicTensor<T>& output() const { return acts.back(); }
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  BasicTensor<T> forward(const BasicTensor<T>& x, Trace<T>& trace) const;
  BasicTensor<T> backward(const Trace<T>& trace, const BasicTensor<T>& grad_out);
  std::vector<Parameter<T>*> parameters();
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace recovermark
