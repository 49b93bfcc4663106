#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "cre/graph.hpp"
#include "cre/ops.hpp"

namespace cre::nn {

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v, bool train = true) : value(std::move(v)), grad(value.shape, 0.0), trainable(train) {}
  void zero_grad() { grad = Tensor(value.shape, 0.0); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

/// Per-batch state threaded through layers: the graph being recorded, the
/// train/eval switch, the RNG for stochastic layers, and the token subset
/// kept by masked ViT encoders.
class ForwardContext {
 public:
  ForwardContext(Graph& graph, bool training, Rng& rng) : graph_(graph), training_(training), rng_(rng) {}

  Graph& graph() { return graph_; }
  bool training() const { return training_; }
  Rng& rng() { return rng_; }

  /// Leaf for a parameter, created once per context. Gradients are tracked
  /// for trainable parameters unless tracking is switched off.
  Var bind(Parameter& p);
  Var constant(Tensor t) { return graph_.leaf(std::move(t), false); }

  /// Adds the gradients of every bound parameter into Parameter::grad.
  void accumulate_grads(const GradientMap& grads);
  /// Variable bound for p, if any.
  const Var* find(const Parameter& p) const;

  void set_track_grads(bool on) { track_grads_ = on; }

  const std::vector<std::vector<std::size_t>>* kept_tokens = nullptr;

 private:
  Graph& graph_;
  bool training_;
  Rng& rng_;
  bool track_grads_ = true;
  std::vector<std::pair<Parameter*, Var>> bound_;
};

enum class Init { relu, linear };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Var forward(Var x, ForwardContext& ctx) = 0;
  /// Trainable parameters and non-trainable buffers, with names relative to the layer.
  virtual void parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
    (void)prefix;
    (void)out;
  }
};

using LayerPtr = std::unique_ptr<Layer>;

struct ShapeTraceRow {
  std::string kind;
  Shape shape;  // per-sample output shape (batch axis dropped)
};

/// Ordered layers with stable parameter names "<index>.<name>".
class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(LayerStack&&) = default;
  LayerStack& operator=(LayerStack&&) = default;

  LayerStack& add(LayerPtr layer);
  template <class L, class... Args>
  LayerStack& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  Var forward(Var x, ForwardContext& ctx) const;
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) const { return *layers_.at(i); }

  std::vector<NamedParameter> parameters(const std::string& prefix = "") const;
  std::vector<Parameter*> trainable() const;
  std::size_t parameter_count() const;
  void zero_grad() const;

  /// Output shape after each layer for a batch of `batch` inputs of `input` shape (per sample).
  std::vector<ShapeTraceRow> trace_shapes(const Shape& input, ForwardContext& ctx, std::size_t batch = 2) const;

 private:
  std::vector<LayerPtr> layers_;
};

// ---------------------------------------------------------------- layers

class Flatten final : public Layer {
 public:
  std::string kind() const override { return "Flatten"; }
  Var forward(Var x, ForwardContext& ctx) override;
};

class Unflatten final : public Layer {
 public:
  explicit Unflatten(Shape sample_shape) : shape_(std::move(sample_shape)) {}
  std::string kind() const override { return "Unflatten"; }
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  Shape shape_;
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out, Init init, Rng& rng);
  std::string kind() const override { return "Linear"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;  // [in, out]
  Parameter bias_;
};

class Activation final : public Layer {
 public:
  enum class Fn { relu, tanh, gelu };
  explicit Activation(Fn fn) : fn_(fn) {}
  std::string kind() const override;
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  Fn fn_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Init init,
         Rng& rng);
  std::string kind() const override { return "Conv2d"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  std::size_t stride_, padding_;
  Parameter weight_, bias_;
};

class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                  std::size_t output_padding, Init init, Rng& rng);
  std::string kind() const override { return "ConvTranspose2d"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  std::size_t stride_, padding_, output_padding_;
  Parameter weight_, bias_;
};

class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels);
  std::string kind() const override { return "BatchNorm"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  Parameter gain_, bias_;
  Parameter running_mean_, running_var_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t window, std::size_t stride, std::size_t padding = 0)
      : window_(window), stride_(stride), padding_(padding) {}
  std::string kind() const override { return "MaxPool2d"; }
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  std::size_t window_, stride_, padding_;
};

class Dropout final : public Layer {
 public:
  Dropout(double p, bool channelwise) : p_(p), channelwise_(channelwise) {}
  std::string kind() const override { return channelwise_ ? "Dropout2d" : "Dropout"; }
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  double p_;
  bool channelwise_;
};

class LayerNorm final : public Layer {
 public:
  explicit LayerNorm(std::size_t dim, double epsilon = 1e-6);
  std::string kind() const override { return "LayerNorm"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  double epsilon_;
  Parameter gain_, bias_;
};

/// Pre-norm transformer block: x + DropPath(Attention(LN(x))), then
/// x + DropPath(Mlp(LN(x))) with a 4x GELU hidden layer.
class TransformerBlock final : public Layer {
 public:
  TransformerBlock(std::size_t dim, std::size_t heads, double drop_path, Rng& rng);
  std::string kind() const override { return "Block"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  std::size_t heads() const { return heads_; }

 private:
  Var attention(Var x, ForwardContext& ctx);

  std::size_t dim_, heads_;
  double drop_path_;
  LayerNorm norm1_, norm2_;
  Linear q_, k_, v_, proj_, fc1_, fc2_;
};

/// Patch embedding: a conv with kernel = stride = patch, flattened to tokens
/// [B, P, D], plus fixed 2-D sin-cos position encodings.
class PatchEmbed final : public Layer {
 public:
  PatchEmbed(std::size_t channels, std::size_t image_size, std::size_t patch, std::size_t dim, Rng& rng);
  std::string kind() const override { return "PatchEmbed"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  std::size_t patch_, dim_, tokens_;
  Parameter weight_, bias_;
  Tensor pos_;
};

/// Keeps only ForwardContext::kept_tokens; identity when no mask is set.
class TokenMask final : public Layer {
 public:
  std::string kind() const override { return "TokenMask"; }
  Var forward(Var x, ForwardContext& ctx) override;
};

/// Restores the full token grid: visible tokens at their kept slots, a learned
/// mask token elsewhere, then adds fixed position encodings.
class MaskTokenFill final : public Layer {
 public:
  MaskTokenFill(std::size_t tokens, std::size_t dim, std::size_t grid);
  std::string kind() const override { return "MaskTokenFill"; }
  Var forward(Var x, ForwardContext& ctx) override;
  void parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  std::size_t tokens_, dim_;
  Parameter mask_token_;
  Tensor pos_;
};

/// Tokens [B, P, p*p*C] back to images [B, C, H, W].
class Unpatchify final : public Layer {
 public:
  Unpatchify(std::size_t channels, std::size_t image_size, std::size_t patch)
      : channels_(channels), image_size_(image_size), patch_(patch) {}
  std::string kind() const override { return "Unpatchify"; }
  Var forward(Var x, ForwardContext& ctx) override;

 private:
  std::size_t channels_, image_size_, patch_;
};

/// [B, T, D] -> [B, D]
class TokenMean final : public Layer {
 public:
  std::string kind() const override { return "TokenMean"; }
  Var forward(Var x, ForwardContext& ctx) override;
};

/// Fixed 2-D sin-cos encodings for a grid x grid token layout, [grid*grid, dim].
Tensor sincos_position_encoding(std::size_t dim, std::size_t grid);

}  // namespace cre::nn
