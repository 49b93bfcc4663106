#include "cre/nn.hpp"

#include <cmath>

namespace cre::nn {

Var ForwardContext::bind(Parameter& p) {
  for (auto& [param, var] : bound_) {
    if (param == &p) return var;
  }
  Var v = graph_.leaf(p.value, p.trainable && track_grads_);
  bound_.emplace_back(&p, v);
  return v;
}

void ForwardContext::accumulate_grads(const GradientMap& grads) {
  for (auto& [param, var] : bound_) {
    if (!param->trainable || !graph_.requires_grad(var)) continue;
    const Tensor& g = grads[var];
    if (param->grad.size() != g.size()) param->zero_grad();
    for (std::size_t i = 0; i < g.size(); ++i) param->grad.data[i] += g.data[i];
  }
}

const Var* ForwardContext::find(const Parameter& p) const {
  for (const auto& [param, var] : bound_) {
    if (param == &p) return &var;
  }
  return nullptr;
}

// ---------------------------------------------------------------- LayerStack

LayerStack& LayerStack::add(LayerPtr layer) {
  layers_.push_back(std::move(layer));
  return *this;
}

Var LayerStack::forward(Var x, ForwardContext& ctx) const {
  for (const auto& layer : layers_) x = layer->forward(x, ctx);
  return x;
}

std::vector<NamedParameter> LayerStack::parameters(const std::string& prefix) const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->parameters(prefix + std::to_string(i) + ".", out);
  }
  return out;
}

std::vector<Parameter*> LayerStack::trainable() const {
  std::vector<Parameter*> out;
  for (auto& np : parameters()) {
    if (np.param->trainable) out.push_back(np.param);
  }
  return out;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t n = 0;
  for (auto* p : trainable()) n += p->value.size();
  return n;
}

void LayerStack::zero_grad() const {
  for (auto* p : trainable()) p->zero_grad();
}

std::vector<ShapeTraceRow> LayerStack::trace_shapes(const Shape& input, ForwardContext& ctx, std::size_t batch) const {
  Shape s{batch};
  s.insert(s.end(), input.begin(), input.end());
  Var x = ctx.constant(Tensor(s, 0.0));
  std::vector<ShapeTraceRow> rows;
  for (const auto& layer : layers_) {
    x = layer->forward(x, ctx);
    rows.push_back({layer->kind(), Shape(x.shape().begin() + 1, x.shape().end())});
  }
  return rows;
}

// ---------------------------------------------------------------- simple layers

Var Flatten::forward(Var x, ForwardContext&) {
  const Shape& s = x.shape();
  return ops::reshape(x, Shape{s[0], numel(s) / s[0]});
}

Var Unflatten::forward(Var x, ForwardContext&) {
  Shape s{x.shape()[0]};
  s.insert(s.end(), shape_.begin(), shape_.end());
  return ops::reshape(x, s);
}

namespace {
double init_std(Init init, std::size_t fan_in) {
  return std::sqrt((init == Init::relu ? 2.0 : 1.0) / static_cast<double>(fan_in));
}
}  // namespace

Linear::Linear(std::size_t in, std::size_t out, Init init, Rng& rng)
    : weight_(Tensor::randn(Shape{in, out}, rng, init_std(init, in))), bias_(Tensor(Shape{out}, 0.0)) {}

Var Linear::forward(Var x, ForwardContext& ctx) {
  return ops::add(ops::matmul(x, ctx.bind(weight_)), ctx.bind(bias_));
}

void Linear::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

std::string Activation::kind() const {
  switch (fn_) {
    case Fn::relu: return "ReLU";
    case Fn::tanh: return "Tanh";
    case Fn::gelu: return "GELU";
  }
  return "Activation";
}

Var Activation::forward(Var x, ForwardContext&) {
  switch (fn_) {
    case Fn::relu: return ops::relu(x);
    case Fn::tanh: return ops::tanh(x);
    case Fn::gelu: return ops::gelu(x);
  }
  return x;
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               Init init, Rng& rng)
    : stride_(stride),
      padding_(padding),
      weight_(Tensor::randn(Shape{out, in, kernel, kernel}, rng, init_std(init, in * kernel * kernel))),
      bias_(Tensor(Shape{out}, 0.0)) {}

Var Conv2d::forward(Var x, ForwardContext& ctx) {
  return ops::conv2d(x, ctx.bind(weight_), ctx.bind(bias_), stride_, padding_);
}

void Conv2d::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                 std::size_t padding, std::size_t output_padding, Init init, Rng& rng)
    : stride_(stride),
      padding_(padding),
      output_padding_(output_padding),
      weight_(Tensor::randn(Shape{in, out, kernel, kernel}, rng, init_std(init, in * kernel * kernel))),
      bias_(Tensor(Shape{out}, 0.0)) {}

Var ConvTranspose2d::forward(Var x, ForwardContext& ctx) {
  return ops::conv_transpose2d(x, ctx.bind(weight_), ctx.bind(bias_), stride_, padding_, output_padding_);
}

void ConvTranspose2d::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

BatchNorm::BatchNorm(std::size_t channels)
    : gain_(Tensor(Shape{channels}, 1.0)),
      bias_(Tensor(Shape{channels}, 0.0)),
      running_mean_(Tensor(Shape{channels}, 0.0), false),
      running_var_(Tensor(Shape{channels}, 1.0), false) {}

Var BatchNorm::forward(Var x, ForwardContext& ctx) {
  ops::BatchNormStats stats{running_mean_.value, running_var_.value};
  Var y = ops::batch_norm(x, ctx.bind(gain_), ctx.bind(bias_), stats, ctx.training());
  if (ctx.training()) {
    running_mean_.value = std::move(stats.running_mean);
    running_var_.value = std::move(stats.running_var);
  }
  return y;
}

void BatchNorm::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &gain_});
  out.push_back({prefix + "bias", &bias_});
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

Var MaxPool2d::forward(Var x, ForwardContext&) { return ops::maxpool2d(x, window_, stride_, padding_); }

Var Dropout::forward(Var x, ForwardContext& ctx) { return ops::dropout(x, p_, ctx.training(), ctx.rng(), channelwise_); }

LayerNorm::LayerNorm(std::size_t dim, double epsilon)
    : epsilon_(epsilon), gain_(Tensor(Shape{dim}, 1.0)), bias_(Tensor(Shape{dim}, 0.0)) {}

Var LayerNorm::forward(Var x, ForwardContext& ctx) {
  return ops::layer_norm(x, ctx.bind(gain_), ctx.bind(bias_), epsilon_);
}

void LayerNorm::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &gain_});
  out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- transformer

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, double drop_path, Rng& rng)
    : dim_(dim),
      heads_(heads),
      drop_path_(drop_path),
      norm1_(dim),
      norm2_(dim),
      q_(dim, dim, Init::linear, rng),
      k_(dim, dim, Init::linear, rng),
      v_(dim, dim, Init::linear, rng),
      proj_(dim, dim, Init::linear, rng),
      fc1_(dim, 4 * dim, Init::relu, rng),
      fc2_(4 * dim, dim, Init::linear, rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("TransformerBlock: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                     " heads");
  }
}

Var TransformerBlock::attention(Var x, ForwardContext& ctx) {
  const std::size_t b = x.shape()[0], t = x.shape()[1], hd = dim_ / heads_;
  auto split_heads = [&](Var y) {
    return ops::permute(ops::reshape(y, Shape{b, t, heads_, hd}), {0, 2, 1, 3});
  };
  Var q = split_heads(q_.forward(x, ctx));
  Var k = split_heads(k_.forward(x, ctx));
  Var v = split_heads(v_.forward(x, ctx));
  Var scores = ops::scale(ops::matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(hd)));
  Var mixed = ops::matmul(ops::softmax(scores), v);  // [B, H, T, hd]
  Var merged = ops::reshape(ops::permute(mixed, {0, 2, 1, 3}), Shape{b, t, dim_});
  return proj_.forward(merged, ctx);
}

Var TransformerBlock::forward(Var x, ForwardContext& ctx) {
  if (x.shape().size() != 3 || x.shape()[2] != dim_) {
    throw ShapeError("Block: expected [B, T, " + std::to_string(dim_) + "], got " + to_string(x.shape()));
  }
  Var a = attention(norm1_.forward(x, ctx), ctx);
  x = ops::add(x, ops::drop_path(a, drop_path_, ctx.training(), ctx.rng()));
  Var h = fc2_.forward(ops::gelu(fc1_.forward(norm2_.forward(x, ctx), ctx)), ctx);
  return ops::add(x, ops::drop_path(h, drop_path_, ctx.training(), ctx.rng()));
}

void TransformerBlock::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  norm1_.parameters(prefix + "norm1.", out);
  q_.parameters(prefix + "attn.q.", out);
  k_.parameters(prefix + "attn.k.", out);
  v_.parameters(prefix + "attn.v.", out);
  proj_.parameters(prefix + "attn.proj.", out);
  norm2_.parameters(prefix + "norm2.", out);
  fc1_.parameters(prefix + "mlp.fc1.", out);
  fc2_.parameters(prefix + "mlp.fc2.", out);
}

Tensor sincos_position_encoding(std::size_t dim, std::size_t grid) {
  if (dim % 4 != 0) throw ShapeError("position encoding: dim " + std::to_string(dim) + " not divisible by 4");
  Tensor pos(Shape{grid * grid, dim});
  const std::size_t quarter = dim / 4;
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      double* row = pos.data.data() + (r * grid + c) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        // first half encodes the column, second half the row
        row[i] = std::sin(static_cast<double>(c) * omega);
        row[quarter + i] = std::cos(static_cast<double>(c) * omega);
        row[2 * quarter + i] = std::sin(static_cast<double>(r) * omega);
        row[3 * quarter + i] = std::cos(static_cast<double>(r) * omega);
      }
    }
  }
  return pos;
}

PatchEmbed::PatchEmbed(std::size_t channels, std::size_t image_size, std::size_t patch, std::size_t dim, Rng& rng)
    : patch_(patch),
      dim_(dim),
      tokens_((image_size / patch) * (image_size / patch)),
      weight_(Tensor::randn(Shape{dim, channels, patch, patch}, rng, init_std(Init::linear, channels * patch * patch))),
      bias_(Tensor(Shape{dim}, 0.0)),
      pos_(sincos_position_encoding(dim, image_size / patch)) {
  if (image_size % patch != 0) throw ShapeError("PatchEmbed: image size not divisible by patch size");
}

Var PatchEmbed::forward(Var x, ForwardContext& ctx) {
  Var y = ops::conv2d(x, ctx.bind(weight_), ctx.bind(bias_), patch_, 0);  // [B, D, g, g]
  const std::size_t b = y.shape()[0];
  Var tokens = ops::permute(ops::reshape(y, Shape{b, dim_, tokens_}), {0, 2, 1});
  return ops::add(tokens, ctx.constant(pos_));
}

void PatchEmbed::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "proj.weight", &weight_});
  out.push_back({prefix + "proj.bias", &bias_});
}

Var TokenMask::forward(Var x, ForwardContext& ctx) {
  if (!ctx.kept_tokens) return x;
  return ops::gather_tokens(x, *ctx.kept_tokens);
}

MaskTokenFill::MaskTokenFill(std::size_t tokens, std::size_t dim, std::size_t grid)
    : tokens_(tokens), dim_(dim), mask_token_(Tensor(Shape{dim}, 0.0)), pos_(sincos_position_encoding(dim, grid)) {}

Var MaskTokenFill::forward(Var x, ForwardContext& ctx) {
  if (ctx.kept_tokens) {
    x = ops::scatter_tokens(x, ctx.bind(mask_token_), *ctx.kept_tokens, tokens_);
  } else if (x.shape().size() != 3 || x.shape()[1] != tokens_) {
    throw ShapeError("MaskTokenFill: expected a full token grid of " + std::to_string(tokens_) + ", got " +
                     to_string(x.shape()));
  }
  return ops::add(x, ctx.constant(pos_));
}

void MaskTokenFill::parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "mask_token", &mask_token_});
}

Var Unpatchify::forward(Var x, ForwardContext&) {
  const std::size_t b = x.shape()[0], g = image_size_ / patch_;
  // token layout is (channel, row-in-patch, col-in-patch)
  Var y = ops::reshape(x, Shape{b, g, g, channels_, patch_, patch_});
  y = ops::permute(y, {0, 3, 1, 4, 2, 5});
  return ops::reshape(y, Shape{b, channels_, image_size_, image_size_});
}

Var TokenMean::forward(Var x, ForwardContext&) { return ops::mean_over_axis(x, 1); }

}  // namespace cre::nn
