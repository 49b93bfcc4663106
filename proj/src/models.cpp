#include "cre/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cre/losses.hpp"
#include "cre/ops.hpp"

namespace cre {

using namespace nn;

std::string_view to_string(Family f) {
  switch (f) {
    case Family::fc: return "fc";
    case Family::cnn: return "cnn";
    case Family::vit: return "vit";
  }
  return "?";
}

std::string_view to_string(ModelSize s) {
  switch (s) {
    case ModelSize::small: return "small";
    case ModelSize::medium: return "medium";
    case ModelSize::large: return "large";
  }
  return "?";
}

std::string_view to_string(MaskingMode m) {
  switch (m) {
    case MaskingMode::none: return "none";
    case MaskingMode::v1: return "v1";
    case MaskingMode::v2: return "v2";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "fc") return Family::fc;
  if (s == "cnn") return Family::cnn;
  if (s == "vit") return Family::vit;
  throw ParseError("unknown model family '" + std::string(s) + "'");
}

ModelSize parse_size(std::string_view s) {
  if (s == "small") return ModelSize::small;
  if (s == "medium") return ModelSize::medium;
  if (s == "large") return ModelSize::large;
  throw ParseError("unknown model size '" + std::string(s) + "'");
}

MaskingMode parse_masking(std::string_view s) {
  if (s == "none") return MaskingMode::none;
  if (s == "v1") return MaskingMode::v1;
  if (s == "v2") return MaskingMode::v2;
  throw ParseError("unknown masking mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- masks

std::size_t kept_count(std::size_t num_patches, double ratio) {
  const auto k = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(num_patches)));
  return std::clamp<std::size_t>(k, 1, num_patches);
}

PatchMask sample_mask(std::size_t num_patches, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw Error("sample_mask: ratio must lie in [0, 1)");
  std::vector<std::size_t> order(num_patches);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // partial Fisher-Yates: the first k entries are a uniform subset
  const std::size_t k = kept_count(num_patches, ratio);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, num_patches - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return {num_patches, std::move(order), seed};
}

std::vector<PatchMask> sample_masks(std::size_t batch, std::size_t num_patches, double ratio, std::uint64_t seed) {
  std::vector<PatchMask> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(sample_mask(num_patches, ratio, mix_seed(seed, i)));
  return out;
}

Tensor masked_pixel_weights(const ImageShape& image, std::size_t patch, const std::vector<PatchMask>& masks) {
  const std::size_t grid = image.width / patch;
  Tensor w(Shape{masks.size(), image.channels, image.height, image.width}, 1.0);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    for (std::size_t t : masks[b].kept) {
      const std::size_t r0 = (t / grid) * patch, c0 = (t % grid) * patch;
      for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t r = r0; r < r0 + patch; ++r)
          for (std::size_t q = c0; q < c0 + patch; ++q)
            w[((b * image.channels + c) * image.height + r) * image.width + q] = 0.0;
    }
  }
  return w;
}

// ---------------------------------------------------------------- builders

namespace {

using Fn = Activation::Fn;

void build_fc(CreModel& m, const ModelSpec& s, Rng& rng) {
  const std::size_t d = s.image.pixels(), n = s.n;
  std::vector<std::size_t> hidden;
  std::size_t cls_hidden = 0;
  switch (s.size) {
    case ModelSize::small: break;
    case ModelSize::medium: hidden = {616}; cls_hidden = 12; break;
    case ModelSize::large: hidden = {716, 684, 616}; cls_hidden = 64; break;
  }
  m.encoder.emplace<Flatten>();
  std::size_t width = d;
  for (std::size_t h : hidden) {
    m.encoder.emplace<Linear>(width, h, Init::relu, rng).emplace<Activation>(Fn::relu);
    width = h;
  }
  m.encoder.emplace<Linear>(width, n, Init::relu, rng).emplace<Activation>(Fn::relu);

  width = n;
  for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
    m.decoder.emplace<Linear>(width, *it, Init::relu, rng).emplace<Activation>(Fn::relu);
    width = *it;
  }
  m.decoder.emplace<Linear>(width, d, Init::linear, rng)
      .emplace<Activation>(Fn::tanh)
      .emplace<Unflatten>(s.image.sample_shape());

  if (cls_hidden) {
    m.classifier.emplace<Linear>(n, cls_hidden, Init::relu, rng).emplace<Activation>(Fn::relu);
    m.classifier.emplace<Linear>(cls_hidden, 10, Init::linear, rng);
  } else {
    m.classifier.emplace<Linear>(n, 10, Init::linear, rng);
  }
}

void conv_bn(LayerStack& st, std::size_t in, std::size_t out, Rng& rng) {
  st.emplace<Conv2d>(in, out, 3, 1, 1, Init::relu, rng).emplace<BatchNorm>(out);
}

void build_cnn_small(CreModel& m, Rng& rng) {
  auto& e = m.encoder;
  conv_bn(e, 1, 16, rng);
  e.emplace<MaxPool2d>(2, 2).emplace<Activation>(Fn::relu);  // 14
  conv_bn(e, 16, 16, rng);
  e.emplace<MaxPool2d>(2, 2, 1).emplace<Activation>(Fn::relu);  // 8
  conv_bn(e, 16, 16, rng);
  e.emplace<MaxPool2d>(2, 2).emplace<Activation>(Fn::relu);  // 4

  auto& d = m.decoder;
  d.emplace<ConvTranspose2d>(16, 16, 2, 2, 0, 0, Init::relu, rng).emplace<Activation>(Fn::relu);  // 8
  d.emplace<ConvTranspose2d>(16, 16, 2, 2, 1, 0, Init::relu, rng).emplace<Activation>(Fn::relu);  // 14
  d.emplace<ConvTranspose2d>(16, 1, 2, 2, 0, 0, Init::linear, rng).emplace<Activation>(Fn::tanh);  // 28

  m.classifier.emplace<Flatten>().emplace<Linear>(256, 10, Init::linear, rng);
}

void build_cnn_large(CreModel& m, const ModelSpec& s, Rng& rng) {
  const double p = s.dropout;
  auto block = [&](LayerStack& st, std::size_t in, std::size_t out, bool pool) {
    st.emplace<Conv2d>(in, out, 3, 1, 1, Init::relu, rng).emplace<Dropout>(p, true).emplace<BatchNorm>(out);
    if (pool) st.emplace<MaxPool2d>(2, 2);
    st.emplace<Activation>(Fn::relu);
  };
  auto& e = m.encoder;
  block(e, s.image.channels, 64, false);
  block(e, 64, 64, false);
  block(e, 64, 128, true);  // 16
  block(e, 128, 128, true);  // 8
  block(e, 128, 128, true);  // 4

  auto& d = m.decoder;
  d.emplace<ConvTranspose2d>(128, 128, 2, 2, 0, 0, Init::relu, rng).emplace<Activation>(Fn::relu);  // 8
  d.emplace<ConvTranspose2d>(128, 128, 2, 2, 0, 0, Init::relu, rng).emplace<Activation>(Fn::relu);  // 16
  d.emplace<ConvTranspose2d>(128, 64, 2, 2, 0, 0, Init::relu, rng).emplace<Activation>(Fn::relu);  // 32
  d.emplace<ConvTranspose2d>(64, 64, 3, 1, 1, 0, Init::relu, rng).emplace<Activation>(Fn::relu);
  d.emplace<ConvTranspose2d>(64, s.image.channels, 3, 1, 1, 0, Init::linear, rng).emplace<Activation>(Fn::tanh);

  auto& c = m.classifier;
  block(c, 128, 256, false);
  c.emplace<Conv2d>(256, 256, 3, 1, 1, Init::relu, rng)
      .emplace<Dropout>(p, true)
      .emplace<MaxPool2d>(2, 2)
      .emplace<BatchNorm>(256)
      .emplace<Activation>(Fn::relu);
  c.emplace<Flatten>().emplace<Linear>(1024, 10, Init::linear, rng);
}

void build_vit(CreModel& m, const ModelSpec& s, std::size_t patch, Rng& rng) {
  const std::size_t D = s.n, side = s.image.height, grid = side / patch, P = grid * grid;
  const std::size_t heads = std::max<std::size_t>(1, D / 8);
  const bool large = s.size == ModelSize::large;
  const std::size_t depth = large ? 7 : 1;
  const double dp = large ? s.droppath : 0.0;

  m.encoder.emplace<PatchEmbed>(s.image.channels, side, patch, D, rng).emplace<TokenMask>();
  for (std::size_t i = 0; i < depth; ++i) m.encoder.emplace<TransformerBlock>(D, heads, dp, rng);
  m.encoder.emplace<LayerNorm>(D);

  m.decoder.emplace<Linear>(D, D, Init::linear, rng).emplace<MaskTokenFill>(P, D, grid);
  for (std::size_t i = 0; i < depth; ++i) m.decoder.emplace<TransformerBlock>(D, heads, 0.0, rng);
  m.decoder.emplace<LayerNorm>(D)
      .emplace<Linear>(D, patch * patch * s.image.channels, Init::linear, rng)
      .emplace<Unpatchify>(s.image.channels, side, patch);

  m.classifier.emplace<TokenMean>().emplace<BatchNorm>(D).emplace<Linear>(D, 10, Init::linear, rng);
}

}  // namespace

CreModel::CreModel(const ModelSpec& spec) : spec_(spec) {
  set_lambda(spec.lambda);
  const ImageShape mnist{1, 28, 28}, cifar{3, 32, 32};
  if (spec.masking != MaskingMode::none && spec.family != Family::vit) {
    throw Error("masking modes apply to vit models only");
  }
  if (spec.masking != MaskingMode::none && !(spec.mask_ratio > 0.0 && spec.mask_ratio < 1.0)) {
    throw Error("mask_ratio must lie in (0, 1)");
  }
  Rng rng(mix_seed(spec.seed, 0x6d6f64656c));
  const std::string combo = std::string(to_string(spec.family)) + "/" + std::string(to_string(spec.size));
  switch (spec.family) {
    case Family::fc:
      if (spec.n == 0) throw Error("fc models need n >= 1");
      build_fc(*this, spec_, rng);
      break;
    case Family::cnn: {
      const bool large = spec.size == ModelSize::large;
      if (spec.size == ModelSize::medium) throw Error("unknown model combination " + combo);
      if (spec.image != (large ? cifar : mnist)) {
        throw Error(combo + " expects " + to_string(large ? cifar.sample_shape() : mnist.sample_shape()) +
                    " images");
      }
      const std::size_t latent = large ? 2048 : 256;
      if (spec.n != 0 && spec.n != latent) {
        throw Error(combo + " has a fixed latent size of " + std::to_string(latent));
      }
      spec_.n = latent;
      large ? build_cnn_large(*this, spec_, rng) : build_cnn_small(*this, rng);
      break;
    }
    case Family::vit: {
      if (spec.size == ModelSize::medium) throw Error("unknown model combination " + combo);
      const std::size_t patch = spec.size == ModelSize::large ? 2 : 7;
      if (spec.image.height != spec.image.width || spec.image.height % patch != 0) {
        throw Error(combo + " needs square images divisible by patch size " + std::to_string(patch));
      }
      if (spec.n == 0 || spec.n % 4 != 0) throw Error("vit embedding width must be a positive multiple of 4");
      patch_ = patch;
      tokens_ = (spec.image.height / patch) * (spec.image.height / patch);
      build_vit(*this, spec_, patch, rng);
      break;
    }
  }
}

void CreModel::set_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  spec_.lambda = lambda;
}

Shape CreModel::latent_shape() const {
  switch (spec_.family) {
    case Family::fc: return {spec_.n};
    case Family::cnn: return spec_.size == ModelSize::large ? Shape{128, 4, 4} : Shape{16, 4, 4};
    case Family::vit: return {tokens_, spec_.n};
  }
  return {};
}

std::size_t CreModel::latent_size() const { return numel(latent_shape()); }

std::vector<NamedParameter> CreModel::named_parameters() const {
  auto out = encoder.parameters("encoder.");
  for (auto& p : decoder.parameters("decoder.")) out.push_back(p);
  for (auto& p : classifier.parameters("classifier.")) out.push_back(p);
  return out;
}

std::unique_ptr<CreModel> build_cre(const ModelSpec& spec) { return std::make_unique<CreModel>(spec); }

// ---------------------------------------------------------------- forward paths

namespace {

// Points ctx at a kept-token list for the duration of one stack call.
struct KeptScope {
  ForwardContext& ctx;
  KeptScope(ForwardContext& c, const std::vector<std::vector<std::size_t>>& kept) : ctx(c) {
    ctx.kept_tokens = kept.empty() ? nullptr : &kept;
  }
  ~KeptScope() { ctx.kept_tokens = nullptr; }
};

}  // namespace

Encoded encode(const CreModel& m, ForwardContext& ctx, Var images, const std::vector<PatchMask>* masks) {
  const auto& s = images.shape();
  const Shape want = m.spec().image.sample_shape();
  if (s.size() != 4 || !std::equal(want.begin(), want.end(), s.begin() + 1)) {
    throw ShapeError("encode: expected [B, " + std::to_string(want[0]) + ", " + std::to_string(want[1]) + ", " +
                     std::to_string(want[2]) + "], got " + to_string(s));
  }
  Encoded out;
  if (masks) {
    if (m.spec().family != Family::vit) throw Error("encode: masks apply to vit models only");
    if (masks->size() != s[0]) throw ShapeError("encode: one mask per sample required");
    for (const auto& pm : *masks) {
      if (pm.num_patches != m.num_patches()) throw ShapeError("encode: mask built for a different patch grid");
      out.kept.push_back(pm.kept);
    }
  }
  KeptScope scope(ctx, out.kept);
  out.z = m.encoder.forward(images, ctx);
  return out;
}

Var decode(const CreModel& m, ForwardContext& ctx, const Encoded& z) {
  KeptScope scope(ctx, z.kept);
  return m.decoder.forward(z.z, ctx);
}

Var classify(const CreModel& m, ForwardContext& ctx, const Encoded& z) { return m.classifier.forward(z.z, ctx); }

CreLoss cre_loss(const CreModel& m, ForwardContext& ctx, Var images, const std::vector<std::size_t>& labels,
                 std::uint64_t mask_seed, LossGradients mode) {
  const ModelSpec& spec = m.spec();
  const double lambda = spec.lambda;
  CreLoss out;
  const bool masked = spec.masking != MaskingMode::none;
  if (masked) out.masks = sample_masks(images.shape()[0], m.num_patches(), spec.mask_ratio, mask_seed);

  Encoded enc = encode(m, ctx, images, masked ? &out.masks : nullptr);
  // The decoder sees z with its adjoint scaled by lambda, the classifier by
  // 1 - lambda, so one backward pass of mse + ce routes each module its own loss.
  const bool routed = mode == LossGradients::per_module;
  Encoded to_decoder{routed ? ops::grad_scale(enc.z, lambda) : enc.z, enc.kept};
  Encoded to_classifier{routed ? ops::grad_scale(enc.z, 1.0 - lambda) : enc.z, enc.kept};
  out.reconstruction = decode(m, ctx, to_decoder);
  out.logits = classify(m, ctx, to_classifier);

  if (spec.masking == MaskingMode::v1) {
    out.mse = masked_mse_loss(out.reconstruction, images, masked_pixel_weights(spec.image, m.patch_size(), out.masks));
  } else {
    out.mse = mse_loss(out.reconstruction, images);
  }
  out.ce = cross_entropy_loss(out.logits, labels);
  out.total = ops::add(ops::scale(out.mse, lambda), ops::scale(out.ce, 1.0 - lambda));
  out.objective = routed ? ops::add(out.mse, out.ce) : out.total;
  return out;
}

}  // namespace cre
