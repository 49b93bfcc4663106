#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cre/nn.hpp"

namespace cre {

enum class Family { fc, cnn, vit };
enum class ModelSize { small, medium, large };
enum class MaskingMode { none, v1, v2 };

std::string_view to_string(Family f);
std::string_view to_string(ModelSize s);
std::string_view to_string(MaskingMode m);
Family parse_family(std::string_view s);
ModelSize parse_size(std::string_view s);
MaskingMode parse_masking(std::string_view s);

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;

  std::size_t pixels() const { return channels * height * width; }
  Shape sample_shape() const { return {channels, height, width}; }
  bool operator==(const ImageShape&) const = default;
};

struct ModelSpec {
  Family family = Family::fc;
  ModelSize size = ModelSize::small;
  // Latent width (fc), embedding width (vit); 0 picks the fixed cnn latent.
  std::size_t n = 16;
  ImageShape image;
  double lambda = 0.5;
  MaskingMode masking = MaskingMode::none;
  double mask_ratio = 0.66;
  double dropout = 0.3;   // cnn/large Dropout2d
  double droppath = 0.2;  // vit/large encoder blocks
  std::uint64_t seed = 0;
};

/// Kept patch indices for one image, ascending.
struct PatchMask {
  std::size_t num_patches = 0;
  std::vector<std::size_t> kept;
  std::uint64_t seed = 0;
};

/// round((1 - ratio) * num_patches), at least 1.
std::size_t kept_count(std::size_t num_patches, double ratio);
PatchMask sample_mask(std::size_t num_patches, double ratio, std::uint64_t seed);
/// One mask per sample; sample i uses mix_seed(seed, i).
std::vector<PatchMask> sample_masks(std::size_t batch, std::size_t num_patches, double ratio, std::uint64_t seed);

enum class RepresentationKind { latent, pca, rp };

/// Materialized representation: [B, n] for fc/cnn/pca/rp, [B, tokens, D] for vit.
struct Representation {
  RepresentationKind kind = RepresentationKind::latent;
  Tensor payload;
};

class CreModel {
 public:
  explicit CreModel(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  void set_lambda(double lambda);

  nn::LayerStack encoder, decoder, classifier;

  /// Per-sample latent shape (after the encoder, before any token averaging).
  Shape latent_shape() const;
  /// Flattened latent size; for vit this is tokens x embed.
  std::size_t latent_size() const;

  // Patch layout, vit only.
  std::size_t patch_size() const { return patch_; }
  std::size_t num_patches() const { return tokens_; }

  /// Every parameter and buffer under stable names "encoder.", "decoder.", "classifier.".
  std::vector<nn::NamedParameter> named_parameters() const;

 private:
  ModelSpec spec_;
  std::size_t patch_ = 0, tokens_ = 0;
};

/// Builds any (family, size) combination of the architecture tables. Throws
/// Error for unknown combinations or incompatible image shapes.
std::unique_ptr<CreModel> build_cre(const ModelSpec& spec);

struct Encoded {
  Var z;
  // Per-sample kept token indices when the encoder saw a masked token set.
  std::vector<std::vector<std::size_t>> kept;
};

/// images [B, C, H, W] in [-1, 1]. Masks apply to vit models only.
Encoded encode(const CreModel& m, nn::ForwardContext& ctx, Var images, const std::vector<PatchMask>* masks = nullptr);
Var decode(const CreModel& m, nn::ForwardContext& ctx, const Encoded& z);
/// Logits [B, 10]; vit averages tokens first.
Var classify(const CreModel& m, nn::ForwardContext& ctx, const Encoded& z);

/// 1 on every pixel of a masked (not kept) patch, [B, C, H, W].
Tensor masked_pixel_weights(const ImageShape& image, std::size_t patch, const std::vector<PatchMask>& masks);

enum class LossGradients {
  // One backward pass of `objective` gives the decoder d mse, the classifier
  // d ce and the encoder d total. `total` is then for logging only.
  per_module,
  // Plain graph: `objective` is `total` and every gradient is d total.
  joint,
};

struct CreLoss {
  Var total;  // lambda * mse + (1 - lambda) * ce
  Var mse;
  Var ce;
  Var objective;
  Var reconstruction;
  Var logits;
  std::vector<PatchMask> masks;
};

/// Joint loss for one batch. Masked vit models draw masks from `mask_seed`;
/// v1 scores masked-patch pixels only.
CreLoss cre_loss(const CreModel& m, nn::ForwardContext& ctx, Var images, const std::vector<std::size_t>& labels,
                 std::uint64_t mask_seed, LossGradients mode = LossGradients::per_module);

// ---------------------------------------------------------------- checkpoints

struct CheckpointHeader {
  std::string family;
  std::string size;
  std::uint64_t n = 0;
  double lambda = 0.0;
  std::string masking_mode;
  std::uint64_t seed = 0;
  ImageShape image;
  double mask_ratio = 0.0;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_checkpoint(const std::string& path, const CheckpointHeader& header, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path, CheckpointHeader& header);

void save_model(const std::string& path, const CreModel& m);
/// Rebuilds the architecture from the header and restores every tensor.
std::unique_ptr<CreModel> load_model(const std::string& path);

}  // namespace cre
