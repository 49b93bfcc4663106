#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cre/models.hpp"

namespace cre::data {

enum class Split { train, test };

std::string_view to_string(Split s);

/// Images [N, C, H, W] in [-1, 1], labels in [0, 10).
struct Dataset {
  std::string name;
  Tensor images;
  std::vector<std::size_t> labels;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  ImageShape image() const;
};

/// Byte b maps to b / 127.5 - 1.
double pixel_value(std::uint8_t byte);

/// IDX image (magic 2051) and label (magic 2049) files, big-endian headers.
/// Errors name the file and byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& name = "idx",
                 Split split = Split::train);
/// CIFAR-10 binary batches: 1 label byte then 1024 R, 1024 G, 1024 B bytes per record.
Dataset load_cifar10(const std::vector<std::string>& files, Split split = Split::train);

/// Dataset root: `override` if non-empty, else $CRE_DATA_ROOT, else "data".
std::string data_root(const std::string& override_root = "");

/// Loads "mnist", "fashion_mnist" or "cifar10" from the standard file names
/// under <root>/<name>/.
Dataset load_named(const std::string& name, const std::string& root, Split split);

/// [N, C, H, W] -> [N, P, C*p*p] with row-major patches, each patch laid out (c, r, q).
Tensor patchify(const Tensor& images, std::size_t patch);
Tensor unpatchify(const Tensor& tokens, const ImageShape& image, std::size_t patch);

/// Rotates every image by its own angle (degrees, counter-clockwise) about the
/// image center with bilinear resampling; samples falling outside read -1.
Tensor rotate(const Tensor& images, std::span<const double> degrees);
/// Per-image angle uniform in [-max_degrees, max_degrees], drawn from `seed`.
Tensor augment_rotate(const Tensor& images, double max_degrees = 15.0, std::uint64_t seed = 0);

/// Index batches covering [0, n). With a seed the order is a permutation drawn
/// from it; without one, storage order. The last batch may be partial.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::optional<std::uint64_t> shuffle_seed);

struct Batch {
  Tensor images;
  std::vector<std::size_t> labels;
};

Batch gather(const Dataset& d, std::span<const std::size_t> indices);

/// The first `n` samples of a seeded shuffle; the whole set when n is 0 or >= size.
Dataset limit(const Dataset& d, std::size_t n, std::uint64_t seed);

}  // namespace cre::data
