#include "cre/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

namespace cre::data {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class IdxReader {
 public:
  IdxReader(std::string path) : path_(std::move(path)), bytes_(read_file(path_)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t count) {
    need(count);
    std::span<const std::uint8_t> s(bytes_.data() + pos_, count);
    pos_ += count;
    return s;
  }

  void finish() const {
    if (pos_ != bytes_.size()) {
      fail(pos_, std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }
  }

  std::size_t offset() const { return pos_; }

  [[noreturn]] void fail(std::size_t at, const std::string& what) const {
    throw ParseError(path_ + ": " + what + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t count) const {
    if (bytes_.size() - pos_ < count) {
      fail(pos_, "truncated: need " + std::to_string(count) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                     " left");
    }
  }

  std::string path_;
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

ImageShape Dataset::image() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

double pixel_value(std::uint8_t byte) { return static_cast<double>(byte) / 127.5 - 1.0; }

Dataset load_idx(const std::string& images_path, const std::string& labels_path, const std::string& name,
                 Split split) {
  IdxReader img(images_path);
  if (const auto magic = img.u32(); magic != 2051) img.fail(0, "bad image magic " + std::to_string(magic));
  const std::size_t count = img.u32(), rows = img.u32(), cols = img.u32();
  const auto pixels = img.take(count * rows * cols);
  img.finish();

  IdxReader lab(labels_path);
  if (const auto magic = lab.u32(); magic != 2049) lab.fail(0, "bad label magic " + std::to_string(magic));
  const std::size_t label_count = lab.u32();
  if (label_count != count) {
    lab.fail(4, "label count " + std::to_string(label_count) + " does not match image count " + std::to_string(count));
  }
  const std::size_t label_start = lab.offset();
  const auto labels = lab.take(count);
  lab.finish();

  Dataset d;
  d.name = name;
  d.split = split;
  d.images = Tensor({count, 1, rows, cols});
  for (std::size_t i = 0; i < pixels.size(); ++i) d.images[i] = pixel_value(pixels[i]);
  d.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (labels[i] > 9) lab.fail(label_start + i, "label " + std::to_string(labels[i]) + " out of range");
    d.labels.push_back(labels[i]);
  }
  return d;
}

Dataset load_cifar10(const std::vector<std::string>& files, Split split) {
  constexpr std::size_t record = 3073, plane = 1024;
  std::vector<std::vector<std::uint8_t>> blobs;
  std::size_t total = 0;
  for (const auto& f : files) {
    blobs.push_back(read_file(f));
    if (blobs.back().size() % record != 0) {
      throw ParseError(f + ": length " + std::to_string(blobs.back().size()) + " is not a multiple of 3073; record " +
                       std::to_string(blobs.back().size() / record) + " truncated at byte offset " +
                       std::to_string(blobs.back().size() / record * record));
    }
    total += blobs.back().size() / record;
  }
  Dataset d;
  d.name = "cifar10";
  d.split = split;
  d.images = Tensor({total, 3, 32, 32});
  d.labels.reserve(total);
  std::size_t n = 0;
  for (std::size_t fi = 0; fi < blobs.size(); ++fi) {
    const auto& b = blobs[fi];
    for (std::size_t r = 0; r < b.size() / record; ++r, ++n) {
      const std::uint8_t label = b[r * record];
      if (label > 9) {
        throw ParseError(files[fi] + ": label " + std::to_string(label) + " out of range at byte offset " +
                         std::to_string(r * record));
      }
      d.labels.push_back(label);
      for (std::size_t i = 0; i < 3 * plane; ++i) d.images[n * 3 * plane + i] = pixel_value(b[r * record + 1 + i]);
    }
  }
  return d;
}

std::string data_root(const std::string& override_root) {
  if (!override_root.empty()) return override_root;
  if (const char* env = std::getenv("CRE_DATA_ROOT"); env && *env) return env;
  return "data";
}

Dataset load_named(const std::string& name, const std::string& root, Split split) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / name;
  const bool train = split == Split::train;
  if (name == "mnist" || name == "fashion_mnist") {
    const std::string stem = train ? "train" : "t10k";
    Dataset d = load_idx((dir / (stem + "-images-idx3-ubyte")).string(), (dir / (stem + "-labels-idx1-ubyte")).string(),
                         name, split);
    return d;
  }
  if (name == "cifar10") {
    fs::path base = fs::exists(dir / "cifar-10-batches-bin") ? dir / "cifar-10-batches-bin" : dir;
    std::vector<std::string> files;
    if (train) {
      for (int i = 1; i <= 5; ++i) files.push_back((base / ("data_batch_" + std::to_string(i) + ".bin")).string());
    } else {
      files.push_back((base / "test_batch.bin").string());
    }
    return load_cifar10(files, split);
  }
  throw Error("unknown dataset '" + name + "' (expected mnist, fashion_mnist or cifar10)");
}

Tensor patchify(const Tensor& images, std::size_t patch) {
  if (images.rank() != 4) throw ShapeError("patchify: expected [N, C, H, W], got " + cre::to_string(images.shape));
  const std::size_t N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (patch == 0 || H % patch || W % patch) {
    throw ShapeError("patchify: " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch " +
                     std::to_string(patch));
  }
  const std::size_t gh = H / patch, gw = W / patch, P = gh * gw, len = C * patch * patch;
  Tensor out({N, P, len});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t p = (h / patch) * gw + w / patch;
          const std::size_t k = (c * patch + h % patch) * patch + w % patch;
          out[(n * P + p) * len + k] = images[((n * C + c) * H + h) * W + w];
        }
  return out;
}

Tensor unpatchify(const Tensor& tokens, const ImageShape& image, std::size_t patch) {
  const std::size_t C = image.channels, H = image.height, W = image.width;
  if (patch == 0 || H % patch || W % patch) throw ShapeError("unpatchify: image not divisible by patch");
  const std::size_t gw = W / patch, P = (H / patch) * gw, len = C * patch * patch;
  if (tokens.rank() != 3 || tokens.dim(1) != P || tokens.dim(2) != len) {
    throw ShapeError("unpatchify: expected [N, " + std::to_string(P) + ", " + std::to_string(len) + "], got " +
                     cre::to_string(tokens.shape));
  }
  const std::size_t N = tokens.dim(0);
  Tensor out({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const std::size_t p = (h / patch) * gw + w / patch;
          const std::size_t k = (c * patch + h % patch) * patch + w % patch;
          out[((n * C + c) * H + h) * W + w] = tokens[(n * P + p) * len + k];
        }
  return out;
}

Tensor rotate(const Tensor& images, std::span<const double> degrees) {
  if (images.rank() != 4) throw ShapeError("rotate: expected [N, C, H, W], got " + cre::to_string(images.shape));
  const std::size_t N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (degrees.size() != N) throw ShapeError("rotate: one angle per image required");
  const double cy = (static_cast<double>(H) - 1.0) / 2.0, cx = (static_cast<double>(W) - 1.0) / 2.0;
  Tensor out(images.shape, -1.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double t = degrees[n] * std::numbers::pi / 180.0;
    // exact values at quarter turns keep axis-aligned rotations lossless
    double cs = std::cos(t), sn = std::sin(t);
    if (std::abs(cs) < 1e-12) cs = 0.0;
    if (std::abs(sn) < 1e-12) sn = 0.0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const double dx = static_cast<double>(c) - cx, dy = static_cast<double>(r) - cy;
        const double sx = cx + cs * dx - sn * dy, sy = cy + sn * dx + cs * dy;
        const double fx = std::floor(sx), fy = std::floor(sy);
        const double ax = sx - fx, ay = sy - fy;
        const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        for (std::size_t ch = 0; ch < C; ++ch) {
          const double* src = images.data.data() + (n * C + ch) * H * W;
          auto at = [&](long y, long x) {
            if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return -1.0;
            return src[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
          };
          const double v = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                           ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
          out[((n * C + ch) * H + r) * W + c] = v;
        }
      }
  }
  return out;
}

Tensor augment_rotate(const Tensor& images, double max_degrees, std::uint64_t seed) {
  if (!(max_degrees >= 0.0 && max_degrees <= 30.0)) throw Error("augment_rotate: max degrees must lie in [0, 30]");
  if (images.rank() != 4) throw ShapeError("augment_rotate: expected [N, C, H, W], got " + cre::to_string(images.shape));
  Rng rng(seed);
  std::uniform_real_distribution<double> angle(-max_degrees, max_degrees);
  std::vector<double> degrees(images.dim(0));
  for (auto& d : degrees) d = max_degrees > 0.0 ? angle(rng) : 0.0;
  return rotate(images, degrees);
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw Error("batch_iter: batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  }
  return batches;
}

Batch gather(const Dataset& d, std::span<const std::size_t> indices) {
  const ImageShape im = d.image();
  const std::size_t per = im.pixels();
  Batch b{Tensor({indices.size(), im.channels, im.height, im.width}), {}};
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    if (k >= d.size()) throw Error("gather: index " + std::to_string(k) + " out of range");
    std::copy_n(d.images.data.begin() + static_cast<std::ptrdiff_t>(k * per), per,
                b.images.data.begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(d.labels[k]);
  }
  return b;
}

Dataset limit(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= d.size()) return d;
  auto order = batch_iter(d.size(), d.size(), seed).front();
  order.resize(n);
  Batch b = gather(d, order);
  return {d.name, std::move(b.images), std::move(b.labels), d.split};
}

}  // namespace cre::data
