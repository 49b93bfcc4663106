#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cre/models.hpp"

namespace cre {

namespace {

constexpr char kTag[4] = {'C', 'R', 'E', 'W'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(buf, n);
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t limit = 1 << 16) {
    const std::uint64_t n = u64();
    if (n > limit) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated");
    offset_ += n;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("checkpoint " + path_ + ": " + what + " at byte " + std::to_string(offset_));
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    read(reinterpret_cast<char*>(buf), static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::string path_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointHeader& h, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  Writer w(os);
  os.write(kTag, 4);
  w.u32(kVersion);
  w.str(h.family);
  w.str(h.size);
  w.u64(h.n);
  w.f64(h.lambda);
  w.str(h.masking_mode);
  w.u64(h.seed);
  w.u64(h.image.channels);
  w.u64(h.image.height);
  w.u64(h.image.width);
  w.f64(h.mask_ratio);
  w.u64(tensors.size());
  for (const auto& t : tensors) {
    w.str(t.name);
    w.u64(t.value.rank());
    for (auto d : t.value.shape) w.u64(d);
    for (double v : t.value.data) w.f64(v);
  }
  if (!os) throw Error("write failed for " + path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path, CheckpointHeader& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  Reader r(is, path);
  char tag[4];
  r.read(tag, 4);
  if (std::memcmp(tag, kTag, 4) != 0) r.fail("bad format tag");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
  h.family = r.str();
  h.size = r.str();
  h.n = r.u64();
  h.lambda = r.f64();
  h.masking_mode = r.str();
  h.seed = r.u64();
  h.image.channels = r.u64();
  h.image.height = r.u64();
  h.image.width = r.u64();
  h.mask_ratio = r.f64();
  const std::uint64_t count = r.u64();
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint64_t rank = r.u64();
    if (rank > 8) r.fail("rank " + std::to_string(rank) + " too large");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = r.u64();
      total *= d;
      if (total > (std::uint64_t{1} << 32)) r.fail("tensor too large");
    }
    t.value = Tensor(shape);
    for (auto& v : t.value.data) v = r.f64();
    out.push_back(std::move(t));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return out;
}

void save_model(const std::string& path, const CreModel& m) {
  const ModelSpec& s = m.spec();
  CheckpointHeader h{std::string(to_string(s.family)),
                     std::string(to_string(s.size)),
                     s.n,
                     s.lambda,
                     std::string(to_string(s.masking)),
                     s.seed,
                     s.image,
                     s.mask_ratio};
  std::vector<NamedTensor> tensors;
  for (const auto& np : m.named_parameters()) tensors.push_back({np.name, np.param->value});
  write_checkpoint(path, h, tensors);
}

std::unique_ptr<CreModel> load_model(const std::string& path) {
  CheckpointHeader h;
  auto tensors = read_checkpoint(path, h);
  ModelSpec spec;
  spec.family = parse_family(h.family);
  spec.size = parse_size(h.size);
  spec.n = h.n;
  spec.image = h.image;
  spec.lambda = h.lambda;
  spec.masking = parse_masking(h.masking_mode);
  spec.mask_ratio = h.mask_ratio;
  spec.seed = h.seed;
  auto model = build_cre(spec);
  auto params = model->named_parameters();
  if (params.size() != tensors.size()) {
    throw ParseError("checkpoint " + path + ": expected " + std::to_string(params.size()) + " tensors, found " +
                     std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != tensors[i].name || params[i].param->value.shape != tensors[i].value.shape) {
      throw ParseError("checkpoint " + path + ": tensor '" + tensors[i].name + "' does not match '" +
                       params[i].name + "'");
    }
    params[i].param->value = std::move(tensors[i].value);
    params[i].param->zero_grad();
  }
  return model;
}

}  // namespace cre
