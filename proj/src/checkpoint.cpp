#include "evssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evssl/errors.hpp"

namespace evssl::ckpt {
namespace {

constexpr char kMagic[8] = {'E', 'V', 'S', 'S', 'L', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kFormatVersion);
  const std::string meta = ckpt.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  std::uint64_t tensors = 0;
  for (const auto& [g, store] : ckpt.groups) tensors += store.size();
  put<std::uint64_t>(out, tensors);
  for (const auto& [group, store] : ckpt.groups) {
    for (const auto& [path, a] : store) {
      const std::string name = group + "/" + path;
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out += name;
      put<std::uint32_t>(out, static_cast<std::uint32_t>(a.rank()));
      for (std::size_t d : a.shape()) put<std::uint64_t>(out, d);
      out.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
    }
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(out.data());
  put<std::uint64_t>(out, fnv1a64({raw, out.size()}));
  return out;
}

Checkpoint decode(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("not a checkpoint file (bad magic)");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), body}) != stored)
    throw IoError("checkpoint checksum mismatch");
  Reader r(bytes, body);
  r.take(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                  std::to_string(kFormatVersion) + ")");
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > r.remaining()) throw IoError("checkpoint metadata length exceeds file size");
  try {
    ckpt.meta = nlohmann::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto tensors = r.get<std::uint64_t>();
  for (std::uint64_t t = 0; t < tensors; ++t) {
    const auto name = r.take(r.get<std::uint32_t>());
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw IoError("checkpoint tensor '" + name + "' has no group prefix");
    const auto rank = r.get<std::uint32_t>();
    num::Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d != 0 && count > r.remaining() / d) throw IoError("checkpoint tensor '" + name + "' is truncated");
      count *= d;
    }
    if (count > r.remaining() / sizeof(double)) throw IoError("checkpoint tensor '" + name + "' is truncated");
    const std::string raw = r.take(count * sizeof(double));
    std::vector<double> data(count);
    std::memcpy(data.data(), raw.data(), raw.size());
    ckpt.groups[name.substr(0, slash)].emplace(name.substr(slash + 1), num::Array(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw IoError("trailing bytes after the last checkpoint tensor");
  return ckpt;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted run never leaves a half-written file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode(ss.str());
}

}  // namespace evssl::ckpt
