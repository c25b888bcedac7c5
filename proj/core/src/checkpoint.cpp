#include "ssrc/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ssrc {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', 'C', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class T>
void put(std::string& buf, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint " + path_ + ": truncated");
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(const std::string& prefix, const ParameterList& params) {
  for (const auto& p : params) tensors.push_back({prefix + p.name, p.tensor.detach()});
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const NamedParameter& p) { return p.name == name; });
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& p : tensors) {
    if (p.name == name) return p.tensor;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::restore(const std::string& prefix, const ParameterList& params) const {
  for (const auto& p : params) {
    const Tensor& src = tensor(prefix + p.name);
    if (src.shape() != p.tensor.shape()) {
      throw CheckpointError("checkpoint tensor '" + prefix + p.name + "' has shape " + shape_str(src.shape()) +
                            ", expected " + shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    auto out = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), out.begin());
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kVersion);
  put<std::uint32_t>(buf, sizeof(Scalar));
  put<std::uint64_t>(buf, metadata.size());
  for (const auto& [k, v] : metadata) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(k.size()));
    buf += k;
    put<std::uint64_t>(buf, v.size());
    buf += v;
  }
  put<std::uint64_t>(buf, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    const auto& shape = t.tensor.shape();
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::int64_t>(buf, d);
    const auto data = t.tensor.data();
    buf.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  }
  put<std::uint64_t>(buf, fnv1a(buf));

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (buf.size() < sizeof(kMagic) + 16 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint " + where + ": bad header magic");
  }
  {
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - sizeof(stored), sizeof(stored));
    if (stored != fnv1a(buf.substr(0, buf.size() - sizeof(stored)))) {
      throw CheckpointError("checkpoint " + where + ": checksum mismatch (file corrupt)");
    }
  }
  Reader r(buf, where);
  r.bytes(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw CheckpointError("checkpoint " + where + ": unsupported version " + std::to_string(version));
  }
  const auto scalar_bytes = r.get<std::uint32_t>();
  if (scalar_bytes != sizeof(Scalar)) {
    throw CheckpointError("checkpoint " + where + ": stored with " + std::to_string(scalar_bytes) +
                          "-byte scalars, this build uses " + std::to_string(sizeof(Scalar)));
  }
  Checkpoint ck;
  const auto nmeta = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    const auto klen = r.get<std::uint32_t>();
    std::string key = r.bytes(klen);
    const auto vlen = r.get<std::uint64_t>();
    ck.metadata[key] = r.bytes(vlen);
  }
  const auto ntensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < ntensors; ++i) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name = r.bytes(nlen);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::int64_t>();
    const auto n = numel_of(shape);
    const std::string raw = r.bytes(static_cast<std::size_t>(n) * sizeof(Scalar));
    std::vector<Scalar> values(static_cast<std::size_t>(n));
    std::memcpy(values.data(), raw.data(), raw.size());
    ck.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(values))});
  }
  if (r.pos() + sizeof(std::uint64_t) != buf.size()) {
    throw CheckpointError("checkpoint " + where + ": trailing bytes after tensor table");
  }
  return ck;
}

}  // namespace ssrc
