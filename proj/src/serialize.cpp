#include "defgen/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace defgen {

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
  uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'D', 'G', 'T', '1'};

class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& out) : out_(out) {}

  void write(const void* data, size_t len) {
    hash_ = fnv1a(data, len, hash_);
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  }
  template <class T>
  void write_pod(T v) {
    write(&v, sizeof(T));
  }
  uint64_t hash() const { return hash_; }

 private:
  std::ostream& out_;
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class HashingReader {
 public:
  explicit HashingReader(std::istream& in) : in_(in) {}

  void read(void* data, size_t len) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (in_.gcount() != static_cast<std::streamsize>(len)) {
      throw CorruptCheckpoint("checkpoint truncated");
    }
    hash_ = fnv1a(data, len, hash_);
  }
  template <class T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  uint64_t hash() const { return hash_; }

 private:
  std::istream& in_;
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

void write_named_tensors(std::ostream& out, const std::string& meta_json,
                         const std::map<std::string, Tensor>& tensors) {
  HashingWriter w(out);
  w.write(kMagic, sizeof(kMagic));
  w.write_pod<uint64_t>(meta_json.size());
  w.write(meta_json.data(), meta_json.size());
  w.write_pod<uint32_t>(static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.write_pod<uint32_t>(static_cast<uint32_t>(name.size()));
    w.write(name.data(), name.size());
    w.write_pod<uint32_t>(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) w.write_pod<uint64_t>(static_cast<uint64_t>(d));
    w.write(t.values.data(), t.values.size() * sizeof(double));
  }
  const uint64_t checksum = w.hash();
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw IoError("failed writing tensor stream");
}

NamedTensorFile read_named_tensors(std::istream& in) {
  HashingReader r(in);
  char magic[4];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CorruptCheckpoint("bad checkpoint magic");
  }
  NamedTensorFile file;
  const uint64_t meta_len = r.read_pod<uint64_t>();
  if (meta_len > (1ULL << 30)) throw CorruptCheckpoint("implausible metadata length");
  file.meta_json.resize(meta_len);
  if (meta_len > 0) r.read(file.meta_json.data(), meta_len);
  const uint32_t count = r.read_pod<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.read_pod<uint32_t>();
    if (name_len > (1U << 20)) throw CorruptCheckpoint("implausible tensor name length");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const uint32_t rank = r.read_pod<uint32_t>();
    if (rank > 8) throw CorruptCheckpoint("implausible tensor rank");
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int64_t>(r.read_pod<uint64_t>());
      if (shape[d] < 0 || shape[d] > (1LL << 32)) throw CorruptCheckpoint("implausible dimension");
      numel *= shape[d];
    }
    if (numel > (1LL << 32)) throw CorruptCheckpoint("implausible tensor size");
    Tensor t = Tensor::zeros(shape);
    if (numel > 0) r.read(t.values.data(), static_cast<size_t>(numel) * sizeof(double));
    file.tensors.emplace(std::move(name), std::move(t));
  }
  const uint64_t expected = r.hash();
  uint64_t stored;
  in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (in.gcount() != sizeof(stored)) throw CorruptCheckpoint("checkpoint truncated at checksum");
  if (stored != expected) throw CorruptCheckpoint("checkpoint checksum mismatch");
  return file;
}

void write_named_tensors_file(const std::string& path, const std::string& meta_json,
                              const std::map<std::string, Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_named_tensors(out, meta_json, tensors);
}

NamedTensorFile read_named_tensors_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return read_named_tensors(in);
}

uint64_t tensors_fingerprint(const std::map<std::string, Tensor>& tensors) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.values.data(), t.values.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace defgen
