#include "vlp/serialize.hpp"

#include <cstring>
#include <fstream>

namespace vlp {

namespace {
constexpr char kMagic[8] = {'V', 'L', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void Checkpoint::put_f64(const std::string& key, std::vector<int64_t> dims,
                         std::vector<double> data) {
  ArrayEntry e;
  e.dtype = ArrayEntry::kF64;
  e.dims = std::move(dims);
  e.f64 = std::move(data);
  if (e.numel() != static_cast<int64_t>(e.f64.size()))
    throw CheckpointError("put_f64: dims do not match data for " + key);
  entries_[key] = std::move(e);
}

void Checkpoint::put_u64(const std::string& key, std::vector<uint64_t> data) {
  ArrayEntry e;
  e.dtype = ArrayEntry::kU64;
  e.dims = {static_cast<int64_t>(data.size())};
  e.u64 = std::move(data);
  entries_[key] = std::move(e);
}

void Checkpoint::put_u8(const std::string& key, std::vector<uint8_t> data) {
  ArrayEntry e;
  e.dtype = ArrayEntry::kU8;
  e.dims = {static_cast<int64_t>(data.size())};
  e.u8 = std::move(data);
  entries_[key] = std::move(e);
}

const ArrayEntry& Checkpoint::find(const std::string& key, ArrayEntry::Dtype want) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw CheckpointError("missing key: " + key);
  if (it->second.dtype != want) throw CheckpointError("dtype mismatch for key: " + key);
  return it->second;
}

const std::vector<double>& Checkpoint::f64(const std::string& key) const {
  return find(key, ArrayEntry::kF64).f64;
}
const std::vector<uint64_t>& Checkpoint::u64(const std::string& key) const {
  return find(key, ArrayEntry::kU64).u64;
}
const std::vector<uint8_t>& Checkpoint::u8(const std::string& key) const {
  return find(key, ArrayEntry::kU8).u8;
}
double Checkpoint::scalar(const std::string& key) const {
  const auto& v = f64(key);
  if (v.size() != 1) throw CheckpointError("scalar key has wrong size: " + key);
  return v[0];
}
uint64_t Checkpoint::scalar_u64(const std::string& key) const {
  const auto& v = u64(key);
  if (v.size() != 1) throw CheckpointError("scalar key has wrong size: " + key);
  return v[0];
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f.write(kMagic, 8);
  f.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  uint64_t n = entries_.size();
  f.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& [key, e] : entries_) {
    uint32_t klen = static_cast<uint32_t>(key.size());
    f.write(reinterpret_cast<const char*>(&klen), sizeof(klen));
    f.write(key.data(), klen);
    uint8_t dt = static_cast<uint8_t>(e.dtype);
    f.write(reinterpret_cast<const char*>(&dt), 1);
    uint8_t nd = static_cast<uint8_t>(e.dims.size());
    f.write(reinterpret_cast<const char*>(&nd), 1);
    for (int64_t d : e.dims) f.write(reinterpret_cast<const char*>(&d), sizeof(d));
    uint64_t bytes = 0;
    const char* payload = nullptr;
    switch (e.dtype) {
      case ArrayEntry::kF64:
        bytes = e.f64.size() * sizeof(double);
        payload = reinterpret_cast<const char*>(e.f64.data());
        break;
      case ArrayEntry::kU64:
        bytes = e.u64.size() * sizeof(uint64_t);
        payload = reinterpret_cast<const char*>(e.u64.data());
        break;
      case ArrayEntry::kU8:
        bytes = e.u8.size();
        payload = reinterpret_cast<const char*>(e.u8.data());
        break;
    }
    f.write(reinterpret_cast<const char*>(&bytes), sizeof(bytes));
    if (bytes) f.write(payload, static_cast<std::streamsize>(bytes));
  }
  if (!f) throw CheckpointError("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("bad magic in " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!f || version != kVersion)
    throw CheckpointError("unsupported checkpoint version in " + path);
  uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!f) throw CheckpointError("truncated header in " + path);
  Checkpoint out;
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t klen = 0;
    f.read(reinterpret_cast<char*>(&klen), sizeof(klen));
    if (!f || klen > 4096) throw CheckpointError("truncated or invalid key in " + path);
    std::string key(klen, '\0');
    f.read(key.data(), klen);
    uint8_t dt = 0, nd = 0;
    f.read(reinterpret_cast<char*>(&dt), 1);
    f.read(reinterpret_cast<char*>(&nd), 1);
    if (!f || dt > ArrayEntry::kU8 || nd > 8) throw CheckpointError("corrupt entry in " + path);
    ArrayEntry e;
    e.dtype = static_cast<ArrayEntry::Dtype>(dt);
    e.dims.resize(nd);
    for (auto& d : e.dims) f.read(reinterpret_cast<char*>(&d), sizeof(d));
    uint64_t bytes = 0;
    f.read(reinterpret_cast<char*>(&bytes), sizeof(bytes));
    if (!f) throw CheckpointError("truncated entry header in " + path);
    size_t expect = 0;
    switch (e.dtype) {
      case ArrayEntry::kF64:
        expect = e.numel() * sizeof(double);
        e.f64.resize(e.numel());
        f.read(reinterpret_cast<char*>(e.f64.data()), static_cast<std::streamsize>(bytes));
        break;
      case ArrayEntry::kU64:
        expect = e.numel() * sizeof(uint64_t);
        e.u64.resize(e.numel());
        f.read(reinterpret_cast<char*>(e.u64.data()), static_cast<std::streamsize>(bytes));
        break;
      case ArrayEntry::kU8:
        expect = e.numel();
        e.u8.resize(e.numel());
        f.read(reinterpret_cast<char*>(e.u8.data()), static_cast<std::streamsize>(bytes));
        break;
    }
    if (bytes != expect || !f) throw CheckpointError("truncated payload for " + key + " in " + path);
    out.entries_[key] = std::move(e);
  }
  return out;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  auto it2 = o.entries_.begin();
  for (auto it = entries_.begin(); it != entries_.end(); ++it, ++it2) {
    if (it->first != it2->first) return false;
    const ArrayEntry& a = it->second;
    const ArrayEntry& b = it2->second;
    if (a.dtype != b.dtype || a.dims != b.dims) return false;
    // bitwise comparison for doubles
    if (a.f64.size() != b.f64.size() || a.u64 != b.u64 || a.u8 != b.u8) return false;
    for (size_t i = 0; i < a.f64.size(); ++i) {
      uint64_t ba, bb;
      std::memcpy(&ba, &a.f64[i], 8);
      std::memcpy(&bb, &b.f64[i], 8);
      if (ba != bb) return false;
    }
  }
  return true;
}

}  // namespace vlp
