#pragma once

// Checkpoint container: a named map of typed arrays with a bit-exact binary
// round trip. Keys cover every parameter tensor, optimizer moment, BN running
// statistic, the temperature, frozen flags, and the trainer bookkeeping.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vlp/common.hpp"

namespace vlp {

struct ArrayEntry {
  enum Dtype : uint8_t { kF64 = 0, kU64 = 1, kU8 = 2 };
  Dtype dtype = kF64;
  std::vector<int64_t> dims;
  std::vector<double> f64;
  std::vector<uint64_t> u64;
  std::vector<uint8_t> u8;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
  }
};

class Checkpoint {
 public:
  void put_f64(const std::string& key, std::vector<int64_t> dims, std::vector<double> data);
  void put_u64(const std::string& key, std::vector<uint64_t> data);
  void put_u8(const std::string& key, std::vector<uint8_t> data);
  void put_scalar(const std::string& key, double v) { put_f64(key, {1}, {v}); }
  void put_scalar_u64(const std::string& key, uint64_t v) { put_u64(key, {v}); }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::vector<double>& f64(const std::string& key) const;
  const std::vector<uint64_t>& u64(const std::string& key) const;
  const std::vector<uint8_t>& u8(const std::string& key) const;
  double scalar(const std::string& key) const;
  uint64_t scalar_u64(const std::string& key) const;

  const std::map<std::string, ArrayEntry>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  bool operator==(const Checkpoint& o) const;

 private:
  std::map<std::string, ArrayEntry> entries_;
  const ArrayEntry& find(const std::string& key, ArrayEntry::Dtype want) const;
};

}  // namespace vlp
