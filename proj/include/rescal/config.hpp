#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rescal::config {

// Flat `key = value` run configuration. Every tunable in the toolkit has a
// registered default; unknown keys are rejected so typos cannot silently
// fall back. Each command writes a resolved snapshot next to its outputs.
class RunConfig {
 public:
  static RunConfig defaults();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Sorted key=value lines; identical content implies an identical run.
  std::string snapshot() const;
  void write_snapshot(const std::string& path) const;
  uint64_t content_hash() const;  // FNV-1a over the snapshot

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rescal::config
