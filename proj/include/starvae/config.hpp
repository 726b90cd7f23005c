#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace starvae::config {

/// Flat key=value document. Blank lines and lines starting with '#' are
/// ignored. A line "[section]" prefixes following keys with "section.",
/// so "[train]\nepochs=5" and "train.epochs=5" are equivalent.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

double to_double(const std::string& key, std::string_view text);
long long to_int(const std::string& key, std::string_view text);

}  // namespace starvae::config
