#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace tio {

/// Layered key-value configuration: compiled defaults < JSON file < overrides.
/// Keys are dotted paths ("imu.sigma_g"). Unknown keys fall back to the
/// caller-supplied default, so modules own their own defaults.
class Config {
 public:
  Config() : root_(nlohmann::json::object()) {}
  explicit Config(nlohmann::json j) : root_(std::move(j)) {}

  static Config fromFile(const std::string& path);

  template <typename T>
  T get(const std::string& dotted_key, const T& fallback) const {
    const nlohmann::json* node = find(dotted_key);
    if (node == nullptr || node->is_null()) return fallback;
    return node->get<T>();
  }

  bool has(const std::string& dotted_key) const { return find(dotted_key) != nullptr; }

  // "a.b.c=value" override; value parsed as JSON, else kept as string.
  void setFromString(const std::string& assignment);
  void set(const std::string& dotted_key, nlohmann::json value);

  // Deep-merges `other` on top of this config.
  void merge(const Config& other);

  const nlohmann::json& json() const { return root_; }

  // FNV-1a over the canonical serialization; reports embed this so runs
  // with identical configuration are comparable.
  std::string hash() const;

 private:
  const nlohmann::json* find(const std::string& dotted_key) const;
  nlohmann::json root_;
};

}  // namespace tio
