#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "spacebond/embedding_store.hpp"
#include "spacebond/rng.hpp"

namespace testing_util {

inline spacebond::Matrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  spacebond::Rng rng(seed);
  spacebond::Matrix m(n, d);
  for (float& v : m.flat()) v = static_cast<float>(rng.normal());
  return m;
}

inline spacebond::Matrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  return spacebond::normalized_rows(random_matrix(n, d, seed));
}

inline std::vector<std::string> ids(std::size_t n, const std::string& prefix = "id") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("spacebond_" + tag + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_util
