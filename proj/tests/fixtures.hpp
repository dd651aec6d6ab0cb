#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <unistd.h>

#include "healnet/dataset.hpp"
#include "healnet/image.hpp"

namespace healnet::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("healnet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// In-memory series: `per_cohort` wounds per cohort, `days` each, tiny
/// images whose pixels encode (wound index, day).
inline std::vector<data::WoundSeries> mock_series(std::size_t per_cohort, std::size_t days, std::size_t side = 4) {
  std::vector<data::WoundSeries> out;
  for (auto cohort : {data::Cohort::Aged, data::Cohort::Young}) {
    for (std::size_t w = 0; w < per_cohort; ++w) {
      data::WoundSeries s;
      s.wound_id = std::string(data::to_string(cohort)) + "_" + (w < 10 ? "0" : "") + std::to_string(w);
      s.cohort = cohort;
      for (std::size_t d = 0; d < days; ++d) {
        auto img = std::make_shared<data::WoundImage>();
        img->wound_id = s.wound_id;
        img->cohort = cohort;
        img->day = static_cast<int>(d);
        img->pixels = Image(side, side);
        for (auto& v : img->pixels.pixels) v = static_cast<double>(d) / static_cast<double>(days);
        s.images.push_back(img);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace healnet::testing
