#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gasda/rng.hpp"
#include "gasda/tensor.hpp"

namespace gasda::testing {

template <class T = Wide>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<T> v(s.numel());
  for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(s, std::move(v), requires_grad);
}

template <class T>
Tensor<T> filled(Shape s, T value) {
  return Tensor<T>::full(s, value);
}

template <class T>
std::vector<double> as_doubles(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

template <class T>
void expect_all_near(const Tensor<T>& t, const std::vector<double>& want, double tol) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(static_cast<double>(t[i]), want[i], tol) << "element " << i;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("gasda_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace gasda::testing
