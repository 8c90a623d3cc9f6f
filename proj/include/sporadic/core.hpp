#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sporadic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors. The CLI maps ConfigError to exit code 2 and NumericalError to 3.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or malformed input (bad dimensions, indices, ranges).
struct ConfigError : Error {
  using Error::Error;
};

struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

/// A numerical routine could not produce a trustworthy result.
struct NumericalError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Warnings go through a replaceable sink so tests can capture them.
// ---------------------------------------------------------------------------

using WarningSink = std::function<void(std::string_view)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (warning_sink()) warning_sink()(msg);
}

// ---------------------------------------------------------------------------
// Seed derivation. A master seed fans out into independent streams keyed by
// (stream tag, indices) through splitmix64 mixing, so a stream's draws never
// depend on how many other streams were consumed or in which order.
// ---------------------------------------------------------------------------

enum class Stream : std::uint64_t {
  dictionary = 0x44494354ULL,
  coefficients = 0x434f4546ULL,
  rip = 0x52495000ULL,
  perturbation = 0x50455254ULL,
  experiment = 0x45585052ULL,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t master, Parts... parts) noexcept {
  std::uint64_t h = splitmix64(master);
  ((h = splitmix64(h ^ splitmix64(static_cast<std::uint64_t>(parts)))), ...);
  return h;
}

using Engine = std::mt19937_64;

template <class... Parts>
Engine make_engine(std::uint64_t master, Stream stream, Parts... parts) {
  return Engine{derive_seed(master, static_cast<std::uint64_t>(stream), parts...)};
}

// ---------------------------------------------------------------------------
// Worker fan-out. Tasks pull indices from a shared counter; results are
// written by index, so output never depends on the number of workers.
// ---------------------------------------------------------------------------

template <class Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Small numeric helpers shared by several modules.
// ---------------------------------------------------------------------------

/// Flip `v` so that its largest-magnitude entry is positive (first one wins ties).
inline void fix_sign(Eigen::Ref<Vector> v) {
  if (v.size() == 0) return;
  Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

inline Vector sign_fixed(Vector v) {
  fix_sign(v);
  return v;
}

inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).sum();
}

inline double spectral_norm_symmetric(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue solver failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

/// min over t in {-1, +1} of ||a - t b||_2.
inline double signed_distance(const Vector& a, const Vector& b) {
  return std::min((a - b).norm(), (a + b).norm());
}

}  // namespace sporadic
