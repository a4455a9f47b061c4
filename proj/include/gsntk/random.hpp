#ifndef GSNTK_RANDOM_HPP
#define GSNTK_RANDOM_HPP

// Counter-based seeding: every (seed, stream, counter) triple gets its own
// engine, so a probe column or sweep point never depends on how many draws
// happened before it.

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace gsntk {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0) {
  return Rng(derive_seed(seed, stream, counter));
}

/// Named streams keep unrelated draws from colliding.
enum Stream : std::uint64_t {
  kSketch = 0x51,
  kResidual = 0x52,
  kEigStart = 0x53,
  kInit = 0x100,
  kTask = 0x200,
  kProbeVectors = 0x300,
  kSweep = 0x400,
};

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, std::uint64_t stream,
                                       double stddev = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    auto rng = make_rng(seed, stream, static_cast<std::uint64_t>(c));
    std::normal_distribution<double> nd(0.0, stddev);
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = nd(rng);
  }
  return m;
}

inline Eigen::MatrixXd rademacher_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                                         std::uint64_t stream) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    auto rng = make_rng(seed, stream, static_cast<std::uint64_t>(c));
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = (rng() >> 63) ? 1.0 : -1.0;
  }
  return m;
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> nd(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = nd(rng);
  return m;
}

}  // namespace gsntk

#endif  // GSNTK_RANDOM_HPP
