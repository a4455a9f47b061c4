#ifndef GSNTK_TASKS_FOURIER_HPP
#define GSNTK_TASKS_FOURIER_HPP

#include "../linop.hpp"

#include <numbers>

namespace gsntk {

/// Columns (cos 2πf x, sin 2πf x) for f = 1..F, interleaved per frequency.
/// F = 0 returns the input unchanged.
inline RowMatrix fourier_embed(const RowMatrix& x, Index frequencies) {
  if (frequencies < 0) throw std::invalid_argument("fourier_embed: frequency count must be >= 0");
  if (frequencies == 0) return x;
  if (x.cols() != 1) throw ShapeError("fourier_embed: expects a single scalar input channel");
  RowMatrix out(x.rows(), 2 * frequencies);
  for (Index f = 1; f <= frequencies; ++f) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(f);
    out.col(2 * (f - 1)) = (w * x.col(0).array()).cos().matrix();
    out.col(2 * (f - 1) + 1) = (w * x.col(0).array()).sin().matrix();
  }
  return out;
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_FOURIER_HPP
