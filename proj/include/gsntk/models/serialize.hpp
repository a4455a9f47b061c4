#ifndef GSNTK_MODELS_SERIALIZE_HPP
#define GSNTK_MODELS_SERIALIZE_HPP

// Text container for named arrays:
//
//   gsntk-arrays 1
//   <count>
//   <name> <rows> <cols> <trainable 0|1>
//   <rows*cols hex-float values, column-major, whitespace separated>
//   ...
//
// Values are written with %a so a read-back is bit-exact.

#include "common.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

namespace gsntk {

inline std::string to_hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline void write_params(std::ostream& os, const ParamSet& ps) {
  os << "gsntk-arrays 1\n" << ps.families().size() << '\n';
  for (const auto& f : ps.families()) {
    if (f.name.find_first_of(" \t\n") != std::string::npos)
      throw std::invalid_argument("write_params: family name contains whitespace");
    os << f.name << ' ' << f.value.rows() << ' ' << f.value.cols() << ' ' << (f.trainable ? 1 : 0) << '\n';
    for (Index i = 0; i < f.value.size(); ++i) os << to_hexfloat(f.value.data()[i]) << (i + 1 < f.value.size() ? ' ' : '\n');
    if (f.value.size() == 0) os << '\n';
  }
}

inline ParamSet read_params(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "gsntk-arrays" || version != 1)
    throw std::runtime_error("read_params: not a gsntk-arrays v1 stream");
  std::size_t count = 0;
  if (!(is >> count)) throw std::runtime_error("read_params: missing array count");
  ParamSet ps;
  for (std::size_t a = 0; a < count; ++a) {
    std::string name;
    Index rows = 0, cols = 0;
    int trainable = 0;
    if (!(is >> name >> rows >> cols >> trainable) || rows < 0 || cols < 0)
      throw std::runtime_error("read_params: bad header for array " + std::to_string(a));
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      std::string tok;
      if (!(is >> tok)) throw std::runtime_error("read_params: truncated data in " + name);
      char* end = nullptr;
      m.data()[i] = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') throw std::runtime_error("read_params: bad value '" + tok + "' in " + name);
    }
    ps.add(name, std::move(m), trainable != 0);
  }
  return ps;
}

inline void save_params(const std::string& path, const ParamSet& ps) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_params: cannot open " + path);
  write_params(os, ps);
}

inline ParamSet load_params(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_params: cannot open " + path);
  return read_params(is);
}

/// Copies values and flags of a loaded set into a model's set (names and shapes must match).
inline void assign_params(ParamSet& dst, const ParamSet& src) {
  for (const auto& f : src.families()) {
    if (!dst.has(f.name)) throw std::invalid_argument("assign_params: unknown family " + f.name);
    auto& m = dst[f.name];
    if (m.rows() != f.value.rows() || m.cols() != f.value.cols())
      throw ShapeError("assign_params: shape mismatch for " + f.name);
    m = f.value;
    dst.set_trainable(f.name, f.trainable);
  }
}

}  // namespace gsntk

#endif  // GSNTK_MODELS_SERIALIZE_HPP
