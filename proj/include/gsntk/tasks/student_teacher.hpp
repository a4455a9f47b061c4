#ifndef GSNTK_TASKS_STUDENT_TEACHER_HPP
#define GSNTK_TASKS_STUDENT_TEACHER_HPP

// Realizable RNN regression: the student equals the teacher except for one
// re-initialized family, which is the only trainable one.

#include "../models/rnn.hpp"
#include "../rnla.hpp"

namespace gsntk {

struct StudentTeacherConfig {
  std::string family = "rec";  // "rec" or "in"
  double teacher_gain = 1.0;
  double gain = 1.0;
  Index n_in = 16;
  Index n_h = 64;
  Index n_out = 1;
  Index n_t = 40;
  Index n_x = 128;
  Index input_rank = 0;  // 0 = full rank
  std::uint64_t seed = 0;

  void validate() const {
    if (family != "rec" && family != "in")
      throw std::invalid_argument("StudentTeacherConfig: family must be rec or in, got " + family);
    if (n_in < 1 || n_h < 1 || n_out < 1 || n_t < 1 || n_x < 1)
      throw std::invalid_argument("StudentTeacherConfig: sizes must be positive");
    if (input_rank < 0 || input_rank > n_in)
      throw std::invalid_argument("StudentTeacherConfig: input rank must lie in [0, n_in]");
    if (gain < 0.0 || teacher_gain < 0.0) throw std::invalid_argument("StudentTeacherConfig: gains must be >= 0");
  }
};

struct StudentTeacher {
  Rnn teacher;
  Rnn student;
  TaskBatch batch;
};

/// Gaussian inputs, optionally confined to `rank` random orthonormal input directions.
inline RowMatrix gaussian_inputs(Index k, Index n_in, Index rank, std::uint64_t seed) {
  if (rank == 0 || rank == n_in) return gaussian_matrix(k, n_in, seed, kTask);
  Matrix basis = orthonormal_columns(gaussian_matrix(n_in, rank, seed, kTask + 2));
  // Scaled so the per-entry variance matches the full-rank case.
  return gaussian_matrix(k, rank, seed, kTask) * basis.transpose() *
         std::sqrt(static_cast<double>(n_in) / static_cast<double>(rank));
}

inline StudentTeacher student_teacher(const StudentTeacherConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, kInit);
  Rnn teacher = Rnn::xavier(cfg.n_in, cfg.n_h, cfg.n_out, cfg.teacher_gain, rng);
  Rnn student = teacher;
  Rng srng = make_rng(cfg.seed, kInit, 1);
  if (cfg.family == "rec") {
    student.params["rec"] = xavier_normal(cfg.n_h, cfg.n_h, cfg.gain, srng);
    student.params.set_trainable("in", false);
  } else {
    student.params["in"] = xavier_normal(cfg.n_h, cfg.n_in, cfg.gain, srng);
    student.params.set_trainable("rec", false);
  }
  student.params.set_trainable("out", false);
  TaskBatch b = TaskBatch::from_inputs(cfg.n_x, cfg.n_t, gaussian_inputs(cfg.n_x * cfg.n_t, cfg.n_in, cfg.input_rank, cfg.seed));
  b.y = teacher.outputs(teacher.forward(b));
  return {std::move(teacher), std::move(student), std::move(b)};
}

}  // namespace gsntk

#endif  // GSNTK_TASKS_STUDENT_TEACHER_HPP
