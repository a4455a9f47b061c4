#ifndef GSNTK_GSNTK_HPP
#define GSNTK_GSNTK_HPP

// Library headers without the experiment harness (see exp/ for that).

#include "linop.hpp"
#include "models/attention.hpp"
#include "models/gru.hpp"
#include "models/rnn.hpp"
#include "models/serialize.hpp"
#include "ntk.hpp"
#include "random.hpp"
#include "rnla.hpp"
#include "tasks/fourier.hpp"
#include "tasks/memory_pro.hpp"
#include "tasks/ntfp.hpp"
#include "tasks/student_teacher.hpp"
#include "tasks/targets.hpp"
#include "tasks/train.hpp"

#endif  // GSNTK_GSNTK_HPP
