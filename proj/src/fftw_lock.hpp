#pragma once

#include <mutex>

namespace mfg::detail {

// FFTW's planner is not thread-safe; every plan creation and destruction
// goes through this lock.
std::mutex& fftw_planner_mutex();

}  // namespace mfg::detail
