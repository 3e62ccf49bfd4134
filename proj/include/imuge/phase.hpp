#pragma once

#include <cstdint>

namespace imuge {

/// Where training sits in the progressive-recovery / task-decoupling schedule.
struct PhaseState {
  int stage = 4;          // 1..4; stage s recovers at 1/2^(4-s) of the full resolution
  double fade = 1.0;      // blend weight of the newest level, in [0, 1]
  bool decoupled = false;
  int64_t epoch = 0;
  int64_t step = 0;

  bool verifier_active() const { return stage == 4; }
  friend bool operator==(const PhaseState&, const PhaseState&) = default;
};

}  // namespace imuge
