#pragma once

#include <filesystem>
#include <vector>

#include "gridmpc/case.hpp"

namespace gridmpc {

/// Everything applied to the plant at one control instant: SVC susceptance
/// increments, load-shed amounts, and tap steps being implemented now
/// (decided two instants earlier).
struct ControlMove {
  Vec svc_delta;
  Vec ls_shed;
  std::vector<int> tap_steps;

  static ControlMove zeros(const PowerSystemCase& c) {
    return {Vec::Zero(c.svcs.size()), Vec::Zero(c.ls_actuators.size()),
            std::vector<int>(c.ltcs.size(), 0)};
  }
  bool is_zero() const;
};

/// Per-instant record: SVC/LS increments decided at k plus the LTC decisions
/// taken at k (which take effect ltc_delay_instants later).
struct ScheduleEntry {
  Vec svc;
  Vec ls;
  std::vector<int> ltc_decision;
};

struct ControlSchedule {
  std::string case_name;
  double first_time = 4.5;
  double t_c = 3.0;
  int ltc_delay_instants = 2;
  std::vector<ScheduleEntry> entries;

  int num_instants() const { return static_cast<int>(entries.size()); }
  double instant_time(int k) const { return first_time + k * t_c; }

  /// The move implemented at instant k: its own SVC/LS increments plus the
  /// tap steps whose decisions were taken at k - ltc_delay_instants.
  ControlMove move_at(int k, const PowerSystemCase& c) const;

  /// Tap decisions that land at instants >= num_instants (pending after the
  /// last entry), as (instant, ltc, steps).
  std::vector<std::tuple<int, int, int>> pending_taps_after_end() const;

  /// Checks the LTC protocol: a nonzero decision at k forbids one at k+1.
  /// Throws ContractError naming the instant on violation.
  void validate_ltc_protocol() const;
};

/// Versioned structured-text persistence: one (instant, channel, value) row
/// per entry component.
void save_schedule(const ControlSchedule& s, const PowerSystemCase& c,
                   const std::filesystem::path& path);
ControlSchedule load_schedule(const std::filesystem::path& path,
                              const PowerSystemCase& c);

}  // namespace gridmpc
