#include "gridmpc/schedule.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace gridmpc {

bool ControlMove::is_zero() const {
  for (int i = 0; i < svc_delta.size(); ++i)
    if (svc_delta(i) != 0.0) return false;
  for (int i = 0; i < ls_shed.size(); ++i)
    if (ls_shed(i) != 0.0) return false;
  for (int s : tap_steps)
    if (s != 0) return false;
  return true;
}

ControlMove ControlSchedule::move_at(int k, const PowerSystemCase& c) const {
  if (k < 0 || k >= num_instants())
    throw ContractError("ControlSchedule::move_at: instant out of range");
  ControlMove move = ControlMove::zeros(c);
  move.svc_delta = entries[k].svc;
  move.ls_shed = entries[k].ls;
  const int src = k - ltc_delay_instants;
  if (src >= 0)
    for (size_t t = 0; t < entries[src].ltc_decision.size(); ++t)
      move.tap_steps[t] = entries[src].ltc_decision[t];
  return move;
}

std::vector<std::tuple<int, int, int>> ControlSchedule::pending_taps_after_end()
    const {
  std::vector<std::tuple<int, int, int>> out;
  for (int k = std::max(0, num_instants() - ltc_delay_instants); k < num_instants();
       ++k) {
    for (size_t t = 0; t < entries[k].ltc_decision.size(); ++t)
      if (entries[k].ltc_decision[t] != 0)
        out.emplace_back(k + ltc_delay_instants, static_cast<int>(t),
                         entries[k].ltc_decision[t]);
  }
  return out;
}

void ControlSchedule::validate_ltc_protocol() const {
  for (int k = 0; k + 1 < num_instants(); ++k) {
    for (size_t t = 0; t < entries[k].ltc_decision.size(); ++t) {
      if (entries[k].ltc_decision[t] != 0 &&
          t < entries[k + 1].ltc_decision.size() &&
          entries[k + 1].ltc_decision[t] != 0)
        throw ContractError("ltc " + std::to_string(t) + " decided at instant " +
                            std::to_string(k) + " and again at " +
                            std::to_string(k + 1));
    }
  }
}

namespace {
constexpr const char* kScheduleMagic = "gridmpc-schedule";
constexpr int kScheduleVersion = 1;
}  // namespace

void save_schedule(const ControlSchedule& s, const PowerSystemCase& c,
                   const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << kScheduleMagic << " v" << kScheduleVersion << "\n";
  os << "case " << (s.case_name.empty() ? std::string("unnamed") : s.case_name)
     << "\n";
  os << std::setprecision(17);
  os << "first " << s.first_time << "\n";
  os << "t_c " << s.t_c << "\n";
  os << "ltc_delay " << s.ltc_delay_instants << "\n";
  os << "instants " << s.num_instants() << "\n";
  os << "# instant channel value\n";
  for (int k = 0; k < s.num_instants(); ++k) {
    const auto& e = s.entries[k];
    for (int i = 0; i < e.svc.size(); ++i)
      os << k << " svc:" << c.svcs[i].bus << ' ' << e.svc(i) << "\n";
    for (int i = 0; i < e.ls.size(); ++i)
      os << k << " ls:" << c.ls_actuators[i].bus << ' ' << e.ls(i) << "\n";
    for (size_t t = 0; t < e.ltc_decision.size(); ++t)
      os << k << " ltc:" << t << ' ' << e.ltc_decision[t] << "\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

ControlSchedule load_schedule(const std::filesystem::path& path,
                              const PowerSystemCase& c) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open schedule " + path.string());
  std::string magic, version;
  if (!(is >> magic >> version) || magic != kScheduleMagic)
    throw IoError(path.string() + ": not a gridmpc schedule file");
  if (version != "v" + std::to_string(kScheduleVersion))
    throw IoError(path.string() + ": unsupported schedule version " + version);
  ControlSchedule s;
  std::string tag;
  int n = 0;
  if (!(is >> tag >> s.case_name) || tag != "case")
    throw IoError(path.string() + ": corrupt header");
  if (!(is >> tag >> s.first_time) || tag != "first")
    throw IoError(path.string() + ": corrupt header");
  if (!(is >> tag >> s.t_c) || tag != "t_c")
    throw IoError(path.string() + ": corrupt header");
  if (!(is >> tag >> s.ltc_delay_instants) || tag != "ltc_delay")
    throw IoError(path.string() + ": corrupt header");
  if (!(is >> tag >> n) || tag != "instants" || n < 0)
    throw IoError(path.string() + ": corrupt header");
  is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');

  s.entries.assign(n, ScheduleEntry{Vec::Zero(c.svcs.size()),
                                    Vec::Zero(c.ls_actuators.size()),
                                    std::vector<int>(c.ltcs.size(), 0)});
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    int k;
    std::string channel;
    double value;
    if (!(ss >> k >> channel >> value)) continue;
    if (k < 0 || k >= n) throw IoError(path.string() + ": instant out of range");
    const auto colon = channel.find(':');
    if (colon == std::string::npos)
      throw IoError(path.string() + ": malformed channel " + channel);
    const std::string family = channel.substr(0, colon);
    const int ref = std::stoi(channel.substr(colon + 1));
    if (family == "svc") {
      bool found = false;
      for (size_t i = 0; i < c.svcs.size(); ++i)
        if (c.svcs[i].bus == ref) {
          s.entries[k].svc(static_cast<int>(i)) = value;
          found = true;
        }
      if (!found) throw IoError(path.string() + ": unknown svc bus " + channel);
    } else if (family == "ls") {
      bool found = false;
      for (size_t i = 0; i < c.ls_actuators.size(); ++i)
        if (c.ls_actuators[i].bus == ref) {
          s.entries[k].ls(static_cast<int>(i)) = value;
          found = true;
        }
      if (!found) throw IoError(path.string() + ": unknown ls bus " + channel);
    } else if (family == "ltc") {
      if (ref < 0 || ref >= static_cast<int>(c.ltcs.size()))
        throw IoError(path.string() + ": unknown ltc index " + channel);
      s.entries[k].ltc_decision[ref] = static_cast<int>(std::lround(value));
    } else {
      throw IoError(path.string() + ": unknown channel family " + family);
    }
  }
  return s;
}

}  // namespace gridmpc
