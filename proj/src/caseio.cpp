#include "gridmpc/caseio.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gridmpc {

namespace fs = std::filesystem;

namespace {

struct LineReader {
  std::string file;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(file, line_no, what);
  }
};

std::vector<double> parse_numbers(const std::string& line, const LineReader& rd) {
  std::vector<double> vals;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    try {
      size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) rd.fail("malformed number '" + tok + "'");
    } catch (const std::logic_error&) {
      rd.fail("malformed number '" + tok + "'");
    }
  }
  return vals;
}

void need(const std::vector<double>& v, size_t n, const LineReader& rd,
          const std::string& what) {
  if (v.size() != n)
    rd.fail(what + " row needs " + std::to_string(n) + " columns, got " +
            std::to_string(v.size()));
}

}  // namespace

PowerSystemCase load_case(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open case file " + path.string());
  PowerSystemCase c;
  LineReader rd{path.string(), 0};
  std::string raw, section;
  while (std::getline(is, raw)) {
    ++rd.line_no;
    const auto hash = raw.find('#');
    std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
    std::istringstream probe(line);
    std::string first;
    if (!(probe >> first)) continue;

    if (first.front() == '[') {
      if (first.back() != ']') rd.fail("malformed section header " + first);
      section = first.substr(1, first.size() - 2);
      continue;
    }
    if (section.empty()) {
      if (first == "case") {
        probe >> c.name;
        continue;
      }
      if (first == "base_mva") {
        if (!(probe >> c.base_mva)) rd.fail("base_mva needs a value");
        continue;
      }
      rd.fail("unexpected token '" + first + "' before any section");
    }

    const auto vals = parse_numbers(line, rd);
    if (section == "buses") {
      need(vals, 4, rd, "[buses]");
      Bus b;
      b.id = static_cast<int>(vals[0]);
      b.v = vals[1];
      b.shunt_b = vals[2];
      b.is_lv_side = vals[3] != 0.0;
      c.buses.push_back(b);
    } else if (section == "lines") {
      need(vals, 6, rd, "[lines]");
      Line l;
      l.from = static_cast<int>(vals[0]);
      l.to = static_cast<int>(vals[1]);
      l.r = vals[2];
      l.x = vals[3];
      l.b = vals[4];
      l.in_service = vals[5] != 0.0;
      c.lines.push_back(l);
    } else if (section == "generators") {
      need(vals, 7, rd, "[generators]");
      Generator g;
      g.bus = static_cast<int>(vals[0]);
      g.h = vals[1];
      g.d = vals[2];
      g.xd_t = vals[3];
      g.p_dispatch = vals[4];
      g.v_setpoint = vals[5];
      g.reference = vals[6] != 0.0;
      c.generators.push_back(g);
    } else if (section == "loads") {
      need(vals, 10, rd, "[loads]");
      ErLoad l;
      l.bus = static_cast<int>(vals[0]);
      l.p0 = vals[1];
      l.q0 = vals[2];
      l.t_p = vals[3];
      l.t_q = vals[4];
      l.alpha_s = vals[5];
      l.alpha_t = vals[6];
      l.beta_s = vals[7];
      l.beta_t = vals[8];
      l.v0 = vals[9];
      c.loads.push_back(l);
    } else if (section == "svc") {
      need(vals, 5, rd, "[svc]");
      SvcDevice s;
      s.bus = static_cast<int>(vals[0]);
      s.b = vals[1];
      s.step_min = vals[2];
      s.step_max = vals[3];
      s.b_max = vals[4];
      c.svcs.push_back(s);
    } else if (section == "ltc") {
      need(vals, 8, rd, "[ltc]");
      LtcTransformer t;
      t.hv_bus = static_cast<int>(vals[0]);
      t.lv_bus = static_cast<int>(vals[1]);
      t.x = vals[2];
      t.ratio = vals[3];
      t.tap_step = vals[4];
      t.ratio_min = vals[5];
      t.ratio_max = vals[6];
      t.t_mech = vals[7];
      c.ltcs.push_back(t);
    } else if (section == "ls") {
      need(vals, 4, rd, "[ls]");
      LsActuator a;
      a.bus = static_cast<int>(vals[0]);
      a.step_min = vals[1];
      a.step_max = vals[2];
      a.shed_total = vals[3];
      c.ls_actuators.push_back(a);
    } else if (section == "avc") {
      need(vals, 3, rd, "[avc]");
      AvcSetting a;
      a.ltc = static_cast<int>(vals[0]);
      a.v_ref = vals[1];
      a.deadband = vals[2];
      c.avc.push_back(a);
    } else {
      rd.fail("unknown section [" + section + "]");
    }
  }
  // No generator marked: flag the largest-inertia machine as angle reference.
  if (!c.generators.empty()) {
    bool any = false;
    for (const auto& g : c.generators) any = any || g.reference;
    if (!any) {
      size_t best = 0;
      for (size_t i = 1; i < c.generators.size(); ++i)
        if (c.generators[i].h > c.generators[best].h) best = i;
      c.generators[best].reference = true;
    }
  }
  c.validate();
  return c;
}

void write_case(const PowerSystemCase& c, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  os << "case " << (c.name.empty() ? std::string("unnamed") : c.name) << "\n";
  os << "base_mva " << c.base_mva << "\n\n";
  os << "[buses]\n# id v shunt_b lv_flag\n";
  for (const auto& b : c.buses)
    os << b.id << ' ' << b.v << ' ' << b.shunt_b << ' ' << (b.is_lv_side ? 1 : 0)
       << "\n";
  os << "\n[lines]\n# from to r x b in_service\n";
  for (const auto& l : c.lines)
    os << l.from << ' ' << l.to << ' ' << l.r << ' ' << l.x << ' ' << l.b << ' '
       << (l.in_service ? 1 : 0) << "\n";
  os << "\n[generators]\n# bus H D xd_t p_dispatch v_setpoint ref\n";
  for (const auto& g : c.generators)
    os << g.bus << ' ' << g.h << ' ' << g.d << ' ' << g.xd_t << ' ' << g.p_dispatch
       << ' ' << g.v_setpoint << ' ' << (g.reference ? 1 : 0) << "\n";
  os << "\n[loads]\n# bus p0 q0 t_p t_q alpha_s alpha_t beta_s beta_t v0\n";
  for (const auto& l : c.loads)
    os << l.bus << ' ' << l.p0 << ' ' << l.q0 << ' ' << l.t_p << ' ' << l.t_q << ' '
       << l.alpha_s << ' ' << l.alpha_t << ' ' << l.beta_s << ' ' << l.beta_t << ' '
       << l.v0 << "\n";
  os << "\n[svc]\n# bus b step_min step_max b_max\n";
  for (const auto& s : c.svcs)
    os << s.bus << ' ' << s.b << ' ' << s.step_min << ' ' << s.step_max << ' '
       << s.b_max << "\n";
  os << "\n[ltc]\n# hv_bus lv_bus x ratio tap_step ratio_min ratio_max t_mech\n";
  for (const auto& t : c.ltcs)
    os << t.hv_bus << ' ' << t.lv_bus << ' ' << t.x << ' ' << t.ratio << ' '
       << t.tap_step << ' ' << t.ratio_min << ' ' << t.ratio_max << ' ' << t.t_mech
       << "\n";
  os << "\n[ls]\n# bus step_min step_max shed_total\n";
  for (const auto& a : c.ls_actuators)
    os << a.bus << ' ' << a.step_min << ' ' << a.step_max << ' ' << a.shed_total
       << "\n";
  os << "\n[avc]\n# ltc v_ref deadband\n";
  for (const auto& a : c.avc)
    os << a.ltc << ' ' << a.v_ref << ' ' << a.deadband << "\n";
  if (!os) throw IoError("failed writing " + path.string());
}

fs::path resolve_case_path(const std::string& name_or_path) {
  if (fs::exists(name_or_path)) return name_or_path;
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("GRIDMPC_CASE_DIR")) dirs.emplace_back(env);
#ifdef GRIDMPC_CASE_DIR
  dirs.emplace_back(GRIDMPC_CASE_DIR);
#endif
  dirs.emplace_back("cases");
  std::string base = name_or_path;
  if (base == "9bus") base = "ieee9";
  if (base == "39bus") base = "ieee39";
  for (const auto& d : dirs) {
    for (const auto& candidate :
         {d / base, d / (base + ".case"), d / (name_or_path)}) {
      if (fs::exists(candidate) && fs::is_regular_file(candidate)) return candidate;
    }
  }
  throw IoError("cannot resolve case '" + name_or_path + "'");
}

}  // namespace gridmpc
