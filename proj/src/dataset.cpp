#include "gridmpc/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <unordered_map>

#include "gridmpc/sensitivity.hpp"
#include "gridmpc/threading.hpp"

namespace gridmpc {

Vec flatten_bus_major(const Mat& v) {
  Vec out(v.rows() * v.cols());
  for (int b = 0; b < v.rows(); ++b)
    for (int s = 0; s < v.cols(); ++s) out(b * v.cols() + s) = v(b, s);
  return out;
}

namespace {

PowerSystemCase scaled_case(const PowerSystemCase& c, double range,
                            std::uint64_t seed, int scenario_index) {
  PowerSystemCase out = c;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL +
                      static_cast<std::uint64_t>(scenario_index));
  std::uniform_real_distribution<double> uni(1.0 - range, 1.0 + range);
  for (auto& load : out.loads) {
    const double f = range > 0.0 ? uni(rng) : 1.0;
    load.p0 *= f;
    load.q0 *= f;
  }
  return out;
}

// Simulates one plant under the nominal schedule. segs[0] is the segment
// before the first instant; segs[k+1] is the segment following instant k,
// k = 0..N_c (one segment beyond the last move). at_instant(k, sim) runs
// before the move at instant k is applied.
template <class Fn>
bool run_plant(const PowerSystemCase& c, const ScenarioConfig& scenario,
               const ControlSchedule& nominal, const MpcConfig& cfg, bool archive,
               std::vector<SampleBlock>* segs, Fn&& at_instant) {
  try {
    IntegratorConfig icfg;
    icfg.t_s = cfg.t_s;
    icfg.archive_jacobians = archive;
    Simulator sim = Simulator::from_equilibrium(c, 0.0, icfg);
    sim.add_events(scenario_events(scenario, c, cfg.t_s));
    for (const auto& [instant, ltc, steps] : nominal.pending_taps_after_end())
      sim.add_event(nominal.instant_time(instant), TapStep{ltc, steps});

    const double pre = scenario.first_instant - cfg.t_c;
    if (pre < 0.0)
      throw ContractError("first control instant must leave one interval of history");
    if (pre > 0.0) sim.advance(pre);
    segs->clear();
    segs->push_back(sim.advance(cfg.t_c));
    for (int k = 0; k < nominal.num_instants(); ++k) {
      at_instant(k, sim);
      sim.apply_control_move(nominal.move_at(k, sim.current_case()));
      segs->push_back(sim.advance(cfg.t_c));
    }
    at_instant(nominal.num_instants(), sim);
    segs->push_back(sim.advance(cfg.t_c));
    return true;
  } catch (const CollapseError&) {
    return false;
  }
}

struct RowBatch {
  std::vector<Vec> inputs;
  std::vector<Vec> targets;
  bool ok = false;
};

Dataset assemble(std::vector<RowBatch>&& batches, std::vector<std::string> in_labels,
                 std::vector<std::string> out_labels, double train_fraction,
                 std::uint64_t seed) {
  int skipped = 0;
  std::vector<const Vec*> ins, outs;
  for (const auto& b : batches) {
    if (!b.ok) {
      ++skipped;
      continue;
    }
    for (size_t i = 0; i < b.inputs.size(); ++i) {
      ins.push_back(&b.inputs[i]);
      outs.push_back(&b.targets[i]);
    }
  }
  // Exact dedup on 1e-9-quantized rows.
  auto quantize = [](const Vec& a, const Vec& b) {
    std::vector<long long> q;
    q.reserve(a.size() + b.size());
    for (int i = 0; i < a.size(); ++i) q.push_back(std::llround(a(i) * 1e9));
    for (int i = 0; i < b.size(); ++i) q.push_back(std::llround(b(i) * 1e9));
    return q;
  };
  std::unordered_map<std::uint64_t, std::vector<int>> seen;
  std::vector<int> keep;
  std::vector<std::vector<long long>> kept_rows;
  for (size_t i = 0; i < ins.size(); ++i) {
    auto q = quantize(*ins[i], *outs[i]);
    std::uint64_t h = 1469598103934665603ULL;
    for (long long v : q) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
    bool dup = false;
    for (int idx : seen[h])
      if (kept_rows[idx] == q) dup = true;
    if (dup) continue;
    seen[h].push_back(static_cast<int>(kept_rows.size()));
    kept_rows.push_back(std::move(q));
    keep.push_back(static_cast<int>(i));
  }

  Dataset d;
  d.skipped_scenarios = skipped;
  d.input_labels = std::move(in_labels);
  d.target_labels = std::move(out_labels);
  if (!keep.empty()) {
    d.inputs = Mat(keep.size(), ins[keep[0]]->size());
    d.targets = Mat(keep.size(), outs[keep[0]]->size());
    for (size_t r = 0; r < keep.size(); ++r) {
      d.inputs.row(r) = ins[keep[r]]->transpose();
      d.targets.row(r) = outs[keep[r]]->transpose();
    }
  }
  d.split(train_fraction, seed + 1);
  if (skipped > 0)
    std::fprintf(stderr, "[gridmpc] dataset generation skipped %d collapsing scenarios\n",
                 skipped);
  return d;
}

std::vector<std::string> voltage_labels(const PowerSystemCase& c, int m,
                                        const std::string& prefix) {
  std::vector<std::string> labels;
  for (const auto& bus : c.buses)
    for (int s = 0; s < m; ++s)
      labels.push_back(prefix + std::to_string(bus.id) + "_s" + std::to_string(s));
  return labels;
}

}  // namespace

Dataset generate_prediction_dataset(const PowerSystemCase& c,
                                    const ScenarioConfig& scenario,
                                    const ControlSchedule& nominal,
                                    const MpcConfig& cfg,
                                    const DatasetGenConfig& gen) {
  const int m = cfg.samples_per_interval();
  std::vector<RowBatch> batches(gen.n_scenarios);
  parallel_for(gen.n_scenarios, [&](int i) {
    const PowerSystemCase plant = scaled_case(c, gen.load_range, gen.seed, i);
    std::vector<SampleBlock> segs;
    RowBatch batch;
    batch.ok = run_plant(plant, scenario, nominal, cfg, false, &segs,
                         [](int, Simulator&) {});
    if (!batch.ok) {
      batches[i] = std::move(batch);
      return;
    }
    for (int k = 0; k < nominal.num_instants(); ++k) {
      const auto& entry = nominal.entries[k];
      Vec input(c.n_buses() * m + entry.svc.size() + entry.ls.size());
      input << flatten_bus_major(segs[k].v), entry.svc, entry.ls;
      batch.inputs.push_back(std::move(input));
      batch.targets.push_back(flatten_bus_major(segs[k + 1].v));
    }
    batches[i] = std::move(batch);
  });

  auto in_labels = voltage_labels(c, m, "v");
  for (const auto& s : c.svcs) in_labels.push_back("u_svc" + std::to_string(s.bus));
  for (const auto& a : c.ls_actuators)
    in_labels.push_back("u_ls" + std::to_string(a.bus));
  return assemble(std::move(batches), std::move(in_labels), voltage_labels(c, m, "v"),
                  gen.train_fraction, gen.seed);
}

Dataset generate_sensitivity_dataset(const PowerSystemCase& c,
                                     const ScenarioConfig& scenario,
                                     const ControlSchedule& nominal,
                                     const MpcConfig& cfg,
                                     const DatasetGenConfig& gen) {
  const int m = cfg.samples_per_interval();
  const auto channels = all_channels(c);
  const int nc = static_cast<int>(channels.size());
  std::vector<RowBatch> batches(gen.n_scenarios);
  parallel_for(gen.n_scenarios, [&](int i) {
    const PowerSystemCase plant = scaled_case(c, gen.load_range, gen.seed, i);
    std::vector<SampleBlock> segs;
    RowBatch batch;
    batch.ok = run_plant(plant, scenario, nominal, cfg, true, &segs,
                         [](int, Simulator&) {});
    if (!batch.ok) {
      batches[i] = std::move(batch);
      return;
    }
    try {
      for (int k = 0; k <= nominal.num_instants(); ++k) {
        const SensitivityTensor tensor =
            propagate_sensitivities(segs[k + 1], plant, channels);
        Vec target(c.n_buses() * m * nc);
        for (int b = 0; b < c.n_buses(); ++b)
          for (int s = 0; s < m; ++s)
            for (int ch = 0; ch < nc; ++ch)
              target((b * m + s) * nc + ch) = tensor.s[s](b, ch);
        batch.inputs.push_back(flatten_bus_major(segs[k + 1].v));
        batch.targets.push_back(std::move(target));
      }
    } catch (const CollapseError&) {
      batch.ok = false;
    }
    batches[i] = std::move(batch);
  });

  std::vector<std::string> out_labels;
  for (const auto& bus : c.buses)
    for (int s = 0; s < m; ++s)
      for (const auto& ch : channels)
        out_labels.push_back("s_v" + std::to_string(bus.id) + "_s" +
                             std::to_string(s) + "_" + channel_label(c, ch));
  return assemble(std::move(batches), voltage_labels(c, m, "v"),
                  std::move(out_labels), gen.train_fraction, gen.seed);
}

Dataset generate_avc_dataset(const PowerSystemCase& c, const ScenarioConfig& scenario,
                             const ControlSchedule& nominal, const MpcConfig& cfg,
                             const DatasetGenConfig& gen) {
  const int m = cfg.samples_per_interval();
  const auto lv = c.lv_bus_indices();
  if (lv.empty()) throw ContractError("avc dataset needs designated LV buses");
  const int usable = std::min(4, nominal.num_instants());
  std::vector<RowBatch> batches(gen.n_scenarios);
  parallel_for(gen.n_scenarios, [&](int i) {
    const PowerSystemCase plant = scaled_case(c, gen.load_range, gen.seed, i);
    std::vector<SampleBlock> segs;
    RowBatch batch;
    std::vector<Vec> branch_targets;
    batch.ok = run_plant(
        plant, scenario, nominal, cfg, false, &segs, [&](int k, Simulator& sim) {
          if (k >= usable) return;
          try {
            Simulator branch = sim;
            branch.clear_events();  // frozen: no taps, no further moves
            const SampleBlock ahead = branch.advance(2 * cfg.t_c);
            Mat v_lv(lv.size(), ahead.samples());
            for (size_t b = 0; b < lv.size(); ++b) v_lv.row(b) = ahead.v.row(lv[b]);
            branch_targets.push_back(flatten_bus_major(v_lv));
          } catch (const CollapseError&) {
            branch_targets.push_back(Vec());
          }
        });
    if (!batch.ok) {
      batches[i] = std::move(batch);
      return;
    }
    for (int k = 0; k < usable; ++k) {
      if (branch_targets[k].size() == 0) continue;  // collapsed branch
      Mat v_hist(lv.size(), m);
      for (size_t b = 0; b < lv.size(); ++b) v_hist.row(b) = segs[k].v.row(lv[b]);
      batch.inputs.push_back(flatten_bus_major(v_hist));
      batch.targets.push_back(branch_targets[k]);
    }
    batches[i] = std::move(batch);
  });

  std::vector<std::string> in_labels, out_labels;
  for (int b : lv)
    for (int s = 0; s < m; ++s)
      in_labels.push_back("vlv" + std::to_string(c.buses[b].id) + "_s" +
                          std::to_string(s));
  for (int b : lv)
    for (int s = 0; s < 2 * m; ++s)
      out_labels.push_back("vlv" + std::to_string(c.buses[b].id) + "_s" +
                           std::to_string(s));
  return assemble(std::move(batches), std::move(in_labels), std::move(out_labels),
                  gen.train_fraction, gen.seed);
}

void save_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << std::setprecision(17);
  for (size_t i = 0; i < d.input_labels.size(); ++i)
    os << (i ? "," : "") << "in_" << d.input_labels[i];
  for (const auto& label : d.target_labels) os << ",out_" << label;
  os << "\n";
  for (int r = 0; r < d.num_samples(); ++r) {
    for (int i = 0; i < d.inputs.cols(); ++i)
      os << (i ? "," : "") << d.inputs(r, i);
    for (int i = 0; i < d.targets.cols(); ++i) os << ',' << d.targets(r, i);
    os << "\n";
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Dataset load_dataset_csv(const std::filesystem::path& path, int n_inputs) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset " + path.string());
  std::string header;
  if (!std::getline(is, header)) throw IoError(path.string() + ": empty dataset");
  Dataset d;
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("in_", 0) == 0)
        d.input_labels.push_back(col.substr(3));
      else if (col.rfind("out_", 0) == 0)
        d.target_labels.push_back(col.substr(4));
      else
        throw IoError(path.string() + ": column '" + col + "' lacks in_/out_ prefix");
    }
  }
  if (n_inputs >= 0 && static_cast<int>(d.input_labels.size()) != n_inputs)
    throw IoError(path.string() + ": expected " + std::to_string(n_inputs) +
                  " input columns");
  const int ni = static_cast<int>(d.input_labels.size());
  const int no = static_cast<int>(d.target_labels.size());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != ni + no)
      throw ParseError(path.string(), line_no, "wrong column count");
    rows.push_back(std::move(vals));
  }
  d.inputs = Mat(rows.size(), ni);
  d.targets = Mat(rows.size(), no);
  for (size_t r = 0; r < rows.size(); ++r) {
    for (int i = 0; i < ni; ++i) d.inputs(r, i) = rows[r][i];
    for (int i = 0; i < no; ++i) d.targets(r, i) = rows[r][ni + i];
  }
  return d;
}

}  // namespace gridmpc
