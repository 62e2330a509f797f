#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "gridmpc/caseio.hpp"
#include "gridmpc/dataset.hpp"

using namespace gridmpc;
namespace fs = std::filesystem;

namespace {

struct Pipeline {
  PowerSystemCase c;
  ScenarioConfig sc;
  MpcConfig cfg;
  ControlSchedule schedule;
};

// Fast-profile nominal schedule, built once for the whole file.
const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline out;
    out.c = load_case(resolve_case_path("9bus"));
    out.sc = builtin_scenario("fault5");
    out.cfg.t_s = 0.5;
    const auto res = run_receding_horizon(out.c, out.sc, out.cfg, AvcConfig{});
    out.schedule = res.schedule;
    return out;
  }();
  return p;
}

}  // namespace

TEST_CASE("prediction dataset dimensions and counts") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 6;
  gen.seed = 3;
  const auto d = generate_prediction_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  const int m = p.cfg.samples_per_interval();
  CHECK(d.inputs.cols() == p.c.n_buses() * m + 5);  // 11*M + (3 svc + 2 ls)
  CHECK(d.targets.cols() == p.c.n_buses() * m);
  CHECK(d.num_samples() == 6 * p.schedule.num_instants());
  CHECK(d.skipped_scenarios == 0);

  // 70:30 split is disjoint and exhaustive.
  std::set<int> all(d.train_idx.begin(), d.train_idx.end());
  for (int i : d.test_idx) CHECK(all.insert(i).second);
  CHECK(static_cast<int>(all.size()) == d.num_samples());
  CHECK(d.train_idx.size() == static_cast<size_t>(std::lround(0.7 * d.num_samples())));
}

TEST_CASE("nominal-load rows reproduce the stored nominal segments") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 1;
  gen.load_range = 0.0;  // exactly the nominal plant
  const auto d = generate_prediction_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  REQUIRE(d.num_samples() == p.schedule.num_instants());

  // Independent replay: equilibrium start, fault events, nominal moves.
  IntegratorConfig icfg;
  icfg.t_s = p.cfg.t_s;
  Simulator sim = Simulator::from_equilibrium(p.c, 0.0, icfg);
  sim.add_events(scenario_events(p.sc, p.c, p.cfg.t_s));
  sim.advance(p.sc.first_instant);
  for (int k = 0; k < d.num_samples(); ++k) {
    sim.apply_control_move(p.schedule.move_at(k, sim.current_case()));
    const auto seg = sim.advance(p.cfg.t_c);
    const Vec expected = flatten_bus_major(seg.v);
    CHECK((d.targets.row(k).transpose() - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("identical scenarios deduplicate") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 4;
  gen.load_range = 0.0;  // all four scenarios are byte-identical
  const auto d = generate_prediction_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  CHECK(d.num_samples() == p.schedule.num_instants());
}

TEST_CASE("sensitivity dataset carries one extra instant and all channels") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 3;
  gen.seed = 11;
  const auto d = generate_sensitivity_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  const int m = p.cfg.samples_per_interval();
  const int nc = static_cast<int>(all_channels(p.c).size());
  CHECK(nc == 7);  // 3 svc + 2 ls + 2 ltc
  CHECK(d.inputs.cols() == p.c.n_buses() * m);
  CHECK(d.targets.cols() == p.c.n_buses() * m * nc);
  CHECK(d.num_samples() == 3 * (p.schedule.num_instants() + 1));
}

TEST_CASE("avc dataset covers four instants of LV history and lookahead") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 3;
  gen.seed = 4;
  const auto d = generate_avc_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  const int m = p.cfg.samples_per_interval();
  const int n_lv = static_cast<int>(p.c.lv_bus_indices().size());
  CHECK(n_lv == 2);
  CHECK(d.inputs.cols() == n_lv * m);
  CHECK(d.targets.cols() == n_lv * 2 * m);
  CHECK(d.num_samples() == 3 * 4);
}

TEST_CASE("dataset CSV round trip") {
  const auto& p = pipeline();
  DatasetGenConfig gen;
  gen.n_scenarios = 2;
  gen.seed = 9;
  const auto d = generate_avc_dataset(p.c, p.sc, p.schedule, p.cfg, gen);
  const fs::path dir = fs::temp_directory_path() / "gridmpc_ds_test";
  fs::create_directories(dir);
  const fs::path file = dir / "avc.csv";
  save_dataset_csv(d, file);
  const auto r = load_dataset_csv(file, static_cast<int>(d.inputs.cols()));
  CHECK(r.inputs == d.inputs);
  CHECK(r.targets == d.targets);
  CHECK(r.input_labels == d.input_labels);
  CHECK_THROWS_AS(load_dataset_csv(file, 3), IoError);
  fs::remove_all(dir);
}
