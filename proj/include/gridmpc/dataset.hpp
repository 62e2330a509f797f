#pragma once

#include <filesystem>

#include "gridmpc/mlp.hpp"
#include "gridmpc/mpc.hpp"

namespace gridmpc {

struct DatasetGenConfig {
  int n_scenarios = 2500;
  double load_range = 0.2;  // independent uniform factor in [1-r, 1+r] per load
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
};

/// Training pairs for the trajectory-prediction surrogate. One plant
/// simulation per load scenario under the stored nominal schedule; at each
/// control instant k the pair is
///   input  = [V_{k-1:k} flattened bus-major, u*_k (svc then ls)]
///   target = V_{k:k+1} flattened bus-major.
/// Rows are deduplicated on 1e-9-quantized byte equality; collapsing
/// scenarios are skipped and counted.
Dataset generate_prediction_dataset(const PowerSystemCase& c,
                                    const ScenarioConfig& scenario,
                                    const ControlSchedule& nominal,
                                    const MpcConfig& cfg,
                                    const DatasetGenConfig& gen);

/// Pairs for the sensitivity surrogate: input = V_{k:k+1} flattened, target =
/// the (N_b*M) x n_channels sensitivity block flattened row-major, computed
/// by variational propagation along the same plant run. Instants k = 0..N_c
/// inclusive (one segment past the last move).
Dataset generate_sensitivity_dataset(const PowerSystemCase& c,
                                     const ScenarioConfig& scenario,
                                     const ControlSchedule& nominal,
                                     const MpcConfig& cfg,
                                     const DatasetGenConfig& gen);

/// Pairs for the AVC surrogate: input = LV-side V_{k-1:k}, target = LV-side
/// V_{k:k+2} simulated on a branch frozen at instant k (no further control
/// actions), for k = 0..3.
Dataset generate_avc_dataset(const PowerSystemCase& c,
                             const ScenarioConfig& scenario,
                             const ControlSchedule& nominal, const MpcConfig& cfg,
                             const DatasetGenConfig& gen);

/// Labeled-column CSV persistence for datasets.
void save_dataset_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path, int n_inputs);

/// Bus-major flattening of a sample block's voltages: index b*M + s.
Vec flatten_bus_major(const Mat& v);

}  // namespace gridmpc
