#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gridmpc/common.hpp"

namespace gridmpc {

/// Per-feature standardization. Constant features keep std = 1 so the
/// transform stays invertible.
struct NormalizationSpec {
  Vec mean;
  Vec std;

  static NormalizationSpec fit(const Mat& samples_as_rows);
  static NormalizationSpec identity(int dim);

  Vec apply(const Vec& raw) const { return (raw - mean).cwiseQuotient(std); }
  Vec invert(const Vec& normalized) const {
    return normalized.cwiseProduct(std) + mean;
  }
};

/// Feed-forward network: affine + tanh on the hidden layers, linear output,
/// standardized inputs and outputs.
struct MlpModel {
  std::vector<Mat> weights;  // weights[l] is (out x in)
  std::vector<Vec> biases;
  NormalizationSpec in_norm;
  NormalizationSpec out_norm;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int num_layers() const { return static_cast<int>(weights.size()); }
};

/// Inference pass (dropout disabled). Throws ContractError on a wrong input size.
Vec mlp_forward(const MlpModel& model, const Vec& input);

/// Batched inference; samples are rows.
Mat mlp_forward_batch(const MlpModel& model, const Mat& inputs_as_rows);

struct Dataset {
  Mat inputs;   // rows = samples
  Mat targets;  // rows = samples
  std::vector<std::string> input_labels;
  std::vector<std::string> target_labels;
  std::vector<int> train_idx;
  std::vector<int> test_idx;
  int skipped_scenarios = 0;

  int num_samples() const { return static_cast<int>(inputs.rows()); }
  /// Seeded shuffle into disjoint, exhaustive train/test index sets.
  void split(double train_fraction, std::uint64_t seed);
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout = 0.1;
  int epochs = 200;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;  // mean train MSE per epoch, normalized space
};

/// Mini-batch ADAM on MSE over the train split (the whole set when no split
/// was made). Normalization statistics come from the training rows only.
/// Throws DomainError if the loss turns non-finite.
TrainResult train_adam(const Dataset& data, const std::vector<int>& hidden_sizes,
                       const TrainConfig& config);

/// MSE and analytic parameter gradients at the current weights, dropout off.
/// Gradient layout matches weights/biases; used by the finite-difference
/// gradient checks.
double mlp_loss_and_gradients(const MlpModel& model, const Mat& inputs_as_rows,
                              const Mat& targets_as_rows, std::vector<Mat>* grad_w,
                              std::vector<Vec>* grad_b);

/// Coefficient of determination, clamped to [0, 1] for reporting.
/// Throws DomainError when the actuals have zero variance.
double r2_score(const Vec& predictions, const Vec& actuals);

/// Variance-weighted multi-output R^2 over rows of predictions/actuals.
double r2_score(const Mat& predictions, const Mat& actuals);

/// R^2 of the model over the given sample indices of a dataset.
double evaluate_r2(const MlpModel& model, const Dataset& data,
                   const std::vector<int>& indices);

/// Versioned text serialization; weights survive a round trip bit exactly.
void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace gridmpc
