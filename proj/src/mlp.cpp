#include "gridmpc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace gridmpc {

namespace {

// Forward pass over a batch held column-wise. masks, when non-null, applies
// inverted dropout to the hidden activations.
struct ForwardTrace {
  std::vector<Mat> layer_inputs;  // layer_inputs[l] feeds weights[l]
  std::vector<Mat> hidden_tanh;   // pre-dropout tanh outputs, one per hidden layer
};

Mat forward_columns(const MlpModel& m, const Mat& x_cols,
                    const std::vector<Mat>* masks, ForwardTrace* trace) {
  Mat a = x_cols;
  const int last = m.num_layers() - 1;
  for (int l = 0; l <= last; ++l) {
    if (trace) trace->layer_inputs.push_back(a);
    Mat z = (m.weights[l] * a).colwise() + m.biases[l];
    if (l < last) {
      Mat t = z.array().tanh().matrix();
      if (trace) trace->hidden_tanh.push_back(t);
      a = masks ? t.cwiseProduct((*masks)[l]) : std::move(t);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

double batch_loss_and_grads(const MlpModel& m, const Mat& x_cols, const Mat& y_cols,
                            const std::vector<Mat>* masks, std::vector<Mat>* gw,
                            std::vector<Vec>* gb) {
  ForwardTrace trace;
  const Mat out = forward_columns(m, x_cols, masks, &trace);
  const Mat diff = out - y_cols;
  const double denom = static_cast<double>(diff.rows() * diff.cols());
  const double loss = diff.squaredNorm() / denom;

  const int last = m.num_layers() - 1;
  gw->assign(m.weights.size(), Mat());
  gb->assign(m.biases.size(), Vec());
  Mat delta = (2.0 / denom) * diff;  // d loss / d z_last
  for (int l = last; l >= 0; --l) {
    (*gw)[l] = delta * trace.layer_inputs[l].transpose();
    (*gb)[l] = delta.rowwise().sum();
    if (l > 0) {
      Mat da = m.weights[l].transpose() * delta;  // wrt post-dropout activation
      if (masks) da = da.cwiseProduct((*masks)[l - 1]);
      delta = da.cwiseProduct(
          (1.0 - trace.hidden_tanh[l - 1].array().square()).matrix());
    }
  }
  return loss;
}

void check_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw DomainError("non-finite loss in " + where);
}

}  // namespace

NormalizationSpec NormalizationSpec::fit(const Mat& rows) {
  if (rows.rows() < 1) throw ContractError("NormalizationSpec::fit: empty sample set");
  NormalizationSpec spec;
  spec.mean = rows.colwise().mean();
  Mat centered = rows.rowwise() - spec.mean.transpose();
  spec.std = (centered.array().square().colwise().sum() /
              std::max<double>(1.0, rows.rows() - 1.0))
                 .sqrt()
                 .matrix()
                 .transpose();
  for (int i = 0; i < spec.std.size(); ++i)
    if (spec.std(i) < 1e-12) spec.std(i) = 1.0;
  return spec;
}

NormalizationSpec NormalizationSpec::identity(int dim) {
  return {Vec::Zero(dim), Vec::Ones(dim)};
}

Vec mlp_forward(const MlpModel& model, const Vec& input) {
  if (input.size() != model.input_dim())
    throw ContractError("mlp_forward: input has length " +
                        std::to_string(input.size()) + ", expected " +
                        std::to_string(model.input_dim()));
  const Mat out = forward_columns(model, model.in_norm.apply(input), nullptr, nullptr);
  return model.out_norm.invert(out.col(0));
}

Mat mlp_forward_batch(const MlpModel& model, const Mat& inputs_as_rows) {
  if (inputs_as_rows.cols() != model.input_dim())
    throw ContractError("mlp_forward_batch: wrong input width");
  Mat x = inputs_as_rows.transpose();
  x = (x.colwise() - model.in_norm.mean).array().colwise() /
      model.in_norm.std.array();
  Mat out = forward_columns(model, x, nullptr, nullptr);
  out = (out.array().colwise() * model.out_norm.std.array()).matrix();
  out = out.colwise() + model.out_norm.mean;
  return out.transpose();
}

void Dataset::split(double train_fraction, std::uint64_t seed) {
  const int n = num_samples();
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int n_train = std::max(1, static_cast<int>(std::lround(train_fraction * n)));
  train_idx.assign(idx.begin(), idx.begin() + std::min(n, n_train));
  test_idx.assign(idx.begin() + std::min(n, n_train), idx.end());
}

TrainResult train_adam(const Dataset& data, const std::vector<int>& hidden_sizes,
                       const TrainConfig& config) {
  if (data.num_samples() == 0) throw ContractError("train_adam: empty dataset");
  if (config.beta1 <= 0.0 || config.beta1 >= 1.0 || config.beta2 <= 0.0 ||
      config.beta2 >= 1.0)
    throw ContractError("train_adam: beta1, beta2 must lie in (0, 1)");
  std::vector<int> rows = data.train_idx;
  if (rows.empty()) {
    rows.resize(data.num_samples());
    std::iota(rows.begin(), rows.end(), 0);
  }
  if (config.batch_size <= 0 || config.batch_size > static_cast<int>(rows.size()))
    throw ContractError("train_adam: batch size must be in [1, #train samples]");

  const int d_in = static_cast<int>(data.inputs.cols());
  const int d_out = static_cast<int>(data.targets.cols());
  Mat train_x(rows.size(), d_in), train_y(rows.size(), d_out);
  for (size_t i = 0; i < rows.size(); ++i) {
    train_x.row(i) = data.inputs.row(rows[i]);
    train_y.row(i) = data.targets.row(rows[i]);
  }

  MlpModel model;
  model.in_norm = NormalizationSpec::fit(train_x);
  model.out_norm = NormalizationSpec::fit(train_y);

  std::mt19937_64 rng(config.seed);
  std::vector<int> dims;
  dims.push_back(d_in);
  for (int h : hidden_sizes) dims.push_back(h);
  dims.push_back(d_out);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const double limit = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
    std::uniform_real_distribution<double> uni(-limit, limit);
    Mat w(dims[l + 1], dims[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = uni(rng);
    model.weights.push_back(std::move(w));
    model.biases.push_back(Vec::Zero(dims[l + 1]));
  }

  // Normalized copies, samples as columns.
  Mat xn = ((train_x.rowwise() - model.in_norm.mean.transpose()).array().rowwise() /
            model.in_norm.std.transpose().array())
               .matrix()
               .transpose();
  Mat yn = ((train_y.rowwise() - model.out_norm.mean.transpose()).array().rowwise() /
            model.out_norm.std.transpose().array())
               .matrix()
               .transpose();

  std::vector<Mat> mw(model.weights.size()), vw(model.weights.size());
  std::vector<Vec> mb(model.biases.size()), vb(model.biases.size());
  for (size_t l = 0; l < model.weights.size(); ++l) {
    mw[l] = Mat::Zero(model.weights[l].rows(), model.weights[l].cols());
    vw[l] = mw[l];
    mb[l] = Vec::Zero(model.biases[l].size());
    vb[l] = mb[l];
  }

  TrainResult result;
  std::vector<int> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution keep(1.0 - config.dropout);
  std::vector<Mat> grad_w;
  std::vector<Vec> grad_b;
  long step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const int bsz =
          static_cast<int>(std::min<size_t>(config.batch_size, order.size() - start));
      Mat xb(d_in, bsz), yb(d_out, bsz);
      for (int i = 0; i < bsz; ++i) {
        xb.col(i) = xn.col(order[start + i]);
        yb.col(i) = yn.col(order[start + i]);
      }
      std::vector<Mat> masks;
      if (config.dropout > 0.0) {
        for (size_t l = 0; l + 1 < model.weights.size(); ++l) {
          Mat mask(model.weights[l].rows(), bsz);
          for (int r = 0; r < mask.rows(); ++r)
            for (int c = 0; c < mask.cols(); ++c)
              mask(r, c) = keep(rng) ? 1.0 / (1.0 - config.dropout) : 0.0;
          masks.push_back(std::move(mask));
        }
      }
      const double loss = batch_loss_and_grads(
          model, xb, yb, config.dropout > 0.0 ? &masks : nullptr, &grad_w, &grad_b);
      check_finite(loss, "train_adam");
      epoch_loss += loss;
      ++n_batches;

      ++step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (size_t l = 0; l < model.weights.size(); ++l) {
        mw[l] = config.beta1 * mw[l] + (1.0 - config.beta1) * grad_w[l];
        vw[l] = config.beta2 * vw[l] +
                (1.0 - config.beta2) * grad_w[l].cwiseProduct(grad_w[l]);
        model.weights[l] -=
            (config.learning_rate * (mw[l] / bc1).array() /
             ((vw[l] / bc2).array().sqrt() + config.adam_eps))
                .matrix();
        mb[l] = config.beta1 * mb[l] + (1.0 - config.beta1) * grad_b[l];
        vb[l] = config.beta2 * vb[l] +
                (1.0 - config.beta2) * grad_b[l].cwiseProduct(grad_b[l]);
        model.biases[l] -= (config.learning_rate * (mb[l] / bc1).array() /
                            ((vb[l] / bc2).array().sqrt() + config.adam_eps))
                               .matrix();
      }
    }
    result.loss_history.push_back(epoch_loss / std::max(1, n_batches));
  }
  result.model = std::move(model);
  return result;
}

double mlp_loss_and_gradients(const MlpModel& model, const Mat& inputs_as_rows,
                              const Mat& targets_as_rows, std::vector<Mat>* grad_w,
                              std::vector<Vec>* grad_b) {
  Mat x = inputs_as_rows.transpose();
  x = (x.colwise() - model.in_norm.mean).array().colwise() /
      model.in_norm.std.array();
  Mat y = targets_as_rows.transpose();
  y = (y.colwise() - model.out_norm.mean).array().colwise() /
      model.out_norm.std.array();
  return batch_loss_and_grads(model, x, y, nullptr, grad_w, grad_b);
}

double r2_score(const Vec& predictions, const Vec& actuals) {
  if (predictions.size() != actuals.size())
    throw ContractError("r2_score: length mismatch");
  if (actuals.size() < 2) throw ContractError("r2_score: need at least 2 samples");
  const double mean = actuals.mean();
  const double ss_tot = (actuals.array() - mean).square().sum();
  if (ss_tot <= 0.0) throw DomainError("r2_score: actuals have zero variance");
  const double ss_res = (predictions - actuals).squaredNorm();
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

double r2_score(const Mat& predictions, const Mat& actuals) {
  if (predictions.rows() != actuals.rows() || predictions.cols() != actuals.cols())
    throw ContractError("r2_score: shape mismatch");
  if (actuals.rows() < 2) throw ContractError("r2_score: need at least 2 samples");
  const Vec mean = actuals.colwise().mean();
  const double ss_tot = (actuals.rowwise() - mean.transpose()).squaredNorm();
  if (ss_tot <= 0.0) throw DomainError("r2_score: actuals have zero variance");
  const double ss_res = (predictions - actuals).squaredNorm();
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

double evaluate_r2(const MlpModel& model, const Dataset& data,
                   const std::vector<int>& indices) {
  if (indices.empty()) throw ContractError("evaluate_r2: no indices");
  Mat x(indices.size(), data.inputs.cols());
  Mat y(indices.size(), data.targets.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    x.row(i) = data.inputs.row(indices[i]);
    y.row(i) = data.targets.row(indices[i]);
  }
  return r2_score(mlp_forward_batch(model, x), y);
}

namespace {

constexpr const char* kModelMagic = "gridmpc-mlp";
constexpr int kModelVersion = 1;

void write_vec(std::ostream& os, const std::string& tag, const Vec& v) {
  os << tag << ' ' << v.size() << '\n';
  os << std::setprecision(17);
  for (int i = 0; i < v.size(); ++i) os << v(i) << (i + 1 == v.size() ? '\n' : ' ');
  if (v.size() == 0) os << '\n';
}

Vec read_vec(std::istream& is, const std::string& tag, const std::string& path) {
  std::string seen;
  long n = -1;
  if (!(is >> seen >> n) || seen != tag || n < 0)
    throw IoError(path + ": corrupt model file (expected " + tag + " block)");
  Vec v(n);
  for (long i = 0; i < n; ++i)
    if (!(is >> v(i))) throw IoError(path + ": truncated " + tag + " block");
  return v;
}

}  // namespace

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << kModelMagic << " v" << kModelVersion << '\n';
  os << "layers " << model.num_layers() << '\n';
  os << "dims " << model.input_dim();
  for (const auto& w : model.weights) os << ' ' << w.rows();
  os << '\n';
  os << "activation tanh\n";
  write_vec(os, "in_mean", model.in_norm.mean);
  write_vec(os, "in_std", model.in_norm.std);
  write_vec(os, "out_mean", model.out_norm.mean);
  write_vec(os, "out_std", model.out_norm.std);
  os << std::setprecision(17);
  for (int l = 0; l < model.num_layers(); ++l) {
    const Mat& w = model.weights[l];
    os << "W" << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (int r = 0; r < w.rows(); ++r) {
      for (int c = 0; c < w.cols(); ++c) os << w(r, c) << (c + 1 == w.cols() ? '\n' : ' ');
    }
    write_vec(os, "b" + std::to_string(l), model.biases[l]);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string p = path.string();
  std::string magic, version;
  if (!(is >> magic >> version)) throw IoError(p + ": corrupt model file");
  if (magic != kModelMagic) throw IoError(p + ": not a gridmpc model file");
  if (version != "v" + std::to_string(kModelVersion))
    throw IoError(p + ": unsupported model version " + version);

  std::string tag;
  int layers = 0;
  if (!(is >> tag >> layers) || tag != "layers" || layers < 1)
    throw IoError(p + ": corrupt layers header");
  if (!(is >> tag) || tag != "dims") throw IoError(p + ": corrupt dims header");
  std::vector<int> dims(layers + 1);
  for (int& d : dims)
    if (!(is >> d) || d < 1) throw IoError(p + ": corrupt dims header");
  std::string act;
  if (!(is >> tag >> act) || tag != "activation" || act != "tanh")
    throw IoError(p + ": unsupported activation");

  MlpModel model;
  model.in_norm.mean = read_vec(is, "in_mean", p);
  model.in_norm.std = read_vec(is, "in_std", p);
  model.out_norm.mean = read_vec(is, "out_mean", p);
  model.out_norm.std = read_vec(is, "out_std", p);
  for (int l = 0; l < layers; ++l) {
    long r = 0, c = 0;
    if (!(is >> tag >> r >> c) || tag != "W" + std::to_string(l) || r != dims[l + 1] ||
        c != dims[l])
      throw IoError(p + ": corrupt weight block W" + std::to_string(l));
    Mat w(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j)
        if (!(is >> w(i, j))) throw IoError(p + ": truncated weight block");
    model.weights.push_back(std::move(w));
    model.biases.push_back(read_vec(is, "b" + std::to_string(l), p));
  }
  if (model.in_norm.mean.size() != model.input_dim() ||
      model.out_norm.mean.size() != model.output_dim())
    throw IoError(p + ": normalization dimensions disagree with layer dims");
  return model;
}

}  // namespace gridmpc
