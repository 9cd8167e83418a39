#pragma once

#include "i2p/data.hpp"
#include "i2p/metrics.hpp"
#include "i2p/models.hpp"
#include "i2p/nn.hpp"
#include "i2p/rng.hpp"
#include "i2p/types.hpp"

#include <cmath>
#include <iosfwd>
#include <string>
#include <vector>

namespace i2p::train {

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string schedule = "cosine";  // cosine | poly | step
  int epochs = 60;
  std::uint64_t seed = 0;
};

/// Learning rate at progress t in [0, 1): cosine lr0*(1+cos(pi t))/2,
/// poly lr0*(1-t)^0.9, step lr0 decayed 10x at t=0.5 and t=0.75.
inline double schedule_lr(const std::string& schedule, double lr0, double t) {
  if (schedule == "cosine") return lr0 * (1.0 + std::cos(M_PI * t)) / 2.0;
  if (schedule == "poly") return lr0 * std::pow(1.0 - t, 0.9);
  if (schedule == "step") return lr0 * (t < 0.5 ? 1.0 : t < 0.75 ? 0.1 : 0.01);
  throw InvalidInput("unknown schedule '" + schedule + "'");
}

/// Momentum buffers, one per parameter, aligned with the store by index.
template <typename Scalar>
struct SgdState {
  std::vector<RowMatrix<Scalar>> v;
};

/// v <- momentum v + grad + weight_decay param; param <- param - lr(t) v.
/// Skips frozen parameters entirely.
template <typename Scalar>
void sgd_step(nn::ParamStore<Scalar>& params, SgdState<Scalar>& state, const OptimizerConfig& cfg,
              double t) {
  if (state.v.size() != params.size()) state.v.resize(params.size());
  const Scalar lr = static_cast<Scalar>(schedule_lr(cfg.schedule, cfg.lr0, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param<Scalar>& p = params[i];
    if (!p.trainable) continue;
    RowMatrix<Scalar>& g = params.grad_by_index(i);
    if (!g.allFinite()) throw NumericError("non-finite gradient in '" + p.name + "'");
    RowMatrix<Scalar>& v = state.v[i];
    if (v.rows() != g.rows() || v.cols() != g.cols())
      v = RowMatrix<Scalar>::Zero(g.rows(), g.cols());
    v = static_cast<Scalar>(cfg.momentum) * v + g +
        static_cast<Scalar>(cfg.weight_decay) * p.value;
    p.value -= lr * v;
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr std::int32_t kIgnoreLabel = -1;

/// Mean softmax cross-entropy over the rows whose target is not the ignore
/// sentinel; `grad` receives d(loss)/d(logits) (zero on ignored rows).
template <typename Scalar>
Scalar cross_entropy(const RowMatrix<Scalar>& logits, const std::vector<std::int32_t>& targets,
                     RowMatrix<Scalar>& grad, Eigen::Index* valid_rows = nullptr) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ShapeError("cross entropy: target count mismatch");
  grad = RowMatrix<Scalar>::Zero(logits.rows(), logits.cols());
  Eigen::Index valid = 0;
  for (std::int32_t t : targets) {
    if (t == kIgnoreLabel) continue;
    if (t < 0 || t >= logits.cols()) throw InvalidInput("cross entropy: invalid class id");
    ++valid;
  }
  if (valid_rows) *valid_rows = valid;
  if (valid == 0) throw InvalidInput("cross entropy: no labeled rows");

  Scalar loss = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const std::int32_t t = targets[static_cast<std::size_t>(r)];
    if (t == kIgnoreLabel) continue;
    const Scalar m = logits.row(r).maxCoeff();
    RowVec<Scalar> ex = (logits.row(r).array() - m).exp();
    const Scalar z = ex.sum();
    loss += std::log(z) + m - logits(r, t);
    grad.row(r) = ex / (z * static_cast<Scalar>(valid));
    grad(r, t) -= Scalar(1) / static_cast<Scalar>(valid);
  }
  return loss / static_cast<Scalar>(valid);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double scale_lo = 0.9, scale_hi = 1.1;  // one global factor per sample
  double translate = 0.1;                 // global shift, uniform per axis
  double jitter_std = 0.01;               // per-point Gaussian noise
  double jitter_clip = 0.05;
};

/// Random scale + translation applied to the whole cloud, then per-point
/// clipped jitter. Features and labels pass through untouched.
voxel::PointCloud augment(const voxel::PointCloud& pc, const AugmentConfig& cfg, Rng& rng);

/// Pick `per_class` sample indices per class (all of them when per_class <= 0
/// or the class is smaller), shuffled by `rng`, in ascending class order.
std::vector<int> stratified_subset(const std::vector<std::int32_t>& labels, int per_class,
                                   Rng& rng);

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

/// In-memory train/val splits; exactly one modality is populated.
struct TrainData {
  data::CloudSet train3, val3;
  data::ImageSet train2, val2;
  bool planar = false;
  bool seg = false;
  int classes = 0;
};

TrainData bundle_clouds(data::CloudSet train, data::CloudSet val);
TrainData bundle_images(data::ImageSet train, data::ImageSet val);

/// Load <dir>/train.i2pw + <dir>/val.i2pw (2D) or <dir>/train + <dir>/val
/// point-cloud directories (3D).
TrainData load_train_data(const std::string& dir);

struct TrainOptions {
  OptimizerConfig opt;
  int batch_size = 8;
  float voxel_size = 0.05f;
  AugmentConfig aug;
  bool augment_train = true;  // 3D only; images train as-is
  std::ostream* log = nullptr;
};

/// Targets for the network's output rows of a segmentation batch: majority
/// point label per output site (coordinates at stride level L cover level-0
/// voxels floor-divided by 2^L), ties to the smallest class id.
std::vector<std::int32_t> seg_output_targets(const nn::Act<float>& out,
                                             const std::vector<voxel::PointCloud>& clouds,
                                             float voxel_size);

/// Per-point class predictions for one sample, read off the output rows.
std::vector<std::int32_t> seg_point_predictions(const nn::Act<float>& out, int sample,
                                                const voxel::PointCloud& cloud, float voxel_size);

/// SGD over the train split with per-epoch evaluation on the val split.
/// The graph's regime must have been applied beforehand.
metrics::MetricReport train_network(models::NetworkGraph<float>& g, const TrainData& data,
                                    const TrainOptions& topt);

/// Single evaluation pass over the val split.
metrics::MetricReport evaluate(models::NetworkGraph<float>& g, const TrainData& data,
                               const TrainOptions& topt);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradcheckRow {
  std::string name;
  double max_rel_err = 0.0;   // trainable parameters
  double max_abs_grad = 0.0;  // largest analytic entry
  bool frozen = false;        // not trainable; gradient must be exactly zero
  bool frozen_zero = true;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double worst_rel_err = 0.0;
  bool all_frozen_zero = true;
};

/// Compare every parameter's analytic gradient against central differences of
/// the cross-entropy loss on one small batch. Runs the graph in train mode
/// with BN statistics updates disabled so repeated forwards see identical
/// state.
inline GradcheckReport gradcheck(models::NetworkGraph<double>& g, const nn::Act<double>& input,
                                 const std::vector<std::int32_t>& targets, double h = 1e-5) {
  for (models::LayerSpec& s : g.layers)
    if (s.kind == models::LayerSpec::Kind::BN) s.bn_stats_update = false;

  const auto loss_at = [&]() -> double {
    const nn::Act<double>& out = g.forward(input, true);
    RowMatrix<double> grad;
    return cross_entropy(out.feats, targets, grad);
  };

  // analytic pass
  {
    const nn::Act<double>& out = g.forward(input, true);
    RowMatrix<double> grad;
    cross_entropy(out.feats, targets, grad);
    g.params.zero_grads();
    g.backward(grad);
  }
  std::vector<RowMatrix<double>> analytic(g.params.size());
  for (std::size_t i = 0; i < g.params.size(); ++i) analytic[i] = g.params.grad_by_index(i);

  GradcheckReport report;
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    nn::Param<double>& p = g.params[i];
    GradcheckRow row;
    row.name = p.name;
    row.max_abs_grad = analytic[i].size() ? analytic[i].cwiseAbs().maxCoeff() : 0.0;
    if (!p.trainable) {
      row.frozen = true;
      row.frozen_zero = row.max_abs_grad == 0.0;
      report.all_frozen_zero = report.all_frozen_zero && row.frozen_zero;
      report.rows.push_back(std::move(row));
      continue;
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double keep = p.value.data()[k];
      p.value.data()[k] = keep + h;
      const double fp = loss_at();
      p.value.data()[k] = keep - h;
      const double fm = loss_at();
      p.value.data()[k] = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradcheck: non-finite loss while perturbing '" + p.name + "'");
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i].data()[k];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      row.max_rel_err = std::max(row.max_rel_err, rel);
    }
    report.worst_rel_err = std::max(report.worst_rel_err, row.max_rel_err);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace i2p::train
