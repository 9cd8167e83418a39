#include "i2p/train.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace i2p::train {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Augmentation and subsetting
// ---------------------------------------------------------------------------

voxel::PointCloud augment(const voxel::PointCloud& pc, const AugmentConfig& cfg, Rng& rng) {
  voxel::PointCloud out = pc;
  const float s = static_cast<float>(rng.uniform(cfg.scale_lo, cfg.scale_hi));
  float shift[3];
  for (float& v : shift) v = static_cast<float>(rng.uniform(-cfg.translate, cfg.translate));
  for (Eigen::Index i = 0; i < out.positions.rows(); ++i)
    for (int a = 0; a < 3; ++a) {
      float j = static_cast<float>(cfg.jitter_std * rng.normal());
      j = std::min(std::max(j, -static_cast<float>(cfg.jitter_clip)),
                   static_cast<float>(cfg.jitter_clip));
      out.positions(i, a) = out.positions(i, a) * s + shift[a] + j;
    }
  return out;
}

std::vector<int> stratified_subset(const std::vector<std::int32_t>& labels, int per_class,
                                   Rng& rng) {
  std::vector<int> all(labels.size());
  std::iota(all.begin(), all.end(), 0);
  if (per_class <= 0) return all;

  std::map<std::int32_t, std::vector<int>> groups;
  for (int i : all) groups[labels[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<int> picked;
  for (auto& [label, members] : groups) {
    rng.shuffle(members);
    const std::size_t take = std::min<std::size_t>(members.size(), std::size_t(per_class));
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return picked;
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

TrainData bundle_clouds(data::CloudSet train, data::CloudSet val) {
  if (train.seg != val.seg || train.classes != val.classes)
    throw InvalidInput("train/val splits disagree on mode or class count");
  TrainData d;
  d.seg = train.seg;
  d.classes = train.classes;
  d.train3 = std::move(train);
  d.val3 = std::move(val);
  return d;
}

TrainData bundle_images(data::ImageSet train, data::ImageSet val) {
  TrainData d;
  d.planar = true;
  d.classes = std::max(train.classes, val.classes);
  d.train2 = std::move(train);
  d.val2 = std::move(val);
  return d;
}

TrainData load_train_data(const std::string& dir) {
  const fs::path root(dir);
  if (fs::exists(root / "train.i2pw"))
    return bundle_images(data::read_image_dataset((root / "train.i2pw").string()),
                         data::read_image_dataset((root / "val.i2pw").string()));
  if (fs::exists(root / "train" / "index.txt"))
    return bundle_clouds(data::read_cloud_dataset((root / "train").string()),
                         data::read_cloud_dataset((root / "val").string()));
  throw InvalidInput("no dataset found under '" + dir +
                     "' (expected train.i2pw/val.i2pw or train/ and val/ directories)");
}

// ---------------------------------------------------------------------------
// Batch composition
// ---------------------------------------------------------------------------

namespace {

struct Batch {
  nn::Act<float> input;
  std::vector<std::int32_t> cls_targets;  // one per sample (classification)
  std::vector<voxel::PointCloud> clouds;  // the (possibly augmented) 3D inputs
};

Batch compose_batch_3d(const data::CloudSet& set, const std::vector<int>& order,
                       std::size_t begin, std::size_t end, float voxel_size, bool do_aug,
                       const AugmentConfig& acfg, Rng& rng) {
  Batch b;
  std::vector<voxel::SparseVoxelTensor<float>> vox;
  for (std::size_t i = begin; i < end; ++i) {
    const int idx = order[i];
    voxel::PointCloud cloud = do_aug ? augment(set.clouds[static_cast<std::size_t>(idx)], acfg, rng)
                                     : set.clouds[static_cast<std::size_t>(idx)];
    vox.push_back(voxel::voxelize<float>(cloud, voxel_size).first);
    b.clouds.push_back(std::move(cloud));
    if (!set.seg) b.cls_targets.push_back(set.labels[static_cast<std::size_t>(idx)]);
  }
  b.input = nn::compose(vox);
  return b;
}

Batch compose_batch_2d(const data::ImageSet& set, const std::vector<int>& order,
                       std::size_t begin, std::size_t end) {
  Batch b;
  std::vector<RowMatrix<float>> imgs;
  for (std::size_t i = begin; i < end; ++i) {
    const int idx = order[i];
    imgs.push_back(set.images[static_cast<std::size_t>(idx)]);
    b.cls_targets.push_back(set.labels[static_cast<std::size_t>(idx)]);
  }
  b.input = nn::compose_images(imgs);
  return b;
}

std::unordered_map<Coord4, std::int32_t, Coord4Hash> output_rows(const nn::Act<float>& out) {
  std::unordered_map<Coord4, std::int32_t, Coord4Hash> rows;
  rows.reserve(out.coords.size() * 2);
  for (std::size_t r = 0; r < out.coords.size(); ++r)
    rows.emplace(out.coords[r], static_cast<std::int32_t>(r));
  return rows;
}

Coord4 ancestor_site(int sample, const voxel::PointCloud& pc, Eigen::Index point,
                     float voxel_size, int level) {
  const std::int32_t div = std::int32_t(1) << level;
  const Coord3 c0{static_cast<std::int32_t>(std::floor(pc.positions(point, 0) / voxel_size)),
                  static_cast<std::int32_t>(std::floor(pc.positions(point, 1) / voxel_size)),
                  static_cast<std::int32_t>(std::floor(pc.positions(point, 2) / voxel_size))};
  return {sample, floor_div(c0.x, div), floor_div(c0.y, div), floor_div(c0.z, div)};
}

}  // namespace

std::vector<std::int32_t> seg_output_targets(const nn::Act<float>& out,
                                             const std::vector<voxel::PointCloud>& clouds,
                                             float voxel_size) {
  const auto rows = output_rows(out);
  std::vector<std::map<std::int32_t, std::int32_t>> hist(out.coords.size());
  for (std::size_t s = 0; s < clouds.size(); ++s) {
    const voxel::PointCloud& pc = clouds[s];
    if (!pc.has_labels()) throw InvalidInput("segmentation batch: cloud without labels");
    for (Eigen::Index p = 0; p < pc.size(); ++p) {
      const std::int32_t label = pc.labels[static_cast<std::size_t>(p)];
      if (label == kIgnoreLabel) continue;
      const auto it = rows.find(ancestor_site(static_cast<int>(s), pc, p, voxel_size,
                                              out.stride_level));
      if (it != rows.end()) ++hist[static_cast<std::size_t>(it->second)][label];
    }
  }
  std::vector<std::int32_t> targets(out.coords.size(), kIgnoreLabel);
  for (std::size_t r = 0; r < hist.size(); ++r) {
    std::int32_t best = kIgnoreLabel, best_count = 0;
    for (const auto& [label, count] : hist[r])
      if (count > best_count) {  // ordered map: ties resolve to the smallest id
        best = label;
        best_count = count;
      }
    targets[r] = best;
  }
  return targets;
}

std::vector<std::int32_t> seg_point_predictions(const nn::Act<float>& out, int sample,
                                                const voxel::PointCloud& cloud,
                                                float voxel_size) {
  const auto rows = output_rows(out);
  std::vector<std::int32_t> preds(static_cast<std::size_t>(cloud.size()), 0);
  for (Eigen::Index p = 0; p < cloud.size(); ++p) {
    const auto it = rows.find(ancestor_site(sample, cloud, p, voxel_size, out.stride_level));
    if (it == rows.end()) continue;  // unreachable for coarsen-only topologies
    Eigen::Index arg = 0;
    out.feats.row(it->second).maxCoeff(&arg);
    preds[static_cast<std::size_t>(p)] = static_cast<std::int32_t>(arg);
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Train / eval loops
// ---------------------------------------------------------------------------

namespace {

struct EvalResult {
  double top1 = 0.0;
  double miou = 0.0;
  std::vector<std::optional<double>> iou;
};

EvalResult eval_pass(models::NetworkGraph<float>& g, const TrainData& data,
                     const TrainOptions& topt) {
  const std::size_t n = data.planar ? data.val2.images.size() : data.val3.clouds.size();
  if (n == 0) throw InvalidInput("evaluate: empty validation split");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  metrics::Confusion conf(data.classes);
  Rng unused(0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, topt.batch_size));
  for (std::size_t at = 0; at < n; at += bs) {
    const std::size_t end = std::min(n, at + bs);
    Batch b = data.planar
                  ? compose_batch_2d(data.val2, order, at, end)
                  : compose_batch_3d(data.val3, order, at, end, topt.voxel_size, false,
                                     topt.aug, unused);
    const nn::Act<float>& out = g.forward(b.input, false);
    if (data.seg) {
      for (std::size_t s = 0; s < b.clouds.size(); ++s) {
        const voxel::PointCloud& pc = b.clouds[s];
        const auto preds = seg_point_predictions(out, static_cast<int>(s), pc, topt.voxel_size);
        for (Eigen::Index p = 0; p < pc.size(); ++p) {
          const std::int32_t truth = pc.labels[static_cast<std::size_t>(p)];
          if (truth == kIgnoreLabel) continue;
          conf.add(truth, preds[static_cast<std::size_t>(p)]);
        }
      }
    } else {
      for (Eigen::Index r = 0; r < out.feats.rows(); ++r) {
        Eigen::Index arg = 0;
        out.feats.row(r).maxCoeff(&arg);
        conf.add(b.cls_targets[static_cast<std::size_t>(r)], static_cast<int>(arg));
      }
    }
  }

  EvalResult res;
  res.top1 = metrics::top1(conf);
  if (data.seg) {
    res.miou = metrics::miou(conf);
    res.iou = metrics::per_class_iou(conf);
  }
  return res;
}

}  // namespace

metrics::MetricReport train_network(models::NetworkGraph<float>& g, const TrainData& data,
                                    const TrainOptions& topt) {
  if (data.planar != (g.dim == 2))
    throw InvalidInput("train: dataset modality does not match the network");
  if (data.seg != g.seg) throw InvalidInput("train: dataset mode does not match the network");
  const std::size_t n = data.planar ? data.train2.images.size() : data.train3.clouds.size();
  if (n == 0) throw InvalidInput("train: empty dataset");

  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(topt.opt.seed);
  SgdState<float> state;
  metrics::MetricReport rep;
  rep.seed = topt.opt.seed;
  rep.regime = g.regime ? models::to_string(*g.regime) : "-";
  rep.is_seg = data.seg;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, topt.batch_size));

  for (int epoch = 0; epoch < topt.opt.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t loss_n = 0;
    try {
      for (std::size_t at = 0; at < n; at += bs) {
        const std::size_t end = std::min(n, at + bs);
        Batch b = data.planar
                      ? compose_batch_2d(data.train2, order, at, end)
                      : compose_batch_3d(data.train3, order, at, end, topt.voxel_size,
                                         topt.augment_train, topt.aug, rng);
        const nn::Act<float>& out = g.forward(b.input, true);
        const std::vector<std::int32_t> targets =
            data.seg ? seg_output_targets(out, b.clouds, topt.voxel_size) : b.cls_targets;
        RowMatrix<float> gout;
        Eigen::Index valid = 0;
        const float loss = cross_entropy(out.feats, targets, gout, &valid);
        g.params.zero_grads();
        g.backward(gout);
        sgd_step(g.params, state, topt.opt, double(epoch) / double(topt.opt.epochs));
        loss_sum += double(loss) * double(valid);
        loss_n += valid;
      }
    } catch (const NumericError& err) {
      throw NumericError("epoch " + std::to_string(epoch + 1) + ": " + err.what());
    }
    rep.loss_curve.push_back(loss_sum / double(std::max<std::int64_t>(1, loss_n)));

    const EvalResult ev = eval_pass(g, data, topt);
    rep.metric_curve.push_back(data.seg ? ev.miou : ev.top1);
    rep.top1 = ev.top1;
    rep.miou = ev.miou;
    rep.per_class_iou = ev.iou;
    if (topt.log)
      *topt.log << "epoch " << (epoch + 1) << "/" << topt.opt.epochs << " loss "
                << rep.loss_curve.back() << (data.seg ? " val_miou " : " val_top1 ")
                << rep.metric_curve.back() << "\n";
  }

  rep.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

metrics::MetricReport evaluate(models::NetworkGraph<float>& g, const TrainData& data,
                               const TrainOptions& topt) {
  const auto t0 = std::chrono::steady_clock::now();
  const EvalResult ev = eval_pass(g, data, topt);
  metrics::MetricReport rep;
  rep.seed = topt.opt.seed;
  rep.regime = g.regime ? models::to_string(*g.regime) : "-";
  rep.is_seg = data.seg;
  rep.top1 = ev.top1;
  rep.miou = ev.miou;
  rep.per_class_iou = ev.iou;
  rep.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace i2p::train
