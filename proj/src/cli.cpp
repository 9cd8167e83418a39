#include "i2p/cli.hpp"

#include "i2p/data.hpp"
#include "i2p/inflate.hpp"
#include "i2p/io.hpp"
#include "i2p/metrics.hpp"
#include "i2p/models.hpp"
#include "i2p/oracle.hpp"
#include "i2p/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>

namespace i2p::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSubsetSeedSalt = 0x9e3779b97f4a7c15ull;

std::string crc_hex(const std::vector<std::uint8_t>& bytes) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", io::crc32(bytes));
  return buf;
}

std::string file_crc(const std::string& path) { return crc_hex(io::read_file(path)); }

/// Record an input file's checksum if it exists (dataset pieces vary by mode).
void note_input(json& manifest, const std::string& path) {
  if (fs::exists(path)) manifest["inputs"][path] = file_crc(path);
}

void note_dataset(json& manifest, const std::string& dir) {
  note_input(manifest, (fs::path(dir) / "train.i2pw").string());
  note_input(manifest, (fs::path(dir) / "val.i2pw").string());
  note_input(manifest, (fs::path(dir) / "train" / "index.txt").string());
  note_input(manifest, (fs::path(dir) / "val" / "index.txt").string());
}

void write_manifest(const std::string& out_dir, json manifest) {
  manifest["format_version"] = 1;
  const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(dir);
  io::atomic_write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
}

inflate::TransformKind parse_handcrafted(const std::string& name) {
  if (name == "default") return inflate::TransformKind::Default;
  if (name == "t1") return inflate::TransformKind::T1;
  if (name == "t2") return inflate::TransformKind::T2;
  if (name == "t3") return inflate::TransformKind::T3;
  throw InvalidInput("unknown transform '" + name + "'");
}

bool archive_is_factored(const io::WeightArchive& a) {
  for (const io::TensorRecord& r : a.records)
    if (r.name.rfind("t.", 0) == 0) return true;
  return false;
}

/// Config assembled from (defaults <- config file <- explicit flags).
struct RunSetup {
  io::RunConfig cfg;
  CLI::App* app = nullptr;

  void fold_file_and_flags(const std::string& config_path) {
    if (!config_path.empty()) {
      io::RunConfig file_cfg = io::read_config(config_path);
      // flags not given keep the file's values
      cfg = file_cfg;
    }
  }
};

void add_run_flags(CLI::App* cmd, io::RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "key=value run configuration file");
  cmd->add_option("--arch", cfg.arch, "architecture name");
  cmd->add_option("--regime", cfg.regime, "finetune regime");
  cmd->add_option("--data", cfg.data, "dataset directory");
  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--transform", cfg.transform, "filter transform");
  cmd->add_option("--schedule", cfg.schedule, "lr schedule: cosine|poly|step");
  cmd->add_option("--voxel-size", cfg.voxel_size, "voxel edge length");
  cmd->add_option("--width-mult", cfg.width_mult, "channel width multiplier");
  cmd->add_option("--lr", cfg.lr, "initial learning rate");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", cfg.weight_decay, "L2 coefficient");
  cmd->add_option("--epochs", cfg.epochs, "training epochs");
  cmd->add_option("--batch-size", cfg.batch_size, "samples per step");
  cmd->add_option("--seed", cfg.seed, "run seed");
  cmd->add_option("--classes", cfg.classes, "class count (overridden by dataset)");
  cmd->add_option("--subset-per-class", cfg.subset_per_class,
                  "train on this many samples per class (0 = all)");
}

/// Re-apply flag values on top of a config file: CLI11 already wrote flag
/// values into cfg, so we re-parse the file first and then replay the flags
/// that were actually provided.
io::RunConfig merge_config(const CLI::App* cmd, const io::RunConfig& flag_cfg,
                           const std::string& config_path) {
  if (config_path.empty()) return flag_cfg;
  io::RunConfig merged = io::read_config(config_path);
  const auto replay = [&](const char* flag, const auto& member, auto setter) {
    if (cmd->count(flag) > 0) setter(merged, member);
  };
  replay("--arch", flag_cfg.arch, [](io::RunConfig& c, const std::string& v) { c.arch = v; });
  replay("--regime", flag_cfg.regime, [](io::RunConfig& c, const std::string& v) { c.regime = v; });
  replay("--data", flag_cfg.data, [](io::RunConfig& c, const std::string& v) { c.data = v; });
  replay("--out", flag_cfg.out, [](io::RunConfig& c, const std::string& v) { c.out = v; });
  replay("--transform", flag_cfg.transform,
         [](io::RunConfig& c, const std::string& v) { c.transform = v; });
  replay("--schedule", flag_cfg.schedule,
         [](io::RunConfig& c, const std::string& v) { c.schedule = v; });
  replay("--voxel-size", flag_cfg.voxel_size, [](io::RunConfig& c, double v) { c.voxel_size = v; });
  replay("--width-mult", flag_cfg.width_mult, [](io::RunConfig& c, double v) { c.width_mult = v; });
  replay("--lr", flag_cfg.lr, [](io::RunConfig& c, double v) { c.lr = v; });
  replay("--momentum", flag_cfg.momentum, [](io::RunConfig& c, double v) { c.momentum = v; });
  replay("--weight-decay", flag_cfg.weight_decay,
         [](io::RunConfig& c, double v) { c.weight_decay = v; });
  replay("--epochs", flag_cfg.epochs, [](io::RunConfig& c, int v) { c.epochs = v; });
  replay("--batch-size", flag_cfg.batch_size, [](io::RunConfig& c, int v) { c.batch_size = v; });
  replay("--seed", flag_cfg.seed, [](io::RunConfig& c, std::uint64_t v) { c.seed = v; });
  replay("--classes", flag_cfg.classes, [](io::RunConfig& c, int v) { c.classes = v; });
  replay("--subset-per-class", flag_cfg.subset_per_class,
         [](io::RunConfig& c, int v) { c.subset_per_class = v; });
  return merged;
}

train::TrainOptions options_from(const io::RunConfig& cfg) {
  train::TrainOptions topt;
  topt.opt.lr0 = cfg.lr;
  topt.opt.momentum = cfg.momentum;
  topt.opt.weight_decay = cfg.weight_decay;
  topt.opt.schedule = cfg.schedule;
  topt.opt.epochs = cfg.epochs;
  topt.opt.seed = cfg.seed;
  topt.batch_size = cfg.batch_size;
  topt.voxel_size = static_cast<float>(cfg.voxel_size);
  return topt;
}

void write_training_artifacts(const std::string& out_dir, const metrics::MetricReport& rep) {
  fs::create_directories(out_dir);
  io::atomic_write_text((fs::path(out_dir) / "report.txt").string(), metrics::report_text(rep));
  io::atomic_write_text((fs::path(out_dir) / "metrics.csv").string(), metrics::report_csv(rep));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenSynthArgs {
  std::string mode = "3d-cls", out;
  int classes = data::kNumShapeClasses, n_train = 100, n_val = 20, size = 24, points = 512;
  std::uint64_t seed = 0;
};

int cmd_gen_synth(const GenSynthArgs& a) {
  json manifest;
  manifest["command"] = "gen-synth";
  manifest["args"] = {{"mode", a.mode},       {"classes", a.classes}, {"n_train", a.n_train},
                      {"n_val", a.n_val},     {"size", a.size},       {"points", a.points},
                      {"seed", a.seed}};

  if (a.mode == "2d") {
    const data::ImageSet train = data::gen_synthetic_2d(a.classes, a.n_train, a.size, a.seed);
    const data::ImageSet val = data::gen_synthetic_2d(a.classes, a.n_val, a.size, a.seed + 1);
    fs::create_directories(a.out);
    data::write_image_dataset(train, (fs::path(a.out) / "train.i2pw").string());
    data::write_image_dataset(val, (fs::path(a.out) / "val.i2pw").string());
  } else if (a.mode == "3d-cls") {
    data::write_cloud_dataset(data::gen_synthetic_3d(a.classes, a.n_train, a.points, a.seed),
                              (fs::path(a.out) / "train").string());
    data::write_cloud_dataset(data::gen_synthetic_3d(a.classes, a.n_val, a.points, a.seed + 1),
                              (fs::path(a.out) / "val").string());
  } else if (a.mode == "3d-seg") {
    data::write_cloud_dataset(data::gen_synthetic_3d_seg(a.classes, a.n_train, a.points, a.seed),
                              (fs::path(a.out) / "train").string());
    data::write_cloud_dataset(data::gen_synthetic_3d_seg(a.classes, a.n_val, a.points, a.seed + 1),
                              (fs::path(a.out) / "val").string());
  } else {
    throw InvalidInput("gen-synth: mode must be 2d, 3d-cls, or 3d-seg");
  }
  write_manifest(a.out, std::move(manifest));
  std::cout << "wrote " << a.mode << " dataset to " << a.out << "\n";
  return 0;
}

struct VoxelizeArgs {
  std::string input, out;
  double voxel_size = 0.05;
};

int cmd_voxelize(const VoxelizeArgs& a) {
  const voxel::PointCloud pc = io::read_pointcloud(a.input);
  const auto [tensor, map] = voxel::voxelize<float>(pc, static_cast<float>(a.voxel_size));
  if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
  io::write_svt(tensor, a.out);
  json manifest;
  manifest["command"] = "voxelize";
  manifest["args"] = {{"input", a.input}, {"voxel_size", a.voxel_size}, {"out", a.out}};
  note_input(manifest, a.input);
  write_manifest(fs::path(a.out).parent_path().string(), std::move(manifest));
  std::cout << pc.size() << " points -> " << tensor.size() << " voxels ("
            << tensor.channels() << " channels)\n";
  return 0;
}

int cmd_pretrain2d(const CLI::App* cmd, const io::RunConfig& flag_cfg,
                   const std::string& config_path, bool verbose) {
  io::RunConfig cfg = merge_config(cmd, flag_cfg, config_path);
  if (cfg.arch.empty()) cfg.arch = "resnet18-cls";
  if (cfg.data.empty() || cfg.out.empty())
    throw InvalidInput("pretrain2d: --data and --out are required");

  train::TrainData dataset = train::load_train_data(cfg.data);
  if (!dataset.planar) throw InvalidInput("pretrain2d: dataset is not 2D imagery");
  if (cfg.subset_per_class > 0) {
    Rng sub(cfg.seed ^ kSubsetSeedSalt);
    dataset.train2 = data::select(
        dataset.train2,
        train::stratified_subset(dataset.train2.labels, cfg.subset_per_class, sub));
  }

  models::BuildOptions opt;
  opt.arch = cfg.arch;
  opt.dim = 2;
  opt.in_channels = 1;
  opt.classes = dataset.classes;
  opt.width_mult = cfg.width_mult;
  opt.seed = cfg.seed;
  models::NetworkGraph<float> g = models::build_network<float>(opt);
  models::apply_regime(g, models::Regime::Whole);

  train::TrainOptions topt = options_from(cfg);
  if (verbose) topt.log = &std::cout;
  const metrics::MetricReport rep = train::train_network(g, dataset, topt);

  fs::create_directories(cfg.out);
  io::write_archive(g.save_weights(), (fs::path(cfg.out) / "weights2d.i2pw").string());
  write_training_artifacts(cfg.out, rep);

  json manifest;
  manifest["command"] = "pretrain2d";
  manifest["config"] = cfg.to_text();
  note_dataset(manifest, cfg.data);
  if (!config_path.empty()) note_input(manifest, config_path);
  write_manifest(cfg.out, std::move(manifest));

  std::cout << "val top1 " << rep.top1 << " after " << cfg.epochs << " epochs ("
            << rep.wall_time << " s)\n";
  return 0;
}

struct InflateArgs {
  std::string weights2d, transform = "default", arch = "resnet18-cls", out;
  bool verify = false;
};

int verify_inflation(const io::WeightArchive& src, const io::WeightArchive& dst,
                     const InflateArgs& a) {
  std::int64_t src_k3 = 0, dst_k3 = 0;
  bool slices_ok = true, bn_ok = true;
  for (const io::TensorRecord& rec : dst.records) {
    if (rec.name.rfind("t.", 0) == 0) continue;
    const io::TensorRecord& before = src.at(rec.name);
    if (rec.dims.size() == 5 && rec.dims[2] == 3) {
      dst_k3 += static_cast<std::int64_t>(rec.numel());
      src_k3 += static_cast<std::int64_t>(before.numel());
      if (a.transform == "default") {
        // every z-slice must equal the source kernel
        const std::size_t mn = static_cast<std::size_t>(rec.dims[0] * rec.dims[1]);
        for (std::size_t f = 0; f < mn && slices_ok; ++f)
          for (int kz = 0; kz < 3 && slices_ok; ++kz)
            for (int i = 0; i < 9; ++i)
              if (rec.values[f * 27 + static_cast<std::size_t>(kz) * 9 +
                             static_cast<std::size_t>(i)] != before.values[f * 9 + i]) {
                slices_ok = false;
                break;
              }
      }
    } else if (rec.dims.size() == 1) {
      bn_ok = bn_ok && rec.values == before.values;
    }
  }
  const bool factor_ok = archive_is_factored(dst) || dst_k3 == 3 * src_k3;
  std::cout << "verify: 3x3 volume " << dst_k3 << " vs source " << src_k3
            << (factor_ok ? " (3x: ok)" : " (3x: MISMATCH)") << "\n";
  if (a.transform == "default")
    std::cout << "verify: z-slice replication " << (slices_ok ? "ok" : "MISMATCH") << "\n";
  std::cout << "verify: batchnorm tensors " << (bn_ok ? "byte-identical" : "MISMATCH") << "\n";
  return factor_ok && slices_ok && bn_ok ? 0 : 2;
}

int cmd_inflate(const InflateArgs& a) {
  if (a.weights2d.empty() || a.out.empty())
    throw InvalidInput("inflate: --weights2d and --out are required");
  const io::WeightArchive src = io::read_archive(a.weights2d);

  inflate::InflatePolicy policy;
  io::WeightArchive learned;
  std::string learned_path;
  if (a.transform.rfind("learned:", 0) == 0) {
    learned_path = a.transform.substr(std::string("learned:").size());
    learned = io::read_archive(learned_path);
    if (!archive_is_factored(learned))
      throw InvalidInput("inflate: '" + learned_path + "' carries no transform tensors");
    policy.default_kind = inflate::TransformKind::Learned;
    policy.learned_source = &learned;
  } else {
    policy.default_kind = parse_handcrafted(a.transform);
  }

  models::BuildOptions opt;
  opt.arch = a.arch;
  models::NetworkGraph<float> g = models::build_network<float>(opt);
  const io::WeightArchive dst = inflate::inflate_network(
      src, policy, models::backbone_conv_names(g), models::backbone_bn_names(g));
  if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
  io::write_archive(dst, a.out);

  json manifest;
  manifest["command"] = "inflate";
  manifest["args"] = {{"weights2d", a.weights2d},
                      {"transform", a.transform},
                      {"arch", a.arch},
                      {"out", a.out}};
  note_input(manifest, a.weights2d);
  if (!learned_path.empty()) note_input(manifest, learned_path);
  write_manifest(fs::path(a.out).parent_path().string(), std::move(manifest));

  std::cout << "inflated " << dst.records.size() << " tensors -> " << a.out << "\n";
  return a.verify ? verify_inflation(src, dst, a) : 0;
}

int cmd_train(const CLI::App* cmd, const io::RunConfig& flag_cfg, const std::string& config_path,
              const std::string& weights_path, const std::string& t_init, bool verbose) {
  io::RunConfig cfg = merge_config(cmd, flag_cfg, config_path);
  if (cfg.arch.empty() || cfg.regime.empty() || cfg.data.empty() || cfg.out.empty())
    throw InvalidInput("train: --arch, --regime, --data, and --out are required");

  const models::Regime regime = models::regime_from_string(cfg.regime);
  const bool learn_t = regime == models::Regime::LearnT_Shared ||
                       regime == models::Regime::LearnT_PerFilter;

  train::TrainData dataset = train::load_train_data(cfg.data);
  if (dataset.planar) throw InvalidInput("train: use pretrain2d for image datasets");
  if (cfg.subset_per_class > 0) {
    if (dataset.seg)
      throw InvalidInput("train: per-class subsetting applies to classification data");
    Rng sub(cfg.seed ^ kSubsetSeedSalt);
    dataset.train3 = data::select(
        dataset.train3,
        train::stratified_subset(dataset.train3.labels, cfg.subset_per_class, sub));
  }

  models::BuildOptions opt;
  opt.arch = cfg.arch;
  opt.classes = dataset.classes;
  opt.width_mult = cfg.width_mult;
  opt.seed = cfg.seed;
  opt.factored = learn_t;
  opt.sharing = regime == models::Regime::LearnT_PerFilter ? inflate::Sharing::PerFilter
                                                           : inflate::Sharing::Shared;
  if (t_init == "random")
    opt.t_init = inflate::TInit::Random;
  else if (t_init != "default")
    throw InvalidInput("train: --transform-init must be default or random");
  models::NetworkGraph<float> g = models::build_network<float>(opt);

  if (!weights_path.empty()) {
    io::WeightArchive weights = io::read_archive(weights_path);
    if (archive_is_factored(weights) && !learn_t)
      throw InvalidInput(
          "train: archive carries transform tensors; use a learn-t regime or inflate first");
    if (weights.tag == io::WeightArchive::kTag2D) {
      if (!learn_t)
        throw InvalidInput("train: archive holds a 2D network; run inflate first");
      // keep the planar backbone weights verbatim; the learned transform carries the lift
      inflate::InflatePolicy policy;
      policy.default_kind = inflate::TransformKind::Learned;
      weights = inflate::inflate_network(weights, policy, models::backbone_conv_names(g),
                                         models::backbone_bn_names(g));
    }
    g.load_weights(weights, /*strict=*/false);
  } else if (learn_t) {
    throw InvalidInput("train: learn-t regimes finetune pretrained 2D weights (--weights)");
  }
  models::apply_regime(g, regime);

  train::TrainOptions topt = options_from(cfg);
  if (verbose) topt.log = &std::cout;
  const metrics::MetricReport rep = train::train_network(g, dataset, topt);

  fs::create_directories(cfg.out);
  io::write_archive(g.save_weights(), (fs::path(cfg.out) / "weights.i2pw").string());
  write_training_artifacts(cfg.out, rep);

  json manifest;
  manifest["command"] = "train";
  manifest["config"] = cfg.to_text();
  manifest["args"] = {{"weights", weights_path}, {"transform_init", t_init}};
  note_dataset(manifest, cfg.data);
  if (!weights_path.empty()) note_input(manifest, weights_path);
  if (!config_path.empty()) note_input(manifest, config_path);
  write_manifest(cfg.out, std::move(manifest));

  std::cout << (dataset.seg ? "val miou " : "val top1 ")
            << (dataset.seg ? rep.miou : rep.top1) << " after " << cfg.epochs << " epochs ("
            << rep.wall_time << " s)\n";
  return 0;
}

int cmd_eval(const CLI::App* cmd, const io::RunConfig& flag_cfg, const std::string& config_path,
             const std::string& weights_path) {
  io::RunConfig cfg = merge_config(cmd, flag_cfg, config_path);
  if (cfg.arch.empty() || cfg.data.empty() || cfg.out.empty() || weights_path.empty())
    throw InvalidInput("eval: --arch, --weights, --data, and --out are required");

  train::TrainData dataset = train::load_train_data(cfg.data);
  const io::WeightArchive weights = io::read_archive(weights_path);
  const bool factored = archive_is_factored(weights);

  models::BuildOptions opt;
  opt.arch = cfg.arch;
  opt.dim = dataset.planar ? 2 : 3;
  opt.in_channels = dataset.planar ? 1 : 3;
  opt.classes = dataset.classes;
  opt.width_mult = cfg.width_mult;
  opt.seed = cfg.seed;
  opt.factored = factored;
  opt.sharing = weights.has("t.shared") ? inflate::Sharing::Shared : inflate::Sharing::PerFilter;
  models::NetworkGraph<float> g = models::build_network<float>(opt);
  g.load_weights(weights, /*strict=*/true);

  const metrics::MetricReport rep = train::evaluate(g, dataset, options_from(cfg));

  fs::create_directories(cfg.out);
  io::atomic_write_text((fs::path(cfg.out) / "report.txt").string(), metrics::report_text(rep));
  {
    std::ostringstream csv;
    char buf[40];
    csv << "metric,value\n";
    std::snprintf(buf, sizeof(buf), "%.17g", rep.top1);
    csv << "top1," << buf << "\n";
    if (rep.is_seg) {
      std::snprintf(buf, sizeof(buf), "%.17g", rep.miou);
      csv << "miou," << buf << "\n";
    }
    io::atomic_write_text((fs::path(cfg.out) / "metrics.csv").string(), csv.str());
  }
  {
    json manifest;
    manifest["command"] = "eval";
    manifest["config"] = cfg.to_text();
    manifest["args"] = {{"weights", weights_path}};
    note_dataset(manifest, cfg.data);
    note_input(manifest, weights_path);
    if (!config_path.empty()) note_input(manifest, config_path);
    write_manifest(cfg.out, std::move(manifest));
  }

  std::cout << "top1 " << rep.top1;
  if (rep.is_seg) std::cout << " miou " << rep.miou;
  std::cout << " (" << rep.wall_time << " s)\n";
  return 0;
}

struct GradcheckArgs {
  std::string arch = "linear-baseline", regime = "whole", t_init = "default";
  std::uint64_t seed = 0;
  int voxels = 8, classes = 3;
  double width_mult = 0.05, h = 1e-5;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.voxels < 1 || a.voxels > 10)
    throw InvalidInput("gradcheck: --voxels must be in [1, 10]");
  const models::Regime regime = models::regime_from_string(a.regime);
  const bool learn_t = regime == models::Regime::LearnT_Shared ||
                       regime == models::Regime::LearnT_PerFilter;

  models::BuildOptions opt;
  opt.arch = a.arch;
  opt.classes = a.classes;
  opt.width_mult = a.width_mult;
  opt.seed = a.seed;
  opt.factored = learn_t;
  opt.sharing = regime == models::Regime::LearnT_PerFilter ? inflate::Sharing::PerFilter
                                                           : inflate::Sharing::Shared;
  models::NetworkGraph<double> g = models::build_network<double>(opt);
  models::apply_regime(g, regime);

  // one tiny sample: unique random sites in a 4^3 box, standard-normal features
  Rng rng(a.seed + 17);
  std::set<Coord4> sites;
  while (static_cast<int>(sites.size()) < a.voxels)
    sites.insert({0, static_cast<std::int32_t>(rng.below(4)),
                  static_cast<std::int32_t>(rng.below(4)),
                  static_cast<std::int32_t>(rng.below(4))});
  nn::Act<double> input;
  input.samples = 1;
  input.coords.assign(sites.begin(), sites.end());
  input.feats.resize(a.voxels, 3);
  rng.fill_normal(input.feats);

  std::vector<std::int32_t> targets;
  if (g.seg)
    throw InvalidInput("gradcheck: classification architectures only");
  targets.push_back(static_cast<std::int32_t>(rng.below(a.classes)));

  const train::GradcheckReport rep = train::gradcheck(g, input, targets, a.h);
  for (const train::GradcheckRow& row : rep.rows) {
    if (row.frozen)
      std::printf("%-40s frozen  grad %s\n", row.name.c_str(),
                  row.frozen_zero ? "zero" : "NONZERO");
    else
      std::printf("%-40s rel err %.3e\n", row.name.c_str(), row.max_rel_err);
  }
  const bool pass = rep.worst_rel_err <= 1e-6 && rep.all_frozen_zero;
  std::printf("worst rel err %.3e  frozen %s  %s\n", rep.worst_rel_err,
              rep.all_frozen_zero ? "clean" : "VIOLATED", pass ? "PASS" : "FAIL");
  return pass ? 0 : 2;
}

struct CheckEqArgs {
  int trials = 50, size = 8, k = 3;
  std::uint64_t seed = 7;
};

int cmd_check_equivalence(const CheckEqArgs& a) {
  if (a.trials < 1 || a.size < 1) throw InvalidInput("check-equivalence: degenerate request");
  Rng rng(a.seed);
  const int M = 4, N = 3;
  double worst = 0;
  for (int t = 0; t < a.trials; ++t) {
    RowMatrix<double> w2d(M, N * a.k * a.k);
    rng.fill_uniform(w2d, -1.0, 1.0);
    Dense4<double> x(N, a.size, a.size, a.size, Coord3{0, 0, 0});
    for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
    worst = std::max(worst, oracle::projection_equivalence_check(w2d, N, a.k, x));
  }
  const bool pass = worst <= 1e-4;
  std::printf("trials %d size %d^3 K=%d  max deviation %.3e  %s\n", a.trials, a.size, a.k, worst,
              pass ? "PASS" : "FAIL");
  return pass ? 0 : 2;
}

struct DumpTArgs {
  std::string transform, weights, name = "t.shared", out;
  int k = 3;
};

int cmd_dump_t(const DumpTArgs& a) {
  RowMatrix<float> t;
  if (!a.weights.empty()) {
    const io::WeightArchive arc = io::read_archive(a.weights);
    const io::TensorRecord& rec = arc.at(a.name);
    if (rec.dims.size() != 2) throw InvalidInput("dump-t: '" + a.name + "' is not a matrix");
    t = Eigen::Map<const RowMatrix<float>>(rec.values.data(),
                                           static_cast<Eigen::Index>(rec.dims[0]),
                                           static_cast<Eigen::Index>(rec.dims[1]));
  } else if (!a.transform.empty()) {
    t = inflate::transform_matrix<float>(parse_handcrafted(a.transform), a.k);
  } else {
    throw InvalidInput("dump-t: provide --transform or --weights");
  }

  std::ostringstream grid;
  char buf[32];
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", double(t(r, c)));
      grid << (c ? " " : "") << buf;
    }
    grid << "\n";
  }
  if (a.out.empty())
    std::cout << grid.str();
  else
    io::atomic_write_text(a.out, grid.str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  if (const char* threads = std::getenv("I2P_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"2D-to-3D convolution transfer toolkit"};
  app.require_subcommand(1);

  GenSynthArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen-synth", "generate a synthetic shape dataset");
  c_gen->add_option("--mode", gen.mode, "2d | 3d-cls | 3d-seg");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--classes", gen.classes, "number of shape classes");
  c_gen->add_option("--n-train", gen.n_train, "train samples per class (scenes for 3d-seg)");
  c_gen->add_option("--n-val", gen.n_val, "val samples per class (scenes for 3d-seg)");
  c_gen->add_option("--size", gen.size, "2D image edge length");
  c_gen->add_option("--points", gen.points, "points per 3D sample");
  c_gen->add_option("--seed", gen.seed, "generator seed");

  VoxelizeArgs vox;
  CLI::App* c_vox = app.add_subcommand("voxelize", "quantize a point cloud to a sparse tensor");
  c_vox->add_option("--input", vox.input, "point-cloud text file")->required();
  c_vox->add_option("--voxel-size", vox.voxel_size, "voxel edge length");
  c_vox->add_option("--out", vox.out, "output .svt path")->required();

  io::RunConfig pre_cfg;
  std::string pre_config;
  bool pre_verbose = false;
  CLI::App* c_pre = app.add_subcommand("pretrain2d", "train the 2D source network");
  add_run_flags(c_pre, pre_cfg, pre_config);
  c_pre->add_flag("--verbose", pre_verbose, "per-epoch progress on stdout");

  InflateArgs inf;
  CLI::App* c_inf = app.add_subcommand("inflate", "lift a 2D archive into a 3D one");
  c_inf->add_option("--weights2d", inf.weights2d, "source 2D archive")->required();
  c_inf->add_option("--transform", inf.transform, "default|t1|t2|t3|learned:<path>");
  c_inf->add_option("--arch", inf.arch, "target architecture");
  c_inf->add_option("--out", inf.out, "output archive path")->required();
  c_inf->add_flag("--verify", inf.verify, "check the output against the source");

  io::RunConfig tr_cfg;
  std::string tr_config, tr_weights, tr_tinit = "default";
  bool tr_verbose = false;
  CLI::App* c_tr = app.add_subcommand("train", "finetune or train a 3D network");
  add_run_flags(c_tr, tr_cfg, tr_config);
  c_tr->add_option("--weights", tr_weights, "initial weights archive (inflated or 2D)");
  c_tr->add_option("--transform-init", tr_tinit, "learn-t start: default | random");
  c_tr->add_flag("--verbose", tr_verbose, "per-epoch progress on stdout");

  io::RunConfig ev_cfg;
  std::string ev_config, ev_weights;
  CLI::App* c_ev = app.add_subcommand("eval", "evaluate an archive on a dataset");
  add_run_flags(c_ev, ev_cfg, ev_config);
  c_ev->add_option("--weights", ev_weights, "weights archive")->required();

  GradcheckArgs gc;
  CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  c_gc->add_option("--arch", gc.arch, "architecture name");
  c_gc->add_option("--regime", gc.regime, "finetune regime");
  c_gc->add_option("--transform-init", gc.t_init, "learn-t start: default | random");
  c_gc->add_option("--seed", gc.seed, "scene seed");
  c_gc->add_option("--voxels", gc.voxels, "active sites (max 10)");
  c_gc->add_option("--classes", gc.classes, "class count");
  c_gc->add_option("--width-mult", gc.width_mult, "channel width multiplier");
  c_gc->add_option("--step", gc.h, "finite-difference step");

  CheckEqArgs eq;
  CLI::App* c_eq = app.add_subcommand("check-equivalence",
                                      "projection identity between 2D and inflated 3D convs");
  c_eq->add_option("--trials", eq.trials, "random trials");
  c_eq->add_option("--size", eq.size, "dense grid edge");
  c_eq->add_option("--k", eq.k, "kernel size");
  c_eq->add_option("--seed", eq.seed, "trial seed");

  DumpTArgs dt;
  CLI::App* c_dt = app.add_subcommand("dump-t", "print a transform matrix as a text grid");
  c_dt->add_option("--transform", dt.transform, "default|t1|t2|t3");
  c_dt->add_option("--k", dt.k, "kernel size");
  c_dt->add_option("--weights", dt.weights, "archive holding learned transforms");
  c_dt->add_option("--name", dt.name, "tensor name inside the archive");
  c_dt->add_option("--out", dt.out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help exits 0; flag errors exit 1
  }

  try {
    if (c_gen->parsed()) return cmd_gen_synth(gen);
    if (c_vox->parsed()) return cmd_voxelize(vox);
    if (c_pre->parsed()) return cmd_pretrain2d(c_pre, pre_cfg, pre_config, pre_verbose);
    if (c_inf->parsed()) return cmd_inflate(inf);
    if (c_tr->parsed()) return cmd_train(c_tr, tr_cfg, tr_config, tr_weights, tr_tinit, tr_verbose);
    if (c_ev->parsed()) return cmd_eval(c_ev, ev_cfg, ev_config, ev_weights);
    if (c_gc->parsed()) return cmd_gradcheck(gc);
    if (c_eq->parsed()) return cmd_check_equivalence(eq);
    if (c_dt->parsed()) return cmd_dump_t(dt);
    return 1;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ArchiveError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Unsupported& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const PolicyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CorruptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace i2p::cli
