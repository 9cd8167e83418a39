#pragma once

#include "i2p/inflate.hpp"
#include "i2p/io.hpp"
#include "i2p/kernel_map.hpp"
#include "i2p/nn.hpp"
#include "i2p/rng.hpp"
#include "i2p/types.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace i2p::models {

/// Which trainability class a parameter belongs to under the finetune regimes:
/// the input layer (I), the output layer / decoder (O), or the transferred
/// backbone.
enum class Part { Input, Backbone, Output };

enum class Regime { IO, IO_Stats, IO_BN, Whole, LearnT_Shared, LearnT_PerFilter };

inline Regime regime_from_string(const std::string& s) {
  if (s == "io") return Regime::IO;
  if (s == "io-stats") return Regime::IO_Stats;
  if (s == "io-bn") return Regime::IO_BN;
  if (s == "whole") return Regime::Whole;
  if (s == "learn-t-shared") return Regime::LearnT_Shared;
  if (s == "learn-t-perfilter") return Regime::LearnT_PerFilter;
  throw InvalidInput("unknown regime '" + s + "'");
}

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::IO: return "io";
    case Regime::IO_Stats: return "io-stats";
    case Regime::IO_BN: return "io-bn";
    case Regime::Whole: return "whole";
    case Regime::LearnT_Shared: return "learn-t-shared";
    case Regime::LearnT_PerFilter: return "learn-t-perfilter";
  }
  return "?";
}

struct LayerSpec {
  enum class Kind { Input, Conv, Deconv, BN, ReLU, Linear, Pool, Add, Concat };

  Kind kind;
  std::vector<int> in;  // producer node ids
  Part part = Part::Backbone;

  // Conv / Deconv / Linear
  std::string wname;
  std::string bias;  // "" = no bias
  int K = 0;
  int stride = 1;
  int in_ch = 0;
  int out_ch = 0;
  bool planar = false;    // planar convolution (K^2 offsets, z untouched)
  bool factored = false;  // weight kept 2D, lifted by a transform at forward time
  std::string tname;      // shared transform parameter ("" = identity / per-filter)
  bool per_filter_t = false;
  int deconv_target = -1;  // node whose active set the deconv must reproduce

  // BN
  std::string bn_base;  // parameters bn_base + .gamma/.beta/.mean/.var
  bool bn_force_eval = false;
  bool bn_stats_update = true;
};

struct BuildOptions {
  std::string arch = "resnet18-cls";
  int dim = 3;  // 2 builds the planar source network
  int in_channels = 3;
  int classes = 5;
  double width_mult = 0.25;
  bool factored = false;  // learnable-transform layout (2D weights + T)
  inflate::Sharing sharing = inflate::Sharing::Shared;
  inflate::TInit t_init = inflate::TInit::FromDefault;
  std::uint64_t seed = 0;
};

template <typename Scalar>
class NetworkGraph {
 public:
  std::vector<LayerSpec> layers;
  nn::ParamStore<Scalar> params;
  std::unordered_map<std::string, Part> param_part;
  std::string arch;
  int dim = 3;
  bool seg = false;
  int classes = 0;
  int in_channels = 0;
  double width_mult = 1.0;
  bool factored = false;
  inflate::Sharing sharing = inflate::Sharing::Shared;
  std::optional<Regime> regime;

  // --- execution -----------------------------------------------------------

  const nn::Act<Scalar>& forward(const nn::Act<Scalar>& input, bool train) {
    trace_.acts.assign(layers.size(), {});
    trace_.maps.assign(layers.size(), {});
    trace_.bns.assign(layers.size(), {});
    trace_.w3.assign(layers.size(), {});
    for (std::size_t i = 0; i < layers.size(); ++i) run_layer(static_cast<int>(i), input, train);
    has_trace_ = true;
    return trace_.acts.back();
  }

  /// Push gradients from the final node back to every trainable parameter.
  /// Gradients accumulate into params.grad(...); frozen parameters are skipped
  /// entirely so their accumulators stay exactly zero.
  void backward(const RowMatrix<Scalar>& g_output) {
    if (!has_trace_) throw StateError("backward called before forward");
    std::vector<RowMatrix<Scalar>> g(layers.size());
    g.back() = g_output;
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) backprop_layer(i, g);
  }

  const nn::Act<Scalar>& activation(int node) const { return trace_.acts.at(static_cast<std::size_t>(node)); }
  bool has_trace() const { return has_trace_; }

  // --- weights -------------------------------------------------------------

  io::WeightArchive save_weights() const {
    io::WeightArchive a;
    a.tag = dim == 2 ? io::WeightArchive::kTag2D : io::WeightArchive::kTag3D;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const nn::Param<Scalar>& p = params[i];
      std::vector<std::uint64_t> dims(p.dims.begin(), p.dims.end());
      std::vector<float> payload(static_cast<std::size_t>(p.value.size()));
      for (Eigen::Index k = 0; k < p.value.size(); ++k)
        payload[static_cast<std::size_t>(k)] = static_cast<float>(p.value.data()[k]);
      a.add(p.name, std::move(dims), std::move(payload));
    }
    return a;
  }

  /// Copy matching records into parameters. Backbone tensors must all be
  /// present; input/output layers and transform tensors fall back to their
  /// fresh initialization unless `strict` demands full coverage.
  void load_weights(const io::WeightArchive& a, bool strict) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      nn::Param<Scalar>& p = params[i];
      const io::TensorRecord* rec = a.find(p.name);
      if (!rec) {
        const bool is_t = p.name.rfind("t.", 0) == 0;
        if (strict || (param_part.at(p.name) == Part::Backbone && !is_t))
          throw ArchiveError("archive is missing tensor '" + p.name + "'");
        continue;  // fresh-initialized tensors stay as built
      }
      if (rec->dims.size() != p.dims.size() ||
          !std::equal(rec->dims.begin(), rec->dims.end(), p.dims.begin(),
                      [](std::uint64_t a_, std::int64_t b_) {
                        return b_ >= 0 && a_ == static_cast<std::uint64_t>(b_);
                      }))
        throw ShapeError("tensor '" + p.name + "' has unexpected shape in archive");
      for (Eigen::Index k = 0; k < p.value.size(); ++k)
        p.value.data()[k] = static_cast<Scalar>(rec->values[static_cast<std::size_t>(k)]);
    }
  }

 private:
  struct Trace {
    std::vector<nn::Act<Scalar>> acts;
    std::vector<nn::KernelMap> maps;
    std::vector<nn::BNSaved<Scalar>> bns;
    std::vector<RowMatrix<Scalar>> w3;  // materialized weights of factored convs
  };

  Trace trace_;
  bool has_trace_ = false;

  Eigen::Index conv_offsets(const LayerSpec& s) const {
    return s.planar ? Eigen::Index(s.K) * s.K : Eigen::Index(s.K) * s.K * s.K;
  }

  /// Materialize the 3D weight of a conv layer (identity for plain layers).
  const RowMatrix<Scalar>& conv_weight(int i) {
    const LayerSpec& s = layers[static_cast<std::size_t>(i)];
    const RowMatrix<Scalar>& stored = params.at(s.wname).value;
    if (!s.factored || s.planar) return stored;
    if (s.K == 1) return stored;  // K^2 == K^3 == 1: the lift is the identity
    RowMatrix<Scalar>& w3 = trace_.w3[static_cast<std::size_t>(i)];
    if (w3.size() > 0) return w3;  // materialized during forward; reuse in backward
    if (s.per_filter_t) {
      std::vector<RowMatrix<Scalar>> ts;
      ts.reserve(static_cast<std::size_t>(s.out_ch) * static_cast<std::size_t>(s.in_ch));
      for (int m = 0; m < s.out_ch; ++m)
        for (int n = 0; n < s.in_ch; ++n) ts.push_back(params.at(t_param_name(s, m, n)).value);
      w3 = inflate::apply_transform_per_filter(stored, s.in_ch, s.K, ts);
    } else {
      w3 = inflate::apply_transform(stored, s.in_ch, s.K, params.at(s.tname).value);
    }
    return w3;
  }

  static std::string t_param_name(const LayerSpec& s, int m, int n) {
    std::string base = s.wname;
    constexpr const char* suffix = ".weight";
    base.resize(base.size() - std::string(suffix).size());
    return "t." + base + "." + std::to_string(m) + "." + std::to_string(n);
  }

  void run_layer(int i, const nn::Act<Scalar>& input, bool train) {
    const LayerSpec& s = layers[static_cast<std::size_t>(i)];
    nn::Act<Scalar>& out = trace_.acts[static_cast<std::size_t>(i)];
    const auto& at = [&](int idx) -> const nn::Act<Scalar>& {
      return trace_.acts[static_cast<std::size_t>(idx)];
    };

    switch (s.kind) {
      case LayerSpec::Kind::Input: {
        if (input.channels() != in_channels) throw ShapeError("input channel width mismatch");
        out = input;
        break;
      }
      case LayerSpec::Kind::Conv: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        nn::KernelMap& km = trace_.maps[static_cast<std::size_t>(i)];
        km = s.planar ? nn::build_kernel_map_2d(x.coords, s.K, s.stride)
                      : nn::build_kernel_map(x.coords, s.K, s.stride);
        out.feats = nn::conv_forward(x.feats, conv_weight(i), conv_offsets(s), km);
        out.coords = km.out_coords;
        out.samples = x.samples;
        out.stride_level = x.stride_level + (s.stride == 2 ? 1 : 0);
        break;
      }
      case LayerSpec::Kind::Deconv: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        nn::KernelMap& km = trace_.maps[static_cast<std::size_t>(i)];
        km = nn::build_deconv_map(x.coords, at(s.deconv_target).coords, s.K, s.stride);
        out.feats = nn::conv_forward(x.feats, params.at(s.wname).value, conv_offsets(s), km);
        out.coords = km.out_coords;
        out.samples = x.samples;
        out.stride_level = x.stride_level - 1;
        break;
      }
      case LayerSpec::Kind::BN: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        const bool eff_train = train && !s.bn_force_eval;
        const bool update = eff_train && s.bn_stats_update;
        RowVec<Scalar> gamma = params.at(s.bn_base + ".gamma").value.row(0);
        RowVec<Scalar> beta = params.at(s.bn_base + ".beta").value.row(0);
        RowVec<Scalar> mean = params.at(s.bn_base + ".mean").value.row(0);
        RowVec<Scalar> var = params.at(s.bn_base + ".var").value.row(0);
        out = x;
        out.feats = nn::bn_forward(x.feats, gamma, beta, mean, var, Scalar(0.1), Scalar(1e-5),
                                   eff_train, update, trace_.bns[static_cast<std::size_t>(i)]);
        if (update) {
          params.at(s.bn_base + ".mean").value.row(0) = mean;
          params.at(s.bn_base + ".var").value.row(0) = var;
        }
        break;
      }
      case LayerSpec::Kind::ReLU: {
        out = at(s.in[0]);
        out.feats = nn::relu_forward(at(s.in[0]).feats);
        break;
      }
      case LayerSpec::Kind::Linear: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        out = x;
        out.feats = nn::linear_forward(x.feats, params.at(s.wname).value,
                                       s.bias.empty() ? RowMatrix<Scalar>() : params.at(s.bias).value);
        break;
      }
      case LayerSpec::Kind::Pool: {
        out = nn::global_avg_pool(at(s.in[0]));
        break;
      }
      case LayerSpec::Kind::Add: {
        out = nn::add(at(s.in[0]), at(s.in[1]));
        break;
      }
      case LayerSpec::Kind::Concat: {
        out = nn::concat(at(s.in[0]), at(s.in[1]));
        break;
      }
    }
  }

  void add_grad(std::vector<RowMatrix<Scalar>>& g, int node, const RowMatrix<Scalar>& delta) {
    RowMatrix<Scalar>& slot = g[static_cast<std::size_t>(node)];
    if (slot.size() == 0)
      slot = delta;
    else
      slot += delta;
  }

  void backprop_layer(int i, std::vector<RowMatrix<Scalar>>& g) {
    const LayerSpec& s = layers[static_cast<std::size_t>(i)];
    const RowMatrix<Scalar>& gout = g[static_cast<std::size_t>(i)];
    if (gout.size() == 0) return;  // node did not influence the loss
    const auto& at = [&](int idx) -> const nn::Act<Scalar>& {
      return trace_.acts[static_cast<std::size_t>(idx)];
    };

    switch (s.kind) {
      case LayerSpec::Kind::Input:
        break;
      case LayerSpec::Kind::Conv: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        RowMatrix<Scalar> g_in, g_w;
        nn::conv_backward(gout, x.feats, conv_weight(i), conv_offsets(s),
                          trace_.maps[static_cast<std::size_t>(i)], g_in, g_w);
        accumulate_conv_weight_grad(s, g_w);
        add_grad(g, s.in[0], g_in);
        break;
      }
      case LayerSpec::Kind::Deconv: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        RowMatrix<Scalar> g_in, g_w;
        nn::conv_backward(gout, x.feats, params.at(s.wname).value, conv_offsets(s),
                          trace_.maps[static_cast<std::size_t>(i)], g_in, g_w);
        if (params.at(s.wname).trainable) params.grad(s.wname) += g_w;
        add_grad(g, s.in[0], g_in);
        break;
      }
      case LayerSpec::Kind::BN: {
        const nn::Act<Scalar>& x = at(s.in[0]);
        RowMatrix<Scalar> g_in;
        RowVec<Scalar> g_gamma, g_beta;
        RowVec<Scalar> gamma = params.at(s.bn_base + ".gamma").value.row(0);
        nn::bn_backward(gout, x.feats, trace_.bns[static_cast<std::size_t>(i)], gamma, g_in,
                        g_gamma, g_beta);
        if (params.at(s.bn_base + ".gamma").trainable)
          params.grad(s.bn_base + ".gamma").row(0) += g_gamma;
        if (params.at(s.bn_base + ".beta").trainable)
          params.grad(s.bn_base + ".beta").row(0) += g_beta;
        add_grad(g, s.in[0], g_in);
        break;
      }
      case LayerSpec::Kind::ReLU: {
        add_grad(g, s.in[0], nn::relu_backward(gout, at(s.in[0]).feats));
        break;
      }
      case LayerSpec::Kind::Linear: {
        RowMatrix<Scalar> g_in, g_w, g_b;
        nn::linear_backward(gout, at(s.in[0]).feats, params.at(s.wname).value, !s.bias.empty(),
                            g_in, g_w, g_b);
        if (params.at(s.wname).trainable) params.grad(s.wname) += g_w;
        if (!s.bias.empty() && params.at(s.bias).trainable) params.grad(s.bias).row(0) += g_b.row(0);
        add_grad(g, s.in[0], g_in);
        break;
      }
      case LayerSpec::Kind::Pool: {
        add_grad(g, s.in[0], nn::global_avg_pool_backward(gout, at(s.in[0])));
        break;
      }
      case LayerSpec::Kind::Add: {
        add_grad(g, s.in[0], gout);
        add_grad(g, s.in[1], gout);
        break;
      }
      case LayerSpec::Kind::Concat: {
        const Eigen::Index left = at(s.in[0]).channels();
        add_grad(g, s.in[0], gout.leftCols(left));
        add_grad(g, s.in[1], gout.rightCols(gout.cols() - left));
        break;
      }
    }
  }

  void accumulate_conv_weight_grad(const LayerSpec& s, const RowMatrix<Scalar>& g_w) {
    if (!s.factored || s.planar || s.K == 1) {
      if (params.at(s.wname).trainable) params.grad(s.wname) += g_w;
      return;
    }
    // factored conv: g_w is d(loss)/d(3D weight); route it into T and/or the
    // stored 2D weight
    const RowMatrix<Scalar>& w2d = params.at(s.wname).value;
    if (s.per_filter_t) {
      bool any_trainable = false;
      std::vector<RowMatrix<Scalar>*> accs;
      accs.reserve(static_cast<std::size_t>(s.out_ch) * static_cast<std::size_t>(s.in_ch));
      for (int m = 0; m < s.out_ch; ++m)
        for (int n = 0; n < s.in_ch; ++n) {
          const std::string name = t_param_name(s, m, n);
          any_trainable = any_trainable || params.at(name).trainable;
          accs.push_back(&params.grad(name));
        }
      if (any_trainable)
        inflate::add_transform_gradient_per_filter(g_w, w2d, s.in_ch, s.K, accs);
      if (params.at(s.wname).trainable) {
        // d/d(w2d) sums each filter's gradient through its own transform
        const Eigen::Index K2 = Eigen::Index(s.K) * s.K, K3 = K2 * s.K;
        Eigen::Map<const RowMatrix<Scalar>> gf(g_w.data(), Eigen::Index(s.out_ch) * s.in_ch, K3);
        RowMatrix<Scalar>& acc = params.grad(s.wname);
        Eigen::Map<RowMatrix<Scalar>> accf(acc.data(), Eigen::Index(s.out_ch) * s.in_ch, K2);
        for (int m = 0; m < s.out_ch; ++m)
          for (int n = 0; n < s.in_ch; ++n) {
            const Eigen::Index f = Eigen::Index(m) * s.in_ch + n;
            accf.row(f).noalias() += gf.row(f) * params.at(t_param_name(s, m, n)).value.transpose();
          }
      }
    } else {
      if (params.at(s.tname).trainable)
        inflate::add_transform_gradient_shared(g_w, w2d, s.in_ch, s.K, params.grad(s.tname));
      if (params.at(s.wname).trainable)
        params.grad(s.wname) += inflate::weight2d_gradient(g_w, s.in_ch, s.K,
                                                           params.at(s.tname).value);
    }
  }
};

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace detail {

inline int scaled(int width, double mult) {
  return std::max(1, static_cast<int>(std::llround(width * mult)));
}

template <typename Scalar>
class Builder {
 public:
  Builder(NetworkGraph<Scalar>& g, const BuildOptions& opt) : g_(g), opt_(opt), rng_(opt.seed) {}

  int input() {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Input;
    s.part = Part::Input;
    return push(s);
  }

  int conv(const std::string& base, int in_node, int in_ch, int out_ch, int K, int stride,
           Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Conv;
    s.in = {in_node};
    s.part = part;
    s.wname = base + ".weight";
    s.K = K;
    s.stride = stride;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.planar = opt_.dim == 2;
    s.factored = opt_.factored && part == Part::Backbone && !s.planar;
    const bool stored_2d = s.planar || s.factored;
    std::vector<std::int64_t> dims = stored_2d
                                         ? std::vector<std::int64_t>{out_ch, in_ch, K, K}
                                         : std::vector<std::int64_t>{out_ch, in_ch, K, K, K};
    nn::Param<Scalar>& w = g_.params.add(s.wname, dims);
    init_fan(w.value, double(in_ch) * std::pow(K, stored_2d ? 2 : 3),
             double(out_ch) * std::pow(K, stored_2d ? 2 : 3));
    g_.param_part.emplace(s.wname, part);
    if (s.factored && K > 1) {
      if (opt_.sharing == inflate::Sharing::Shared) {
        s.tname = "t.shared";
        ensure_shared_t(K);
      } else {
        s.per_filter_t = true;
        make_per_filter_t(s, K);
      }
    }
    return push(s);
  }

  int deconv(const std::string& base, int in_node, int target_node, int in_ch, int out_ch) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Deconv;
    s.in = {in_node};
    s.part = Part::Output;
    s.wname = base + ".weight";
    s.K = 2;
    s.stride = 2;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.deconv_target = target_node;
    nn::Param<Scalar>& w = g_.params.add(s.wname, {out_ch, in_ch, 2, 2, 2});
    init_fan(w.value, double(in_ch) * 8, double(out_ch) * 8);
    g_.param_part.emplace(s.wname, Part::Output);
    return push(s);
  }

  int bn(const std::string& base, int in_node, int ch, Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::BN;
    s.in = {in_node};
    s.part = part;
    s.bn_base = base + ".bn";
    auto& gamma = g_.params.add(s.bn_base + ".gamma", {ch});
    gamma.value.setOnes();
    g_.params.add(s.bn_base + ".beta", {ch});
    g_.params.add(s.bn_base + ".mean", {ch}, false);
    auto& var = g_.params.add(s.bn_base + ".var", {ch}, false);
    var.value.setOnes();
    for (const char* t : {".gamma", ".beta", ".mean", ".var"})
      g_.param_part.emplace(s.bn_base + t, part);
    return push(s);
  }

  int relu(int in_node, Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::ReLU;
    s.in = {in_node};
    s.part = part;
    return push(s);
  }

  int linear(const std::string& base, int in_node, int in_ch, int out_ch, bool with_bias,
             Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Linear;
    s.in = {in_node};
    s.part = part;
    s.wname = base + ".weight";
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    nn::Param<Scalar>& w = g_.params.add(s.wname, {out_ch, in_ch});
    init_fan(w.value, in_ch, out_ch);
    g_.param_part.emplace(s.wname, part);
    if (with_bias) {
      s.bias = base + ".bias";
      g_.params.add(s.bias, {out_ch});
      g_.param_part.emplace(s.bias, part);
    }
    return push(s);
  }

  int pool(int in_node, Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Pool;
    s.in = {in_node};
    s.part = part;
    return push(s);
  }

  int add_nodes(int a, int b, Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Add;
    s.in = {a, b};
    s.part = part;
    return push(s);
  }

  int concat_nodes(int a, int b, Part part) {
    LayerSpec s;
    s.kind = LayerSpec::Kind::Concat;
    s.in = {a, b};
    s.part = part;
    return push(s);
  }

  /// conv -> bn -> relu
  int cbr(const std::string& base, int in_node, int in_ch, int out_ch, int K, int stride,
          Part part) {
    int n = conv(base, in_node, in_ch, out_ch, K, stride, part);
    n = bn(base, n, out_ch, part);
    return relu(n, part);
  }

  /// Standard two-conv residual block with an optional 1x1 strided shortcut.
  int basic_block(const std::string& prefix, int in_node, int in_ch, int out_ch, int stride,
                  Part part) {
    int n = cbr(prefix + ".conv1", in_node, in_ch, out_ch, 3, stride, part);
    n = conv(prefix + ".conv2", n, out_ch, out_ch, 3, 1, part);
    n = bn(prefix + ".conv2", n, out_ch, part);
    int shortcut = in_node;
    if (stride != 1 || in_ch != out_ch) {
      shortcut = conv(prefix + ".downsample", in_node, in_ch, out_ch, 1, stride, part);
      shortcut = bn(prefix + ".downsample", shortcut, out_ch, part);
    }
    return relu(add_nodes(n, shortcut, part), part);
  }

  /// 1x1 -> 3x3 -> 1x1 bottleneck with expansion 4.
  int bottleneck_block(const std::string& prefix, int in_node, int in_ch, int width, int stride,
                       Part part) {
    const int out_ch = width * 4;
    int n = cbr(prefix + ".conv1", in_node, in_ch, width, 1, 1, part);
    n = cbr(prefix + ".conv2", n, width, width, 3, stride, part);
    n = conv(prefix + ".conv3", n, width, out_ch, 1, 1, part);
    n = bn(prefix + ".conv3", n, out_ch, part);
    int shortcut = in_node;
    if (stride != 1 || in_ch != out_ch) {
      shortcut = conv(prefix + ".downsample", in_node, in_ch, out_ch, 1, stride, part);
      shortcut = bn(prefix + ".downsample", shortcut, out_ch, part);
    }
    return relu(add_nodes(n, shortcut, part), part);
  }

  Rng& rng() { return rng_; }

 private:
  int push(LayerSpec s) {
    g_.layers.push_back(std::move(s));
    return static_cast<int>(g_.layers.size()) - 1;
  }

  void init_fan(RowMatrix<Scalar>& w, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    rng_.fill_uniform(w, -a, a);
  }

  void ensure_shared_t(int K) {
    if (g_.params.has("t.shared")) return;
    nn::Param<Scalar>& t = g_.params.add("t.shared", {Eigen::Index(K) * K, Eigen::Index(K) * K * K});
    t.value = init_t_matrix(K);
    g_.param_part.emplace("t.shared", Part::Backbone);
  }

  void make_per_filter_t(const LayerSpec& s, int K) {
    std::string base = s.wname;
    base.resize(base.size() - std::string(".weight").size());
    for (int m = 0; m < s.out_ch; ++m)
      for (int n = 0; n < s.in_ch; ++n) {
        const std::string name = "t." + base + "." + std::to_string(m) + "." + std::to_string(n);
        nn::Param<Scalar>& t =
            g_.params.add(name, {Eigen::Index(K) * K, Eigen::Index(K) * K * K});
        t.value = init_t_matrix(K);
        g_.param_part.emplace(name, Part::Backbone);
      }
  }

  RowMatrix<Scalar> init_t_matrix(int K) {
    if (opt_.t_init == inflate::TInit::FromDefault)
      return inflate::transform_matrix<Scalar>(inflate::TransformKind::Default, K);
    const double a = std::sqrt(6.0 / (double(K) * K + double(K) * K * K));
    RowMatrix<Scalar> t(Eigen::Index(K) * K, Eigen::Index(K) * K * K);
    rng_.fill_uniform(t, -a, a);
    return t;
  }

  NetworkGraph<Scalar>& g_;
  const BuildOptions& opt_;
  Rng rng_;
};

}  // namespace detail

/// Construct one of the supported architectures:
///   resnet18-cls / resnet50-cls   three-conv stem, four residual stages,
///                                 pool -> Linear -> BN -> ReLU -> Linear head
///   resnet18-seg / resnet50-seg   same encoder, four deconv+concat+res-block
///                                 decoder stages, per-voxel linear classifier
///   linear-io-cls / linear-io-seg single-conv stem and minimal heads/decoders
///   linear-baseline               conv+BN -> pool -> Linear -> BN, no backbone
template <typename Scalar>
NetworkGraph<Scalar> build_network(const BuildOptions& opt) {
  NetworkGraph<Scalar> g;
  g.arch = opt.arch;
  g.dim = opt.dim;
  g.classes = opt.classes;
  g.in_channels = opt.in_channels;
  g.width_mult = opt.width_mult;
  g.factored = opt.factored;
  g.sharing = opt.sharing;
  detail::Builder<Scalar> b(g, opt);

  const bool cls = opt.arch == "resnet18-cls" || opt.arch == "resnet50-cls";
  const bool seg_arch = opt.arch == "resnet18-seg" || opt.arch == "resnet50-seg";
  const bool lin_cls = opt.arch == "linear-io-cls";
  const bool lin_seg = opt.arch == "linear-io-seg";
  const bool baseline = opt.arch == "linear-baseline";
  if (!cls && !seg_arch && !lin_cls && !lin_seg && !baseline)
    throw Unsupported("unknown architecture '" + opt.arch + "'");
  if (opt.factored && baseline)
    throw Unsupported("linear-baseline has no backbone to attach transforms to");
  g.seg = seg_arch || lin_seg;

  const bool deep = opt.arch.rfind("resnet50", 0) == 0;
  const int expansion = deep ? 4 : 1;
  const std::vector<int> stage_blocks = deep ? std::vector<int>{3, 4, 6, 3}
                                             : std::vector<int>{2, 2, 2, 2};
  const int stem_w = detail::scaled(64, opt.width_mult);
  const int widths[4] = {detail::scaled(64, opt.width_mult), detail::scaled(128, opt.width_mult),
                         detail::scaled(256, opt.width_mult), detail::scaled(512, opt.width_mult)};
  const int head_w = detail::scaled(1024, opt.width_mult);

  const int in_node = b.input();

  if (baseline) {
    const int out_w = widths[3] * expansion;
    int n = b.conv("input.conv1", in_node, opt.in_channels, out_w, 3, 1, Part::Input);
    n = b.bn("input.conv1", n, out_w, Part::Input);
    n = b.pool(n, Part::Output);
    n = b.linear("output.linear1", n, out_w, opt.classes, false, Part::Output);
    b.bn("output.linear1", n, opt.classes, Part::Output);
    return g;
  }

  // stem
  int n;
  if (cls || seg_arch) {
    n = b.cbr("input.conv1", in_node, opt.in_channels, stem_w, 3, 1, Part::Input);
    n = b.cbr("input.conv2", n, stem_w, stem_w, 3, 1, Part::Input);
    n = b.cbr("input.conv3", n, stem_w, stem_w, 3, 2, Part::Input);
  } else {
    n = b.conv("input.conv1", in_node, opt.in_channels, stem_w, 3, 1, Part::Input);
    n = b.bn("input.conv1", n, stem_w, Part::Input);
  }
  const int stem_out = n;

  // residual stages; every stage downsamples in its first block so the four
  // decoder stages can walk back up to the stem's resolution
  int ch = stem_w;
  std::vector<int> stage_out(4);
  for (int st = 0; st < 4; ++st) {
    for (int blk = 0; blk < stage_blocks[static_cast<std::size_t>(st)]; ++blk) {
      const std::string prefix =
          "layer" + std::to_string(st + 1) + ".block" + std::to_string(blk);
      const int stride = blk == 0 ? 2 : 1;
      if (deep) {
        n = b.bottleneck_block(prefix, n, ch, widths[st], stride, Part::Backbone);
        ch = widths[st] * 4;
      } else {
        n = b.basic_block(prefix, n, ch, widths[st], stride, Part::Backbone);
        ch = widths[st];
      }
    }
    stage_out[static_cast<std::size_t>(st)] = n;
  }
  const int backbone_out_w = widths[3] * expansion;

  if (cls || lin_cls) {
    n = b.pool(n, Part::Output);
    if (cls) {
      n = b.linear("output.linear1", n, backbone_out_w, head_w, false, Part::Output);
      n = b.bn("output.linear1", n, head_w, Part::Output);
      n = b.relu(n, Part::Output);
      b.linear("output.linear2", n, head_w, opt.classes, true, Part::Output);
    } else {
      n = b.linear("output.linear1", n, backbone_out_w, opt.classes, false, Part::Output);
      b.bn("output.linear1", n, opt.classes, Part::Output);
    }
    return g;
  }

  // segmentation decoder
  const int enc_w[4] = {stem_w, widths[0] * expansion, widths[1] * expansion,
                        widths[2] * expansion};
  const int enc_node[4] = {stem_out, stage_out[0], stage_out[1], stage_out[2]};
  int cur_w = backbone_out_w;
  for (int d = 0; d < 4; ++d) {
    const std::string up = "up" + std::to_string(d + 1);
    const std::string dec = "decode" + std::to_string(d + 1);
    const int partner = enc_node[3 - d];
    const int partner_w = enc_w[3 - d];
    n = b.deconv(up, n, partner, cur_w, cur_w);
    n = b.concat_nodes(partner, n, Part::Output);
    const int target_w = partner_w;  // each stage settles at its encoder partner's width
    if (seg_arch) {
      n = b.basic_block(dec + ".block0", n, partner_w + cur_w, target_w, 1, Part::Output);
      n = b.basic_block(dec + ".block1", n, target_w, target_w, 1, Part::Output);
    } else {
      n = b.conv(dec + ".conv1", n, partner_w + cur_w, target_w, 3, 1, Part::Output);
      n = b.bn(dec + ".conv1", n, target_w, Part::Output);
    }
    cur_w = target_w;
  }
  b.linear("output.linear1", n, cur_w, opt.classes, true, Part::Output);
  return g;
}

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

/// Apply a finetune regime's trainability mask and BN policy.
template <typename Scalar>
void apply_regime(NetworkGraph<Scalar>& g, Regime r) {
  const bool learn_t = r == Regime::LearnT_Shared || r == Regime::LearnT_PerFilter;
  if (learn_t) {
    if (!g.factored)
      throw StateError("learnable-transform regime requires a network carrying 2D weights");
    if ((r == Regime::LearnT_Shared) != (g.sharing == inflate::Sharing::Shared))
      throw StateError("transform sharing mode does not match the network layout");
  }

  for (std::size_t i = 0; i < g.params.size(); ++i) {
    nn::Param<Scalar>& p = g.params[i];
    const bool is_buffer = p.name.size() > 5 && (p.name.rfind(".mean") == p.name.size() - 5 ||
                                                 p.name.rfind(".var") == p.name.size() - 4);
    if (is_buffer) {
      p.trainable = false;
      continue;
    }
    const bool is_t = p.name.rfind("t.", 0) == 0;
    const Part part = g.param_part.at(p.name);
    if (part != Part::Backbone) {
      p.trainable = true;
      continue;
    }
    const bool is_bn_affine = p.name.rfind(".bn.gamma") != std::string::npos ||
                              p.name.rfind(".bn.beta") != std::string::npos;
    switch (r) {
      case Regime::IO:
      case Regime::IO_Stats:
        p.trainable = false;
        break;
      case Regime::IO_BN:
        p.trainable = is_bn_affine;
        break;
      case Regime::Whole:
        p.trainable = true;
        break;
      case Regime::LearnT_Shared:
      case Regime::LearnT_PerFilter:
        p.trainable = is_t;
        break;
    }
  }

  for (LayerSpec& s : g.layers) {
    if (s.kind != LayerSpec::Kind::BN) continue;
    if (s.part != Part::Backbone) {
      s.bn_force_eval = false;
      s.bn_stats_update = true;
      continue;
    }
    s.bn_force_eval = r == Regime::IO;
    s.bn_stats_update = r != Regime::IO;
  }
  g.regime = r;
}

// ---------------------------------------------------------------------------
// Archive plumbing
// ---------------------------------------------------------------------------

template <typename Scalar>
std::vector<std::string> backbone_conv_names(const NetworkGraph<Scalar>& g) {
  std::vector<std::string> names;
  for (const LayerSpec& s : g.layers)
    if (s.kind == LayerSpec::Kind::Conv && s.part == Part::Backbone) names.push_back(s.wname);
  return names;
}

template <typename Scalar>
std::vector<std::string> backbone_bn_names(const NetworkGraph<Scalar>& g) {
  std::vector<std::string> names;
  for (const LayerSpec& s : g.layers)
    if (s.kind == LayerSpec::Kind::BN && s.part == Part::Backbone)
      for (const char* t : {".gamma", ".beta", ".mean", ".var"}) names.push_back(s.bn_base + t);
  return names;
}

}  // namespace i2p::models
