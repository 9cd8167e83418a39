#include "i2p/metrics.hpp"

#include <cstdio>

namespace i2p::metrics {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_text(const MetricReport& r) {
  std::ostringstream out;
  out << "seed " << r.seed << "\n";
  out << "regime " << (r.regime.empty() ? "-" : r.regime) << "\n";
  out << "epochs " << r.loss_curve.size() << "\n";
  out << "top1 " << fmt(r.top1) << "\n";
  if (r.is_seg) {
    out << "miou " << fmt(r.miou) << "\n";
    for (std::size_t k = 0; k < r.per_class_iou.size(); ++k) {
      out << "iou." << k << " ";
      if (r.per_class_iou[k])
        out << fmt(*r.per_class_iou[k]);
      else
        out << "undefined";
      out << "\n";
    }
  }
  // wall time is reported on stdout, not here: artifacts must be bitwise
  // reproducible under identical configuration
  if (!r.loss_curve.empty()) out << "final_loss " << fmt(r.loss_curve.back()) << "\n";
  return out.str();
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "epoch,train_loss," << (r.is_seg ? "val_miou" : "val_top1") << "\n";
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
    out << (e + 1) << "," << fmt(r.loss_curve[e]) << ",";
    if (e < r.metric_curve.size()) out << fmt(r.metric_curve[e]);
    out << "\n";
  }
  return out.str();
}

}  // namespace i2p::metrics
