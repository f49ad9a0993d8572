#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ris/param.hpp"

namespace ris {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool aborted = false;  // non-finite loss seen while probing this parameter
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool any_aborted = false;

  bool ok(double threshold) const {
    return !any_aborted && worst < threshold;
  }
};

// Central finite differences against the tape gradients, using the
// five-point stencil (-f(+2e) + 8f(+e) - 8f(-e) + f(-2e)) / 12e so the
// truncation term is O(e^4) and a step large enough to beat cancellation
// noise stays accurate. `forward` must rebuild the computation from the
// current parameter values and return the loss; when `with_grad` is set it
// must also run backward so the analytic gradients land in the store. Use a
// 64-bit store: the probe step is below float precision.
template <typename T, typename F>
GradCheckReport check_gradients(F&& forward, ParamStore<T>& ps,
                                T eps = T(1e-5)) {
  GradCheckReport report;
  ps.zero_grads();
  forward(true);
  std::vector<Array<T>> analytic;
  analytic.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) analytic.push_back(ps.at(i).grad);

  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter<T>& p = ps.at(i);
    GradCheckEntry entry;
    entry.name = p.name;
    for (std::size_t k = 0; k < p.value.v.size(); ++k) {
      const T saved = p.value.v[k];
      auto probe = [&](double offset) {
        p.value.v[k] = saved + static_cast<T>(offset);
        return static_cast<double>(forward(false));
      };
      const double e = static_cast<double>(eps);
      const double fp1 = probe(e);
      const double fm1 = probe(-e);
      const double fp2 = probe(2.0 * e);
      const double fm2 = probe(-2.0 * e);
      p.value.v[k] = saved;
      if (!std::isfinite(fp1) || !std::isfinite(fm1) || !std::isfinite(fp2) ||
          !std::isfinite(fm2)) {
        entry.aborted = true;
        break;
      }
      const double numeric = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * e);
      const double a = static_cast<double>(analytic[i].v[k]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(a - numeric) / denom);
    }
    report.any_aborted = report.any_aborted || entry.aborted;
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace ris
