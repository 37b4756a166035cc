#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "spacebond/evaluation.hpp"

namespace spacebond {

enum class SweepAxes { sigma, lambda };

struct SweepRow {
  double x = 0.0;  // sigma_a or lambda_v
  double y = 0.0;  // sigma_t or lambda_t
  double delta_at = 0.0;
  double delta_av = 0.0;
  double delta_tv = 0.0;
};

/// Δ values are differences in R@1 points (×100) of the bidirectional mean,
/// relative to the grid's zero point (σ = 0, or λ = 0).
struct DeltaGrid {
  SweepAxes axes = SweepAxes::sigma;
  std::vector<SweepRow> rows;

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << (axes == SweepAxes::sigma ? "sigma_a,sigma_t" : "lambda_v,lambda_t") << ",delta_at,delta_av,delta_tv\n";
    for (const auto& r : rows) {
      os << r.x << ',' << r.y << ',' << r.delta_at << ',' << r.delta_av << ',' << r.delta_tv << '\n';
    }
    return os.str();
  }

  /// Blank-line separated blocks, one per x value, for surface plots.
  std::string gnuplot_data() const {
    std::ostringstream os;
    os.precision(10);
    os << "# x y delta_at delta_av delta_tv\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].x != rows[i - 1].x) os << '\n';
      const auto& r = rows[i];
      os << r.x << ' ' << r.y << ' ' << r.delta_at << ' ' << r.delta_av << ' ' << r.delta_tv << '\n';
    }
    return os.str();
  }
};

inline DeltaGrid factor_sweep(const CompositeSpace& space, const CombiningFactors& base, SweepAxes axes,
                              const std::vector<double>& xs, const std::vector<double>& ys,
                              const eval::EvalInputs& inputs, EncodeOptions opts = {}) {
  if (xs.empty() || ys.empty()) throw SpaceBondError("factor_sweep: empty grid");
  for (const auto* axis : {&xs, &ys}) {
    for (double v : *axis) {
      if (!(v >= 0.0 && v <= 1.0)) throw SpaceBondError("factor_sweep: grid values must lie in [0, 1]");
    }
  }
  auto at = [&](double x, double y) {
    CombiningFactors f = base;
    if (axes == SweepAxes::sigma) {
      f.sigma_a = x;
      f.sigma_t = y;
    } else {
      f.lambda_v = x;
      f.lambda_t = y;
    }
    return f;
  };
  auto pair_r1 = [](const eval::MetricReport& r, Modality a, Modality b) {
    return r.at("retrieval/" + eval::pair_name(a, b), "R@1");
  };
  const auto baseline = eval::evaluate_composite(space, at(0.0, 0.0), inputs, opts);
  DeltaGrid grid{axes, {}};
  for (double x : xs) {
    for (double y : ys) {
      const auto r = (x == 0.0 && y == 0.0) ? baseline : eval::evaluate_composite(space, at(x, y), inputs, opts);
      SweepRow row{x, y};
      row.delta_at = 100.0 * (pair_r1(r, Modality::audio, Modality::text) - pair_r1(baseline, Modality::audio, Modality::text));
      row.delta_av = 100.0 * (pair_r1(r, Modality::audio, Modality::image) - pair_r1(baseline, Modality::audio, Modality::image));
      row.delta_tv = 100.0 * (pair_r1(r, Modality::image, Modality::text) - pair_r1(baseline, Modality::image, Modality::text));
      grid.rows.push_back(row);
    }
  }
  return grid;
}

}  // namespace spacebond
