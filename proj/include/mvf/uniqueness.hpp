#pragma once

#include "mvf/filter.hpp"
#include "mvf/mollifier.hpp"

#include <algorithm>
#include <vector>

namespace mvf {

struct UniquenessGap {
  std::vector<double> times;
  std::vector<double> gap;  // ||S_eps(mu^1_t - mu^2_t)||_H
};

/**
 * @brief Runs two filters on the same noise records and tracks their smoothed distance.
 *
 * Both runs use the innovation record `dVtilde` and the private noise streams
 * of `cfg.seed`, keyed by particle label; the two initial states must
 * therefore carry the same set of labels.
 */
inline UniquenessGap pathwise_uniqueness_gap(const CoefficientSet& c, const LawFlow& law,
                                             const std::vector<double>& dVtilde, const FilterState& init1,
                                             const FilterState& init2, const FilterConfig& cfg,
                                             const MollifierConfig& mcfg) {
  auto sorted = [](std::vector<std::uint64_t> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  if (init1.size() != init2.size() || sorted(init1.labels) != sorted(init2.labels))
    throw InvalidArgument("pathwise_uniqueness_gap: the two filters would not share their noise records");
  if (cfg.resampling != Resampling::none)
    throw InvalidArgument("pathwise_uniqueness_gap: resampling would decouple the noise records");
  std::vector<GridFunction> first;
  FilterConfig quiet = cfg;
  quiet.keep_states = false;
  quiet.record.clear();
  run_zakai(c, law, dVtilde, init1, quiet,
            [&](std::size_t, const FilterState& s) { first.push_back(smooth_measure(s.measure(), mcfg)); });
  UniquenessGap out;
  run_zakai(c, law, dVtilde, init2, quiet, [&](std::size_t k, const FilterState& s) {
    out.times.push_back(s.time);
    GridFunction diff = first[k] - smooth_measure(s.measure(), mcfg);
    out.gap.push_back(diff.norm());
    std::vector<double>().swap(first[k].values);
  });
  return out;
}

}  // namespace mvf
