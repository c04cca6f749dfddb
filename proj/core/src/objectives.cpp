#include "vclab/objectives.hpp"

namespace vclab {

namespace {

std::string* find_entry(AxisDictionary& dict, const std::string& name) {
  for (AxisEntry& e : dict.entries) {
    if (e.name == name) return &e.description;
  }
  return nullptr;
}

}  // namespace

SwapPlan build_swap_plan(const std::vector<AxisDictionary>& dicts,
                         const SwapConfig& config, Rng& rng) {
  VCLAB_CHECK_ARG(dicts.size() >= 2, "swap planning needs at least two images");
  VCLAB_CHECK_ARG(config.min_swaps >= 1 &&
                      config.max_swaps >= config.min_swaps,
                  "swap bounds must satisfy 1 <= min_swaps <= max_swaps");
  int64_t n = int64_t(dicts.size());

  // Which images carry each axis, in index order with duplicates ignored.
  std::map<std::string, std::vector<int64_t>> carriers;
  for (int64_t i = 0; i < n; ++i) {
    for (const AxisEntry& e : dicts[size_t(i)].entries) {
      auto& v = carriers[e.name];
      if (v.empty() || v.back() != i) v.push_back(i);
    }
  }

  SwapPlan plan;
  plan.touched.assign(size_t(n), 0);
  plan.composed = dicts;
  std::set<std::pair<int64_t, std::string>> used;

  for (int64_t i = 0; i < n; ++i) {
    // Axes this image can still trade: someone else carries them and neither
    // side of the pair has been claimed by an earlier record.
    std::vector<std::string> open;
    for (const AxisEntry& e : dicts[size_t(i)].canonical().entries) {
      if (used.count({i, e.name})) continue;
      bool partnered = false;
      for (int64_t j : carriers[e.name]) {
        if (j != i && !used.count({j, e.name})) {
          partnered = true;
          break;
        }
      }
      if (partnered) open.push_back(e.name);
    }
    if (open.empty()) continue;

    int64_t hi = std::min<int64_t>(config.max_swaps, int64_t(open.size()));
    int64_t lo = std::min<int64_t>(config.min_swaps, hi);
    int64_t m = lo + int64_t(rng.randint(uint64_t(hi - lo + 1)));

    // Uniform m-subset by partial Fisher-Yates, processed in name order.
    for (int64_t t = 0; t < m; ++t) {
      int64_t j = t + int64_t(rng.randint(uint64_t(open.size()) - uint64_t(t)));
      std::swap(open[size_t(t)], open[size_t(j)]);
    }
    std::vector<std::string> chosen(open.begin(), open.begin() + m);
    std::sort(chosen.begin(), chosen.end());

    for (const std::string& axis : chosen) {
      std::vector<int64_t> partners;
      for (int64_t j : carriers[axis]) {
        if (j != i && !used.count({j, axis})) partners.push_back(j);
      }
      if (partners.empty()) continue;
      int64_t b = partners[rng.randint(partners.size())];

      plan.records.push_back({axis, i, b});
      used.insert({i, axis});
      used.insert({b, axis});
      plan.touched[size_t(i)] = 1;
      plan.touched[size_t(b)] = 1;

      std::string* da = find_entry(plan.composed[size_t(i)], axis);
      std::string* db = find_entry(plan.composed[size_t(b)], axis);
      VCLAB_CHECK(da && db, ErrorCode::kInvalidState,
                  "axis " << axis << " vanished while composing");
      std::swap(*da, *db);
    }
  }
  return plan;
}

template class RegressionHead<float>;
template class RegressionHead<double>;

template std::vector<ConceptSet<float>> apply_swap<float>(
    const std::vector<ConceptSet<float>>&, const SwapPlan&);
template std::vector<ConceptSet<double>> apply_swap<double>(
    const std::vector<ConceptSet<double>>&, const SwapPlan&);

template LossResult<float> diffusion_loss<float>(
    Denoiser<float>&, const NoiseSchedule&, const Tensor<float>&,
    const std::vector<ConceptSet<float>>&, Rng&);
template LossResult<double> diffusion_loss<double>(
    Denoiser<double>&, const NoiseSchedule&, const Tensor<double>&,
    const std::vector<ConceptSet<double>>&, Rng&);

template LossResult<float> anchoring_loss<float>(
    Denoiser<float>&, const NoiseSchedule&, Encoder<float>&,
    RegressionHead<float>&, const std::vector<ConceptSet<float>>&,
    const std::vector<AnchorRequest<float>>&, const AnchorConfig&, Rng&);
template LossResult<double> anchoring_loss<double>(
    Denoiser<double>&, const NoiseSchedule&, Encoder<double>&,
    RegressionHead<double>&, const std::vector<ConceptSet<double>>&,
    const std::vector<AnchorRequest<double>>&, const AnchorConfig&, Rng&);

template LossResult<float> regression_loss<float>(
    const std::vector<ConceptSet<float>>&, const std::vector<Tensor<float>>&,
    RegressionHead<float>&, bool, double);
template LossResult<double> regression_loss<double>(
    const std::vector<ConceptSet<double>>&, const std::vector<Tensor<double>>&,
    RegressionHead<double>&, bool, double);

}  // namespace vclab
