#include "hop/bc.hpp"

namespace hop {

PretrainResult bc_finetune(
    std::optional<PolicyNet<float>> init,
    const std::vector<SensorimotorTrajectory>& demos, const TransformerConfig& cfg,
    const BcConfig& bcfg,
    const std::function<void(int64_t, const PolicyNet<float>&)>& on_checkpoint) {
  if (demos.empty()) throw std::invalid_argument("bc_finetune: no demonstrations");

  // Deterministic demo split; small corpora keep at least one of each.
  std::vector<size_t> order(demos.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix64(bcfg.base.seed ^ 0x62637370ull));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  size_t n_val = size_t(std::round(bcfg.val_fraction * double(demos.size())));
  if (demos.size() > 1 && n_val == 0) n_val = 1;
  if (n_val >= demos.size()) n_val = demos.size() - 1;

  std::vector<SensorimotorTrajectory> train, val;
  for (size_t i = 0; i < order.size(); ++i)
    (i < demos.size() - n_val ? train : val).push_back(demos[order[i]]);
  if (val.empty()) val = train;

  return pretrain(train, val, cfg, bcfg.base, std::move(init), on_checkpoint);
}

}  // namespace hop
