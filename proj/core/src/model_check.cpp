#include "tqnet/model_check.hpp"

#include <random>
#include <vector>

#include "tqnet/ops.hpp"

namespace tqnet {

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.channels = 2;
  c.lookback = 8;
  c.horizon = 2;
  c.period = 4;
  c.d_model = 4;
  c.heads = 2;
  c.attn_dropout = 0.0;
  c.out_dropout = 0.0;
  return c;
}

GradientCheckReport model_gradient_check(const ModelConfig& config, const VariantSpec& variant,
                                         std::size_t batch, std::uint64_t seed, double eps,
                                         double tol) {
  TQNet<double> model(config, variant);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : model.parameters()) {
    for (double& v : p.tensor.values()) v = 0.5 * normal(rng);
  }

  const std::size_t rows = batch * config.channels;
  DiffTensor<double> x(rows, config.lookback);
  DiffTensor<double> y(rows, config.horizon);
  for (double& v : x.values()) v = normal(rng);
  for (double& v : y.values()) v = normal(rng);
  std::uniform_int_distribution<std::size_t> start_dist(0, 10 * config.period);
  std::vector<std::size_t> starts(batch);
  for (auto& s : starts) s = start_dist(rng);

  // Dropout rates may be non-zero in the config; a fresh generator per call
  // keeps every probe on the same mask.
  const LossClosure loss = [&](Tape<double>* tape) {
    Rng drop(seed + 1);
    const auto pred = model.forward(x, starts, Mode::kTrain, drop, tape);
    return mse_loss(pred, y, tape);
  };
  return gradient_check(loss, model.parameters(), eps, tol);
}

}  // namespace tqnet
