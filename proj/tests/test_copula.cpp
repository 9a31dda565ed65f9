#include <doctest.h>

#include <cmath>
#include <vector>

#include "percdf/model.hpp"
#include "test_support.hpp"

using namespace percdf;
using percdf_test::force_uniform_copula;
using percdf_test::tiny_config;

TEST_CASE("uniform logits give uniform bin masses and zero log density") {
  const int R = 50;
  std::vector<double> logits(static_cast<std::size_t>(R), 0.7);
  const BinDistribution d = bin_distribution_from_logits(logits);
  double sum = 0.0;
  for (double m : d.masses) {
    CHECK(m == doctest::Approx(1.0 / R).epsilon(1e-13));
    sum += m;
  }
  CHECK(std::fabs(sum - 1.0) < 1e-12);
  CHECK(d.log_density(0.137, R) == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<BinDistribution> factors(5, d);
  const std::vector<double> u = {0.1, 0.33, 0.5, 0.77, 0.99};
  CHECK(copula_log_density(u, factors, R) == doctest::Approx(0.0).epsilon(1e-11));
}

TEST_CASE("bin masses sum to one for random logits") {
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(61000 + static_cast<std::uint64_t>(trial));
    std::vector<double> logits(static_cast<std::size_t>(50));
    for (double& l : logits) l = rng.uniform(-8.0, 8.0);
    const BinDistribution d = bin_distribution_from_logits(logits);
    double sum = 0.0;
    for (double m : d.masses) {
      CHECK(m >= 0.0);
      sum += m;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("single factor density equals resolution times its bin mass") {
  Rng rng(62);
  std::vector<double> logits(static_cast<std::size_t>(10));
  for (double& l : logits) l = rng.uniform(-2.0, 2.0);
  const BinDistribution d = bin_distribution_from_logits(logits);
  const double u = 0.42;  // bin 4
  CHECK(copula_log_density({u}, {d}, 10) ==
        doctest::Approx(std::log(10.0 * d.masses[4])).epsilon(1e-13));
}

TEST_CASE("u outside the open interval is rejected") {
  const BinDistribution d = bin_distribution_from_logits(std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(copula_log_density({0.0}, {d}, 4), DomainError);
  CHECK_THROWS_AS(copula_log_density({1.0}, {d}, 4), DomainError);
}

TEST_CASE("log_bin_mass matches a direct softmax computation") {
  Rng rng(63);
  ParamStore store;
  Workspace ws(&store);
  std::vector<double> logits(static_cast<std::size_t>(12));
  for (double& l : logits) l = rng.uniform(-5.0, 5.0);
  Tensor lt = ws.constant({1, 12}, logits);
  const BinDistribution d = bin_distribution_from_logits(logits);
  for (int b = 0; b < 12; ++b) {
    CHECK(log_bin_mass(lt, b).item() ==
          doctest::Approx(std::log(d.masses[static_cast<std::size_t>(b)])).epsilon(1e-12));
  }
}

TEST_CASE("empty window yields a distribution that ignores other points") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 1, 11);
  Workspace ws(&model.params());
  Tensor target = ws.constant({1, cfg.embed.token_dim},
                              std::vector<double>(static_cast<std::size_t>(cfg.embed.token_dim), 0.4));
  Tensor l1 = copula_factor_logits(ws, cfg.copula, target, nullptr, nullptr);
  Tensor l2 = copula_factor_logits(ws, cfg.copula, target, nullptr, nullptr);
  CHECK(l1.shape() == Shape{1, cfg.copula.resolution});
  for (std::int64_t i = 0; i < l1.numel(); ++i) CHECK(l1.at(i) == l2.at(i));
}

TEST_CASE("window content changes the factor distribution") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 1, 12);
  Workspace ws(&model.params());
  const int D = cfg.embed.token_dim;
  Tensor target = ws.constant({1, D}, std::vector<double>(static_cast<std::size_t>(D), 0.4));
  Tensor wz = ws.constant({2, D}, std::vector<double>(static_cast<std::size_t>(2 * D), -0.3));
  Tensor wu1 = ws.constant({2, 1}, {0.2, 0.8});
  Tensor wu2 = ws.constant({2, 1}, {0.9, 0.1});
  Tensor l1 = copula_factor_logits(ws, cfg.copula, target, &wz, &wu1);
  Tensor l2 = copula_factor_logits(ws, cfg.copula, target, &wz, &wu2);
  double diff = 0.0;
  for (std::int64_t i = 0; i < l1.numel(); ++i) diff += std::fabs(l1.at(i) - l2.at(i));
  CHECK(diff > 0.0);
}

namespace {

SeriesFrame two_missing_frame(std::uint64_t seed) {
  SeriesFrame base = random_walk(1, 4, seed, 0.0);
  WindowTask w;
  w.history = 2;
  w.horizon = 2;
  return make_forecast_task(base, w);
}

}  // namespace

TEST_CASE("d=2 resolution=4 copula normalizes over all bin pairs") {
  ModelConfig cfg = tiny_config(4);
  Forecaster model(cfg, 1, 21);
  SeriesFrame task = two_missing_frame(5);
  PermutationPlan plan = model.plan_for(task, 3);

  EncodeSnapshot snap = model.encode_snapshot(task);
  FactorEvaluator factor(&model.params(), cfg.copula, snap);

  const int first = plan.order[static_cast<std::size_t>(plan.n_observed)];
  const int second = plan.order[static_cast<std::size_t>(plan.n_observed) + 1];
  std::vector<double> u_real = snap.u_observed;

  const BinDistribution d1 = factor(first, plan.windows.at(first), u_real);
  const int R = 4;
  const int quad = 64;
  double total_mass = 0.0;
  for (int b1 = 0; b1 < R; ++b1) {
    for (int q = 0; q < quad; ++q) {
      const double u1 = cfg.copula.clamp_u((b1 + (q + 0.5) / quad) / R);
      u_real[static_cast<std::size_t>(first)] = u1;
      std::vector<int> w2 = plan.windows.at(second);
      const BinDistribution d2 = factor(second, w2, u_real);
      for (int b2 = 0; b2 < R; ++b2) {
        // Joint cell probability: mass1 * (1/quad of bin b1) * mass2.
        total_mass += d1.masses[static_cast<std::size_t>(b1)] / quad *
                      d2.masses[static_cast<std::size_t>(b2)];
      }
    }
  }
  CHECK(std::fabs(total_mass - 1.0) < 1e-9);
}

TEST_CASE("joint nll decomposes into copula and marginal terms") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 2, 31);
  SeriesFrame base = random_walk(2, 8, 9, 0.0);
  WindowTask w;
  w.history = 5;
  w.horizon = 3;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 17);

  Workspace ws(&model.params());
  NllParts parts = model.joint_nll(ws, task, plan);
  const double joint = parts.copula_term.item() + parts.marginal_term.item();
  // The loss node is literally scale(add(copula, marginal), -1/n).
  CHECK(parts.loss.item() == joint * (-1.0 / parts.n_points));
  CHECK(std::isfinite(joint));
}

TEST_CASE("independence copula reduces the nll to the marginal term") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 1, 41);
  force_uniform_copula(model.params());
  SeriesFrame base = random_walk(1, 10, 13, 0.0);
  WindowTask w;
  w.history = 6;
  w.horizon = 4;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 19);

  Workspace ws(&model.params());
  NllParts parts = model.joint_nll(ws, task, plan);
  CHECK(parts.copula_term.item() == doctest::Approx(0.0).epsilon(1e-11));

  // Oracle: direct double-path evaluation of the marginal log densities.
  EncodeSnapshot snap = model.encode_snapshot(task);
  double marginal = 0.0;
  for (int id : task.missing_ids()) {
    marginal += marginal_log_pdf(snap.flow[static_cast<std::size_t>(id)], task.standardized(id));
  }
  CHECK(parts.marginal_term.item() == doctest::Approx(marginal).epsilon(1e-10));
  CHECK(parts.loss.item() ==
        doctest::Approx(-marginal / task.missing_ids().size()).epsilon(1e-10));
}

TEST_CASE("nll loss is finite at random initialization on a random-walk task") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 3, 51);
  SeriesFrame base = random_walk(3, 16, 23, 0.0);
  WindowTask w;
  w.history = 10;
  w.horizon = 6;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 29);
  Workspace ws(&model.params());
  NllParts parts = model.joint_nll(ws, task, plan);
  CHECK(std::isfinite(parts.loss.item()));
  CHECK(parts.loss.item() > -50.0);
  CHECK(parts.loss.item() < 50.0);
}

TEST_CASE("sampling is reproducible for a fixed seed") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 2, 61);
  SeriesFrame base = random_walk(2, 10, 33, 0.0);
  WindowTask w;
  w.history = 6;
  w.horizon = 4;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 37);

  const ForecastSamples a = model.sample_missing(task, plan, 3, 777);
  const ForecastSamples b = model.sample_missing(task, plan, 3, 777);
  REQUIRE(a.draws.size() == b.draws.size());
  for (std::size_t d = 0; d < a.draws.size(); ++d) {
    for (std::size_t i = 0; i < a.draws[d].size(); ++i) {
      CHECK(a.draws[d][i] == b.draws[d][i]);
    }
  }
  const ForecastSamples c = model.sample_missing(task, plan, 3, 778);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.draws[0].size(); ++i) {
    any_diff = any_diff || a.draws[0][i] != c.draws[0][i];
  }
  CHECK(any_diff);
}

TEST_CASE("one-hot bin masses confine draws to the bin preimage") {
  const int R = 4;
  BinDistribution d;
  d.masses.assign(static_cast<std::size_t>(R), 0.0);
  d.masses[2] = 1.0;  // bin [0.5, 0.75)
  const FlowParams flow = make_flow_params(1, 1, {0.0, 0.0, 0.0});  // sigmoid
  const double lo = marginal_inverse_cdf(flow, 0.5);
  const double hi = marginal_inverse_cdf(flow, 0.75);
  Rng rng(71);
  for (int i = 0; i < 500; ++i) {
    const double u = sample_u(d, R, rng);
    CHECK(u >= 0.5);
    CHECK(u < 0.75);
    const double x = marginal_inverse_cdf(flow, u);
    CHECK(x >= lo);
    CHECK(x <= hi);
  }
}

TEST_CASE("u draws under uniform logits pass a KS test against U(0,1)") {
  const int R = 50;
  const BinDistribution d = bin_distribution_from_logits(std::vector<double>(R, 0.0));
  CopulaConfig cc;
  cc.resolution = R;
  Rng rng(81);
  const int n = 10000;
  std::vector<double> us(static_cast<std::size_t>(n));
  for (double& u : us) u = cc.clamp_u(sample_u(d, R, rng));
  std::sort(us.begin(), us.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double emp_hi = static_cast<double>(i + 1) / n;
    const double emp_lo = static_cast<double>(i) / n;
    ks = std::max(ks, std::fabs(emp_hi - us[static_cast<std::size_t>(i)]));
    ks = std::max(ks, std::fabs(us[static_cast<std::size_t>(i)] - emp_lo));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("sampling matches the factorized density on a frozen tiny model") {
  // Two missing points, four bins: empirical bin-pair frequencies against the
  // quadrature-integrated model probabilities.
  ModelConfig cfg = tiny_config(4);
  Forecaster model(cfg, 1, 91);
  SeriesFrame task = two_missing_frame(15);
  PermutationPlan plan = model.plan_for(task, 7);
  EncodeSnapshot snap = model.encode_snapshot(task);
  FactorEvaluator factor(&model.params(), cfg.copula, snap);

  const int first = plan.order[static_cast<std::size_t>(plan.n_observed)];
  const int second = plan.order[static_cast<std::size_t>(plan.n_observed) + 1];
  const int R = 4;

  // Model joint bin probabilities. The second factor depends on u1
  // continuously, so integrate over the within-bin distribution of u1
  // (uniform, then clamped).
  std::vector<double> u_real = snap.u_observed;
  const BinDistribution d1 = factor(first, plan.windows.at(first), u_real);
  std::vector<std::vector<double>> joint(static_cast<std::size_t>(R),
                                         std::vector<double>(static_cast<std::size_t>(R), 0.0));
  const int quad = 64;
  for (int b1 = 0; b1 < R; ++b1) {
    for (int q = 0; q < quad; ++q) {
      const double u1 = cfg.copula.clamp_u((b1 + (q + 0.5) / quad) / R);
      u_real[static_cast<std::size_t>(first)] = u1;
      const BinDistribution d2 = factor(second, plan.windows.at(second), u_real);
      for (int b2 = 0; b2 < R; ++b2) {
        joint[static_cast<std::size_t>(b1)][static_cast<std::size_t>(b2)] +=
            d1.masses[static_cast<std::size_t>(b1)] / quad * d2.masses[static_cast<std::size_t>(b2)];
      }
    }
  }

  const int n_draws = 30000;
  const ForecastSamples samples = model.sample_missing(task, plan, n_draws, 424242);
  const int col1 = static_cast<int>(std::find(samples.point_ids.begin(), samples.point_ids.end(),
                                              first) -
                                    samples.point_ids.begin());
  const int col2 = static_cast<int>(std::find(samples.point_ids.begin(), samples.point_ids.end(),
                                              second) -
                                    samples.point_ids.begin());
  std::vector<std::vector<double>> freq(static_cast<std::size_t>(R),
                                        std::vector<double>(static_cast<std::size_t>(R), 0.0));
  for (int dIdx = 0; dIdx < n_draws; ++dIdx) {
    auto bin_of = [&](int col, int id) {
      const double x = samples.draws[static_cast<std::size_t>(dIdx)][static_cast<std::size_t>(col)];
      const TimePoint& p = task.point(id);
      const double z = (x - task.stats(p.variable).mean) / task.stats(p.variable).stddev;
      const double u = marginal_cdf(snap.flow[static_cast<std::size_t>(id)], z);
      return cfg.copula.bin_of(u);
    };
    freq[static_cast<std::size_t>(bin_of(col1, first))]
        [static_cast<std::size_t>(bin_of(col2, second))] += 1.0 / n_draws;
  }
  double tv = 0.0;
  for (int b1 = 0; b1 < R; ++b1) {
    for (int b2 = 0; b2 < R; ++b2) {
      tv += 0.5 * std::fabs(joint[static_cast<std::size_t>(b1)][static_cast<std::size_t>(b2)] -
                            freq[static_cast<std::size_t>(b1)][static_cast<std::size_t>(b2)]);
    }
  }
  CHECK(tv < 0.02);
}

TEST_CASE("nll gradients flow into every module") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 2, 101);
  SeriesFrame base = random_walk(2, 8, 43, 0.0);
  WindowTask w;
  w.history = 5;
  w.horizon = 3;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 47);

  Workspace ws(&model.params(), /*with_grad=*/true);
  NllParts parts = model.joint_nll(ws, task, plan);
  backward(parts.loss);
  ws.harvest_grads();

  auto grad_norm = [&](const std::string& name) {
    double acc = 0.0;
    for (double g : model.params().at(name).grad) acc += g * g;
    return std::sqrt(acc);
  };
  CHECK(grad_norm("embed.lift.w") > 0.0);
  CHECK(grad_norm("enc.cross.wq") > 0.0);
  CHECK(grad_norm("cop.out.w") > 0.0);
  CHECK(grad_norm("marg.out.w") > 0.0);
}

TEST_CASE("nll gradient matches finite differences end to end") {
  ModelConfig cfg = tiny_config();
  Forecaster model(cfg, 1, 111);
  SeriesFrame base = random_walk(1, 8, 53, 0.0);
  WindowTask w;
  w.history = 5;
  w.horizon = 3;
  SeriesFrame task = make_forecast_task(base, w);
  PermutationPlan plan = model.plan_for(task, 59);

  auto loss_at = [&]() {
    Workspace ws(&model.params());
    return model.joint_nll(ws, task, plan).loss.item();
  };

  Workspace ws(&model.params(), /*with_grad=*/true);
  NllParts parts = model.joint_nll(ws, task, plan);
  backward(parts.loss);
  ws.harvest_grads();

  const double h = 1e-4;
  Rng pick(67);
  for (const std::string name : {"embed.lift.w", "marg.out.w", "cop.out.w", "enc.cross.wv"}) {
    auto& p = model.params().at(name);
    const std::size_t i = static_cast<std::size_t>(pick.below(p.value.size()));
    const double saved = p.value[i];
    p.value[i] = saved + h;
    const double up = loss_at();
    p.value[i] = saved - h;
    const double down = loss_at();
    p.value[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = p.grad[i];
    CHECK(std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-3}) < 1e-3);
  }
}
