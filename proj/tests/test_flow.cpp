#include <doctest.h>

#include <cmath>
#include <vector>

#include "percdf/flow.hpp"

using namespace percdf;

namespace {

// Moderate random parameterizations: a in [e^-0.5, e^0.5], b in [-2, 2],
// logits in [-1.5, 1.5]. Keeps essentially all probability mass well inside
// [-30, 30] so the quadrature oracle below is meaningful.
FlowParams random_params(Rng& rng, int layers = 2, int dim = 4) {
  std::vector<double> raw(static_cast<std::size_t>(3 * layers * dim));
  for (int k = 0; k < layers; ++k) {
    for (int j = 0; j < dim; ++j) {
      raw[static_cast<std::size_t>(3 * k * dim + j)] = rng.uniform(-0.5, 0.5);
      raw[static_cast<std::size_t>(3 * k * dim + dim + j)] = rng.uniform(-2.0, 2.0);
      raw[static_cast<std::size_t>(3 * k * dim + 2 * dim + j)] = rng.uniform(-1.5, 1.5);
    }
  }
  return make_flow_params(layers, dim, std::move(raw));
}

// One mixture component, a = 1, b = 0, single (final) layer: F = sigmoid.
FlowParams trivial_sigmoid_flow() { return make_flow_params(1, 1, {0.0, 0.0, 0.0}); }

}  // namespace

TEST_CASE("trivial single-sigmoid flow") {
  const FlowParams p = trivial_sigmoid_flow();
  CHECK(marginal_cdf(p, 0.0) == 0.5);
  CHECK(marginal_pdf(p, 0.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(marginal_cdf(p, -50.0) < 1e-6);
  CHECK(marginal_cdf(p, 50.0) > 1.0 - 1e-6);
  CHECK(marginal_inverse_cdf(p, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flow CDF is strictly increasing for random parameters") {
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(51000 + static_cast<std::uint64_t>(trial));
    const FlowParams p = random_params(rng);
    double prev = marginal_cdf(p, -12.0);
    for (int i = 1; i <= 100; ++i) {
      const double x = -12.0 + 24.0 * i / 100.0;
      const double u = marginal_cdf(p, x);
      if (!(u > prev)) ++violations;
      prev = u;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("analytic pdf matches the finite-difference derivative of the cdf") {
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(52000 + static_cast<std::uint64_t>(trial));
    const FlowParams p = random_params(rng);
    const double x = rng.uniform(-6.0, 6.0);
    const double fd = (marginal_cdf(p, x + h) - marginal_cdf(p, x - h)) / (2.0 * h);
    const double an = marginal_pdf(p, x);
    worst = std::max(worst, std::fabs(an - fd) / std::max(std::fabs(fd), 1e-12));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("pdf integrates to one by trapezoid quadrature") {
  for (int trial = 0; trial < 25; ++trial) {
    Rng rng(53000 + static_cast<std::uint64_t>(trial));
    const FlowParams p = random_params(rng);
    const int n = 10000;
    const double lo = -30.0, hi = 30.0;
    double acc = 0.5 * (marginal_pdf(p, lo) + marginal_pdf(p, hi));
    for (int i = 1; i < n; ++i) acc += marginal_pdf(p, lo + (hi - lo) * i / n);
    acc *= (hi - lo) / n;
    CHECK(std::fabs(acc - 1.0) < 1e-4);
  }
}

TEST_CASE("inverse cdf round-trips to 1e-10") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(54000 + static_cast<std::uint64_t>(trial));
    const FlowParams p = random_params(rng);
    for (double u = 0.01; u < 0.995; u += 0.07) {
      const double x = marginal_inverse_cdf(p, u);
      CHECK(std::fabs(marginal_cdf(p, x) - u) < 1e-10);
    }
  }
}

TEST_CASE("inverse rejects u outside the open unit interval") {
  const FlowParams p = trivial_sigmoid_flow();
  CHECK_THROWS_AS(marginal_inverse_cdf(p, 0.0), DomainError);
  CHECK_THROWS_AS(marginal_inverse_cdf(p, 1.0), DomainError);
}

TEST_CASE("cdf rejects non-finite input") {
  const FlowParams p = trivial_sigmoid_flow();
  CHECK_THROWS_AS(marginal_cdf(p, std::numeric_limits<double>::infinity()), DomainError);
  CHECK_THROWS_AS(marginal_cdf(p, std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST_CASE("tape path agrees with the double path") {
  for (int trial = 0; trial < 40; ++trial) {
    Rng rng(55000 + static_cast<std::uint64_t>(trial));
    const int layers = 1 + static_cast<int>(rng.below(3));
    const int dim = 1 + static_cast<int>(rng.below(6));
    const FlowParams p = random_params(rng, layers, dim);
    const double x = rng.uniform(-5.0, 5.0);

    ParamStore store;
    Workspace ws(&store);
    Tensor row = ws.constant({1, 3 * layers * dim}, p.raw);
    const FlowEvalTape te = flow_cdf_logpdf_tape(ws, row, layers, dim, x);
    const FlowEval de = flow_cdf_logpdf(p, x);
    CHECK(te.u.item() == doctest::Approx(de.u).epsilon(1e-12));
    CHECK(te.log_pdf.item() == doctest::Approx(de.log_pdf).epsilon(1e-12));
  }
}

TEST_CASE("tape path gradient w.r.t. parameters matches finite differences") {
  Rng rng(56000);
  const int layers = 2, dim = 3;
  const FlowParams p = random_params(rng, layers, dim);
  const double x = 0.7;

  ParamStore store;
  Workspace ws(&store);
  Tape& tape = ws.tape();
  Tensor row = tape.leaf({1, 3 * layers * dim}, p.raw, true);
  const FlowEvalTape e = flow_cdf_logpdf_tape(ws, row, layers, dim, x);
  Tensor loss = add(e.u, e.log_pdf);
  backward(loss);

  const double h = 1e-6;
  for (std::size_t i = 0; i < p.raw.size(); ++i) {
    auto plus = p.raw, minus = p.raw;
    plus[i] += h;
    minus[i] -= h;
    const FlowEval ep = flow_cdf_logpdf(make_flow_params(layers, dim, plus), x);
    const FlowEval em = flow_cdf_logpdf(make_flow_params(layers, dim, minus), x);
    const double fd = ((ep.u + ep.log_pdf) - (em.u + em.log_pdf)) / (2.0 * h);
    CHECK(row.grad()[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("conditioner emits one parameter block per token") {
  FlowConfig cfg;
  cfg.flow_layers = 2;
  cfg.flow_dim = 8;
  cfg.ffn_layers = 2;
  cfg.ffn_dim = 8;
  ParamStore store;
  Rng rng(3);
  register_flow_conditioner_params(store, cfg, 16, rng);
  Workspace ws(&store);
  Tensor tokens = ws.constant({5, 16}, std::vector<double>(80, 0.3));
  Tensor out = flow_conditioner(ws, tokens, cfg);
  CHECK(out.shape() == Shape{5, cfg.params_per_point()});
  // Rows feed the double path directly.
  const FlowParams p =
      flow_params_from_row(cfg, out.values().subspan(0, static_cast<std::size_t>(cfg.params_per_point())));
  const double u = marginal_cdf(p, 0.0);
  CHECK(u > 0.0);
  CHECK(u < 1.0);
}
