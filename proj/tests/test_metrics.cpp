#include <doctest.h>

#include <cmath>
#include <vector>

#include "percdf/metrics.hpp"
#include "test_support.hpp"

using namespace percdf;
using percdf_test::tiny_config;

namespace {

// Hand-built samples table: one variable, points at steps 0..n-1.
ForecastSamples make_samples(const std::vector<std::vector<double>>& draws_per_point) {
  ForecastSamples s;
  const int n_points = static_cast<int>(draws_per_point.size());
  const int n_draws = static_cast<int>(draws_per_point[0].size());
  for (int i = 0; i < n_points; ++i) {
    s.point_ids.push_back(i);
    s.variables.push_back(0);
    s.steps.push_back(i);
  }
  s.draws.assign(static_cast<std::size_t>(n_draws), std::vector<double>(static_cast<std::size_t>(n_points)));
  for (int i = 0; i < n_points; ++i) {
    for (int d = 0; d < n_draws; ++d) {
      s.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] =
          draws_per_point[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
    }
  }
  return s;
}

SeriesFrame truth_frame(const std::vector<double>& values) {
  std::vector<TimePoint> pts;
  for (std::size_t t = 0; t < values.size(); ++t) {
    pts.push_back({values[t], 0, static_cast<int>(t), true});
  }
  return SeriesFrame(1, static_cast<int>(values.size()), std::move(pts));
}

}  // namespace

TEST_CASE("rmse_cm is zero on a perfect forecast") {
  const ForecastSamples s = make_samples({{1.0, 1.0}, {2.0, 2.0}});
  CHECK(rmse_cm(s, truth_frame({1.0, 2.0})) == 0.0);
}

TEST_CASE("rmse_cm of a constant unit bias is one") {
  const ForecastSamples s = make_samples({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
  CHECK(rmse_cm(s, truth_frame({0.0, 0.0, 0.0})) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rmse_cm with draw means one above and one below") {
  // Point means {1, -1} against truth 0: sqrt((1 + 1) / 2) = 1.
  const ForecastSamples s = make_samples({{0.5, 1.5}, {-0.5, -1.5}});
  CHECK(rmse_cm(s, truth_frame({0.0, 0.0})) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rmse_cm requires truth for every point") {
  const ForecastSamples s = make_samples({{1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}});
  CHECK_THROWS_WITH_AS(rmse_cm(s, truth_frame({1.0, 2.0})), doctest::Contains("no truth"),
                       DataError);
}

TEST_CASE("crps is zero for a point mass at the truth") {
  const ForecastSamples s = make_samples({{2.5, 2.5, 2.5}});
  CHECK(crps(s, truth_frame({2.5})) == 0.0);
}

TEST_CASE("crps two-draw hand example cancels exactly") {
  // Draws {0, 2}, y = 1: E|X-y| = 1, unbiased pair term = 1, CRPS = 0.
  const ForecastSamples s = make_samples({{0.0, 2.0}});
  CHECK(crps(s, truth_frame({1.0})) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("crps of gaussian draws against zero matches the closed form") {
  Rng rng(127);
  const int n = 10000;
  std::vector<double> draws(static_cast<std::size_t>(n));
  for (double& d : draws) d = rng.normal();
  const ForecastSamples s = make_samples({draws});
  // 2 phi(0) - 1/sqrt(pi), with phi the standard normal density.
  const double expected = 2.0 / std::sqrt(2.0 * kPi) - 1.0 / std::sqrt(kPi);
  CHECK(expected == doctest::Approx(0.2337).epsilon(2e-3));
  CHECK(crps(s, truth_frame({0.0})) == doctest::Approx(expected).epsilon(0.05));
  CHECK(std::fabs(crps(s, truth_frame({0.0})) - 0.2337) < 0.01);
}

TEST_CASE("crps is nonnegative and positive off the truth") {
  Rng rng(129);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> draws(8);
    for (double& d : draws) d = rng.uniform(-3.0, 3.0);
    const ForecastSamples s = make_samples({draws});
    const double c = crps(s, truth_frame({rng.uniform(-3.0, 3.0)}));
    CHECK(c >= -1e-12);
  }
  const ForecastSamples off = make_samples({{1.0, 1.0, 1.0}});
  CHECK(crps(off, truth_frame({2.0})) > 0.0);
}

TEST_CASE("crps rejects fewer than two draws") {
  const ForecastSamples s = make_samples({{1.0}});
  CHECK_THROWS_AS(crps(s, truth_frame({1.0})), DataError);
}

TEST_CASE("event accuracy: unanimous negatives score one") {
  const ForecastSamples s = make_samples({{1.0, 1.2}, {0.8, 0.9}});
  EventRule rule{"high", 0, ">", 2000.0};
  CHECK(event_accuracy(s, rule, truth_frame({1.0, 1.0})) == 1.0);
}

TEST_CASE("event accuracy: adversarial majority scores zero") {
  // Truth above threshold, every draw below, and vice versa.
  const ForecastSamples s = make_samples({{1.0, 1.0, 1.0}, {9.0, 9.0, 9.0}});
  EventRule rule{"hi", 0, ">", 5.0};
  CHECK(event_accuracy(s, rule, truth_frame({9.0, 1.0})) == 0.0);
}

TEST_CASE("event accuracy breaks vote ties toward the event") {
  const ForecastSamples s = make_samples({{1.0, 9.0}});  // one vote each side
  EventRule rule{"hi", 0, ">", 5.0};
  CHECK(event_accuracy(s, rule, truth_frame({9.0})) == 1.0);
  CHECK(event_accuracy(s, rule, truth_frame({1.0})) == 0.0);
}

TEST_CASE("event accuracy on a high-traffic style threshold rule") {
  Rng rng(131);
  std::vector<double> truth_vals;
  std::vector<std::vector<double>> draws;
  for (int i = 0; i < 40; ++i) {
    const double level = rng.uniform01() < 0.5 ? 2400.0 : 1500.0;
    truth_vals.push_back(level);
    std::vector<double> point(16);
    for (double& d : point) d = level + rng.normal(0.0, 100.0);
    draws.push_back(point);
  }
  const ForecastSamples s = make_samples(draws);
  EventRule rule{"high_traffic", 0, ">", 2000.0};
  CHECK(event_accuracy(s, rule, truth_frame(truth_vals)) > 0.95);
}

TEST_CASE("event accuracy requires the rule variable to exist") {
  const ForecastSamples s = make_samples({{1.0, 1.0}});
  EventRule rule{"hi", 3, ">", 0.0};
  CHECK_THROWS_AS(event_accuracy(s, rule, truth_frame({1.0})), DataError);
}

TEST_CASE("eval_nll averages over windows and matches the training path") {
  ModelConfig mc = tiny_config();
  Forecaster model(mc, 1, 61);
  SeriesFrame data = random_walk(1, 24, 3, 0.0);
  WindowTask w;
  w.history = 6;
  w.horizon = 3;
  w.stride = 1000;  // single (leading) window
  const double nll = eval_nll(model, data, w, 777);
  CHECK(std::isfinite(nll));

  // Identity of implementation: eval on one window equals joint_nll there.
  SeriesFrame task = make_forecast_task(data, w, 0);
  Rng plan_rng(mix_seed(777, 0x6576616c));
  PermutationPlan plan = model.plan_for(task, plan_rng.next_u64());
  Workspace ws(&model.params());
  CHECK(nll == model.joint_nll(ws, task, plan).loss.item());
}

TEST_CASE("persistence baseline carries the last observation forward") {
  // Values 0..9, horizon re-masks the last 4: persistence predicts 5.
  std::vector<TimePoint> pts;
  for (int t = 0; t < 10; ++t) pts.push_back({static_cast<double>(t), 0, t, true});
  SeriesFrame frame(1, 10, std::move(pts));
  WindowTask w;
  w.history = 6;
  w.horizon = 4;
  SeriesFrame task = make_forecast_task(frame, w);
  // Errors: |5-6|, |5-7|, |5-8|, |5-9| -> sqrt(mean(1,4,9,16))
  CHECK(persistence_rmse_cm(task) == doctest::Approx(std::sqrt(30.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("report serialization round-trips through csv and text") {
  EvalReport r;
  r.nll = 1.5;
  r.rmse_cm = 0.25;
  r.crps = 0.125;
  r.event_accuracy["hi"] = 0.9;
  r.n_samples = 100;
  const std::string path = "/tmp/percdf_test_report.csv";
  write_report_csv(r, path);
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(all.find("rmse_cm,,0.25") != std::string::npos);
  CHECK(all.find("event_accuracy:hi,,0.9") != std::string::npos);
  const std::string table = report_text_table(r);
  CHECK(table.find("rmse_cm") != std::string::npos);
  CHECK(table.find("acc:hi") != std::string::npos);
}
