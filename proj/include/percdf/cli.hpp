#pragma once
// Command-line surface: generate, train, forecast, evaluate, memscale, plot.
// Every failure exits nonzero with a one-line diagnostic; PERCDF_SEED
// overrides the configured seed.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "percdf/config.hpp"
#include "percdf/memscale.hpp"
#include "percdf/metrics.hpp"
#include "percdf/svg.hpp"

namespace percdf::cli {

namespace detail {

inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("PERCDF_SEED");
  if (!s || !*s) return std::nullopt;
  return std::stoull(std::string(s));
}

inline std::vector<EventRule> parse_rules(const std::string& text) {
  // name:variable,comparator,threshold[;...]
  std::vector<EventRule> rules;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(';', pos);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) throw DataError("rule '" + item + "' lacks a name:spec colon");
    EventRule r;
    r.name = item.substr(0, colon);
    const auto f = percdf::detail::split_csv_line(item.substr(colon + 1));
    if (f.size() != 3) throw DataError("rule '" + item + "' wants variable,comparator,threshold");
    r.variable = std::stoi(f[0]);
    r.comparator = f[1];
    r.threshold = std::stod(f[2]);
    rules.push_back(std::move(r));
  }
  return rules;
}

inline std::vector<int> parse_sweep(const std::string& text) {
  std::vector<int> values;
  for (const std::string& tok : percdf::detail::split_csv_line(text)) {
    if (!tok.empty()) values.push_back(std::stoi(tok));
  }
  if (values.empty()) throw DataError("memscale: empty sweep");
  return values;
}

inline Forecaster model_from_config(const RunConfig& cfg) {
  const int n_vars = cfg.geti("data.n_variables");
  if (n_vars < 1) throw DataError("config: data.n_variables not set");
  return Forecaster(cfg.to_model_config(), n_vars, cfg.getu("train.seed"));
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"probabilistic multivariate time-series forecasting with latent-bottleneck "
               "encoding and copula decoding"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic series CSV");
  int gen_vars = 10, gen_steps = 20;
  std::uint64_t gen_seed = 7;
  double gen_missing = 0.0, gen_noise = 0.1, gen_period = 24.0;
  std::string gen_kind = "randomwalk", gen_out = "series.csv";
  gen->add_option("--vars", gen_vars, "number of variables");
  gen->add_option("--steps", gen_steps, "number of time steps");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--missing-rate", gen_missing, "independent masking probability");
  gen->add_option("--kind", gen_kind, "randomwalk | sinusoid");
  gen->add_option("--noise", gen_noise, "sinusoid noise stddev");
  gen->add_option("--period", gen_period, "sinusoid period in steps");
  gen->add_option("--out", gen_out, "output CSV path")->required();

  // train
  auto* tr = app.add_subcommand("train", "fit a model and write a checkpoint");
  std::string tr_data, tr_config, tr_preset, tr_out = "model.ckpt", tr_loss_log;
  std::vector<std::string> tr_set;
  tr->add_option("--data", tr_data, "training series CSV")->required();
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--preset", tr_preset, "table3 | table4");
  tr->add_option("--set", tr_set, "inline key=value overrides")->take_all();
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--loss-log", tr_loss_log, "per-batch loss CSV");
  std::optional<int> tr_epochs, tr_batches, tr_batch_size, tr_history, tr_horizon;
  std::optional<double> tr_lr;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--epochs", tr_epochs, "override train.epochs");
  tr->add_option("--batches", tr_batches, "override train.batches_per_epoch");
  tr->add_option("--batch-size", tr_batch_size, "override train.batch_size");
  tr->add_option("--history", tr_history, "override task.history");
  tr->add_option("--horizon", tr_horizon, "override task.horizon");
  tr->add_option("--lr", tr_lr, "override train.lr");
  tr->add_option("--seed", tr_seed, "override train.seed");

  // forecast
  auto* fc = app.add_subcommand("forecast", "sample missing points from a checkpoint");
  std::string fc_ckpt, fc_data, fc_out = "forecast.csv", fc_plan_csv, fc_guard_log;
  int fc_draws = 100;
  std::optional<std::uint64_t> fc_seed;
  fc->add_option("--checkpoint", fc_ckpt, "trained checkpoint")->required();
  fc->add_option("--data", fc_data, "series CSV to forecast")->required();
  fc->add_option("--draws", fc_draws, "number of sample paths");
  fc->add_option("--seed", fc_seed, "sampling seed");
  fc->add_option("--out", fc_out, "samples CSV path");
  fc->add_option("--plan-csv", fc_plan_csv, "write the permutation plan diagnostics");
  fc->add_option("--guard-log", fc_guard_log, "write variance-guard decisions");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a forecast against the truth");
  std::string ev_forecast, ev_truth, ev_rules, ev_out, ev_ckpt, ev_data;
  ev->add_option("--forecast", ev_forecast, "samples CSV")->required();
  ev->add_option("--truth", ev_truth, "truth series CSV")->required();
  ev->add_option("--rules", ev_rules, "event rules name:var,cmp,thr[;...]");
  ev->add_option("--out", ev_out, "report CSV path");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint for the NLL column");
  ev->add_option("--data", ev_data, "series CSV for the NLL column");

  // memscale
  auto* ms = app.add_subcommand("memscale", "run the memory-scaling comparison");
  std::string ms_preset = "table3", ms_axis = "pred", ms_sweep = "10,20,40,80,160";
  std::string ms_variants = "all", ms_out = "memscale.csv";
  int ms_vars = 10, ms_obs = 10, ms_pred = 10;
  std::uint64_t ms_seed = 7;
  ms->add_option("--preset", ms_preset, "model parameter preset");
  ms->add_option("--axis", ms_axis, "pred | cond");
  ms->add_option("--sweep", ms_sweep, "comma-separated sweep values");
  ms->add_option("--variants", ms_variants, "all or comma-separated names");
  ms->add_option("--base-vars", ms_vars, "base variable count");
  ms->add_option("--base-obs", ms_obs, "base observed steps");
  ms->add_option("--base-pred", ms_pred, "base prediction steps");
  ms->add_option("--seed", ms_seed, "data seed");
  ms->add_option("--out", ms_out, "output CSV path");

  // plot
  auto* pl = app.add_subcommand("plot", "render truth, median and 5-95% band as SVG");
  std::string pl_forecast, pl_truth, pl_out = "forecast.svg";
  pl->add_option("--forecast", pl_forecast, "samples CSV")->required();
  pl->add_option("--truth", pl_truth, "truth series CSV")->required();
  pl->add_option("--out", pl_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      SeriesFrame frame = gen_kind == "sinusoid"
                              ? sinusoid(gen_vars, gen_steps, gen_seed, gen_noise, gen_period)
                              : random_walk(gen_vars, gen_steps, gen_seed, gen_missing);
      if (gen_kind != "sinusoid" && gen_kind != "randomwalk") {
        throw DataError("generate: unknown kind '" + gen_kind + "'");
      }
      write_csv(frame, gen_out);
      std::cout << "wrote " << gen_out << " (" << frame.observed_ids().size() << " rows)\n";
      return 0;
    }

    if (tr->parsed()) {
      RunConfig cfg = tr_preset.empty() ? RunConfig() : RunConfig::preset(tr_preset);
      if (!tr_config.empty()) cfg.parse_file(tr_config);
      for (const std::string& kv : tr_set) cfg.parse_text(kv);
      if (tr_epochs) cfg.set("train.epochs", std::to_string(*tr_epochs));
      if (tr_batches) cfg.set("train.batches_per_epoch", std::to_string(*tr_batches));
      if (tr_batch_size) cfg.set("train.batch_size", std::to_string(*tr_batch_size));
      if (tr_history) cfg.set("task.history", std::to_string(*tr_history));
      if (tr_horizon) cfg.set("task.horizon", std::to_string(*tr_horizon));
      if (tr_lr) cfg.set("train.lr", std::to_string(*tr_lr));
      if (tr_seed) cfg.set("train.seed", std::to_string(*tr_seed));
      if (const auto s = detail::env_seed()) cfg.set("train.seed", std::to_string(*s));

      SeriesFrame data = load_csv(tr_data);
      cfg.set("data.n_variables", std::to_string(data.n_variables()));
      Forecaster model = detail::model_from_config(cfg);
      const TrainConfig tc = cfg.to_train_config();
      OptimizerState opt;
      const TrainResult result = train(model, data, cfg.to_window_task(), tc, &opt);
      if (!tr_loss_log.empty()) write_loss_log_csv(result.loss_log, tr_loss_log);
      Rng rng_state(mix_seed(tc.seed, 0x646f6e65));
      save_checkpoint(tr_out, cfg.serialize(), model.params(), opt,
                      static_cast<std::uint64_t>(result.epochs_run), rng_state.save_state());
      std::cout << "trained " << result.epochs_run << " epochs, final nll "
                << result.epoch_mean_nll.back() << ", wrote " << tr_out << "\n";
      return 0;
    }

    if (fc->parsed()) {
      const Checkpoint ck = load_checkpoint(fc_ckpt);
      RunConfig cfg;
      cfg.parse_text(ck.config_echo);
      Forecaster model = detail::model_from_config(cfg);
      restore_into(ck, model.params(), nullptr);
      SeriesFrame data = load_csv(fc_data);
      if (data.n_variables() != model.n_variables()) {
        throw DataError("forecast: data has " + std::to_string(data.n_variables()) +
                        " variables, checkpoint expects " + std::to_string(model.n_variables()));
      }
      SeriesFrame task = make_forecast_task(data, cfg.to_window_task());
      std::uint64_t seed = fc_seed ? *fc_seed : cfg.getu("train.seed") + 1;
      if (const auto s = detail::env_seed()) seed = *s;
      PermutationPlan plan = model.plan_for(task, seed);
      if (!fc_plan_csv.empty()) write_plan_csv(plan, task, fc_plan_csv);
      const ForecastSamples samples = model.sample_missing(task, plan, fc_draws, seed);
      write_samples_csv(samples, fc_out);
      if (!fc_guard_log.empty()) write_guard_log_csv(samples.guard_log, fc_guard_log);
      std::cout << "wrote " << fc_out << " (" << samples.n_draws() << " draws x "
                << samples.n_points() << " points)\n";
      return 0;
    }

    if (ev->parsed()) {
      const ForecastSamples samples = load_samples_csv(ev_forecast);
      const SeriesFrame truth = load_csv(ev_truth);
      EvalReport report;
      report.n_samples = samples.n_draws();
      report.rmse_cm = rmse_cm(samples, truth, &report.rmse_by_variable);
      report.crps = crps(samples, truth, &report.crps_by_variable);
      for (const EventRule& rule : detail::parse_rules(ev_rules)) {
        report.event_accuracy[rule.name] = event_accuracy(samples, rule, truth);
      }
      if (!ev_ckpt.empty() && !ev_data.empty()) {
        const Checkpoint ck = load_checkpoint(ev_ckpt);
        RunConfig cfg;
        cfg.parse_text(ck.config_echo);
        Forecaster model = detail::model_from_config(cfg);
        restore_into(ck, model.params(), nullptr);
        SeriesFrame data = load_csv(ev_data);
        WindowTask w = cfg.to_window_task();
        w.stride = std::max(w.stride, w.horizon);  // held-out windows
        report.nll = eval_nll(model, data, w, cfg.getu("train.seed") + 2);
      }
      if (!ev_out.empty()) write_report_csv(report, ev_out);
      std::cout << report_text_table(report);
      return 0;
    }

    if (ms->parsed()) {
      RunConfig cfg = RunConfig::preset(ms_preset);
      ScaleBase base;
      base.n_variables = ms_vars;
      base.observed_steps = ms_obs;
      base.predict_steps = ms_pred;
      std::vector<VariantSpec> variants;
      if (ms_variants == "all") {
        variants = all_variants();
      } else {
        for (const std::string& name : percdf::detail::split_csv_line(ms_variants)) {
          variants.push_back(variant_by_name(name));
        }
      }
      const auto rows = run_scaling(base, parse_sweep_axis(ms_axis), detail::parse_sweep(ms_sweep),
                                    variants, cfg.to_model_config(), ms_seed);
      write_scale_csv(rows, ms_out);
      std::cout << "wrote " << ms_out << "\n";
      for (const VariantSpec& v : variants) {
        try {
          std::cout << "slope " << v.name << " = " << fit_slope(rows, v.name) << "\n";
        } catch (const DataError&) {
          // fewer than 4 sweep points: no slope line
        }
      }
      return 0;
    }

    if (pl->parsed()) {
      const ForecastSamples samples = load_samples_csv(pl_forecast);
      const SeriesFrame truth = load_csv(pl_truth);
      write_forecast_svg(samples, truth, pl_out);
      std::cout << "wrote " << pl_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace percdf::cli
