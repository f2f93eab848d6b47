// Command-line pipeline: generate data, train the base forecaster, train the
// residual estimator, replay a split with calibration, and run diagnostics.
// Every command reads a flat key=value config (defaults built in), writes its
// artifacts plus a resolved-config snapshot and a small metadata file.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rescal/config.hpp"
#include "rescal/data.hpp"
#include "rescal/diagnostics.hpp"
#include "rescal/estimator.hpp"
#include "rescal/forecast_log.hpp"
#include "rescal/graph.hpp"
#include "rescal/models.hpp"
#include "rescal/replay.hpp"

namespace {

namespace fs = std::filesystem;
using rescal::config::RunConfig;

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void write_meta(const std::string& dir, const RunConfig& cfg, double seconds,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  std::ofstream out(dir + "/meta.txt", std::ios::trunc);
  out << "seed = " << cfg.get("seed") << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(cfg.content_hash()));
  out << "config_hash = " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.3f", seconds);
  out << "duration_s = " << buf << '\n';
  for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
}

RunConfig resolve_config(const std::string& config_path,
                         const std::string& seed_flag,
                         const std::string& out_flag,
                         const std::string& data_flag) {
  RunConfig cfg = RunConfig::defaults();
  if (!config_path.empty()) cfg.load_file(config_path);
  if (!seed_flag.empty()) cfg.set("seed", seed_flag);
  if (!out_flag.empty()) cfg.set("out", out_flag);
  if (!data_flag.empty()) cfg.set("data.dir", data_flag);
  return cfg;
}

std::vector<rescal::ad::Tensor> supports_for(
    const rescal::data::LoadedDataset& lds, const RunConfig& cfg) {
  return rescal::graph::dataset_supports(
      cfg.get("data.dir"), lds.manifest.adjacency_file,
      lds.manifest.vocab_file, cfg.get_double("graph.kappa"));
}

rescal::data::LoadedDataset load_data(const RunConfig& cfg) {
  const std::string dir = cfg.get("data.dir");
  if (dir.empty()) {
    throw std::runtime_error(
        "no dataset directory; pass --data or set data.dir (produced by "
        "`rescal gen-synthetic`)");
  }
  return rescal::data::load_dataset_dir(dir);
}

// ------------------------------------------------------------- commands ----

int cmd_gen_synthetic(const RunConfig& cfg) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);

  const int64_t nodes = cfg.get_int("gen.nodes");
  const int64_t length = cfg.get_int("gen.length");
  const int64_t period = cfg.get_int("gen.period");
  const double p_zero = cfg.get_double("gen.p_zero");
  const int64_t lag = cfg.get_int("gen.lag");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  rescal::data::SeriesDataset ds = rescal::data::gen_synthetic_spatial(
      nodes, length, period, p_zero, lag, seed);

  std::vector<std::string> ids;
  for (int64_t i = 0; i < nodes; ++i) ids.push_back("n" + std::to_string(i));

  rescal::data::DatasetManifest manifest;
  manifest.nodes = nodes;
  manifest.length = length;
  manifest.period = period;
  manifest.p_zero = p_zero;
  manifest.lag = lag;
  manifest.seed = seed;
  manifest.day_length = period;
  manifest.zero_is_missing = false;
  manifest.train_end = ds.train_end;
  manifest.val_end = ds.val_end;
  if (nodes > 1) {
    manifest.adjacency_file = "adjacency.csv";
    manifest.vocab_file = "vocab.csv";
    const auto distances =
        rescal::data::chain_distances(nodes, cfg.get_double("gen.hop_meters"));
    rescal::graph::save_distance_csv(out + "/adjacency.csv", distances, nodes,
                                     ids);
    rescal::graph::save_vocab(out + "/vocab.csv", ids);
  }
  rescal::data::save_dataset_dir(out, ds, manifest, ids);
  cfg.write_snapshot(out + "/config_resolved.txt");
  write_meta(out, cfg, timer.seconds(), {});
  std::cout << "wrote dataset (" << length << " steps, " << nodes
            << " node(s)) to " << out << "\n";
  return 0;
}

int cmd_train_base(const RunConfig& cfg) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  auto lds = load_data(cfg);
  const auto scaler = rescal::data::fit_scaler(lds.series);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  rescal::models::TrainResult result;
  std::unique_ptr<rescal::models::Forecaster> model;
  const std::string kind = cfg.get("base.kind");
  if (kind == "seq2seq") {
    rescal::models::Seq2seqConfig mc;
    mc.input_len = cfg.get_int("base.input_len");
    mc.output_len = cfg.get_int("base.output_len");
    mc.hidden = cfg.get_int("base.hidden");
    mc.mlp_hidden = cfg.get_int("base.mlp_hidden");
    mc.epochs = cfg.get_int("base.epochs");
    mc.batch = cfg.get_int("base.batch");
    mc.lr = static_cast<float>(cfg.get_double("base.lr"));
    mc.teacher_forcing =
        static_cast<float>(cfg.get_double("base.teacher_forcing"));
    auto m = std::make_unique<rescal::models::Seq2seqModel>(mc, seed);
    result = rescal::models::train_seq2seq(*m, lds.series, scaler, seed);
    model = std::move(m);
  } else if (kind == "graph") {
    rescal::models::GraphForecasterConfig mc;
    mc.blocks = cfg.get_int("base.blocks");
    mc.channels = cfg.get_int("base.channels");
    mc.input_len = cfg.get_int("base.input_len");
    mc.output_len = cfg.get_int("base.output_len");
    mc.kernel = cfg.get_int("base.kernel");
    mc.dilations = cfg.get_int_list("base.dilations");
    mc.diffusion_order = cfg.get_int("graph.diffusion_order");
    mc.node_embed_dim = cfg.get_int("graph.node_embed_dim");
    mc.use_adaptive = cfg.get_bool("graph.use_adaptive");
    mc.epochs = cfg.get_int("base.graph_epochs");
    mc.batch = cfg.get_int("base.graph_batch");
    mc.lr = static_cast<float>(cfg.get_double("base.lr"));
    auto m = std::make_unique<rescal::models::GraphForecaster>(
        mc, lds.series.nodes, supports_for(lds, cfg), seed);
    result = rescal::models::train_graph(*m, lds.series, scaler, seed);
    model = std::move(m);
  } else {
    throw std::runtime_error("base.kind must be seq2seq or graph, got '" +
                             kind + "'");
  }

  rescal::models::save_base(out, *model);
  rescal::flog::write_csv(out + "/forecast_log.csv", result.log);
  rescal::flog::write_scaler(out + "/scaler.txt", scaler);
  cfg.write_snapshot(out + "/config_resolved.txt");
  char num[64];
  std::snprintf(num, sizeof(num), "%.6f", result.best_val_mse);
  write_meta(out, cfg, timer.seconds(),
             {{"best_val_mse", num},
              {"best_epoch", std::to_string(result.best_epoch)}});
  std::cout << "trained " << kind << " (best val MSE " << result.best_val_mse
            << " at epoch " << result.best_epoch << "), artifacts in " << out
            << "\n";
  return 0;
}

int cmd_train_rescal(const RunConfig& cfg, const std::string& base_dir) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  if (base_dir.empty()) {
    throw std::runtime_error(
        "no base artifacts; pass --base pointing at a `rescal train-base` "
        "output directory");
  }
  auto lds = load_data(cfg);
  const auto scaler = rescal::flog::read_scaler(base_dir + "/scaler.txt");
  const auto log = rescal::flog::read_csv(base_dir + "/forecast_log.csv");
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  rescal::est::RescalConfig rc;
  rc.layers = cfg.get_int("rescal.layers");
  rc.d_h = cfg.get_int("rescal.d_h");
  rc.d_c = cfg.get_int("rescal.d_c");
  rc.n_c = cfg.get_int("rescal.n_c");
  rc.d_e = cfg.get_int("rescal.d_e");
  rc.T = cfg.get_int("base.output_len");
  rc.T_u = rc.T;
  rc.tau = static_cast<float>(cfg.get_double("rescal.tau"));
  rc.batch = cfg.get_int("rescal.batch");
  rc.epochs = cfg.get_int("rescal.epochs");
  rc.lr = static_cast<float>(cfg.get_double("rescal.lr"));
  rc.kernel = cfg.get_int("rescal.kernel");
  rc.dilations = cfg.get_int_list("rescal.dilations");
  rc.diffusion_order = cfg.get_int("graph.diffusion_order");
  rc.node_embed_dim = cfg.get_int("graph.node_embed_dim");
  rc.use_adaptive =
      lds.series.nodes > 1 && cfg.get_bool("graph.use_adaptive");
  rc.use_quantizer = cfg.get_bool("rescal.use_quantizer");

  rescal::est::ResidualEstimator model(rc, lds.series.nodes,
                                       supports_for(lds, cfg), seed);
  auto result = model.train(log, lds.series, scaler, seed);

  rescal::est::save_estimator(out, model);
  cfg.write_snapshot(out + "/config_resolved.txt");
  char num[64];
  std::snprintf(num, sizeof(num), "%.6f", result.best_val_mae);
  write_meta(out, cfg, timer.seconds(),
             {{"best_val_mae", num},
              {"best_epoch", std::to_string(result.best_epoch)}});
  std::cout << "trained residual estimator (best val MAE "
            << result.best_val_mae << " at epoch " << result.best_epoch
            << "), artifacts in " << out << "\n";
  return 0;
}

int cmd_calibrate(const RunConfig& cfg, const std::string& base_dir,
                  const std::string& rescal_dir) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  if (base_dir.empty()) {
    throw std::runtime_error(
        "no base artifacts; pass --base pointing at a `rescal train-base` "
        "output directory");
  }
  auto lds = load_data(cfg);
  const auto scaler = rescal::flog::read_scaler(base_dir + "/scaler.txt");
  auto supports = supports_for(lds, cfg);
  auto base = rescal::models::load_base(base_dir, lds.series.nodes, supports);

  std::unique_ptr<rescal::est::ResidualEstimator> estimator;
  if (!rescal_dir.empty() && rescal_dir != "none") {
    estimator = std::make_unique<rescal::est::ResidualEstimator>(
        rescal::est::load_estimator(rescal_dir, lds.series.nodes, supports));
  }

  rescal::replay::StreamConfig sc;
  sc.seed = rescal::Rng(static_cast<uint64_t>(cfg.get_int("seed")))
                .fork(0x21u)
                .next_u64();
  sc.hard_codes = cfg.get_bool("rescal.hard_eval");
  auto stream =
      rescal::replay::run_stream(lds.series, rescal::data::Split::Test, scaler,
                                 *base, estimator.get(), sc);

  rescal::replay::write_calibration_csv(out + "/calibration.csv",
                                        stream.records);
  cfg.write_snapshot(out + "/config_resolved.txt");
  char mean_ms[64], max_ms[64];
  std::snprintf(mean_ms, sizeof(mean_ms), "%.3f", stream.mean_latency_ms);
  std::snprintf(max_ms, sizeof(max_ms), "%.3f", stream.max_latency_ms);
  write_meta(out, cfg, timer.seconds(),
             {{"records", std::to_string(stream.records.size())},
              {"mean_step_latency_ms", mean_ms},
              {"max_step_latency_ms", max_ms},
              {"calibrated", estimator ? "1" : "0"}});
  std::cout << "streamed test split: " << stream.records.size()
            << " records, mean per-step calibration latency "
            << stream.mean_latency_ms << " ms (max " << stream.max_latency_ms
            << " ms), output in " << out << "\n";
  return 0;
}

int cmd_diagnose(const RunConfig& cfg, const std::string& calibration_path) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  if (calibration_path.empty()) {
    throw std::runtime_error(
        "no calibration records; pass --calibration pointing at a `rescal "
        "calibrate` output file");
  }
  const auto records = rescal::replay::read_calibration_csv(calibration_path);
  const auto base = rescal::diag::base_rows(records);
  const auto cal = rescal::diag::calibrated_rows(records);
  const auto horizons = cfg.get_int_list("diag.horizons");
  const double mape_thr = cfg.get_double("diag.mape_threshold");

  const auto base_metrics = rescal::diag::metrics(base, nullptr, mape_thr);
  const auto cal_metrics = rescal::diag::metrics(cal, nullptr, mape_thr);
  rescal::diag::write_metrics_csv(out + "/metrics_base.csv", base_metrics,
                                  horizons);
  rescal::diag::write_metrics_csv(out + "/metrics_calibrated.csv", cal_metrics,
                                  horizons);

  const auto mask = rescal::diag::event_mask(base, cfg.get_double("diag.event_q"));
  const auto event_base = rescal::diag::metrics(base, &mask, mape_thr);
  const auto event_cal = rescal::diag::metrics(cal, &mask, mape_thr);
  rescal::diag::write_metrics_csv(out + "/event_metrics_base.csv", event_base,
                                  horizons);
  rescal::diag::write_metrics_csv(out + "/event_metrics_calibrated.csv",
                                  event_cal, horizons);
  const double share = rescal::diag::masked_error_share(base, mask);

  // Residual series per (node, horizon); ACF summary at the configured
  // horizon, averaged over nodes by |r_k|.
  const int max_lag = static_cast<int>(cfg.get_int("diag.max_lag"));
  const int32_t acf_h = static_cast<int32_t>(cfg.get_int("diag.acf_horizon"));
  int64_t nodes = 0;
  for (const auto& r : records) nodes = std::max<int64_t>(nodes, r.node + 1);

  auto residual_series = [&](bool calibrated) {
    std::vector<std::vector<double>> per_node(static_cast<size_t>(nodes));
    for (const auto& r : records) {
      if (r.horizon != acf_h || !r.has_true) continue;
      const float pred = calibrated ? r.y_calibrated : r.y_pred;
      per_node[static_cast<size_t>(r.node)].push_back(
          static_cast<double>(r.y_true) - pred);
    }
    return per_node;
  };

  auto acf_summary = [&](const std::vector<std::vector<double>>& series) {
    std::vector<double> mean_abs(static_cast<size_t>(max_lag), 0.0);
    int64_t used = 0;
    for (const auto& s : series) {
      if (static_cast<int>(s.size()) <= max_lag) continue;
      const auto r = rescal::diag::acf(s, max_lag);
      for (int k = 0; k < max_lag; ++k) mean_abs[static_cast<size_t>(k)] += std::fabs(r[static_cast<size_t>(k)]);
      used += 1;
    }
    for (double& v : mean_abs) v /= std::max<int64_t>(used, 1);
    return mean_abs;
  };

  const auto base_series = residual_series(false);
  const auto cal_series = residual_series(true);
  const auto base_acf = acf_summary(base_series);
  const auto cal_acf = acf_summary(cal_series);
  rescal::diag::write_acf_csv(out + "/acf_base.csv", base_acf);
  rescal::diag::write_acf_csv(out + "/acf_calibrated.csv", cal_acf);

  if (nodes > 1) {
    rescal::diag::write_heatmap_csv(
        out + "/heatmap_base.csv", rescal::diag::lag1_cross_corr(base_series));
    rescal::diag::write_heatmap_csv(
        out + "/heatmap_calibrated.csv",
        rescal::diag::lag1_cross_corr(cal_series));
  }

  double base_mean_acf = 0.0, cal_mean_acf = 0.0;
  for (int k = 0; k < max_lag; ++k) {
    base_mean_acf += base_acf[static_cast<size_t>(k)];
    cal_mean_acf += cal_acf[static_cast<size_t>(k)];
  }
  base_mean_acf /= max_lag;
  cal_mean_acf /= max_lag;

  std::ofstream summary(out + "/summary.txt", std::ios::trunc);
  summary << "records: " << records.size() << "\n";
  summary << "mask policy: top-" << (1.0 - cfg.get_double("diag.event_q")) * 100.0
          << "% base-model errors; MAPE threshold " << mape_thr << "\n";
  summary << "overall MAE base/calibrated: " << base_metrics.overall.mae
          << " / " << cal_metrics.overall.mae << "\n";
  summary << "event MAE base/calibrated: " << event_base.overall.mae << " / "
          << event_cal.overall.mae << "\n";
  summary << "event share of total |error|: " << share << "\n";
  summary << "mean |acf| (lags 1.." << max_lag
          << ", horizon " << acf_h << ") base/calibrated: " << base_mean_acf
          << " / " << cal_mean_acf << "\n";

  cfg.write_snapshot(out + "/config_resolved.txt");
  char num[64];
  std::snprintf(num, sizeof(num), "%.6f", share);
  write_meta(out, cfg, timer.seconds(), {{"event_error_share", num}});
  std::cout << "diagnostics written to " << out << "\n";
  std::cout << "  overall MAE base " << base_metrics.overall.mae
            << " -> calibrated " << cal_metrics.overall.mae << "\n";
  std::cout << "  event-situation MAE base " << event_base.overall.mae
            << " -> calibrated " << event_cal.overall.mae << "\n";
  return 0;
}

int cmd_pattern_report(const RunConfig& cfg, const std::string& base_dir,
                       const std::string& rescal_dir) {
  Timer timer;
  const std::string out = cfg.get("out");
  fs::create_directories(out);
  if (base_dir.empty() || rescal_dir.empty()) {
    throw std::runtime_error(
        "pattern-report needs --base and --rescal artifact directories");
  }
  auto lds = load_data(cfg);
  const auto scaler = rescal::flog::read_scaler(base_dir + "/scaler.txt");
  const auto log = rescal::flog::read_csv(base_dir + "/forecast_log.csv");
  auto supports = supports_for(lds, cfg);
  auto model = rescal::est::load_estimator(rescal_dir, lds.series.nodes,
                                           supports);

  const auto pe = rescal::est::export_pattern_codes(
      model, log, lds.series, scaler, rescal::data::Split::Test);
  rescal::est::write_pattern_csv(out + "/patterns.csv", pe, lds.series.nodes,
                                 model.config().d_c);

  // Mean |residual| profile per pattern from the base log.
  rescal::flog::LogIndex index(log, lds.series.nodes, model.config().T);
  std::vector<std::vector<double>> profiles;
  profiles.reserve(pe.codes.size());
  for (size_t a = 0; a < pe.anchors.size(); ++a) {
    for (int64_t n = 0; n < lds.series.nodes; ++n) {
      const auto* rec = index.find(pe.anchors[a], n);
      std::vector<double> prof;
      if (rec != nullptr) {
        for (int64_t i = 0; i < model.config().T; ++i) {
          prof.push_back(std::fabs(static_cast<double>(rec[i].y_true) -
                                   rec[i].y_pred));
        }
      }
      profiles.push_back(std::move(prof));
    }
  }
  const auto report = rescal::diag::pattern_report(pe.codes, profiles, 0.05);

  std::ofstream cl(out + "/clusters.txt", std::ios::trunc);
  cl << "patterns: " << report.clusters.size() << "\n";
  cl << "flagged fraction (least-frequent tail): " << report.flagged_fraction
     << "\n\n";
  for (const auto& c : report.clusters) {
    cl << (c.flagged ? "* " : "  ") << "count " << c.count << " codes";
    for (int32_t v : c.code.codes) cl << ' ' << v;
    if (!c.mean_residual.empty()) {
      double m = 0.0;
      for (double v : c.mean_residual) m += v;
      cl << "  mean|res| " << m / static_cast<double>(c.mean_residual.size());
    }
    cl << "\n";
  }

  cfg.write_snapshot(out + "/config_resolved.txt");
  write_meta(out, cfg, timer.seconds(),
             {{"patterns", std::to_string(report.clusters.size())}});
  std::cout << "pattern report written to " << out << " ("
            << report.clusters.size() << " patterns)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual calibration toolkit for time-series forecasters"};
  app.require_subcommand(1);

  std::string config_path, seed_flag, out_flag, data_flag;
  std::string base_dir, rescal_dir, calibration_path;
  app.add_option("--config", config_path, "flat key=value config file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed_flag, "override the run seed");
  app.add_option("--out", out_flag, "output directory");
  app.add_option("--data", data_flag, "dataset directory");

  auto* gen = app.add_subcommand("gen-synthetic",
                                 "generate the synthetic sine/event dataset");
  auto* train_base =
      app.add_subcommand("train-base", "train the base forecaster");
  auto* train_rescal = app.add_subcommand(
      "train-rescal", "train the residual estimator on base-model errors");
  train_rescal->add_option("--base", base_dir, "train-base output directory");
  auto* calibrate = app.add_subcommand(
      "calibrate", "stream the test split, calibrating each prediction");
  calibrate->add_option("--base", base_dir, "train-base output directory");
  calibrate->add_option("--rescal", rescal_dir,
                        "train-rescal output directory, or 'none'");
  auto* diagnose = app.add_subcommand(
      "diagnose", "metrics, event-situation tables, ACF and heatmaps");
  diagnose->add_option("--calibration", calibration_path,
                       "calibration.csv from `rescal calibrate`");
  auto* pattern = app.add_subcommand(
      "pattern-report", "cluster time steps by quantized residual pattern");
  pattern->add_option("--base", base_dir, "train-base output directory");
  pattern->add_option("--rescal", rescal_dir, "train-rescal output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg =
        resolve_config(config_path, seed_flag, out_flag, data_flag);
    if (gen->parsed()) return cmd_gen_synthetic(cfg);
    if (train_base->parsed()) return cmd_train_base(cfg);
    if (train_rescal->parsed()) return cmd_train_rescal(cfg, base_dir);
    if (calibrate->parsed()) return cmd_calibrate(cfg, base_dir, rescal_dir);
    if (diagnose->parsed()) return cmd_diagnose(cfg, calibration_path);
    if (pattern->parsed()) return cmd_pattern_report(cfg, base_dir, rescal_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
