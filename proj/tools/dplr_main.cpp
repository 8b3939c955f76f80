// dplr — train, query and benchmark Dirichlet-process mixtures of Bayesian
// local linear regressors from the command line.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dplr/dplr.hpp"

namespace {

using dplr::json;

struct RunConfig {
  std::string kind = "ilr";
  int trunc_k = 25;
  int trunc_m = 5;
  double alpha0 = 1.0;
  double beta0 = 1.0;
  int degree = 1;
  std::string fit_mode = "batch";  // batch | stochastic
  int batch_size = 256;
  double tau_delay = 1.0;
  double kappa_step = 0.75;
  double tol = 1e-6;
  int max_iters = 200;
  unsigned long long seed = 0;
  std::string predict_mode = "mean";  // mode | mean
  std::string init = "kmeans";        // kmeans | random
  double kappa0 = 1e-2;
  double k0_scale = 1e-2;
  double phi0_scale = 1.0;
  double lambda0 = 1e-2;
  double rho0 = 1e-2;

  dplr::ilr::ILRConfig ilr() const {
    dplr::ilr::ILRConfig c;
    c.truncation = trunc_k;
    c.alpha0 = alpha0;
    c.degree = degree;
    c.tol = tol;
    c.max_iters = max_iters;
    c.init = init == "random" ? dplr::InitMethod::random
                              : dplr::InitMethod::kmeans;
    c.kappa0 = kappa0;
    c.k0_scale = k0_scale;
    c.phi0_scale = phi0_scale;
    c.batch_size = fit_mode == "stochastic" ? batch_size : 0;
    c.tau_delay = tau_delay;
    c.kappa_step = kappa_step;
    return c;
  }

  dplr::hilr::HILRConfig hilr() const {
    dplr::hilr::HILRConfig c;
    c.upper_truncation = trunc_m;
    c.lower_truncation = trunc_k;
    c.beta0 = beta0;
    c.alpha0 = alpha0;
    c.degree = degree;
    c.tol = tol;
    c.max_iters = max_iters;
    c.init = init == "random" ? dplr::InitMethod::random
                              : dplr::InitMethod::kmeans;
    c.kappa0 = kappa0;
    c.lambda0 = lambda0;
    c.rho0 = rho0;
    c.k0_scale = k0_scale;
    c.phi0_scale = phi0_scale;
    return c;
  }

  dplr::PredictMode mode() const {
    return predict_mode == "mode" ? dplr::PredictMode::mode
                                  : dplr::PredictMode::mean;
  }

  void check() const {
    if (kind != "ilr" && kind != "hilr")
      throw std::invalid_argument("config: kind must be 'ilr' or 'hilr'");
    if (fit_mode != "batch" && fit_mode != "stochastic")
      throw std::invalid_argument(
          "config: fit_mode must be 'batch' or 'stochastic'");
    if (predict_mode != "mode" && predict_mode != "mean")
      throw std::invalid_argument(
          "config: predict_mode must be 'mode' or 'mean'");
    if (init != "kmeans" && init != "random")
      throw std::invalid_argument("config: init must be 'kmeans' or 'random'");
  }
};

json config_to_json(const RunConfig& c) {
  return json{{"kind", c.kind},
              {"trunc_k", c.trunc_k},
              {"trunc_m", c.trunc_m},
              {"alpha0", c.alpha0},
              {"beta0", c.beta0},
              {"degree", c.degree},
              {"fit_mode", c.fit_mode},
              {"batch_size", c.batch_size},
              {"tau_delay", c.tau_delay},
              {"kappa_step", c.kappa_step},
              {"tol", c.tol},
              {"max_iters", c.max_iters},
              {"seed", c.seed},
              {"predict_mode", c.predict_mode},
              {"init", c.init},
              {"priors", json{{"kappa0", c.kappa0},
                              {"k0_scale", c.k0_scale},
                              {"phi0_scale", c.phi0_scale},
                              {"lambda0", c.lambda0},
                              {"rho0", c.rho0}}}};
}

RunConfig config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "kind",      "trunc_k",    "trunc_m",   "alpha0",       "beta0",
      "degree",    "fit_mode",   "batch_size", "tau_delay",   "kappa_step",
      "tol",       "max_iters",  "seed",      "predict_mode", "init",
      "priors"};
  static const std::set<std::string> known_priors = {
      "kappa0", "k0_scale", "phi0_scale", "lambda0", "rho0"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "'");
  RunConfig c;
  if (j.contains("kind")) c.kind = j.at("kind").get<std::string>();
  if (j.contains("trunc_k")) c.trunc_k = j.at("trunc_k").get<int>();
  if (j.contains("trunc_m")) c.trunc_m = j.at("trunc_m").get<int>();
  if (j.contains("alpha0")) c.alpha0 = j.at("alpha0").get<double>();
  if (j.contains("beta0")) c.beta0 = j.at("beta0").get<double>();
  if (j.contains("degree")) c.degree = j.at("degree").get<int>();
  if (j.contains("fit_mode")) c.fit_mode = j.at("fit_mode").get<std::string>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("tau_delay")) c.tau_delay = j.at("tau_delay").get<double>();
  if (j.contains("kappa_step"))
    c.kappa_step = j.at("kappa_step").get<double>();
  if (j.contains("tol")) c.tol = j.at("tol").get<double>();
  if (j.contains("max_iters")) c.max_iters = j.at("max_iters").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<unsigned long long>();
  if (j.contains("predict_mode"))
    c.predict_mode = j.at("predict_mode").get<std::string>();
  if (j.contains("init")) c.init = j.at("init").get<std::string>();
  if (j.contains("priors")) {
    const json& p = j.at("priors");
    for (const auto& [key, value] : p.items())
      if (!known_priors.count(key))
        throw std::invalid_argument("config: unknown prior key '" + key + "'");
    if (p.contains("kappa0")) c.kappa0 = p.at("kappa0").get<double>();
    if (p.contains("k0_scale")) c.k0_scale = p.at("k0_scale").get<double>();
    if (p.contains("phi0_scale"))
      c.phi0_scale = p.at("phi0_scale").get<double>();
    if (p.contains("lambda0")) c.lambda0 = p.at("lambda0").get<double>();
    if (p.contains("rho0")) c.rho0 = p.at("rho0").get<double>();
  }
  c.check();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dplr::IoError("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw dplr::ParseError(path + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw dplr::ParseError(path + ": " + e.what());
  }
}

void write_trace_csv(const dplr::FitTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw dplr::IoError("cannot open for writing: " + path);
  out << "iteration,elbo,active_components\n";
  char buf[32];
  for (std::size_t i = 0; i < trace.elbo.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", trace.elbo[i]);
    out << i << "," << buf << "," << trace.active_components[i] << "\n";
  }
}

std::string default_trace_path(const std::string& model_path) {
  return model_path + ".trace.csv";
}

struct Evaluation {
  double mse = 0.0;
  double nmse = 0.0;
  int experts = 0;
};

Evaluation evaluate_model(const dplr::AnyModel& model,
                          const dplr::Dataset& test, dplr::PredictMode mode) {
  Evaluation ev;
  Eigen::MatrixXd pred(test.rows(), test.output_dim());
  if (std::holds_alternative<dplr::ilr::ILRModel>(model)) {
    const auto& m = std::get<dplr::ilr::ILRModel>(model);
    dplr::ilr::Predictor predictor(m);
    for (Eigen::Index i = 0; i < test.rows(); ++i)
      pred.row(i) =
          predictor.predict(test.X.row(i).transpose(), mode).mean.transpose();
    ev.experts = dplr::ilr::active_components(m, test, 0.01);
  } else {
    const auto& m = std::get<dplr::hilr::HILRModel>(model);
    for (Eigen::Index i = 0; i < test.rows(); ++i)
      pred.row(i) = dplr::hilr::h_predict(m, test.X.row(i).transpose(), mode)
                        .second.mean.transpose();
    ev.experts = dplr::hilr::h_active_components(m, test, 0.01);
  }
  ev.mse = dplr::mean_squared_error(pred, test.Y);
  ev.nmse = dplr::normalized_mse(pred, test.Y);
  return ev;
}

json metrics_json(const Evaluation& ev, int iterations, double elapsed_ms) {
  return json{{"mse", ev.mse},
              {"nmse", ev.nmse},
              {"experts", ev.experts},
              {"iterations", iterations},
              {"elapsed_ms", elapsed_ms}};
}

/// Load a CSV whose x columns must match the model while y columns are
/// optional (prediction inputs).
Eigen::MatrixXd load_inputs(const std::string& path, int d_x) {
  std::ifstream in(path);
  if (!in) throw dplr::IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw dplr::ParseError(path + ": empty file");
  int file_dx = 0, file_dy = 0;
  {
    std::istringstream ss(line);
    std::string name;
    while (std::getline(ss, name, ',')) {
      if (!name.empty() && (name[0] == 'x' || name[0] == 'X'))
        ++file_dx;
      else
        ++file_dy;
    }
  }
  if (file_dx != d_x)
    throw std::invalid_argument(path + ": expected " + std::to_string(d_x) +
                                " input columns, found " +
                                std::to_string(file_dx));
  if (file_dy > 0) return dplr::load_csv(path, file_dx, file_dy).X;

  // Pure-input file: parse the x columns directly.
  std::vector<double> values;
  int rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    int cols = 0;
    while (std::getline(ss, field, ',')) {
      try {
        values.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw dplr::ParseError(path + ":" + std::to_string(lineno) +
                               ": bad number '" + field + "'");
      }
      ++cols;
    }
    if (cols != d_x)
      throw dplr::ParseError(path + ":" + std::to_string(lineno) +
                             ": wrong field count");
    ++rows;
  }
  Eigen::MatrixXd x(rows, d_x);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < d_x; ++j) x(i, j) = values[i * d_x + j];
  return x;
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_generate(const std::string& name, int n, unsigned long long seed,
                 const std::string& out) {
  dplr::RngStream rng(seed);
  const dplr::Dataset ds = dplr::generate_by_name(name, n, rng);
  dplr::save_csv(ds, out);
  std::cout << "wrote " << ds.rows() << " rows to " << out << "\n";
  return 0;
}

std::pair<dplr::AnyModel, dplr::FitTrace> fit_once(const dplr::Dataset& data,
                                                   const RunConfig& cfg) {
  dplr::RngStream rng(cfg.seed);
  if (cfg.kind == "hilr") {
    auto [model, trace] = dplr::hilr::h_fit(data, cfg.hilr(), rng);
    return {dplr::AnyModel(std::move(model)), std::move(trace)};
  }
  if (cfg.fit_mode == "stochastic") {
    auto [model, trace] = dplr::ilr::fit_stochastic(data, cfg.ilr(), rng);
    return {dplr::AnyModel(std::move(model)), std::move(trace)};
  }
  auto [model, trace] = dplr::ilr::fit(data, cfg.ilr(), rng);
  return {dplr::AnyModel(std::move(model)), std::move(trace)};
}

int cmd_fit(const std::string& data_path, const RunConfig& cfg,
            const std::string& model_out, const std::string& trace_out) {
  const dplr::Dataset data = dplr::load_csv_auto(data_path);
  const auto t0 = Clock::now();
  auto [model, trace] = fit_once(data, cfg);
  const double elapsed = ms_since(t0);
  dplr::save_model(model, model_out);
  write_trace_csv(trace, trace_out.empty() ? default_trace_path(model_out)
                                           : trace_out);
  const Evaluation ev = evaluate_model(model, data, cfg.mode());
  std::cout << metrics_json(ev, trace.iterations, elapsed).dump() << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& inputs_path,
                const std::string& out_path, const std::string& mode_name) {
  const dplr::AnyModel model = dplr::load_model(model_path);
  const dplr::PredictMode mode = mode_name == "mode" ? dplr::PredictMode::mode
                                                     : dplr::PredictMode::mean;
  const int d_x = std::holds_alternative<dplr::ilr::ILRModel>(model)
                      ? std::get<dplr::ilr::ILRModel>(model)
                            .feature_spec.raw_input_dim()
                      : std::get<dplr::hilr::HILRModel>(model)
                            .feature_spec.raw_input_dim();
  const int d_y = std::holds_alternative<dplr::ilr::ILRModel>(model)
                      ? std::get<dplr::ilr::ILRModel>(model)
                            .feature_spec.output_dim()
                      : std::get<dplr::hilr::HILRModel>(model)
                            .feature_spec.output_dim();
  const Eigen::MatrixXd inputs = load_inputs(inputs_path, d_x);

  std::ofstream out(out_path);
  if (!out) throw dplr::IoError("cannot open for writing: " + out_path);
  for (int j = 0; j < d_y; ++j) out << (j ? "," : "") << "mean_" << (j + 1);
  for (int j = 0; j < d_y; ++j) out << ",std_" << (j + 1);
  out << ",top_component,top_weight\n";

  std::optional<dplr::ilr::Predictor> predictor;
  if (std::holds_alternative<dplr::ilr::ILRModel>(model))
    predictor.emplace(std::get<dplr::ilr::ILRModel>(model));

  char buf[32];
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    dplr::PointPrediction pt;
    if (predictor)
      pt = predictor->predict(inputs.row(i).transpose(), mode);
    else
      pt = dplr::hilr::h_predict(std::get<dplr::hilr::HILRModel>(model),
                                 inputs.row(i).transpose(), mode)
               .second;
    for (int j = 0; j < d_y; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", pt.mean(j));
      out << (j ? "," : "") << buf;
    }
    for (int j = 0; j < d_y; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    pt.cov_defined ? pt.stddev(j) : -1.0);
      out << "," << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", pt.top_weight);
    out << "," << pt.top_component << "," << buf << "\n";
  }
  std::cout << "wrote " << inputs.rows() << " predictions to " << out_path
            << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& test_path,
                 const std::string& mode_name) {
  const dplr::AnyModel model = dplr::load_model(model_path);
  const dplr::Dataset test = dplr::load_csv_auto(test_path);
  const auto t0 = Clock::now();
  const Evaluation ev = evaluate_model(
      model, test,
      mode_name == "mode" ? dplr::PredictMode::mode : dplr::PredictMode::mean);
  std::cout << metrics_json(ev, 0, ms_since(t0)).dump() << "\n";
  return 0;
}

int cmd_sequential(const std::string& model_in, const RunConfig& cfg,
                   const std::vector<std::string>& batch_paths,
                   const std::string& model_out,
                   const std::string& trace_out) {
  if (cfg.kind != "ilr")
    throw std::invalid_argument(
        "sequential: only ilr models support sequential updates");
  if (batch_paths.empty())
    throw std::invalid_argument("sequential: no batch files given");

  std::size_t start = 0;
  dplr::ilr::ILRModel model;
  dplr::FitTrace trace;
  if (!model_in.empty()) {
    dplr::AnyModel loaded = dplr::load_model(model_in);
    if (!std::holds_alternative<dplr::ilr::ILRModel>(loaded))
      throw std::invalid_argument("sequential: --model-in must be an ilr model");
    model = std::get<dplr::ilr::ILRModel>(loaded);
  } else {
    dplr::RngStream rng(cfg.seed);
    const dplr::Dataset first = dplr::load_csv_auto(batch_paths[0]);
    std::tie(model, trace) = dplr::ilr::fit(first, cfg.ilr(), rng);
    std::cout << "batch 1: elbo=" << trace.elbo.back()
              << " iterations=" << trace.iterations << "\n";
    start = 1;
  }
  for (std::size_t b = start; b < batch_paths.size(); ++b) {
    const dplr::Dataset batch = dplr::load_csv_auto(batch_paths[b]);
    std::tie(model, trace) =
        dplr::ilr::sequential_update(model, batch, cfg.ilr());
    std::cout << "batch " << (b + 1) << ": elbo=" << trace.elbo.back()
              << " iterations=" << trace.iterations << "\n";
  }
  dplr::save_model(dplr::AnyModel(model), model_out);
  if (!trace_out.empty()) write_trace_csv(trace, trace_out);
  std::cout << "wrote model to " << model_out << "\n";
  return 0;
}

int cmd_benchmark_synthetic(unsigned long long seed, int n,
                            const RunConfig& base, const std::string& out) {
  json rows = json::array();
  std::printf("%-16s %-5s %12s %12s %8s %6s %10s\n", "dataset", "model",
              "mse", "nmse", "experts", "iters", "elapsed");
  for (const std::string& name : dplr::generator_names()) {
    RunConfig cfg = base;
    cfg.seed = seed;
    if (name == "triangle") {
      cfg.kind = "hilr";
      cfg.trunc_m = std::min(base.trunc_m, 8);
      cfg.trunc_k = std::min(base.trunc_k, 8);
    } else {
      cfg.kind = "ilr";
    }
    if (name == "inverse-mapping") cfg.predict_mode = "mode";
    if (name == "steps" || name == "cubics" || name == "inverse-mapping")
      cfg.predict_mode = "mode";

    dplr::RngStream gen_rng(seed);
    const dplr::Dataset train = dplr::generate_by_name(name, n, gen_rng);
    dplr::RngStream test_rng(seed + 1);
    const dplr::Dataset test =
        dplr::generate_by_name(name, std::max(n / 4, 50), test_rng);

    const auto t0 = Clock::now();
    dplr::AnyModel model;
    dplr::FitTrace trace;
    if (name == "chirp") {
      // Sequential arrival in three contiguous batches.
      const auto batches = dplr::split_batches(train, 3);
      dplr::RngStream rng(cfg.seed);
      dplr::ilr::ILRModel m;
      std::tie(m, trace) = dplr::ilr::fit(batches[0], cfg.ilr(), rng);
      for (std::size_t b = 1; b < batches.size(); ++b)
        std::tie(m, trace) =
            dplr::ilr::sequential_update(m, batches[b], cfg.ilr());
      model = dplr::AnyModel(std::move(m));
    } else {
      std::tie(model, trace) = fit_once(train, cfg);
    }
    const double elapsed = ms_since(t0);
    const Evaluation ev = evaluate_model(model, test, cfg.mode());
    std::printf("%-16s %-5s %12.5g %12.5g %8d %6d %9.0fms\n", name.c_str(),
                cfg.kind.c_str(), ev.mse, ev.nmse, ev.experts,
                trace.iterations, elapsed);
    rows.push_back(json{{"dataset", name},
                        {"model", cfg.kind},
                        {"mse", ev.mse},
                        {"nmse", ev.nmse},
                        {"experts", ev.experts},
                        {"iterations", trace.iterations},
                        {"elapsed_ms", elapsed}});
  }
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw dplr::IoError("cannot open for writing: " + out);
    f << rows.dump(1) << "\n";
  }
  return 0;
}

int cmd_benchmark_invdyn(const std::string& train_path,
                         const std::string& test_path, const RunConfig& cfg) {
  const dplr::Dataset train = dplr::load_csv_auto(train_path);
  const dplr::Dataset test = dplr::load_csv_auto(test_path);
  const auto t0 = Clock::now();
  auto [model, trace] = fit_once(train, cfg);
  const double elapsed = ms_since(t0);
  const Evaluation ev = evaluate_model(model, test, cfg.mode());
  std::cout << metrics_json(ev, trace.iterations, elapsed).dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet-process mixtures of Bayesian local linear "
               "regressors: fit, predict, evaluate, benchmark"};
  app.require_subcommand(1);

  // Shared option storage.
  std::string data_path, config_path, model_path, model_in, out_path,
      trace_path, mode_name = "mean", gen_name, train_path, test_path,
      suite_name, kind = "ilr";
  std::vector<std::string> batch_paths;
  int n = 2000;
  unsigned long long seed = 0;
  std::optional<int> opt_trunc_k, opt_trunc_m, opt_degree, opt_batch_size,
      opt_max_iters;
  std::optional<double> opt_alpha0, opt_beta0, opt_tol;
  std::optional<unsigned long long> opt_seed;

  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--trunc-k", opt_trunc_k, "Truncation level K");
    cmd->add_option("--trunc-m", opt_trunc_m, "Upper truncation level M (hilr)");
    cmd->add_option("--degree", opt_degree, "Polynomial feature degree");
    cmd->add_option("--alpha0", opt_alpha0, "Concentration alpha0");
    cmd->add_option("--beta0", opt_beta0, "Upper concentration beta0 (hilr)");
    cmd->add_option("--batch-size", opt_batch_size,
                    "Minibatch size (stochastic fitting)");
    cmd->add_option("--tol", opt_tol, "Relative ELBO convergence tolerance");
    cmd->add_option("--max-iters", opt_max_iters, "Maximum iterations");
    cmd->add_option("--seed", opt_seed, "Random seed");
    cmd->add_option("--mode", mode_name, "Prediction mode: mode|mean")
        ->check(CLI::IsMember({"mode", "mean"}));
  };
  auto apply_overrides = [&](RunConfig cfg) {
    if (opt_trunc_k) cfg.trunc_k = *opt_trunc_k;
    if (opt_trunc_m) cfg.trunc_m = *opt_trunc_m;
    if (opt_degree) cfg.degree = *opt_degree;
    if (opt_alpha0) cfg.alpha0 = *opt_alpha0;
    if (opt_beta0) cfg.beta0 = *opt_beta0;
    if (opt_batch_size) {
      cfg.batch_size = *opt_batch_size;
      cfg.fit_mode = "stochastic";
    }
    if (opt_tol) cfg.tol = *opt_tol;
    if (opt_max_iters) cfg.max_iters = *opt_max_iters;
    if (opt_seed) cfg.seed = *opt_seed;
    cfg.predict_mode = mode_name;
    cfg.check();
    return cfg;
  };

  CLI::App* generate =
      app.add_subcommand("generate", "Write a synthetic dataset CSV");
  generate->add_option("name", gen_name, "Generator name")
      ->required()
      ->check(CLI::IsMember(dplr::generator_names()));
  generate->add_option("--n", n, "Sample count");
  generate->add_option("--seed", seed, "Random seed");
  generate->add_option("--out", out_path, "Output CSV path")->required();

  CLI::App* config = app.add_subcommand("config", "Configuration helpers");
  CLI::App* config_init =
      config->add_subcommand("init", "Emit a config JSON with defaults");
  config_init->add_option("--out", out_path, "Output path (default stdout)");
  config_init->add_option("--kind", kind, "Model kind: ilr|hilr")
      ->check(CLI::IsMember({"ilr", "hilr"}));

  CLI::App* fit = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  fit->add_option("--data", data_path, "Training CSV")->required();
  fit->add_option("--config", config_path, "Config JSON");
  fit->add_option("--model", model_path, "Model output path")->required();
  fit->add_option("--trace", trace_path, "Trace CSV path");
  fit->add_option("--kind", kind, "Model kind: ilr|hilr")
      ->check(CLI::IsMember({"ilr", "hilr"}));
  add_overrides(fit);

  CLI::App* predict =
      app.add_subcommand("predict", "Predict outputs for input rows");
  predict->add_option("--model", model_path, "Model JSON")->required();
  predict->add_option("--data", data_path, "Input CSV")->required();
  predict->add_option("--out", out_path, "Prediction CSV output")->required();
  predict->add_option("--mode", mode_name, "Prediction mode: mode|mean")
      ->check(CLI::IsMember({"mode", "mean"}));

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Report MSE/NMSE/experts on test data");
  evaluate->add_option("--model", model_path, "Model JSON")->required();
  evaluate->add_option("--data", test_path, "Test CSV")->required();
  evaluate->add_option("--mode", mode_name, "Prediction mode: mode|mean")
      ->check(CLI::IsMember({"mode", "mean"}));

  CLI::App* sequential = app.add_subcommand(
      "sequential", "Fit batches sequentially, posterior becoming prior");
  sequential->add_option("batches", batch_paths, "Batch CSV files")
      ->required();
  sequential->add_option("--config", config_path, "Config JSON");
  sequential->add_option("--model-in", model_in, "Starting model JSON");
  sequential->add_option("--model", model_path, "Model output path")
      ->required();
  sequential->add_option("--trace", trace_path, "Trace CSV for final batch");
  add_overrides(sequential);

  CLI::App* benchmark =
      app.add_subcommand("benchmark", "Run a benchmark suite");
  benchmark->add_option("suite", suite_name, "Suite: synthetic|invdyn")
      ->required()
      ->check(CLI::IsMember({"synthetic", "invdyn"}));
  benchmark->add_option("--n", n, "Training rows per synthetic dataset");
  benchmark->add_option("--out", out_path, "Metrics JSON output");
  benchmark->add_option("--config", config_path, "Config JSON");
  benchmark->add_option("--train", train_path, "Training CSV (invdyn)");
  benchmark->add_option("--test", test_path, "Test CSV (invdyn)");
  add_overrides(benchmark);

  try {
    app.parse(argc, argv);

    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);

    if (generate->parsed())
      return cmd_generate(gen_name, n, seed, out_path);
    if (config_init->parsed()) {
      cfg.kind = kind;
      const std::string text = config_to_json(cfg).dump(1);
      if (out_path.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream f(out_path);
        if (!f) throw dplr::IoError("cannot open for writing: " + out_path);
        f << text << "\n";
      }
      return 0;
    }
    if (fit->parsed()) {
      if (config_path.empty()) cfg.kind = kind;
      if (fit->count("--kind")) cfg.kind = kind;
      return cmd_fit(data_path, apply_overrides(cfg), model_path, trace_path);
    }
    if (predict->parsed())
      return cmd_predict(model_path, data_path, out_path, mode_name);
    if (evaluate->parsed())
      return cmd_evaluate(model_path, test_path, mode_name);
    if (sequential->parsed())
      return cmd_sequential(model_in, apply_overrides(cfg), batch_paths,
                            model_path, trace_path);
    if (benchmark->parsed()) {
      if (suite_name == "synthetic")
        return cmd_benchmark_synthetic(opt_seed.value_or(0), n,
                                       apply_overrides(cfg), out_path);
      if (train_path.empty() || test_path.empty())
        throw std::invalid_argument(
            "benchmark invdyn: --train and --test are required");
      return cmd_benchmark_invdyn(train_path, test_path, apply_overrides(cfg));
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const dplr::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 3;
  } catch (const dplr::ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
    return 3;
  } catch (const dplr::NumericalError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  }
}
