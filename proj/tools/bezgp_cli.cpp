// Command-line surface for Bézier-buttress Gaussian process regression:
// training, prediction, self-verification, and a complexity probe.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bezgp/bezgp.hpp"

namespace {

std::vector<int> parse_orders(const std::string& spec, int d) {
  std::vector<int> orders;
  std::stringstream ss(spec);
  std::string field;
  while (std::getline(ss, field, ',')) {
    try {
      orders.push_back(std::stoi(field));
    } catch (const std::exception&) {
      throw bezgp::InvalidArgument("cannot parse order '" + field + "'");
    }
  }
  if (orders.empty()) throw bezgp::InvalidArgument("empty order list");
  if (static_cast<int>(orders.size()) == 1 && d > 1)
    orders.assign(static_cast<std::size_t>(d), orders[0]);  // broadcast a single order
  if (static_cast<int>(orders.size()) != d)
    throw bezgp::InvalidArgument("got " + std::to_string(orders.size()) +
                                 " orders for " + std::to_string(d) + " feature dimensions");
  return orders;
}

bezgp::OodPolicy parse_policy(const std::string& name) {
  if (name == "discard") return bezgp::OodPolicy::discard;
  if (name == "clamp") return bezgp::OodPolicy::clamp;
  if (name == "evaluate") return bezgp::OodPolicy::evaluate;
  throw bezgp::InvalidArgument("unknown out-of-domain policy '" + name + "'");
}

struct TrainOptions {
  std::string data_path, target = "y";
  bool synth1d = false;
  std::string order_spec = "5";
  int r = 1;
  bezgp::TrainConfig cfg;
  double split_ratio = 0.0;  // 0 disables the split
  double margin = 0.0;
  std::string ood = "discard";
  std::uint64_t seed = 0;
  std::string model_out, history_out, plot_out;
};

// Predict every row the policy keeps; returns predictions plus kept indices.
std::pair<std::vector<bezgp::Prediction>, bezgp::ScaledInputs> predict_rows(
    const bezgp::BezierGpModel& model, const Eigen::MatrixXd& X, bezgp::OodPolicy policy) {
  bezgp::BoxScaler box{model.domain.lo, model.domain.hi, {}};
  bezgp::ScaledInputs scaled = bezgp::apply_scaler(box, X, policy);
  std::vector<bezgp::Prediction> preds;
  preds.reserve(static_cast<std::size_t>(scaled.X.rows()));
  for (Eigen::Index i = 0; i < scaled.X.rows(); ++i)
    preds.push_back(bezgp::predict_y_unit(model, scaled.X.row(i).transpose()));
  return {std::move(preds), std::move(scaled)};
}

void report_metrics(const std::string& label, const bezgp::BezierGpModel& model,
                    const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    bezgp::OodPolicy policy) {
  auto [preds, scaled] = predict_rows(model, X, policy);
  if (scaled.discarded > 0)
    std::cerr << "note: " << scaled.discarded << " " << label
              << " rows outside the domain box were discarded\n";
  if (preds.empty()) {
    std::cout << label << ": no rows inside the domain box\n";
    return;
  }
  Eigen::VectorXd truths(static_cast<Eigen::Index>(scaled.kept.size()));
  for (std::size_t i = 0; i < scaled.kept.size(); ++i)
    truths(static_cast<Eigen::Index>(i)) = y(scaled.kept[i]);
  const bezgp::Metrics m = bezgp::metrics(preds, truths);
  std::cout << label << " RMSE: " << m.rmse << "\n"
            << label << " mean log-likelihood: " << m.mean_loglik << "\n";
}

void write_plot_table(const std::string& path, const bezgp::BezierGpModel& model) {
  if (model.d() != 1)
    throw bezgp::InvalidArgument("--plot requires a one-dimensional model");
  std::ofstream out(path);
  if (!out) throw bezgp::IoError("cannot open '" + path + "' for writing");
  out << "x\tmean\tf_sd\ty_sd\n";
  const int grid = 201;
  for (int i = 0; i < grid; ++i) {
    const double t = static_cast<double>(i) / (grid - 1);
    Eigen::VectorXd tv(1);
    tv(0) = t;
    const bezgp::Prediction p = bezgp::predict_y_unit(model, tv);
    const double x = model.domain.lo(0) + t * (model.domain.hi(0) - model.domain.lo(0));
    out << bezgp::detail::format_double(x) << '\t' << bezgp::detail::format_double(p.mean)
        << '\t' << bezgp::detail::format_double(std::sqrt(p.f_var)) << '\t'
        << bezgp::detail::format_double(std::sqrt(p.y_var)) << '\n';
  }
}

int cmd_train(const TrainOptions& opt) {
  bezgp::Dataset data = opt.synth1d ? bezgp::gen_synthetic_1d(opt.seed)
                                    : bezgp::load_csv(opt.data_path, opt.target);
  if (data.n() < 1) throw bezgp::EmptyData("training file contains no rows");

  bezgp::Dataset train = data, test;
  const bool have_split = opt.split_ratio > 0.0;
  if (have_split) std::tie(train, test) = bezgp::split(data, opt.split_ratio, opt.seed);

  const bezgp::BoxScaler scaler = bezgp::fit_box_scaler(train.X, opt.margin);
  for (const auto& w : scaler.warnings) std::cerr << "warning: " << w << "\n";
  const bezgp::ScaledInputs train_scaled =
      bezgp::apply_scaler(scaler, train.X, bezgp::OodPolicy::evaluate);

  const bezgp::TargetStats stats = bezgp::fit_target_stats(train.y);
  const Eigen::VectorXd ys = bezgp::standardize(train.y, stats);

  const std::vector<int> orders = parse_orders(opt.order_spec, static_cast<int>(train.d()));
  bezgp::BezierGpModel model =
      bezgp::new_model(orders, opt.r, bezgp::domain_from_scaler(scaler), opt.seed);
  model.target_stats = stats;
  if (model.perms_with_replacement)
    std::cerr << "note: ensemble size exceeds the number of distinct dimension orderings; "
                 "permutations were sampled with replacement\n";

  bezgp::TrainConfig cfg = opt.cfg;
  cfg.seed = opt.seed;
  const bezgp::FitReport report = bezgp::train_two_phase(model, train_scaled.X, ys, cfg);

  std::cout << "trained on " << train.n() << " rows (" << train.d() << " features), "
            << "orders";
  for (int nu : orders) std::cout << ' ' << nu;
  std::cout << ", ensemble " << opt.r << "\n";
  std::cout << "phase 1: " << report.phase1_seconds << " s, phase 2: " << report.phase2_seconds
            << " s, final noise variance " << report.final_noise_var << "\n";
  if (report.clamp_events > 0)
    std::cerr << "note: " << report.clamp_events
              << " log variance weights hit the +-30 clamp during training\n";

  const bezgp::OodPolicy policy = parse_policy(opt.ood);
  if (have_split)
    report_metrics("test", model, test.X, test.y, policy);
  else
    report_metrics("train", model, train.X, train.y, policy);

  if (!opt.model_out.empty()) bezgp::save_model(model, opt.model_out);
  if (!opt.history_out.empty()) bezgp::save_fit_report(report, opt.history_out);
  if (!opt.plot_out.empty()) write_plot_table(opt.plot_out, model);
  return 0;
}

struct PredictOptions {
  std::string model_in, data_path, target, out_path, ood = "discard";
};

int cmd_predict(const PredictOptions& opt) {
  const bezgp::BezierGpModel model = bezgp::load_model(opt.model_in);
  const bezgp::Dataset data = bezgp::load_csv(opt.data_path, opt.target);
  if (data.d() != model.d())
    throw bezgp::SchemaMismatch("input has " + std::to_string(data.d()) +
                                " feature columns but the model expects " +
                                std::to_string(model.d()) +
                                " (drop extra columns or pass --target)");

  auto [preds, scaled] = predict_rows(model, data.X, parse_policy(opt.ood));
  if (scaled.discarded > 0)
    std::cerr << "note: " << scaled.discarded << " rows outside the domain box were discarded\n";
  if (scaled.out_of_box_evaluated)
    std::cerr << "note: some rows were evaluated outside the domain box\n";

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!opt.out_path.empty()) {
    file.open(opt.out_path);
    if (!file) throw bezgp::IoError("cannot open '" + opt.out_path + "' for writing");
    out = &file;
  }
  *out << "row,mean,f_var,y_var\n";
  for (std::size_t i = 0; i < preds.size(); ++i)
    *out << scaled.kept[i] << ',' << bezgp::detail::format_double(preds[i].mean) << ','
         << bezgp::detail::format_double(preds[i].f_var) << ','
         << bezgp::detail::format_double(preds[i].y_var) << '\n';
  return 0;
}

int cmd_verify(std::uint64_t seed, bool quick) {
  std::vector<bezgp::CheckResult> results = bezgp::run_verification(seed, quick);

  // A deliberately corrupted model file must surface as a parse failure, not
  // a crash.
  {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "bezgp_corrupt_model.json";
    std::ofstream(path.string()) << "{ not valid json";
    bezgp::CheckResult r{"corrupted model file rejected cleanly", false, ""};
    try {
      (void)bezgp::load_model(path.string());
      r.detail = "load unexpectedly succeeded";
    } catch (const bezgp::ParseError& e) {
      r.pass = true;
      r.detail = std::string("rejected with: ") + e.what();
    } catch (const std::exception& e) {
      r.detail = std::string("wrong failure type: ") + e.what();
    }
    fs::remove(path);
    results.push_back(std::move(r));
  }

  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << " — " << r.detail << "\n";
    all = all && r.pass;
  }
  return all ? 0 : static_cast<int>(bezgp::ErrorFamily::verify);
}

struct ProbeOptions {
  std::vector<int> dims{4, 8, 16};
  int order = 5;
  int r = 5;
  Eigen::Index n = 1000;
  std::uint64_t seed = 0;
};

// Median-of-repetitions wall-clock of one full forward+backward pass over n
// points, per dimension count.
int cmd_scaling_probe(const ProbeOptions& opt) {
  using clock = std::chrono::steady_clock;
  std::cout << "d\tseconds_per_pass\n";
  for (int d : opt.dims) {
    bezgp::Rng rng(opt.seed);
    Eigen::MatrixXd T(opt.n, d);
    Eigen::VectorXd y(opt.n);
    for (Eigen::Index i = 0; i < opt.n; ++i) {
      for (int g = 0; g < d; ++g) T(i, g) = rng.uniform01();
      y(i) = rng.uniform(-1.0, 1.0);
    }
    const std::vector<int> orders(static_cast<std::size_t>(d), opt.order);
    bezgp::BezierGpModel model =
        bezgp::new_model(orders, opt.r, bezgp::unit_domain(d), opt.seed);

    (void)bezgp::neg_elbo_gradients(model, T, y, opt.n);  // warm-up
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = clock::now();
      (void)bezgp::neg_elbo_gradients(model, T, y, opt.n);
      best = std::min(best, std::chrono::duration<double>(clock::now() - t0).count());
    }
    std::cout << d << '\t' << best << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bézier-buttress Gaussian process regression"};
  app.footer(
      "Exit codes: 0 success, 2 usage/configuration, 3 numerical failure, 4 I/O,\n"
      "5 parse/format, 6 out-of-domain under strict policy, 7 verification failure.");
  app.require_subcommand(1);

  TrainOptions topt;
  CLI::App* train = app.add_subcommand("train", "fit a model with the two-phase schedule");
  train->add_option("--data", topt.data_path, "training file (delimited text with header)");
  train->add_flag("--synth1d", topt.synth1d, "use the built-in 1-D synthetic benchmark");
  train->add_option("--target", topt.target, "target column name (default y)");
  train->add_option("--order", topt.order_spec,
                    "basis order, single value or comma list per dimension");
  train->add_option("--r", topt.r, "ensemble size");
  train->add_option("--batch", topt.cfg.batch_size, "mini-batch size");
  train->add_option("--phase1-iters", topt.cfg.phase1_iters, "phase-1 iterations");
  train->add_option("--phase2-iters", topt.cfg.phase2_iters, "phase-2 iterations");
  train->add_option("--lr1", topt.cfg.lr1, "phase-1 learning rate");
  train->add_option("--lr2", topt.cfg.lr2, "phase-2 learning rate");
  train->add_option("--eval-every", topt.cfg.eval_every, "history cadence in iterations");
  train->add_option("--seed", topt.seed, "seed for init, batching, splitting");
  train->add_option("--split-ratio", topt.split_ratio,
                    "train fraction for a holdout split (0 = train on everything)");
  train->add_option("--margin", topt.margin, "domain box widening fraction");
  train->add_option("--ood", topt.ood, "out-of-domain policy: discard|clamp|evaluate");
  train->add_option("--model-out", topt.model_out, "write the trained model here");
  train->add_option("--history-out", topt.history_out, "write the ELBO history table here");
  train->add_option("--plot", topt.plot_out, "write a 1-D posterior curve table here");

  PredictOptions popt;
  CLI::App* predict = app.add_subcommand("predict", "evaluate a saved model on new inputs");
  predict->add_option("--model-in", popt.model_in, "model file")->required();
  predict->add_option("--data", popt.data_path, "input file")->required();
  predict->add_option("--target", popt.target, "target column to drop from the input");
  predict->add_option("--out", popt.out_path, "output table (default stdout)");
  predict->add_option("--ood", popt.ood, "out-of-domain policy: discard|clamp|evaluate");

  std::uint64_t vseed = 0;
  bool quick = false;
  CLI::App* verify = app.add_subcommand("verify", "run the oracle self-check suite");
  verify->add_option("--seed", vseed, "seed for the randomized checks");
  verify->add_flag("--quick", quick, "small/fast subset (d <= 2)");

  ProbeOptions pr;
  CLI::App* probe = app.add_subcommand("scaling-probe",
                                       "time forward+backward passes across dimension counts");
  probe->add_option("--dims", pr.dims, "dimension counts to probe, comma-separated")
      ->delimiter(',');
  probe->add_option("--order", pr.order, "basis order");
  probe->add_option("--r", pr.r, "ensemble size");
  probe->add_option("--n", pr.n, "points per pass");
  probe->add_option("--seed", pr.seed, "seed for the synthetic inputs");

  try {
    app.parse(argc, argv);
    if (train->parsed()) {
      if (!topt.synth1d && topt.data_path.empty())
        throw bezgp::InvalidArgument("train needs --data or --synth1d");
      return cmd_train(topt);
    }
    if (predict->parsed()) return cmd_predict(popt);
    if (verify->parsed()) return cmd_verify(vseed, quick);
    if (probe->parsed()) return cmd_scaling_probe(pr);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const bezgp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
