// Demo: the shortest useful tour of the library — generate data, fit a model
// with the two-phase schedule, predict with uncertainty, and round-trip the
// model through a file.
//
// Usage: minimal_fit [model_path]

#include <iostream>
#include <string>

#include "bezgp/bezgp.hpp"

int main(int argc, char** argv) {
  const std::string model_path = argc > 1 ? argv[1] : "/tmp/minimal_fit_model.json";

  // Data: a noisy quadratic on 200 points in two input dimensions.
  bezgp::Rng rng(0);
  const Eigen::Index n = 200;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform(-2.0, 2.0);
    X(i, 1) = rng.uniform(0.0, 10.0);
    y(i) = X(i, 0) * X(i, 0) + 0.3 * X(i, 1) + 0.1 * (rng.uniform01() - 0.5);
  }

  // Preprocessing: box-scale inputs onto the unit cube, standardize targets.
  const bezgp::BoxScaler scaler = bezgp::fit_box_scaler(X);
  const bezgp::ScaledInputs scaled = bezgp::apply_scaler(scaler, X, bezgp::OodPolicy::evaluate);
  const bezgp::TargetStats stats = bezgp::fit_target_stats(y);
  const Eigen::VectorXd ystd = bezgp::standardize(y, stats);

  // Model: order-6 bases per dimension, an ensemble of two layer orderings.
  bezgp::BezierGpModel model =
      bezgp::new_model({6, 6}, 2, bezgp::domain_from_scaler(scaler), 1);
  model.target_stats = stats;

  bezgp::TrainConfig cfg;
  cfg.phase1_iters = 3000;
  cfg.phase2_iters = 1000;
  cfg.batch_size = 64;
  const bezgp::FitReport report = bezgp::train_two_phase(model, scaled.X, ystd, cfg);
  std::cout << "trained in " << report.phase1_seconds + report.phase2_seconds
            << " s, final noise variance " << model.noise_var << "\n";

  // Predictions carry both the epistemic variance and the noise.
  bezgp::save_model(model, model_path);
  const bezgp::BezierGpModel loaded = bezgp::load_model(model_path);
  for (double x0 : {-1.5, 0.0, 1.5}) {
    Eigen::VectorXd x(2);
    x << x0, 5.0;
    const bezgp::Prediction p = bezgp::predict_y(loaded, x);
    std::cout << "f(" << x0 << ", 5) = " << p.mean << "  (truth " << x0 * x0 + 1.5
              << ", predictive sd " << std::sqrt(p.y_var) << ")\n";
  }
  return 0;
}
