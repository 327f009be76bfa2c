#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmoe/bias.hpp"
#include "bmoe/lp.hpp"
#include "bmoe/synth.hpp"

namespace bmoe::eval {

struct CurvePoint {
    double d_t = 0.0;
    double realized_cost = 0.0;
    double performance = 0.0;
};

// Performance against target cost for one method; points sorted by d_t.
struct RateCurve {
    std::string method;
    std::vector<CurvePoint> points;
    double d_min = 0.0;
    double d_max = 0.0;
    double rho = 0.0;
};

// Trapezoidal area under performance over normalized cost
// t = (d_t - d_min) / (d_max - d_min). Needs >= 2 points and endpoints at
// d_min and d_max.
double rho(const RateCurve& curve);

struct ExpertPoint {
    double d = 0.0;
    double performance = 0.0;
};

// Each expert standalone on the test split; these anchor the benchmark curve.
std::vector<ExpertPoint> single_expert_baseline(const std::vector<synth::ExpertSpec>& experts,
                                                const synth::Dataset& ds);

// Piecewise-linear interpolation between expert points; exact at the points.
double interpolate_performance(const std::vector<ExpertPoint>& points, double d_t);

struct RandomBaseline {
    double mean = 0.0;
    double sd = 0.0;
    double realized_cost = 0.0;  // averaged over trials
    std::vector<double> per_trial;
};

// Routes every test input to expert n with probability b_n, seeded, repeated
// over trials.
RandomBaseline random_selection_baseline(const std::vector<synth::ExpertSpec>& experts,
                                         const synth::Dataset& ds, const bias::BiasVector& b,
                                         std::uint64_t seed, std::size_t trials);

// ||u - b||_1 with u computed from soft gates over the test split.
double utility_deviation(const bias::MixtureModel& model, const synth::Dataset& ds);

// Default target grid clipped to the feasible cost interval.
std::vector<double> auto_targets(double d_min, double d_max);

struct SweepConfig {
    std::vector<std::string> methods = {"bias_enforcement", "soft_regularization",
                                        "random_selection", "single_expert"};
    std::vector<double> targets;  // empty = auto grid
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<double> w_bias_grid = {0.1, 0.5, 1.0, 5.0};
    // Held-out deviation gate for picking w_bias; candidates over the gate
    // fall back to minimum deviation.
    double w_bias_deviation_gate = 0.05;
    // Enforcement restarts per cell, selected by val accuracy. Batchwise
    // ranking can lock into a poor routing from an unlucky start; restarts
    // give it the same candidate pool the w_bias grid gives the soft method.
    std::size_t enforcement_restarts = 4;
    nn::TrainConfig mixture_train{128, 0.05, 1200, 0};
    std::vector<std::size_t> gating_hidden = {16};
    std::size_t random_trials = 20;
    std::size_t jobs = 1;
};

// One results row: a (method, target, seed) measurement plus report extras.
struct SweepCell {
    std::string method;
    double d_t = 0.0;
    double realized_cost = 0.0;
    double performance = 0.0;
    std::uint64_t seed = 0;
    double performance_sd = 0.0;  // random_selection only: spread over trials
    // extras (trained methods only; NaN elsewhere)
    double alt_performance = 0.0;
    double alt_realized_cost = 0.0;
    double mean_gate_scale = 0.0;
    double utility_dev = 0.0;
    double w_bias = 0.0;
};

struct MethodSummary {
    std::string method;
    RateCurve mean_curve;            // seed-mean performance per target
    std::vector<double> rho_per_seed;
    double rho_mean = 0.0;
};

struct EvalReport {
    std::string task;
    std::vector<std::uint64_t> seeds;
    double d_min = 0.0;
    double d_max = 0.0;
    std::vector<double> targets;
    std::vector<double> skipped_targets;
    std::vector<ExpertPoint> expert_points;
    std::vector<bias::BiasVector> target_biases;  // aligned with targets
    std::vector<SweepCell> cells;
    std::vector<MethodSummary> methods;
};

// Full protocol: solve b per target, train mixtures per (method, target,
// seed), run baselines, aggregate curves. Cells run in parallel when
// cfg.jobs > 1; output is independent of the schedule.
EvalReport run_sweep(const synth::Dataset& ds, const std::vector<synth::ExpertSpec>& experts,
                     const SweepConfig& cfg);

// CSV: method, d_t_bytes, realized_cost_bytes, performance, seed
std::string results_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);

}  // namespace bmoe::eval
