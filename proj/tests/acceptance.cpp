// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the process exits 0 only if every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bmoe/bias.hpp"
#include "bmoe/eval.hpp"
#include "bmoe/gating.hpp"
#include "bmoe/lp.hpp"
#include "bmoe/nn.hpp"
#include "bmoe/rng.hpp"
#include "bmoe/synth.hpp"

using namespace bmoe;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point start) {
    return std::chrono::duration<double>(clock_type::now() - start).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

bias::BiasVector bvec(std::vector<double> b) {
    bias::BiasVector out;
    out.b = std::move(b);
    return out;
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

// ---- criterion 1: grid oracle and duality round trip ----------------------

Outcome lp_against_oracle() {
    const auto start = clock_type::now();
    std::mt19937_64 g(rng::mix(2024, 1));
    const double h = 0.005;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng::below(g, 4));
        lp::CostVector d;
        lp::PerfVector p;
        double p_lo = 1.0, p_hi = 0.0, d_lo = 1e300, d_hi = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d.d.push_back(rng::uniform(g, 1.0, 1000.0));
            p.p.push_back(rng::uniform(g, 0.05, 1.0));
            p_lo = std::min(p_lo, p.p.back());
            p_hi = std::max(p_hi, p.p.back());
            d_lo = std::min(d_lo, d.d.back());
            d_hi = std::max(d_hi, d.d.back());
        }
        const double d_t = rng::uniform(g, d_lo, d_hi);

        const auto exact = lp::solve_for_cost(d, p, d_t);
        if (exact.status != lp::LPStatus::Optimal)
            return {false, "solver infeasible on a feasible target, trial " +
                               std::to_string(trial)};
        const auto brute = lp::brute_force_solve(d, p, d_t, lp::TargetMode::Cost, h);
        if (brute.status != lp::LPStatus::Optimal)
            return {false, "oracle infeasible on a feasible target, trial " +
                               std::to_string(trial)};
        const double gap = std::abs(exact.objective_value - brute.objective_value);
        const double allowed = 2.0 * h * (p_hi - p_lo) + 1e-12;
        if (gap > allowed)
            return {false, "objective gap " + fmt(gap) + " exceeds " + fmt(allowed) +
                               " on trial " + std::to_string(trial)};

        const auto back = lp::solve_for_perf(d, p, exact.objective_value);
        if (back.status != lp::LPStatus::Optimal)
            return {false, "round trip infeasible on trial " + std::to_string(trial)};
        if (back.objective_value > d_t + 1e-6)
            return {false, "round trip cost " + fmt(back.objective_value) +
                               " exceeds budget " + fmt(d_t)};
    }
    const double t = seconds_since(start);
    if (t >= 30.0) return {false, "took " + fmt(t) + "s, budget 30s"};
    return {true, "200 instances within 2h*range(p) of the grid oracle, " + fmt(t) + "s"};
}

// ---- criterion 2: enforcement counts ---------------------------------------

Outcome enforcement_counts() {
    const auto start = clock_type::now();
    const auto fixed = bias::bias_counts(4, bvec({0.50, 0.25, 0.25}));
    if (fixed != std::vector<std::size_t>{2, 1, 1})
        return {false, "counts for M=4, b=(0.50,0.25,0.25) came out wrong"};

    std::mt19937_64 g(rng::mix(2024, 2));
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 4 + static_cast<std::size_t>(rng::below(g, 253));
        const std::size_t n = 2 + static_cast<std::size_t>(rng::below(g, 4));
        gating::GateBatch batch;
        batch.rows.reserve(m);
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> logits(n);
            for (auto& v : logits) v = rng::uniform(g, -3.0, 3.0);
            batch.rows.push_back(gating::soft_gate(logits));
        }
        std::vector<double> raw(n);
        double sum = 0.0;
        for (auto& v : raw) {
            v = rng::uniform(g, 0.02, 1.0);
            sum += v;
        }
        for (auto& v : raw) v /= sum;
        const auto b = bvec(raw);

        const auto res = bias::enforce_bias(batch, b);
        const auto want = bias::bias_counts(m, b);
        std::vector<std::size_t> got(n, 0);
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t nonzero = 0;
            for (double v : res.masked.rows[i].values)
                if (v != 0.0) ++nonzero;
            if (nonzero != 1)
                return {false, "row with " + std::to_string(nonzero) +
                                   " nonzero gates on trial " + std::to_string(trial)};
            got[res.assignment[i]] += 1;
        }
        if (got != want)
            return {false, "assignment counts drifted from the rounded bias on trial " +
                               std::to_string(trial)};
    }
    const double t = seconds_since(start);
    if (t >= 10.0) return {false, "took " + fmt(t) + "s, budget 10s"};
    return {true, "1000 batches match the rounded counts with one expert per row, " +
                      fmt(t) + "s"};
}

// ---- criterion 3: gradients against finite differences ---------------------

struct FdConfig {
    bias::MixtureModel model;
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ys;
    bias::BiasLossConfig loss;
};

std::vector<std::size_t> selection(const bias::MixtureModel& model,
                                   const std::vector<std::vector<double>>& xs) {
    const auto routing = model.method == bias::Method::BiasEnforcement
                             ? bias::Routing::BatchEnforced
                             : bias::Routing::PerInputArgmax;
    return bias::mixture_forward(model, xs, routing).assignment;
}

FdConfig make_fd_config(std::uint64_t id) {
    std::mt19937_64 g(rng::mix(2024, rng::mix(3, id)));
    FdConfig cfg;
    const std::size_t n_classes = 3;
    const std::size_t n_experts = 2 + static_cast<std::size_t>(rng::below(g, 2));
    for (std::size_t k = 0; k < n_experts; ++k) {
        synth::ExpertSpec e;
        e.id = static_cast<int>(k);
        e.preprocess.kind = synth::PreprocessSpec::Kind::FeatureMask;
        e.preprocess.features = (k % 2 == 0) ? std::vector<std::size_t>{0}
                                             : std::vector<std::size_t>{0, 1};
        e.preprocess.bytes_per_value = 4 * (k + 1);
        e.data_cost_bytes = synth::cost_bytes(e.preprocess);
        e.net = nn::make_dense_net({e.preprocess.features.size(), n_classes}, g());
        cfg.model.experts.push_back(std::move(e));
    }
    cfg.model.gating_net = nn::make_dense_net({2, 4, n_experts}, g());
    std::vector<double> raw(n_experts);
    double sum = 0.0;
    for (auto& v : raw) {
        v = rng::uniform(g, 0.2, 1.0);
        sum += v;
    }
    for (auto& v : raw) v /= sum;
    cfg.model.bias = bvec(raw);
    cfg.model.method = (id % 2 == 0) ? bias::Method::SoftRegularization
                                     : bias::Method::BiasEnforcement;
    const std::size_t m = 3 + static_cast<std::size_t>(rng::below(g, 4));
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> x(2);
        for (auto& v : x) v = rng::uniform(g, -2.0, 2.0);
        cfg.xs.push_back(std::move(x));
        cfg.ys.push_back(static_cast<std::size_t>(rng::below(g, n_classes)));
    }
    cfg.loss.w_bias = rng::uniform(g, 0.2, 2.0);
    return cfg;
}

Outcome gradients_match_fd() {
    const auto start = clock_type::now();
    const double h = 1e-6;
    std::size_t done = 0;
    std::uint64_t candidate = 0;
    std::size_t resampled = 0;
    while (done < 50) {
        if (candidate > 400)
            return {false, "could not find 50 selection-stable configurations"};
        FdConfig cfg = make_fd_config(candidate++);
        const auto base_sel = selection(cfg.model, cfg.xs);
        const auto base = bias::mixture_batch_gradient(cfg.model, cfg.xs, cfg.ys, cfg.loss);

        bool stable = true;
        for (std::size_t layer = 0; layer < cfg.model.gating_net.layers.size() && stable;
             ++layer) {
            auto& L = cfg.model.gating_net.layers[layer];
            const std::size_t nw = L.w.data.size();
            for (std::size_t idx = 0; idx < nw + L.b.size(); ++idx) {
                double* slot = idx < nw ? &L.w.data[idx] : &L.b[idx - nw];
                const double saved = *slot;
                *slot = saved + h;
                if (selection(cfg.model, cfg.xs) != base_sel) {
                    *slot = saved;
                    stable = false;
                    break;
                }
                const auto up = bias::mixture_batch_gradient(cfg.model, cfg.xs, cfg.ys, cfg.loss);
                *slot = saved - h;
                if (selection(cfg.model, cfg.xs) != base_sel) {
                    *slot = saved;
                    stable = false;
                    break;
                }
                const auto dn = bias::mixture_batch_gradient(cfg.model, cfg.xs, cfg.ys, cfg.loss);
                *slot = saved;

                const double numeric = (up.total_loss - dn.total_loss) / (2.0 * h);
                const double analytic = idx < nw
                                            ? base.gating_grads.layers[layer].w.data[idx]
                                            : base.gating_grads.layers[layer].b[idx - nw];
                const double scale = std::max(std::abs(numeric), std::abs(analytic));
                const double err = std::abs(numeric - analytic);
                if (err > 1e-4 * scale && err > 1e-9)
                    return {false, "gradient mismatch " + fmt(err) + " (scale " + fmt(scale) +
                                       ") in config " + std::to_string(candidate - 1)};
            }
        }
        if (!stable) {
            ++resampled;
            continue;
        }
        ++done;
    }
    const double t = seconds_since(start);
    if (t >= 60.0) return {false, "took " + fmt(t) + "s, budget 60s"};
    return {true, "50 configurations agree with central differences (resampled " +
                      std::to_string(resampled) + "), " + fmt(t) + "s"};
}

// ---- shared benchmark setup for criteria 4 through 7 -----------------------

struct Bench {
    synth::Dataset ds;
    std::vector<synth::ExpertSpec> experts;
    eval::EvalReport report;
    double sweep_seconds = 0.0;
};

const eval::MethodSummary& summary_of(const eval::EvalReport& report, const std::string& name) {
    for (const auto& m : report.methods)
        if (m.method == name) return m;
    throw std::runtime_error("method missing from report: " + name);
}

Bench run_benchmark() {
    Bench b;
    b.ds = synth::gen_feature_task(6, 2000, 11);
    for (std::size_t k = 0; k < 2; ++k) {
        synth::PreprocessSpec spec;
        spec.kind = synth::PreprocessSpec::Kind::FeatureMask;
        spec.features = (k == 0) ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, 1};
        nn::TrainConfig tc;
        tc.batch_size = 128;
        tc.learning_rate = 0.05;
        tc.steps = 2500;
        tc.seed = rng::mix(11, k);
        auto e = synth::train_expert(b.ds, spec, {32}, tc);
        e.id = static_cast<int>(k);
        b.experts.push_back(std::move(e));
    }
    eval::SweepConfig cfg;
    const unsigned hw = std::thread::hardware_concurrency();
    cfg.jobs = std::min<std::size_t>(hw == 0 ? 1 : hw, 10);
    const auto start = clock_type::now();
    b.report = eval::run_sweep(b.ds, b.experts, cfg);
    b.sweep_seconds = seconds_since(start);
    return b;
}

Outcome enforcement_beats_random(const Bench& b) {
    const auto start = clock_type::now();
    const double mid = 0.5 * (b.report.d_min + b.report.d_max);
    const auto& enf = summary_of(b.report, "bias_enforcement").mean_curve;
    const auto& rnd = summary_of(b.report, "random_selection").mean_curve;
    double enf_mid = -1.0, rnd_mid = -1.0;
    for (const auto& pt : enf.points)
        if (std::abs(pt.d_t - mid) < 1e-9) enf_mid = pt.performance;
    for (const auto& pt : rnd.points)
        if (std::abs(pt.d_t - mid) < 1e-9) rnd_mid = pt.performance;
    if (enf_mid < 0.0 || rnd_mid < 0.0)
        return {false, "midpoint target missing from the sweep grid"};
    const double total = b.sweep_seconds + seconds_since(start);
    if (total >= 300.0) return {false, "took " + fmt(total) + "s, budget 300s"};
    if (enf_mid < rnd_mid + 0.02)
        return {false, "enforcement " + fmt(enf_mid) + " vs random " + fmt(rnd_mid) +
                           " misses the 0.02 margin"};
    return {true, "midpoint accuracy " + fmt(enf_mid) + " vs random " + fmt(rnd_mid) +
                      " (sweep " + fmt(b.sweep_seconds) + "s)"};
}

Outcome rho_ordering(const Bench& b) {
    const double enf = summary_of(b.report, "bias_enforcement").rho_mean;
    const double soft = summary_of(b.report, "soft_regularization").rho_mean;
    const double rnd = summary_of(b.report, "random_selection").rho_mean;
    if (!(enf >= soft - 0.005))
        return {false, "enforcement rho " + fmt(enf) + " below soft rho " + fmt(soft)};
    if (!(soft >= rnd - 0.005))
        return {false, "soft rho " + fmt(soft) + " below random rho " + fmt(rnd)};
    return {true, "rho enforcement " + fmt(enf) + " >= soft " + fmt(soft) + " >= random " +
                      fmt(rnd)};
}

Outcome endpoints_match_experts(const Bench& b) {
    for (const auto& ms : b.report.methods) {
        for (double endpoint : {b.report.d_min, b.report.d_max}) {
            const double standalone =
                eval::interpolate_performance(b.report.expert_points, endpoint);
            double got = -1.0;
            for (const auto& pt : ms.mean_curve.points)
                if (std::abs(pt.d_t - endpoint) < 1e-9) got = pt.performance;
            if (got < 0.0)
                return {false, ms.method + " is missing the endpoint target " + fmt(endpoint)};
            if (std::abs(got - standalone) > 0.01)
                return {false, ms.method + " at " + fmt(endpoint) + " bytes scored " +
                                   fmt(got) + ", expert alone " + fmt(standalone)};
        }
    }
    return {true, "all methods within 0.01 of the lone expert at both endpoints"};
}

Outcome soft_hits_even_split(const Bench& b) {
    const auto start = clock_type::now();
    double worst = 0.0;
    for (double w : {1.0, 5.0}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            bias::MixtureModel model;
            model.experts = b.experts;
            model.gating_net =
                bias::make_gating_net({2, 16, 2}, rng::mix(seed, 0x51));
            model.bias = bvec({0.5, 0.5});
            model.method = bias::Method::SoftRegularization;
            nn::TrainConfig tc;
            tc.batch_size = 128;
            tc.learning_rate = 0.05;
            tc.steps = 1200;
            tc.seed = rng::mix(seed, 0x52);
            bias::BiasLossConfig loss;
            loss.w_bias = w;
            const auto trained = bias::train_mixture(model, b.ds, tc, loss);
            const double dev = eval::utility_deviation(trained.model, b.ds);
            worst = std::max(worst, dev);
            if (dev > 0.15)
                return {false, "w=" + fmt(w) + " seed " + std::to_string(seed) +
                                   " deviates " + fmt(dev) + " from the even split"};
        }
    }
    return {true, "worst utility deviation " + fmt(worst) + " across 10 runs, " +
                      fmt(seconds_since(start)) + "s"};
}

// ---- criterion 8: exact average cost ---------------------------------------

Outcome exact_average_cost() {
    const std::size_t K = 4;
    lp::CostVector d;
    for (std::size_t R : {std::size_t{100}, std::size_t{150}, std::size_t{300}})
        d.d.push_back(static_cast<double>(3 * R * R * K));
    const auto b = bvec({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    const double got = lp::average_cost(b, d);
    if (got != 490000.0)
        return {false, "average cost came out " + fmt(got) + " instead of 490000 exactly"};
    return {true, "uniform mix over the three image streams costs exactly 490000 bytes"};
}

// ---- criterion 9: exact rate curve areas -----------------------------------

Outcome exact_rho_examples() {
    auto curve = [](std::vector<std::pair<double, double>> pts) {
        eval::RateCurve c;
        c.d_min = 100.0;
        c.d_max = 300.0;
        for (const auto& [d, p] : pts) c.points.push_back({d, d, p});
        return c;
    };
    const double flat = eval::rho(curve({{100.0, 0.8}, {300.0, 0.8}}));
    const double ramp = eval::rho(curve({{100.0, 0.6}, {300.0, 0.8}}));
    const double kink = eval::rho(curve({{100.0, 0.6}, {200.0, 0.8}, {300.0, 0.8}}));
    if (std::abs(flat - 0.8) > 1e-12)
        return {false, "constant curve gave " + fmt(flat)};
    if (std::abs(ramp - 0.7) > 1e-12)
        return {false, "linear curve gave " + fmt(ramp)};
    if (std::abs(kink - 0.75) > 1e-12)
        return {false, "kinked curve gave " + fmt(kink)};
    return {true, "0.8, 0.7 and 0.75 reproduced to 1e-12"};
}

}  // namespace

int main() {
    struct Entry {
        int number;
        const char* label;
        Outcome outcome;
    };
    std::vector<Entry> entries;

    auto guard = [](auto&& fn) -> Outcome {
        try {
            return fn();
        } catch (const std::exception& e) {
            return {false, std::string("exception: ") + e.what()};
        }
    };

    entries.push_back({1, "grid oracle agreement", guard(lp_against_oracle)});
    entries.push_back({2, "enforcement counts", guard(enforcement_counts)});
    entries.push_back({3, "gradient check", guard(gradients_match_fd)});

    bool bench_ok = true;
    Bench bench;
    try {
        bench = run_benchmark();
    } catch (const std::exception& e) {
        bench_ok = false;
        const std::string why = std::string("benchmark setup failed: ") + e.what();
        entries.push_back({4, "enforcement vs random", {false, why}});
        entries.push_back({5, "rho ordering", {false, why}});
        entries.push_back({6, "endpoint parity", {false, why}});
        entries.push_back({7, "even split deviation", {false, why}});
    }
    if (bench_ok) {
        entries.push_back(
            {4, "enforcement vs random", guard([&] { return enforcement_beats_random(bench); })});
        entries.push_back({5, "rho ordering", guard([&] { return rho_ordering(bench); })});
        entries.push_back(
            {6, "endpoint parity", guard([&] { return endpoints_match_experts(bench); })});
        entries.push_back(
            {7, "even split deviation", guard([&] { return soft_hits_even_split(bench); })});
    }

    entries.push_back({8, "exact average cost", guard(exact_average_cost)});
    entries.push_back({9, "exact rate areas", guard(exact_rho_examples)});

    bool all = true;
    for (const auto& e : entries) {
        all = all && e.outcome.pass;
        std::printf("%s criterion %d: %s - %s\n", e.outcome.pass ? "PASS" : "FAIL", e.number,
                    e.label, e.outcome.detail.c_str());
    }
    return all ? 0 : 1;
}
