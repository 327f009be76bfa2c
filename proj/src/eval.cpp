#include "bmoe/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "bmoe/gating.hpp"
#include "bmoe/rng.hpp"

namespace bmoe::eval {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Per-cell seed streams, mixed with (base seed, target index).
constexpr std::uint64_t kEnforcementStream = 1;
constexpr std::uint64_t kSoftStream = 2;
constexpr std::uint64_t kRandomStream = 3;

std::vector<std::vector<double>> gather_x(const synth::Dataset& ds,
                                          const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> xs;
    xs.reserve(idx.size());
    for (std::size_t i : idx) xs.push_back(ds.examples[i].x);
    return xs;
}

std::vector<std::size_t> gather_y(const synth::Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> ys;
    ys.reserve(idx.size());
    for (std::size_t i : idx) ys.push_back(ds.examples[i].y);
    return ys;
}

std::size_t argmax_row(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

struct MixtureEval {
    double accuracy = 0.0;
    double realized_cost = 0.0;
    double mean_gate_scale = 0.0;
};

MixtureEval eval_mixture(const bias::MixtureModel& model,
                         const std::vector<std::vector<double>>& xs,
                         const std::vector<std::size_t>& ys, bias::Routing routing) {
    const auto fwd = bias::mixture_forward(model, xs, routing);
    MixtureEval out;
    double scale = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (argmax_row(fwd.outputs[i]) == ys[i]) ++correct;
        scale += fwd.gate_scale[i];
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(xs.size());
    out.realized_cost = fwd.realized_cost;
    out.mean_gate_scale = scale / static_cast<double>(xs.size());
    return out;
}

double deviation_on(const bias::MixtureModel& model, const std::vector<std::vector<double>>& xs) {
    gating::GateBatch batch;
    batch.rows.reserve(xs.size());
    for (const auto& x : xs)
        batch.rows.push_back(gating::soft_gate(nn::forward(model.gating_net, x)));
    const auto u = gating::utility(batch);
    double dev = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dev += std::abs(u.u[i] - model.bias.b[i]);
    return dev;
}

}  // namespace

double rho(const RateCurve& curve) {
    if (curve.points.size() < 2)
        throw std::invalid_argument("rho needs at least two curve points");
    if (!(curve.d_max > curve.d_min))
        throw std::invalid_argument("rho needs d_max > d_min");
    auto pts = curve.points;
    std::sort(pts.begin(), pts.end(),
              [](const CurvePoint& a, const CurvePoint& b) { return a.d_t < b.d_t; });
    const double span = curve.d_max - curve.d_min;
    const double tol = 1e-9 * std::max(1.0, std::abs(curve.d_max));
    if (std::abs(pts.front().d_t - curve.d_min) > tol ||
        std::abs(pts.back().d_t - curve.d_max) > tol)
        throw std::invalid_argument("rho needs curve points at both cost endpoints");

    double area = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double t0 = (pts[i].d_t - curve.d_min) / span;
        const double t1 = (pts[i + 1].d_t - curve.d_min) / span;
        area += 0.5 * (pts[i].performance + pts[i + 1].performance) * (t1 - t0);
    }
    return area;
}

std::vector<ExpertPoint> single_expert_baseline(const std::vector<synth::ExpertSpec>& experts,
                                                const synth::Dataset& ds) {
    if (experts.empty()) throw std::invalid_argument("no experts given");
    std::vector<ExpertPoint> pts;
    pts.reserve(experts.size());
    for (const auto& e : experts)
        pts.push_back({static_cast<double>(e.data_cost_bytes),
                       synth::expert_accuracy(e, ds, ds.splits.test)});
    std::sort(pts.begin(), pts.end(),
              [](const ExpertPoint& a, const ExpertPoint& b) { return a.d < b.d; });
    return pts;
}

double interpolate_performance(const std::vector<ExpertPoint>& points, double d_t) {
    if (points.empty()) throw std::invalid_argument("no expert points to interpolate");
    auto pts = points;
    std::sort(pts.begin(), pts.end(),
              [](const ExpertPoint& a, const ExpertPoint& b) { return a.d < b.d; });
    const double tol = 1e-9 * std::max(1.0, std::abs(pts.back().d));
    if (d_t < pts.front().d - tol || d_t > pts.back().d + tol)
        throw std::invalid_argument("interpolation target outside the expert cost range");
    const double x = std::clamp(d_t, pts.front().d, pts.back().d);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (x > pts[i + 1].d) continue;
        const double w = pts[i + 1].d - pts[i].d;
        if (w <= 0.0) continue;
        const double lam = (x - pts[i].d) / w;
        return (1.0 - lam) * pts[i].performance + lam * pts[i + 1].performance;
    }
    return pts.back().performance;
}

RandomBaseline random_selection_baseline(const std::vector<synth::ExpertSpec>& experts,
                                         const synth::Dataset& ds, const bias::BiasVector& b,
                                         std::uint64_t seed, std::size_t trials) {
    bias::validate(b);
    if (b.size() != experts.size())
        throw std::invalid_argument("bias length does not match expert count");
    if (trials == 0) throw std::invalid_argument("need at least one trial");
    if (ds.splits.test.empty()) throw std::invalid_argument("empty test split");

    const auto xs = gather_x(ds, ds.splits.test);
    const auto ys = gather_y(ds, ds.splits.test);
    const std::size_t m = xs.size();

    // Preprocessed views and logits are recomputed per selection; the test
    // split is small enough that caching per expert is not worth the memory.
    std::mt19937_64 g(rng::mix(seed, 0xB5));
    RandomBaseline out;
    out.per_trial.reserve(trials);
    double cost_total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double u = rng::uniform01(g);
            std::size_t sel = experts.size() - 1;
            double cum = 0.0;
            for (std::size_t n = 0; n < experts.size(); ++n) {
                cum += b.b[n];
                if (u < cum) {
                    sel = n;
                    break;
                }
            }
            const auto& e = experts[sel];
            const auto logits = nn::forward(e.net, synth::preprocess(e.preprocess, xs[i]));
            if (argmax_row(logits) == ys[i]) ++correct;
            cost_total += static_cast<double>(e.data_cost_bytes);
        }
        out.per_trial.push_back(static_cast<double>(correct) / static_cast<double>(m));
    }

    double sum = 0.0;
    for (double v : out.per_trial) sum += v;
    out.mean = sum / static_cast<double>(trials);
    double ss = 0.0;
    for (double v : out.per_trial) ss += (v - out.mean) * (v - out.mean);
    out.sd = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
    out.realized_cost = cost_total / static_cast<double>(trials * m);
    return out;
}

double utility_deviation(const bias::MixtureModel& model, const synth::Dataset& ds) {
    return deviation_on(model, gather_x(ds, ds.splits.test));
}

std::vector<double> auto_targets(double d_min, double d_max) {
    if (!(d_max > d_min) || !(d_min > 0.0))
        throw std::invalid_argument("need 0 < d_min < d_max for the target grid");
    std::vector<double> raw = {d_max, 0.5 * (d_min + d_max), 0.5 * d_max, d_max / 3.0, d_min};
    std::vector<double> out;
    for (double t : raw) {
        if (t < d_min - 1e-9 || t > d_max + 1e-9) continue;
        t = std::clamp(t, d_min, d_max);
        bool dup = false;
        for (double u : out)
            if (std::abs(u - t) <= 1e-9 * std::max(1.0, d_max)) dup = true;
        if (!dup) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct SweepContext {
    const synth::Dataset* ds = nullptr;
    const std::vector<synth::ExpertSpec>* experts = nullptr;
    const SweepConfig* cfg = nullptr;
    std::vector<std::vector<double>> test_x, val_x;
    std::vector<std::size_t> test_y, val_y;
    std::vector<ExpertPoint> expert_points;
    std::vector<double> targets;
    std::vector<bias::BiasVector> biases;  // aligned with targets
};

bias::MixtureModel make_mixture(const SweepContext& ctx, const bias::BiasVector& b,
                                bias::Method method, std::uint64_t init_seed) {
    bias::MixtureModel model;
    model.experts = *ctx.experts;
    model.bias = b;
    model.method = method;
    std::vector<std::size_t> widths = {ctx.ds->input_dim};
    for (std::size_t w : ctx.cfg->gating_hidden) widths.push_back(w);
    widths.push_back(ctx.experts->size());
    model.gating_net = bias::make_gating_net(widths, init_seed);
    return model;
}

SweepCell run_cell(const SweepContext& ctx, const std::string& method, std::size_t target_idx,
                   std::uint64_t seed) {
    const double d_t = ctx.targets[target_idx];
    const bias::BiasVector& b = ctx.biases[target_idx];
    SweepCell cell;
    cell.method = method;
    cell.d_t = d_t;
    cell.seed = seed;
    cell.alt_performance = kNan;
    cell.alt_realized_cost = kNan;
    cell.mean_gate_scale = kNan;
    cell.utility_dev = kNan;
    cell.w_bias = kNan;

    if (method == "single_expert") {
        cell.performance = interpolate_performance(ctx.expert_points, d_t);
        cell.realized_cost = d_t;
        return cell;
    }
    if (method == "random_selection") {
        const auto base = random_selection_baseline(
            *ctx.experts, *ctx.ds, b, rng::mix(seed, target_idx, kRandomStream),
            ctx.cfg->random_trials);
        cell.performance = base.mean;
        cell.performance_sd = base.sd;
        cell.realized_cost = base.realized_cost;
        return cell;
    }

    if (method == "bias_enforcement") {
        const std::size_t restarts = std::max<std::size_t>(1, ctx.cfg->enforcement_restarts);
        bool have = false;
        bias::TrainResult trained;
        double best_val = 0.0;
        for (std::size_t r = 0; r < restarts; ++r) {
            nn::TrainConfig tc = ctx.cfg->mixture_train;
            tc.seed = rng::mix(rng::mix(seed, target_idx, kEnforcementStream), r);
            auto model = make_mixture(ctx, b, bias::Method::BiasEnforcement, tc.seed);
            auto candidate = bias::train_mixture(model, *ctx.ds, tc, bias::BiasLossConfig{});
            const double val =
                eval_mixture(candidate.model, ctx.val_x, ctx.val_y, bias::Routing::BatchEnforced)
                    .accuracy;
            if (!have || val > best_val) {
                have = true;
                best_val = val;
                trained = std::move(candidate);
            }
        }
        const auto head =
            eval_mixture(trained.model, ctx.test_x, ctx.test_y, bias::Routing::BatchEnforced);
        const auto alt =
            eval_mixture(trained.model, ctx.test_x, ctx.test_y, bias::Routing::PerInputArgmax);
        cell.performance = head.accuracy;
        cell.realized_cost = head.realized_cost;
        cell.mean_gate_scale = head.mean_gate_scale;
        cell.alt_performance = alt.accuracy;
        cell.alt_realized_cost = alt.realized_cost;
        cell.utility_dev = deviation_on(trained.model, ctx.test_x);
        return cell;
    }

    if (method == "soft_regularization") {
        nn::TrainConfig tc = ctx.cfg->mixture_train;
        tc.seed = rng::mix(seed, target_idx, kSoftStream);
        // One run per w_bias from the same initialization; the winner needs
        // val deviation under the gate, then the best val accuracy. If none
        // pass the gate, the closest deviation wins.
        bool have = false;
        bias::TrainResult best;
        double best_w = 0.0, best_dev = 0.0, best_acc = 0.0;
        for (double w : ctx.cfg->w_bias_grid) {
            auto model = make_mixture(ctx, b, bias::Method::SoftRegularization, tc.seed);
            bias::BiasLossConfig lc;
            lc.w_bias = w;
            auto trained = bias::train_mixture(model, *ctx.ds, tc, lc);
            const double dev = deviation_on(trained.model, ctx.val_x);
            const double acc =
                eval_mixture(trained.model, ctx.val_x, ctx.val_y, bias::Routing::PerInputArgmax)
                    .accuracy;
            const bool ok = dev <= ctx.cfg->w_bias_deviation_gate;
            const bool best_ok = have && best_dev <= ctx.cfg->w_bias_deviation_gate;
            bool take = false;
            if (!have) take = true;
            else if (ok && !best_ok) take = true;
            else if (ok && best_ok) take = acc > best_acc;
            else if (!ok && !best_ok) take = dev < best_dev;
            if (take) {
                have = true;
                best = std::move(trained);
                best_w = w;
                best_dev = dev;
                best_acc = acc;
            }
        }
        const auto head =
            eval_mixture(best.model, ctx.test_x, ctx.test_y, bias::Routing::PerInputArgmax);
        const auto alt =
            eval_mixture(best.model, ctx.test_x, ctx.test_y, bias::Routing::BatchEnforced);
        cell.performance = head.accuracy;
        cell.realized_cost = head.realized_cost;
        cell.mean_gate_scale = head.mean_gate_scale;
        cell.alt_performance = alt.accuracy;
        cell.alt_realized_cost = alt.realized_cost;
        cell.utility_dev = deviation_on(best.model, ctx.test_x);
        cell.w_bias = best_w;
        return cell;
    }

    throw std::invalid_argument("unknown method: " + method);
}

}  // namespace

EvalReport run_sweep(const synth::Dataset& ds, const std::vector<synth::ExpertSpec>& experts,
                     const SweepConfig& cfg) {
    if (experts.size() < 2) throw std::invalid_argument("sweep needs at least two experts");
    for (std::size_t i = 0; i < experts.size(); ++i)
        for (std::size_t j = i + 1; j < experts.size(); ++j)
            if (experts[i].data_cost_bytes == experts[j].data_cost_bytes)
                throw std::invalid_argument("expert costs must be distinct");
    if (cfg.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
    if (cfg.methods.empty()) throw std::invalid_argument("sweep needs at least one method");

    SweepContext ctx;
    ctx.ds = &ds;
    ctx.experts = &experts;
    ctx.cfg = &cfg;
    ctx.test_x = gather_x(ds, ds.splits.test);
    ctx.test_y = gather_y(ds, ds.splits.test);
    ctx.val_x = gather_x(ds, ds.splits.val);
    ctx.val_y = gather_y(ds, ds.splits.val);
    ctx.expert_points = single_expert_baseline(experts, ds);

    lp::CostVector d;
    lp::PerfVector p_val;
    for (const auto& e : experts) {
        d.d.push_back(static_cast<double>(e.data_cost_bytes));
        p_val.p.push_back(e.val_performance);
    }

    EvalReport report;
    report.task = ds.config.task;
    report.seeds = cfg.seeds;
    report.d_min = *std::min_element(d.d.begin(), d.d.end());
    report.d_max = *std::max_element(d.d.begin(), d.d.end());
    report.expert_points = ctx.expert_points;

    const std::vector<double> wanted =
        cfg.targets.empty() ? auto_targets(report.d_min, report.d_max) : cfg.targets;
    for (double t : wanted) {
        const auto sol = lp::solve_for_cost(d, p_val, t);
        if (sol.status != lp::LPStatus::Optimal) {
            report.skipped_targets.push_back(t);
            continue;
        }
        ctx.targets.push_back(t);
        ctx.biases.push_back(sol.b);
    }
    report.targets = ctx.targets;
    report.target_biases = ctx.biases;
    if (ctx.targets.empty())
        throw std::invalid_argument("no feasible targets in the requested sweep");

    // Deterministic slot layout: method-major, then target, then seed.
    struct Job {
        std::string method;
        std::size_t target_idx;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& method : cfg.methods)
        for (std::size_t ti = 0; ti < ctx.targets.size(); ++ti)
            for (std::uint64_t seed : cfg.seeds) jobs.push_back({method, ti, seed});

    report.cells.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const std::size_t n_threads = std::max<std::size_t>(1, cfg.jobs);
    const auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                report.cells[i] = run_cell(ctx, jobs[i].method, jobs[i].target_idx, jobs[i].seed);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    // Seed-mean curves and rho per seed. rho is defined only when the target
    // grid spans both cost endpoints.
    const double tol = 1e-9 * std::max(1.0, report.d_max);
    const bool endpoints =
        std::any_of(ctx.targets.begin(), ctx.targets.end(),
                    [&](double t) { return std::abs(t - report.d_min) <= tol; }) &&
        std::any_of(ctx.targets.begin(), ctx.targets.end(),
                    [&](double t) { return std::abs(t - report.d_max) <= tol; });
    for (const auto& method : cfg.methods) {
        MethodSummary ms;
        ms.method = method;
        ms.mean_curve.method = method;
        ms.mean_curve.d_min = report.d_min;
        ms.mean_curve.d_max = report.d_max;
        for (std::size_t ti = 0; ti < ctx.targets.size(); ++ti) {
            CurvePoint pt;
            pt.d_t = ctx.targets[ti];
            double perf = 0.0, cost = 0.0;
            std::size_t count = 0;
            for (const auto& cell : report.cells) {
                if (cell.method != method || cell.d_t != ctx.targets[ti]) continue;
                perf += cell.performance;
                cost += cell.realized_cost;
                ++count;
            }
            pt.performance = perf / static_cast<double>(count);
            pt.realized_cost = cost / static_cast<double>(count);
            ms.mean_curve.points.push_back(pt);
        }
        if (endpoints) {
            for (std::uint64_t seed : cfg.seeds) {
                RateCurve rc;
                rc.method = method;
                rc.d_min = report.d_min;
                rc.d_max = report.d_max;
                for (const auto& cell : report.cells) {
                    if (cell.method != method || cell.seed != seed) continue;
                    rc.points.push_back({cell.d_t, cell.realized_cost, cell.performance});
                }
                ms.rho_per_seed.push_back(rho(rc));
            }
            double sum = 0.0;
            for (double r : ms.rho_per_seed) sum += r;
            ms.rho_mean = sum / static_cast<double>(ms.rho_per_seed.size());
            ms.mean_curve.rho = rho(ms.mean_curve);
        } else {
            ms.rho_mean = kNan;
            ms.mean_curve.rho = kNan;
        }
        report.methods.push_back(std::move(ms));
    }
    return report;
}

std::string results_csv(const EvalReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "method,d_t_bytes,realized_cost_bytes,performance,seed\n";
    for (const auto& cell : report.cells)
        out << cell.method << ',' << cell.d_t << ',' << cell.realized_cost << ','
            << cell.performance << ',' << cell.seed << '\n';
    return out.str();
}

std::string report_json(const EvalReport& report) {
    nlohmann::json j;
    j["task"] = report.task;
    j["seeds"] = report.seeds;
    j["d_min_bytes"] = report.d_min;
    j["d_max_bytes"] = report.d_max;
    j["targets"] = report.targets;
    j["skipped_targets"] = report.skipped_targets;
    j["experts"] = nlohmann::json::array();
    for (const auto& pt : report.expert_points)
        j["experts"].push_back({{"cost_bytes", pt.d}, {"performance", pt.performance}});
    j["target_biases"] = nlohmann::json::array();
    for (const auto& b : report.target_biases) j["target_biases"].push_back(b.b);
    j["methods"] = nlohmann::json::array();
    for (const auto& ms : report.methods) {
        nlohmann::json m;
        m["method"] = ms.method;
        m["rho_mean"] = ms.rho_mean;
        m["rho_per_seed"] = ms.rho_per_seed;
        m["curve"] = nlohmann::json::array();
        for (const auto& pt : ms.mean_curve.points)
            m["curve"].push_back({{"d_t_bytes", pt.d_t},
                                  {"realized_cost_bytes", pt.realized_cost},
                                  {"performance", pt.performance}});
        j["methods"].push_back(std::move(m));
    }
    j["cells"] = nlohmann::json::array();
    for (const auto& cell : report.cells) {
        nlohmann::json c;
        c["method"] = cell.method;
        c["d_t_bytes"] = cell.d_t;
        c["realized_cost_bytes"] = cell.realized_cost;
        c["performance"] = cell.performance;
        c["seed"] = cell.seed;
        c["performance_sd"] = cell.performance_sd;
        c["alt_performance"] = cell.alt_performance;
        c["alt_realized_cost"] = cell.alt_realized_cost;
        c["mean_gate_scale"] = cell.mean_gate_scale;
        c["utility_dev"] = cell.utility_dev;
        c["w_bias"] = cell.w_bias;
        j["cells"].push_back(std::move(c));
    }
    return j.dump(2);
}

}  // namespace bmoe::eval
