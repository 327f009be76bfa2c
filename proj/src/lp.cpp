#include "bmoe/lp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace bmoe::lp {

namespace {

constexpr double kPivotTol = 1e-10;
constexpr double kEqualityTol = 1e-8;  // equality handled as two inequalities
constexpr std::size_t kMaxPivots = 10000;

void check_instance(const CostVector& d, const PerfVector& p) {
    if (d.d.empty() || d.d.size() != p.p.size())
        throw std::invalid_argument("cost and performance vectors must be nonempty and equal-length");
    for (double v : d.d)
        if (!(v > 0.0) || !std::isfinite(v))
            throw std::invalid_argument("costs must be positive and finite");
    for (double v : p.p)
        if (!std::isfinite(v)) throw std::invalid_argument("performances must be finite");
}

struct Candidate {
    std::vector<double> b;
    double objective = 0.0;
    double cost = 0.0;
};

// Vertices of {b in simplex, b.eq = target}: single experts matching the
// target, and two-expert blends. The optimum of a linear objective over that
// polytope is always among these.
std::vector<Candidate> vertex_candidates(const std::vector<double>& eq,
                                         const std::vector<double>& obj,
                                         const std::vector<double>& cost, double target) {
    const std::size_t n = eq.size();
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(eq[i] - target) <= kEqualityTol + 1e-12 * std::abs(target)) {
            Candidate c;
            c.b.assign(n, 0.0);
            c.b[i] = 1.0;
            c.objective = obj[i];
            c.cost = cost[i];
            out.push_back(std::move(c));
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double delta = eq[i] - eq[j];
            if (delta == 0.0) continue;  // blends add nothing over the singles
            double lam = (target - eq[j]) / delta;
            if (lam < -1e-12 || lam > 1.0 + 1e-12) continue;
            lam = std::clamp(lam, 0.0, 1.0);
            Candidate c;
            c.b.assign(n, 0.0);
            c.b[i] = lam;
            c.b[j] = 1.0 - lam;
            c.objective = lam * obj[i] + (1.0 - lam) * obj[j];
            c.cost = lam * cost[i] + (1.0 - lam) * cost[j];
            out.push_back(std::move(c));
        }
    return out;
}

// Tie-breaking: best objective, then lower b.d, then smallest b in
// lexicographic order.
Candidate pick_candidate(std::vector<Candidate>& cands, bool maximize) {
    double best = maximize ? -std::numeric_limits<double>::infinity()
                           : std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = maximize ? std::max(best, c.objective)
                                                : std::min(best, c.objective);
    const double obj_tol = 1e-9 * std::max(1.0, std::abs(best));

    const Candidate* chosen = nullptr;
    for (const auto& c : cands) {
        if (maximize ? (c.objective < best - obj_tol) : (c.objective > best + obj_tol)) continue;
        if (!chosen) {
            chosen = &c;
            continue;
        }
        const double cost_tol = 1e-12 * std::max(1.0, std::abs(chosen->cost));
        if (c.cost < chosen->cost - cost_tol) {
            chosen = &c;
        } else if (std::abs(c.cost - chosen->cost) <= cost_tol &&
                   std::lexicographical_compare(c.b.begin(), c.b.end(), chosen->b.begin(),
                                                chosen->b.end())) {
            chosen = &c;
        }
    }
    return *chosen;
}

StandardLP equality_simplex_lp(const std::vector<double>& eq, const std::vector<double>& obj,
                               double target, bool maximize) {
    const std::size_t n = eq.size();
    StandardLP lp;
    lp.c.resize(n);
    for (std::size_t i = 0; i < n; ++i) lp.c[i] = maximize ? obj[i] : -obj[i];
    std::vector<double> neg_eq(n), ones(n, 1.0), neg_ones(n, -1.0);
    for (std::size_t i = 0; i < n; ++i) neg_eq[i] = -eq[i];
    lp.a = {eq, neg_eq, ones, neg_ones};
    lp.rhs = {target + kEqualityTol, -(target - kEqualityTol), 1.0, -1.0};
    return lp;
}

}  // namespace

std::string to_json(const LPSolution& sol) {
    nlohmann::json j;
    j["b"] = sol.b.b;
    if (sol.status == LPStatus::Optimal) {
        j["status"] = "optimal";
        j["objective"] = sol.objective_value;
    } else {
        j["status"] = "infeasible";
        j["objective"] = nullptr;
        j["feasible_interval"] = {sol.feasible_lo, sol.feasible_hi};
    }
    return j.dump();
}

double average_cost(const bias::BiasVector& b, const CostVector& d) {
    if (b.size() != d.d.size()) throw std::invalid_argument("bias/cost length mismatch");
    // Compensated dot product (fma product errors + Neumaier summation):
    // correctly rounded for the scales involved here, so exact byte averages
    // stay exact.
    double s = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double prod = b.b[i] * d.d[i];
        const double err = std::fma(b.b[i], d.d[i], -prod);
        const double t = s + prod;
        comp += (std::abs(s) >= std::abs(prod)) ? (s - t) + prod : (prod - t) + s;
        s = t;
        comp += err;
    }
    return s + comp;
}

SimplexResult simplex_solve(const StandardLP& lp) {
    const std::size_t n = lp.c.size();
    const std::size_t m = lp.a.size();
    if (lp.rhs.size() != m) throw std::invalid_argument("rhs size does not match constraint count");
    for (const auto& row : lp.a)
        if (row.size() != n) throw std::invalid_argument("constraint width does not match c");

    // Columns: n structural, m slacks, then artificials for rows whose slack
    // alone cannot form a feasible basis.
    std::vector<std::vector<double>> t(m);
    std::vector<std::size_t> basis(m);
    std::size_t n_art = 0;
    for (std::size_t i = 0; i < m; ++i)
        if (lp.rhs[i] < 0.0) ++n_art;
    const std::size_t cols = n + m + n_art;

    std::ostringstream trace;
    std::size_t art_seen = 0;
    for (std::size_t i = 0; i < m; ++i) {
        t[i].assign(cols + 1, 0.0);
        const double sign = lp.rhs[i] < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < n; ++j) t[i][j] = sign * lp.a[i][j];
        t[i][n + i] = sign;  // slack
        t[i][cols] = sign * lp.rhs[i];
        if (sign < 0.0) {
            t[i][n + m + art_seen] = 1.0;
            basis[i] = n + m + art_seen;
            ++art_seen;
        } else {
            basis[i] = n + i;
        }
    }

    std::size_t pivots = 0;
    const auto pivot = [&](std::size_t prow, std::size_t pcol, std::vector<double>& obj) {
        trace << pivots << ":r" << prow << "c" << pcol << " ";
        const double pv = t[prow][pcol];
        for (double& v : t[prow]) v /= pv;
        for (std::size_t i = 0; i < m; ++i) {
            if (i == prow || t[i][pcol] == 0.0) continue;
            const double f = t[i][pcol];
            for (std::size_t j = 0; j <= cols; ++j) t[i][j] -= f * t[prow][j];
        }
        if (obj[pcol] != 0.0) {
            const double f = obj[pcol];
            for (std::size_t j = 0; j <= cols; ++j) obj[j] -= f * t[prow][j];
        }
        basis[prow] = pcol;
        ++pivots;
    };

    // Runs Bland's rule to optimality for the objective row handed in.
    // enter_limit excludes artificial columns during phase 2.
    const auto optimize = [&](std::vector<double>& obj, std::size_t enter_limit) {
        while (true) {
            if (pivots > kMaxPivots)
                throw SimplexError("pivot limit exceeded", trace.str());
            std::size_t enter = cols;
            for (std::size_t j = 0; j < enter_limit; ++j)
                if (obj[j] < -kPivotTol) {
                    enter = j;
                    break;
                }
            if (enter == cols) return;

            std::size_t leave = m;
            double best_ratio = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (t[i][enter] <= kPivotTol) continue;
                const double ratio = t[i][cols] / t[i][enter];
                if (leave == m || ratio < best_ratio - kPivotTol ||
                    (std::abs(ratio - best_ratio) <= kPivotTol && basis[i] < basis[leave])) {
                    leave = i;
                    best_ratio = ratio;
                }
            }
            if (leave == m)
                throw SimplexError("objective unbounded over the feasible region", trace.str());
            pivot(leave, enter, obj);
        }
    };

    if (n_art > 0) {
        // Phase 1: drive the artificial variables to zero.
        std::vector<double> obj(cols + 1, 0.0);
        for (std::size_t j = n + m; j < cols; ++j) obj[j] = 1.0;
        for (std::size_t i = 0; i < m; ++i)
            if (basis[i] >= n + m)
                for (std::size_t j = 0; j <= cols; ++j) obj[j] -= t[i][j];
        optimize(obj, cols);
        // -obj[cols] is the remaining artificial mass.
        if (-obj[cols] > 1e-9) {
            SimplexResult res;
            res.status = LPStatus::Infeasible;
            return res;
        }
        // Degenerate basic artificials get swapped for any structural column.
        for (std::size_t i = 0; i < m; ++i) {
            if (basis[i] < n + m) continue;
            std::size_t col = cols;
            for (std::size_t j = 0; j < n + m; ++j)
                if (std::abs(t[i][j]) > kPivotTol) {
                    col = j;
                    break;
                }
            if (col != cols) pivot(i, col, obj);
        }
    }

    std::vector<double> obj(cols + 1, 0.0);
    for (std::size_t j = 0; j < n; ++j) obj[j] = -lp.c[j];
    for (std::size_t i = 0; i < m; ++i)
        if (obj[basis[i]] != 0.0) {
            const double f = obj[basis[i]];
            for (std::size_t j = 0; j <= cols; ++j) obj[j] -= f * t[i][j];
        }
    optimize(obj, n + m);

    SimplexResult res;
    res.status = LPStatus::Optimal;
    res.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] < n) res.x[basis[i]] = t[i][cols];
    res.objective = 0.0;
    for (std::size_t j = 0; j < n; ++j) res.objective += lp.c[j] * res.x[j];
    return res;
}

namespace {

LPSolution solve_equality(const CostVector& d, const PerfVector& p, double target,
                          TargetMode mode) {
    check_instance(d, p);
    const auto& eq = (mode == TargetMode::Cost) ? d.d : p.p;
    const auto& obj = (mode == TargetMode::Cost) ? p.p : d.d;
    const bool maximize = mode == TargetMode::Cost;

    LPSolution sol;
    sol.feasible_lo = *std::min_element(eq.begin(), eq.end());
    sol.feasible_hi = *std::max_element(eq.begin(), eq.end());
    const double bound_tol = 1e-9 * std::max(1.0, std::abs(sol.feasible_hi));
    if (target < sol.feasible_lo - bound_tol || target > sol.feasible_hi + bound_tol) {
        sol.status = LPStatus::Infeasible;
        return sol;
    }

    // The simplex run is the solver of record for the objective value; the
    // vertex enumeration resolves ties canonically (the optimum provably sits
    // on one of these vertices).
    const SimplexResult sres = simplex_solve(equality_simplex_lp(eq, obj, target, maximize));
    if (sres.status != LPStatus::Optimal) {
        sol.status = LPStatus::Infeasible;
        return sol;
    }

    auto cands = vertex_candidates(eq, obj, d.d, target);
    if (cands.empty()) {
        // Unreachable for targets inside the interval; fall back defensively.
        sol.status = LPStatus::Optimal;
        sol.b.b = sres.x;
        sol.objective_value = maximize ? sres.objective : -sres.objective;
        return sol;
    }
    const Candidate best = pick_candidate(cands, maximize);
    sol.status = LPStatus::Optimal;
    sol.b.b = best.b;
    sol.objective_value = best.objective;
    return sol;
}

}  // namespace

LPSolution solve_for_cost(const CostVector& d, const PerfVector& p, double d_t) {
    return solve_equality(d, p, d_t, TargetMode::Cost);
}

LPSolution solve_for_perf(const CostVector& d, const PerfVector& p, double p_t) {
    return solve_equality(d, p, p_t, TargetMode::Perf);
}

LPSolution brute_force_solve(const CostVector& d, const PerfVector& p, double target,
                             TargetMode mode, double grid_step) {
    check_instance(d, p);
    const std::size_t n = d.d.size();
    if (n > 5) throw std::invalid_argument("brute force supports at most 5 experts");
    if (!(grid_step > 0.0) || grid_step > 0.01)
        throw std::invalid_argument("grid_step must be in (0, 0.01]");

    const auto& eq = (mode == TargetMode::Cost) ? d.d : p.p;
    const auto& obj = (mode == TargetMode::Cost) ? p.p : d.d;
    const bool maximize = mode == TargetMode::Cost;
    const long s = std::llround(1.0 / grid_step);
    const double step = 1.0 / static_cast<double>(s);

    LPSolution sol;
    sol.feasible_lo = *std::min_element(eq.begin(), eq.end());
    sol.feasible_hi = *std::max_element(eq.begin(), eq.end());

    // A grid point is accepted when its signed constraint residue can be
    // erased by moving at most half a grid step of mass from one of its
    // support coordinates to the extreme coordinate in the needed direction.
    // This admits every rounding of the true optimum (support <= 2) and keeps
    // the admitted objective within step*range(obj) of the exact optimum; a
    // direction-blind band admits points whose slack buys more objective than
    // the grid can resolve.
    const double tau_max = 0.5 * step * (sol.feasible_hi - sol.feasible_lo);
    if (target < sol.feasible_lo - tau_max - 1e-12 ||
        target > sol.feasible_hi + tau_max + 1e-12) {
        sol.status = LPStatus::Infeasible;
        return sol;
    }

    if (n == 1) {
        sol.status = LPStatus::Optimal;
        sol.b.b = {1.0};
        sol.objective_value = obj[0];
        return sol;
    }

    // Permute so the two coordinates with the widest eq gap sit last: the
    // second-to-last is solved from the constraint band, the last absorbs the
    // remaining mass. With the widest pair solved, the band holds O(1) grid
    // values per prefix.
    std::size_t wi = 0, wj = 1;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(eq[i] - eq[j]) > std::abs(eq[wi] - eq[wj])) {
                wi = i;
                wj = j;
            }
    std::vector<std::size_t> perm;
    for (std::size_t i = 0; i < n; ++i)
        if (i != wi && i != wj) perm.push_back(i);
    perm.push_back(wi);
    perm.push_back(wj);
    std::vector<double> peq(n), pobj(n);
    for (std::size_t i = 0; i < n; ++i) {
        peq[i] = eq[perm[i]];
        pobj[i] = obj[perm[i]];
    }

    bool found = false;
    double best_obj = 0.0;
    std::vector<long> best_k(n, 0), k(n, 0);

    const double delta = peq[n - 2] - peq[n - 1];
    const auto consider = [&](long rem, double eq_prefix, double obj_prefix, double lo_prefix,
                              double hi_prefix, long ks) {
        if (ks < 0 || ks > rem) return;
        k[n - 2] = ks;
        k[n - 1] = rem - ks;
        double lo_supp = lo_prefix, hi_supp = hi_prefix;
        if (ks > 0) {
            lo_supp = std::min(lo_supp, peq[n - 2]);
            hi_supp = std::max(hi_supp, peq[n - 2]);
        }
        if (rem - ks > 0) {
            lo_supp = std::min(lo_supp, peq[n - 1]);
            hi_supp = std::max(hi_supp, peq[n - 1]);
        }
        const double total_eq = (eq_prefix + ks * peq[n - 2] + (rem - ks) * peq[n - 1]) / s;
        const double residue = total_eq - target;
        const double allow = 0.5 * step *
                             (residue > 0.0 ? hi_supp - sol.feasible_lo
                                            : sol.feasible_hi - lo_supp);
        if (std::abs(residue) > allow + 1e-12) return;
        const double value = (obj_prefix + ks * pobj[n - 2] + (rem - ks) * pobj[n - 1]) / s;
        if (!found || (maximize ? value > best_obj : value < best_obj)) {
            found = true;
            best_obj = value;
            best_k = k;
        }
    };

    const auto leaf = [&](long rem, double eq_prefix, double obj_prefix, double lo_prefix,
                          double hi_prefix) {
        if (std::abs(delta) < 1e-15) {
            // Degenerate pair: the constraint does not depend on the split, so
            // only the objective extremes matter.
            consider(rem, eq_prefix, obj_prefix, lo_prefix, hi_prefix, 0);
            consider(rem, eq_prefix, obj_prefix, lo_prefix, hi_prefix, rem);
            return;
        }
        const double c0 = eq_prefix + rem * peq[n - 1];
        double lo = (s * (target - tau_max) - c0) / delta;
        double hi = (s * (target + tau_max) - c0) / delta;
        if (lo > hi) std::swap(lo, hi);
        const long k_lo = std::max<long>(0, static_cast<long>(std::ceil(lo - 1e-9)) - 1);
        const long k_hi = std::min<long>(rem, static_cast<long>(std::floor(hi + 1e-9)) + 1);
        for (long ks = k_lo; ks <= k_hi; ++ks)
            consider(rem, eq_prefix, obj_prefix, lo_prefix, hi_prefix, ks);
    };

    // Enumerates the first n-2 coordinates, carrying the support's eq range.
    const std::function<void(std::size_t, long, double, double, double, double)> walk =
        [&](std::size_t pos, long used, double eq_acc, double obj_acc, double lo_acc,
            double hi_acc) {
            if (pos == n - 2) {
                leaf(s - used, eq_acc, obj_acc, lo_acc, hi_acc);
                return;
            }
            for (long v = 0; v <= s - used; ++v) {
                k[pos] = v;
                walk(pos + 1, used + v, eq_acc + v * peq[pos], obj_acc + v * pobj[pos],
                     v > 0 ? std::min(lo_acc, peq[pos]) : lo_acc,
                     v > 0 ? std::max(hi_acc, peq[pos]) : hi_acc);
            }
        };
    walk(0, 0, 0.0, 0.0, sol.feasible_hi, sol.feasible_lo);

    if (!found) {
        sol.status = LPStatus::Infeasible;
        return sol;
    }
    sol.status = LPStatus::Optimal;
    sol.b.b.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        sol.b.b[perm[i]] = static_cast<double>(best_k[i]) / static_cast<double>(s);
    sol.objective_value = best_obj;
    return sol;
}

}  // namespace bmoe::lp
