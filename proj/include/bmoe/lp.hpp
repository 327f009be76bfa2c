#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "bmoe/bias.hpp"

namespace bmoe::lp {

// Bytes per input when each expert is selected; all entries positive.
struct CostVector {
    std::vector<double> d;
};

// Held-out performance per expert.
struct PerfVector {
    std::vector<double> p;
};

enum class LPStatus { Optimal, Infeasible };

struct LPSolution {
    bias::BiasVector b;
    double objective_value = 0.0;
    LPStatus status = LPStatus::Infeasible;
    // Populated when infeasible: the attainable target interval.
    double feasible_lo = 0.0;
    double feasible_hi = 0.0;
};

std::string to_json(const LPSolution& sol);

// b . d with a compensated dot product, accurate to the last bit for the
// scales used here.
double average_cost(const bias::BiasVector& b, const CostVector& d);

// Maximize b.p subject to b.d = d_t and b in the simplex. Optimal solutions
// have support size <= 2; ties prefer lower b.d, then the lexicographically
// smallest b.
LPSolution solve_for_cost(const CostVector& d, const PerfVector& p, double d_t);

// Minimize b.d subject to b.p = p_t and b in the simplex; same tie-breaking.
LPSolution solve_for_perf(const CostVector& d, const PerfVector& p, double p_t);

enum class TargetMode { Cost, Perf };

// Exhaustive simplex-grid search over points meeting the equality constraint
// within half a grid step of slack. Verification oracle; N <= 5 and
// grid_step <= 0.01 enforced.
LPSolution brute_force_solve(const CostVector& d, const PerfVector& p, double target,
                             TargetMode mode, double grid_step);

// maximize c.x subject to a.x <= rhs, x >= 0
struct StandardLP {
    std::vector<double> c;
    std::vector<std::vector<double>> a;
    std::vector<double> rhs;
};

struct SimplexResult {
    LPStatus status = LPStatus::Infeasible;
    std::vector<double> x;
    double objective = 0.0;
};

class SimplexError : public std::runtime_error {
  public:
    explicit SimplexError(const std::string& what, std::string pivot_trace)
        : std::runtime_error(what), pivot_trace_(std::move(pivot_trace)) {}

    const std::string& pivot_trace() const { return pivot_trace_; }

  private:
    std::string pivot_trace_;
};

// Two-phase tableau simplex with Bland's rule. The feasible region must be
// bounded (true for anything derived from simplex-of-b constraints).
SimplexResult simplex_solve(const StandardLP& lp);

}  // namespace bmoe::lp
