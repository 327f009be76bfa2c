#include "bmoe/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bmoe::gating {

namespace {

void check_logits(const std::vector<double>& logits) {
    if (logits.size() < 2)
        throw std::invalid_argument("gate needs at least 2 experts, got " +
                                    std::to_string(logits.size()));
    for (double v : logits)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite gate logit");
}

std::size_t lowest_argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

GateVector soft_gate(const std::vector<double>& logits) {
    check_logits(logits);
    GateVector g;
    g.mode = GateMode::Soft;
    g.values = nn::softmax(logits);
    return g;
}

GateVector sparse_gate(const std::vector<double>& logits) {
    GateVector soft = soft_gate(logits);
    const std::size_t k = lowest_argmax(soft.values);
    GateVector g;
    g.mode = GateMode::Sparse;
    g.values.assign(logits.size(), 0.0);
    g.values[k] = soft.values[k];
    return g;
}

std::size_t gate_argmax(const GateVector& g) {
    if (g.values.empty()) throw std::invalid_argument("empty gate vector");
    return lowest_argmax(g.values);
}

UtilityVector utility(const GateBatch& batch) {
    if (batch.rows.empty()) throw std::invalid_argument("utility of an empty batch");
    const std::size_t n = batch.num_experts();
    UtilityVector out;
    out.u.assign(n, 0.0);
    for (const auto& row : batch.rows) {
        if (row.size() != n) throw std::invalid_argument("ragged gate batch");
        if (row.mode != GateMode::Soft)
            throw std::invalid_argument("utility requires soft gates");
        for (std::size_t i = 0; i < n; ++i) out.u[i] += row.values[i];
    }
    const double inv_m = 1.0 / static_cast<double>(batch.rows.size());
    for (auto& v : out.u) v *= inv_m;
    return out;
}

std::vector<double> gate_logits(const nn::DenseNet& gating_net, const std::vector<double>& x) {
    auto logits = nn::forward(gating_net, x);
    for (double v : logits)
        if (!std::isfinite(v)) throw std::runtime_error("gating network produced non-finite logit");
    return logits;
}

void validate(const GateBatch& batch) {
    if (batch.rows.empty()) return;
    const std::size_t n = batch.num_experts();
    const GateMode mode = batch.rows.front().mode;
    for (const auto& row : batch.rows) {
        if (row.size() != n) throw std::invalid_argument("gate batch rows differ in width");
        if (row.mode != mode) throw std::invalid_argument("gate batch rows differ in mode");
        if (mode == GateMode::Soft) {
            double sum = 0.0;
            for (double v : row.values) {
                if (v <= 0.0 || v >= 1.0)
                    throw std::invalid_argument("soft gate value outside (0,1)");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument("soft gate row does not sum to 1");
        } else {
            std::size_t nonzeros = 0;
            for (double v : row.values)
                if (v != 0.0) ++nonzeros;
            if (nonzeros != 1)
                throw std::invalid_argument("sparse gate row must have exactly one nonzero");
        }
    }
}

std::string to_csv(const GateBatch& batch) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t i = 0; i < batch.rows.size(); ++i) {
        out << i;
        for (double v : batch.rows[i].values) out << "," << v;
        out << "\n";
    }
    return out.str();
}

}  // namespace bmoe::gating
