#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bmoe/nn.hpp"

namespace bmoe::gating {

enum class GateMode { Soft, Sparse };

// One gate vector over N experts. Soft mode: a probability vector.
// Sparse mode: exactly one nonzero entry, holding the soft value at the argmax.
struct GateVector {
    std::vector<double> values;
    GateMode mode = GateMode::Soft;

    std::size_t size() const { return values.size(); }
};

// Batch of gate vectors; all rows share N and mode.
struct GateBatch {
    std::vector<GateVector> rows;

    std::size_t batch_size() const { return rows.size(); }
    std::size_t num_experts() const { return rows.empty() ? 0 : rows.front().size(); }
};

// Per-batch average of soft gates; lies in the probability simplex.
struct UtilityVector {
    std::vector<double> u;

    std::size_t size() const { return u.size(); }
};

// Normalized exponential over all N logits, max-subtracted. Requires N >= 2.
GateVector soft_gate(const std::vector<double>& logits);

// One-hot mask at argmax(logits) times the soft gate value there.
// Ties break toward the lowest index.
GateVector sparse_gate(const std::vector<double>& logits);

// Index of the single nonzero entry of a sparse gate (or argmax of a soft one).
std::size_t gate_argmax(const GateVector& g);

// u_n = (1/M) sum over rows of G_row[n]; batch must be soft-mode and nonempty.
UtilityVector utility(const GateBatch& batch);

// Runs the gating network on x; output width is the expert count.
std::vector<double> gate_logits(const nn::DenseNet& gating_net, const std::vector<double>& x);

// Validates a batch: uniform width and mode, per-mode value invariants.
void validate(const GateBatch& batch);

// Debug serialization: one CSV row per input (id, g_1..g_N).
std::string to_csv(const GateBatch& batch);

}  // namespace bmoe::gating
