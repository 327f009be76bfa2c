#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bmoe/gating.hpp"
#include "bmoe/nn.hpp"
#include "bmoe/synth.hpp"

namespace bmoe::bias {

// Target frequencies of expert use; a point on the probability simplex.
struct BiasVector {
    std::vector<double> b;

    std::size_t size() const { return b.size(); }
};

// Throws unless every entry is in [0,1] and the sum is 1 within 1e-9.
void validate(const BiasVector& b);

enum class Method { SoftRegularization, BiasEnforcement };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct BiasLossConfig {
    double w_bias = 1.0;
    double epsilon = 1e-7;  // floor of the log argument
};

struct BiasLossResult {
    double loss = 0.0;
    std::vector<double> dloss_du;
};

// loss = -w_bias * log(max(epsilon, 1 - ||u-b||_2 / sqrt(2))).
// Gradient is exact for the clamped expression: zero where the clamp is
// active, and zero at u == b.
BiasLossResult bias_loss(const gating::UtilityVector& u, const BiasVector& b,
                         const BiasLossConfig& cfg);

// Largest-remainder rounding of m*b_n into integer counts summing to m.
// Remainder ties go to the lower index.
std::vector<std::size_t> bias_counts(std::size_t m, const BiasVector& b);

struct EnforceResult {
    gating::GateBatch masked;              // exactly one nonzero per row
    std::vector<std::size_t> assignment;   // expert index per row
};

// Batchwise bias enforcement: expert n claims the count_n unclaimed rows with
// the highest column-n gate values (value ties to the lowest row index);
// claimed rows keep only column n.
EnforceResult enforce_bias(const gating::GateBatch& soft_gates, const BiasVector& b);

// Frozen experts plus a trainable gating network.
struct MixtureModel {
    std::vector<synth::ExpertSpec> experts;
    nn::DenseNet gating_net;
    BiasVector bias;
    Method method = Method::BiasEnforcement;
};

// Throws unless N >= 2, bias matches N, and gating output width is N.
void validate(const MixtureModel& model);

// Gating network with the output layer scaled down so initial soft gates sit
// near uniform; saturated gates at initialization freeze the routing before
// training can order it.
nn::DenseNet make_gating_net(const std::vector<std::size_t>& widths, std::uint64_t seed);

enum class Routing { PerInputArgmax, BatchEnforced };

struct ForwardResult {
    std::vector<std::vector<double>> outputs;  // selected expert logits scaled by its gate
    std::vector<std::size_t> assignment;
    std::vector<double> gate_scale;            // surviving gate value per row
    double realized_cost = 0.0;                // average bytes per input
};

// Runs the mixture on a batch; only the selected expert is evaluated per
// input. Accepts N == 1 as a degenerate mixture (gate value 1).
ForwardResult mixture_forward(const MixtureModel& model,
                              const std::vector<std::vector<double>>& xs, Routing routing);

struct BatchGradient {
    double task_loss = 0.0;
    double bias_loss = 0.0;
    double total_loss = 0.0;
    nn::Gradients gating_grads;
    gating::UtilityVector utility;
    double realized_cost = 0.0;
};

// One training batch worth of loss and gating-parameter gradients, without
// updating the model. Soft regularization adds the bias loss on the batch
// utility; enforcement uses Algorithm-style fixed assignments and task loss
// only. Exposed so gradients can be checked against finite differences.
BatchGradient mixture_batch_gradient(const MixtureModel& model,
                                     const std::vector<std::vector<double>>& xs,
                                     const std::vector<std::size_t>& ys,
                                     const BiasLossConfig& loss_cfg);

struct LogRow {
    std::size_t step = 0;
    double task_loss = 0.0;
    double bias_loss = 0.0;
    std::vector<double> utility;
    double realized_cost = 0.0;
};

struct TrainingLog {
    std::vector<LogRow> rows;

    // CSV: step, task_loss, bias_loss, u_1..u_N, realized_cost
    std::string to_csv() const;
};

struct TrainResult {
    MixtureModel model;
    TrainingLog log;
};

// Trains only the gating parameters on the train split; experts stay frozen.
// Deterministic given cfg.seed. Non-finite loss raises training_diverged with
// the step index.
TrainResult train_mixture(const MixtureModel& model, const synth::Dataset& ds,
                          const nn::TrainConfig& cfg, const BiasLossConfig& loss_cfg);

// Mixture checkpoint: gating checkpoint, expert file references, b, method.
// References are stored as given and resolved against the checkpoint's
// directory on load.
void save_mixture(const MixtureModel& model, const std::string& path,
                  const std::vector<std::string>& expert_refs);
MixtureModel load_mixture(const std::string& path);

}  // namespace bmoe::bias
