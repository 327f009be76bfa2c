#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bmoe::nn {

// Row-major dense matrix. Small enough here that hand-rolled loops beat
// pulling in a linear algebra dependency.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

enum class Activation { Relu, Identity };

/// One affine layer: y = act(W x + b), with W shaped [out x in].
struct DenseLayer {
    Matrix w;
    std::vector<double> b;
    Activation act = Activation::Identity;

    std::size_t in_dim() const { return w.cols; }
    std::size_t out_dim() const { return w.rows; }
};

/// A sequential stack of dense layers. Trained networks are treated as
/// immutable values; all operations on them are pure functions.
struct DenseNet {
    std::vector<DenseLayer> layers;
    std::size_t input_dim = 0;

    std::size_t output_dim() const { return layers.empty() ? input_dim : layers.back().out_dim(); }
};

struct LayerGrad {
    Matrix w;
    std::vector<double> b;
};

/// Gradient structure mirroring a DenseNet's parameters layer by layer.
struct Gradients {
    std::vector<LayerGrad> layers;
};

struct TrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 1e-4;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;
    // L2 shrink per step; keeps logits bounded so selections stay reversible.
    double weight_decay = 0.0;
};

/// Thrown when training encounters a non-finite loss or gradient.
/// step is -1 when the failure is not tied to a particular step.
class training_diverged : public std::runtime_error {
public:
    training_diverged(const std::string& what, long step = -1)
        : std::runtime_error(what), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Throws std::invalid_argument if layer dimensions do not chain, a bias
// length disagrees with its weight matrix, or any weight is non-finite.
void validate(const DenseNet& net);

/// Builds a net with the given layer widths ([input, hidden..., output]).
/// Hidden layers are relu, the final layer identity. Weights are drawn
/// uniformly from [-sqrt(6/(in+out)), +sqrt(6/(in+out))] with the given
/// seed; biases start at zero.
DenseNet make_dense_net(const std::vector<std::size_t>& widths, std::uint64_t seed);

std::vector<double> forward(const DenseNet& net, const std::vector<double>& x);

/// Reverse-mode gradients of the net's output contracted with `upstream`
/// (dLoss/doutput). Returns exact parameter gradients.
Gradients backward(const DenseNet& net, const std::vector<double>& x,
                   const std::vector<double>& upstream);

Gradients zero_gradients(const DenseNet& net);
void accumulate(Gradients& into, const Gradients& g, double scale = 1.0);

/// w <- w - lr * g, elementwise. Throws training_diverged on non-finite
/// gradients and std::invalid_argument on shape mismatch.
DenseNet sgd_step(const DenseNet& net, const Gradients& grads, double learning_rate);

/// Max-subtracted softmax; safe for large logits.
std::vector<double> softmax(const std::vector<double>& logits);

/// Returns (loss, dLoss/dlogits) for -log softmax(logits)[label].
std::pair<double, std::vector<double>> softmax_cross_entropy(const std::vector<double>& logits,
                                                             std::size_t label);

// Checkpoint format: {"layers": [{"w": [[...]], "b": [...], "act": "relu"|"id"}],
// "input_dim": n}. Serialization is lossless (shortest round-trip decimals).
std::string to_checkpoint_json(const DenseNet& net);
DenseNet from_checkpoint_json(const std::string& json_text);
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

}  // namespace bmoe::nn
