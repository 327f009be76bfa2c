#include "bmoe/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "bmoe/rng.hpp"
#include "json.hpp"

namespace bmoe::nn {

namespace {

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double apply_act(Activation act, double z) {
    return act == Activation::Relu ? (z > 0.0 ? z : 0.0) : z;
}

double act_grad(Activation act, double z) {
    return act == Activation::Relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

}  // namespace

void validate(const DenseNet& net) {
    if (net.layers.empty()) throw std::invalid_argument("net has no layers");
    std::size_t prev = net.input_dim;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const auto& layer = net.layers[k];
        if (layer.w.cols != prev)
            throw std::invalid_argument("layer " + std::to_string(k) + " input dim " +
                                        std::to_string(layer.w.cols) + " does not chain with " +
                                        std::to_string(prev));
        if (layer.b.size() != layer.w.rows)
            throw std::invalid_argument("layer " + std::to_string(k) + " bias length mismatch");
        if (!all_finite(layer.w.data) || !all_finite(layer.b))
            throw std::invalid_argument("layer " + std::to_string(k) + " has non-finite weights");
        prev = layer.w.rows;
    }
}

DenseNet make_dense_net(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    if (widths.size() < 2) throw std::invalid_argument("need at least input and output widths");
    std::mt19937_64 rng(seed);
    DenseNet net;
    net.input_dim = widths.front();
    for (std::size_t k = 1; k < widths.size(); ++k) {
        DenseLayer layer;
        const std::size_t in = widths[k - 1];
        const std::size_t out = widths[k];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        layer.w = Matrix(out, in);
        for (auto& v : layer.w.data) v = bmoe::rng::uniform(rng, -limit, limit);
        layer.b.assign(out, 0.0);
        layer.act = (k + 1 < widths.size()) ? Activation::Relu : Activation::Identity;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

std::vector<double> forward(const DenseNet& net, const std::vector<double>& x) {
    if (x.size() != net.input_dim)
        throw std::invalid_argument("input size " + std::to_string(x.size()) +
                                    " does not match net input_dim " +
                                    std::to_string(net.input_dim));
    std::vector<double> cur = x;
    for (const auto& layer : net.layers) {
        std::vector<double> next(layer.out_dim());
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            double z = layer.b[i];
            const double* row = layer.w.data.data() + i * layer.w.cols;
            for (std::size_t j = 0; j < layer.in_dim(); ++j) z += row[j] * cur[j];
            next[i] = apply_act(layer.act, z);
        }
        cur = std::move(next);
    }
    return cur;
}

Gradients backward(const DenseNet& net, const std::vector<double>& x,
                   const std::vector<double>& upstream) {
    if (x.size() != net.input_dim) throw std::invalid_argument("input size mismatch in backward");
    if (upstream.size() != net.output_dim())
        throw std::invalid_argument("upstream gradient size mismatch in backward");

    // Forward pass, keeping pre-activations and each layer's input.
    std::vector<std::vector<double>> inputs;   // inputs[k] feeds layer k
    std::vector<std::vector<double>> preacts;  // z of layer k
    inputs.push_back(x);
    for (const auto& layer : net.layers) {
        const auto& in = inputs.back();
        std::vector<double> z(layer.out_dim());
        std::vector<double> out(layer.out_dim());
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            double s = layer.b[i];
            const double* row = layer.w.data.data() + i * layer.w.cols;
            for (std::size_t j = 0; j < layer.in_dim(); ++j) s += row[j] * in[j];
            z[i] = s;
            out[i] = apply_act(layer.act, s);
        }
        preacts.push_back(std::move(z));
        inputs.push_back(std::move(out));
    }

    Gradients grads = zero_gradients(net);
    std::vector<double> delta = upstream;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const auto& layer = net.layers[k];
        const auto& in = inputs[k];
        const auto& z = preacts[k];
        for (std::size_t i = 0; i < layer.out_dim(); ++i) delta[i] *= act_grad(layer.act, z[i]);

        auto& g = grads.layers[k];
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            g.b[i] += delta[i];
            double* grow = g.w.data.data() + i * g.w.cols;
            for (std::size_t j = 0; j < layer.in_dim(); ++j) grow[j] += delta[i] * in[j];
        }
        if (k > 0) {
            std::vector<double> prev(layer.in_dim(), 0.0);
            for (std::size_t i = 0; i < layer.out_dim(); ++i) {
                const double* row = layer.w.data.data() + i * layer.w.cols;
                for (std::size_t j = 0; j < layer.in_dim(); ++j) prev[j] += row[j] * delta[i];
            }
            delta = std::move(prev);
        }
    }
    return grads;
}

Gradients zero_gradients(const DenseNet& net) {
    Gradients g;
    for (const auto& layer : net.layers) {
        LayerGrad lg;
        lg.w = Matrix(layer.out_dim(), layer.in_dim());
        lg.b.assign(layer.out_dim(), 0.0);
        g.layers.push_back(std::move(lg));
    }
    return g;
}

void accumulate(Gradients& into, const Gradients& g, double scale) {
    if (into.layers.size() != g.layers.size())
        throw std::invalid_argument("gradient layer count mismatch");
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
        auto& a = into.layers[k];
        const auto& b = g.layers[k];
        if (a.w.data.size() != b.w.data.size() || a.b.size() != b.b.size())
            throw std::invalid_argument("gradient shape mismatch");
        for (std::size_t i = 0; i < a.w.data.size(); ++i) a.w.data[i] += scale * b.w.data[i];
        for (std::size_t i = 0; i < a.b.size(); ++i) a.b[i] += scale * b.b[i];
    }
}

DenseNet sgd_step(const DenseNet& net, const Gradients& grads, double learning_rate) {
    if (grads.layers.size() != net.layers.size())
        throw std::invalid_argument("gradient layer count does not match net");
    DenseNet out = net;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        auto& layer = out.layers[k];
        const auto& g = grads.layers[k];
        if (g.w.rows != layer.w.rows || g.w.cols != layer.w.cols || g.b.size() != layer.b.size())
            throw std::invalid_argument("gradient shape does not match layer " + std::to_string(k));
        if (!all_finite(g.w.data) || !all_finite(g.b))
            throw training_diverged("non-finite gradient in sgd_step");
        for (std::size_t i = 0; i < layer.w.data.size(); ++i)
            layer.w.data[i] -= learning_rate * g.w.data[i];
        for (std::size_t i = 0; i < layer.b.size(); ++i) layer.b[i] -= learning_rate * g.b[i];
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

std::pair<double, std::vector<double>> softmax_cross_entropy(const std::vector<double>& logits,
                                                             std::size_t label) {
    if (logits.size() < 2) throw std::invalid_argument("softmax_cross_entropy needs >= 2 classes");
    if (label >= logits.size()) throw std::invalid_argument("label out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - m);
    const double log_sum = std::log(sum) + m;
    const double loss = log_sum - logits[label];
    std::vector<double> grad(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - log_sum);
    grad[label] -= 1.0;
    return {loss, grad};
}

std::string to_checkpoint_json(const DenseNet& net) {
    nlohmann::json j;
    j["input_dim"] = net.input_dim;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json jl;
        auto rows = nlohmann::json::array();
        for (std::size_t i = 0; i < layer.out_dim(); ++i) {
            auto row = nlohmann::json::array();
            for (std::size_t jcol = 0; jcol < layer.in_dim(); ++jcol) row.push_back(layer.w(i, jcol));
            rows.push_back(std::move(row));
        }
        jl["w"] = std::move(rows);
        jl["b"] = layer.b;
        jl["act"] = layer.act == Activation::Relu ? "relu" : "id";
        j["layers"].push_back(std::move(jl));
    }
    return j.dump();
}

DenseNet from_checkpoint_json(const std::string& json_text) {
    const auto j = nlohmann::json::parse(json_text);
    DenseNet net;
    net.input_dim = j.at("input_dim").get<std::size_t>();
    for (const auto& jl : j.at("layers")) {
        DenseLayer layer;
        const auto& rows = jl.at("w");
        const std::size_t out = rows.size();
        const std::size_t in = out ? rows[0].size() : 0;
        layer.w = Matrix(out, in);
        for (std::size_t i = 0; i < out; ++i) {
            if (rows[i].size() != in) throw std::invalid_argument("ragged weight matrix in checkpoint");
            for (std::size_t jcol = 0; jcol < in; ++jcol)
                layer.w(i, jcol) = rows[i][jcol].get<double>();
        }
        layer.b = jl.at("b").get<std::vector<double>>();
        const std::string act = jl.at("act").get<std::string>();
        if (act == "relu")
            layer.act = Activation::Relu;
        else if (act == "id")
            layer.act = Activation::Identity;
        else
            throw std::invalid_argument("unknown activation '" + act + "' in checkpoint");
        net.layers.push_back(std::move(layer));
    }
    validate(net);
    return net;
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_checkpoint_json(net) << "\n";
}

DenseNet load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_checkpoint_json(ss.str());
}

}  // namespace bmoe::nn
