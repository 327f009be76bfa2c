#include "bmoe/bias.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bmoe/rng.hpp"
#include "json.hpp"

namespace bmoe::bias {

namespace {

constexpr std::uint64_t kShuffleStream = 0x3C;
constexpr double kSqrt2 = 1.4142135623730950488016887242097;

// Soft gate values for one input; tolerates N == 1 (degenerate gate of 1).
std::vector<double> soft_values(const nn::DenseNet& gating_net, const std::vector<double>& x) {
    if (gating_net.output_dim() == 1) {
        nn::forward(gating_net, x);  // still validates the input dimension
        return {1.0};
    }
    return gating::soft_gate(gating::gate_logits(gating_net, x)).values;
}

std::size_t lowest_argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

void validate(const BiasVector& bv) {
    if (bv.b.empty()) throw std::invalid_argument("bias vector is empty");
    double sum = 0.0;
    for (double v : bv.b) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("bias entries must lie in [0,1]");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("bias vector must sum to 1, got " + std::to_string(sum));
}

std::string method_name(Method m) {
    return m == Method::SoftRegularization ? "soft_regularization" : "bias_enforcement";
}

Method method_from_name(const std::string& name) {
    if (name == "soft_regularization") return Method::SoftRegularization;
    if (name == "bias_enforcement") return Method::BiasEnforcement;
    throw std::invalid_argument("unknown method '" + name + "'");
}

BiasLossResult bias_loss(const gating::UtilityVector& u, const BiasVector& bv,
                         const BiasLossConfig& cfg) {
    if (u.size() != bv.size()) throw std::invalid_argument("utility/bias length mismatch");
    if (cfg.w_bias < 0.0) throw std::invalid_argument("w_bias must be nonnegative");
    if (cfg.epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");

    double sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double diff = u.u[i] - bv.b[i];
        sq += diff * diff;
    }
    const double r = std::sqrt(sq);
    const double raw = 1.0 - r / kSqrt2;
    const bool clamped = raw <= cfg.epsilon;
    const double arg = clamped ? cfg.epsilon : raw;

    BiasLossResult res;
    res.loss = -cfg.w_bias * std::log(arg);
    res.dloss_du.assign(u.size(), 0.0);
    if (!clamped && r > 0.0) {
        const double scale = cfg.w_bias / (kSqrt2 * arg * r);
        for (std::size_t i = 0; i < u.size(); ++i)
            res.dloss_du[i] = scale * (u.u[i] - bv.b[i]);
    }
    return res;
}

std::vector<std::size_t> bias_counts(std::size_t m, const BiasVector& bv) {
    validate(bv);
    if (m == 0) throw std::invalid_argument("batch size must be positive");
    const std::size_t n = bv.size();
    std::vector<std::size_t> counts(n);
    std::vector<double> remainder(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = static_cast<double>(m) * bv.b[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    // Hand the leftover slots to the largest remainders, lower index first.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < m; ++k, ++assigned) counts[order[k % n]] += 1;
    return counts;
}

EnforceResult enforce_bias(const gating::GateBatch& soft_gates, const BiasVector& bv) {
    const std::size_t m = soft_gates.batch_size();
    if (m == 0) throw std::invalid_argument("cannot enforce bias on an empty batch");
    const std::size_t n = soft_gates.num_experts();
    if (n != bv.size()) throw std::invalid_argument("gate width does not match bias length");
    for (const auto& row : soft_gates.rows)
        if (row.mode != gating::GateMode::Soft || row.size() != n)
            throw std::invalid_argument("enforce_bias needs a uniform soft gate batch");

    const auto counts = bias_counts(m, bv);
    std::vector<std::size_t> assignment(m, 0);
    std::vector<bool> claimed(m, false);

    for (std::size_t expert = 0; expert < n; ++expert) {
        std::vector<std::size_t> candidates;
        candidates.reserve(m);
        for (std::size_t row = 0; row < m; ++row)
            if (!claimed[row]) candidates.push_back(row);
        // Highest column value wins; equal values go to the earlier row.
        std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
            return soft_gates.rows[a].values[expert] > soft_gates.rows[b].values[expert];
        });
        for (std::size_t k = 0; k < counts[expert]; ++k) {
            const std::size_t row = candidates[k];
            claimed[row] = true;
            assignment[row] = expert;
        }
    }

    EnforceResult res;
    res.assignment = assignment;
    res.masked.rows.resize(m);
    for (std::size_t row = 0; row < m; ++row) {
        gating::GateVector g;
        g.mode = gating::GateMode::Sparse;
        g.values.assign(n, 0.0);
        g.values[assignment[row]] = soft_gates.rows[row].values[assignment[row]];
        res.masked.rows[row] = std::move(g);
    }
    return res;
}

void validate(const MixtureModel& model) {
    if (model.experts.size() < 2) throw std::invalid_argument("mixture needs at least 2 experts");
    validate(model.bias);
    if (model.bias.size() != model.experts.size())
        throw std::invalid_argument("bias length does not match expert count");
    if (model.gating_net.output_dim() != model.experts.size())
        throw std::invalid_argument("gating output width does not match expert count");
    const std::size_t classes = model.experts.front().net.output_dim();
    for (const auto& e : model.experts) {
        nn::validate(e.net);
        if (e.net.output_dim() != classes)
            throw std::invalid_argument("experts disagree on output dimension");
        if (e.data_cost_bytes == 0) throw std::invalid_argument("expert cost must be positive");
    }
}

nn::DenseNet make_gating_net(const std::vector<std::size_t>& widths, std::uint64_t seed) {
    nn::DenseNet net = nn::make_dense_net(widths, seed);
    auto& last = net.layers.back();
    for (auto& v : last.w.data) v = 0.0;
    for (auto& v : last.b) v = 0.0;
    return net;
}

ForwardResult mixture_forward(const MixtureModel& model,
                              const std::vector<std::vector<double>>& xs, Routing routing) {
    if (xs.empty()) throw std::invalid_argument("cannot run the mixture on an empty batch");
    if (model.experts.empty()) throw std::invalid_argument("mixture has no experts");
    const std::size_t m = xs.size();
    const std::size_t n = model.experts.size();

    gating::GateBatch soft;
    soft.rows.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        soft.rows[i].mode = gating::GateMode::Soft;
        soft.rows[i].values = soft_values(model.gating_net, xs[i]);
    }

    ForwardResult res;
    res.assignment.resize(m);
    res.gate_scale.resize(m);
    if (routing == Routing::BatchEnforced) {
        BiasVector bv = model.bias;
        if (n == 1) bv.b = {1.0};
        const auto enforced = enforce_bias(soft, bv);
        res.assignment = enforced.assignment;
        for (std::size_t i = 0; i < m; ++i)
            res.gate_scale[i] = enforced.masked.rows[i].values[res.assignment[i]];
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            res.assignment[i] = lowest_argmax(soft.rows[i].values);
            res.gate_scale[i] = soft.rows[i].values[res.assignment[i]];
        }
    }

    res.outputs.resize(m);
    double cost = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& expert = model.experts[res.assignment[i]];
        auto out = nn::forward(expert.net, synth::preprocess(expert.preprocess, xs[i]));
        for (auto& v : out) v *= res.gate_scale[i];
        res.outputs[i] = std::move(out);
        cost += static_cast<double>(expert.data_cost_bytes);
    }
    res.realized_cost = cost / static_cast<double>(m);
    return res;
}

BatchGradient mixture_batch_gradient(const MixtureModel& model,
                                     const std::vector<std::vector<double>>& xs,
                                     const std::vector<std::size_t>& ys,
                                     const BiasLossConfig& loss_cfg) {
    validate(model);
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("batch inputs and labels must match and be nonempty");
    const std::size_t m = xs.size();
    const std::size_t n = model.experts.size();
    const double inv_m = 1.0 / static_cast<double>(m);

    gating::GateBatch soft;
    soft.rows.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        soft.rows[i].mode = gating::GateMode::Soft;
        soft.rows[i].values = gating::soft_gate(gating::gate_logits(model.gating_net, xs[i])).values;
    }
    const gating::UtilityVector u = gating::utility(soft);

    std::vector<std::size_t> assignment(m);
    if (model.method == Method::BiasEnforcement) {
        assignment = enforce_bias(soft, model.bias).assignment;
    } else {
        for (std::size_t i = 0; i < m; ++i) assignment[i] = lowest_argmax(soft.rows[i].values);
    }

    // The bias loss is part of the objective only under soft regularization,
    // but its value is always reported for the training log.
    const BiasLossResult bl = bias_loss(u, model.bias, loss_cfg);
    const bool use_bias_term = model.method == Method::SoftRegularization;

    BatchGradient out;
    out.gating_grads = nn::zero_gradients(model.gating_net);
    out.utility = u;
    out.bias_loss = bl.loss;

    double cost = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t sel = assignment[i];
        const auto& expert = model.experts[sel];
        cost += static_cast<double>(expert.data_cost_bytes);

        const auto z = nn::forward(expert.net, synth::preprocess(expert.preprocess, xs[i]));
        const double gate = soft.rows[i].values[sel];
        std::vector<double> scaled(z.size());
        for (std::size_t k = 0; k < z.size(); ++k) scaled[k] = gate * z[k];
        auto [task_i, dscaled] = nn::softmax_cross_entropy(scaled, ys[i]);
        out.task_loss += task_i * inv_m;

        // The one-hot selector is piecewise constant, so the task loss reaches
        // the gate only through the retained softmax value.
        double dgate = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) dgate += dscaled[k] * z[k];

        std::vector<double> dsoft(n, 0.0);
        dsoft[sel] = dgate * inv_m;
        if (use_bias_term)
            for (std::size_t k = 0; k < n; ++k) dsoft[k] += bl.dloss_du[k] * inv_m;

        // Softmax Jacobian: dlogit_k = s_k (dsoft_k - sum_j dsoft_j s_j).
        const auto& s = soft.rows[i].values;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += dsoft[k] * s[k];
        std::vector<double> dlogits(n);
        for (std::size_t k = 0; k < n; ++k) dlogits[k] = s[k] * (dsoft[k] - dot);

        nn::accumulate(out.gating_grads, nn::backward(model.gating_net, xs[i], dlogits));
    }

    out.realized_cost = cost * inv_m;
    out.total_loss = out.task_loss + (use_bias_term ? bl.loss : 0.0);
    return out;
}

std::string TrainingLog::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    const std::size_t n = rows.empty() ? 0 : rows.front().utility.size();
    out << "step,task_loss,bias_loss";
    for (std::size_t k = 1; k <= n; ++k) out << ",u_" << k;
    out << ",realized_cost\n";
    for (const auto& row : rows) {
        out << row.step << "," << row.task_loss << "," << row.bias_loss;
        for (double v : row.utility) out << "," << v;
        out << "," << row.realized_cost << "\n";
    }
    return out.str();
}

TrainResult train_mixture(const MixtureModel& model, const synth::Dataset& ds,
                          const nn::TrainConfig& cfg, const BiasLossConfig& loss_cfg) {
    validate(model);
    if (cfg.batch_size == 0 || cfg.learning_rate <= 0.0 || cfg.steps == 0)
        throw std::invalid_argument("invalid training config");
    if (ds.splits.train.empty()) throw std::invalid_argument("dataset has no train split");

    TrainResult res;
    res.model = model;

    std::mt19937_64 g(rng::mix(cfg.seed, kShuffleStream));
    std::vector<std::size_t> order = ds.splits.train;
    rng::shuffle(order, g);
    std::size_t cursor = 0;

    std::vector<std::vector<double>> xs(cfg.batch_size);
    std::vector<std::size_t> ys(cfg.batch_size);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                rng::shuffle(order, g);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            xs[b] = ds.examples[idx].x;
            ys[b] = ds.examples[idx].y;
        }

        BatchGradient grad;
        try {
            grad = mixture_batch_gradient(res.model, xs, ys, loss_cfg);
        } catch (const std::runtime_error& e) {
            // Non-finite logits surface here once parameters blow up.
            throw nn::training_diverged(e.what(), static_cast<long>(step));
        }
        if (!std::isfinite(grad.total_loss))
            throw nn::training_diverged("non-finite loss in mixture training",
                                        static_cast<long>(step));
        try {
            res.model.gating_net = nn::sgd_step(res.model.gating_net, grad.gating_grads,
                                                cfg.learning_rate);
        } catch (const nn::training_diverged& e) {
            throw nn::training_diverged(e.what(), static_cast<long>(step));
        }
        if (cfg.weight_decay > 0.0) {
            const double keep = 1.0 - cfg.learning_rate * cfg.weight_decay;
            for (auto& layer : res.model.gating_net.layers) {
                for (auto& v : layer.w.data) v *= keep;
                for (auto& v : layer.b) v *= keep;
            }
        }

        LogRow row;
        row.step = step;
        row.task_loss = grad.task_loss;
        row.bias_loss = grad.bias_loss;
        row.utility = grad.utility.u;
        row.realized_cost = grad.realized_cost;
        res.log.rows.push_back(std::move(row));
    }
    return res;
}

void save_mixture(const MixtureModel& model, const std::string& path,
                  const std::vector<std::string>& expert_refs) {
    if (expert_refs.size() != model.experts.size())
        throw std::invalid_argument("one expert reference required per expert");
    nlohmann::json j;
    j["gating"] = nlohmann::json::parse(nn::to_checkpoint_json(model.gating_net));
    j["experts"] = expert_refs;
    j["b"] = model.bias.b;
    j["method"] = method_name(model.method);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump() << "\n";
}

MixtureModel load_mixture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;

    MixtureModel model;
    model.gating_net = nn::from_checkpoint_json(j.at("gating").dump());
    model.bias.b = j.at("b").get<std::vector<double>>();
    model.method = method_from_name(j.at("method").get<std::string>());

    const auto base = std::filesystem::path(path).parent_path();
    for (const auto& ref : j.at("experts")) {
        std::filesystem::path p(ref.get<std::string>());
        if (p.is_relative()) p = base / p;
        model.experts.push_back(synth::load_expert(p.string()));
    }
    validate(model);
    return model;
}

}  // namespace bmoe::bias
