#include "bmoe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bmoe/rng.hpp"
#include "json.hpp"

namespace bmoe::synth {

namespace {

constexpr std::uint64_t kSplitStream = 0x51;
constexpr std::uint64_t kShuffleStream = 0x7A;

std::size_t infer_resolution(std::size_t size, std::size_t channels) {
    if (channels == 0 || size % channels != 0)
        throw std::invalid_argument("input size does not split into channels");
    const std::size_t per = size / channels;
    const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(per))));
    if (r * r != per) throw std::invalid_argument("input is not a square image");
    return r;
}

// Stratified 80/10/10, shuffled per class.
Splits make_splits(const std::vector<Example>& examples, std::size_t num_classes,
                   std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> per_class(num_classes);
    for (std::size_t i = 0; i < examples.size(); ++i) per_class[examples[i].y].push_back(i);

    std::mt19937_64 g(rng::mix(seed, kSplitStream));
    Splits s;
    for (auto& idx : per_class) {
        rng::shuffle(idx, g);
        const std::size_t n = idx.size();
        const std::size_t n_test = std::max<std::size_t>(1, n / 10);
        const std::size_t n_val = std::max<std::size_t>(1, n / 10);
        if (n_test + n_val >= n) throw std::invalid_argument("class too small to split");
        for (std::size_t k = 0; k < n; ++k) {
            if (k < n_test)
                s.test.push_back(idx[k]);
            else if (k < n_test + n_val)
                s.val.push_back(idx[k]);
            else
                s.train.push_back(idx[k]);
        }
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

// +1/-1 stripe and checker textures, all zero-mean over every aligned 4x4
// block so that pooling to 4x4 erases them.
double texture_value(std::size_t pattern, std::size_t r, std::size_t c) {
    const auto s2 = [](std::size_t k) { return (k % 2 == 0) ? 1.0 : -1.0; };
    const auto s4 = [](std::size_t k) { return ((k / 2) % 2 == 0) ? 1.0 : -1.0; };
    switch (pattern) {
        case 0: return s2(c);           // vertical stripes, period 2
        case 1: return s2(r);           // horizontal stripes, period 2
        case 2: return s2(r) * s2(c);   // checkerboard, period 2
        case 3: return s4(c);           // vertical stripes, period 4
        case 4: return s4(r);           // horizontal stripes, period 4
        default: return s4(r) * s4(c);  // checkerboard, period 4
    }
}

nlohmann::json config_to_json(const DatasetConfig& c) {
    return nlohmann::json{{"task", c.task},
                          {"seed", c.seed},
                          {"n_classes", c.n_classes},
                          {"n_per_class", c.n_per_class},
                          {"cluster_sigma", c.cluster_sigma},
                          {"cluster_delta", c.cluster_delta},
                          {"r_max", c.r_max},
                          {"noise_sigma", c.noise_sigma},
                          {"amp_lo", c.amp_lo},
                          {"amp_hi", c.amp_hi}};
}

DatasetConfig config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.task = j.at("task").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.n_per_class = j.at("n_per_class").get<std::size_t>();
    c.cluster_sigma = j.at("cluster_sigma").get<double>();
    c.cluster_delta = j.at("cluster_delta").get<double>();
    c.r_max = j.at("r_max").get<std::size_t>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.amp_lo = j.at("amp_lo").get<double>();
    c.amp_hi = j.at("amp_hi").get<double>();
    return c;
}

}  // namespace

std::size_t output_dim(const PreprocessSpec& spec) {
    if (spec.kind == PreprocessSpec::Kind::FeatureMask) return spec.features.size();
    return spec.channels * spec.resolution * spec.resolution;
}

std::size_t cost_bytes(const PreprocessSpec& spec) {
    return output_dim(spec) * spec.bytes_per_value;
}

std::vector<double> preprocess(const PreprocessSpec& spec, const std::vector<double>& x) {
    if (spec.kind == PreprocessSpec::Kind::FeatureMask) {
        if (spec.features.empty()) throw std::invalid_argument("feature mask is empty");
        std::vector<double> out;
        out.reserve(spec.features.size());
        for (std::size_t idx : spec.features) {
            if (idx >= x.size())
                throw std::invalid_argument("feature index " + std::to_string(idx) +
                                            " out of range for input of size " +
                                            std::to_string(x.size()));
            out.push_back(x[idx]);
        }
        return out;
    }

    const std::size_t src = infer_resolution(x.size(), spec.channels);
    const std::size_t dst = spec.resolution;
    if (dst == 0 || src % dst != 0)
        throw std::invalid_argument("target resolution " + std::to_string(dst) +
                                    " does not divide source resolution " + std::to_string(src));
    const std::size_t f = src / dst;
    std::vector<double> out(spec.channels * dst * dst, 0.0);
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
        const double* plane = x.data() + ch * src * src;
        for (std::size_t i = 0; i < dst; ++i)
            for (std::size_t j = 0; j < dst; ++j) {
                double sum = 0.0;
                for (std::size_t di = 0; di < f; ++di)
                    for (std::size_t dj = 0; dj < f; ++dj)
                        sum += plane[(i * f + di) * src + (j * f + dj)];
                out[(ch * dst + i) * dst + j] = sum * inv;
            }
    }
    return out;
}

std::string preprocess_to_json(const PreprocessSpec& spec) {
    nlohmann::json j;
    if (spec.kind == PreprocessSpec::Kind::FeatureMask) {
        j["kind"] = "feature_mask";
        j["features"] = spec.features;
    } else {
        j["kind"] = "avg_pool_subsample";
        j["resolution"] = spec.resolution;
        j["channels"] = spec.channels;
    }
    j["bytes_per_value"] = spec.bytes_per_value;
    return j.dump();
}

PreprocessSpec preprocess_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    PreprocessSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "feature_mask") {
        spec.kind = PreprocessSpec::Kind::FeatureMask;
        spec.features = j.at("features").get<std::vector<std::size_t>>();
    } else if (kind == "avg_pool_subsample") {
        spec.kind = PreprocessSpec::Kind::AvgPoolSubsample;
        spec.resolution = j.at("resolution").get<std::size_t>();
        spec.channels = j.at("channels").get<std::size_t>();
    } else {
        throw std::invalid_argument("unknown preprocess kind '" + kind + "'");
    }
    if (j.contains("bytes_per_value")) spec.bytes_per_value = j.at("bytes_per_value").get<std::size_t>();
    return spec;
}

Dataset gen_feature_task(std::size_t n_classes, std::size_t n_per_class, std::uint64_t seed) {
    DatasetConfig c;
    c.task = "feature";
    c.seed = seed;
    c.n_classes = n_classes;
    c.n_per_class = n_per_class;
    return generate(c);
}

Dataset gen_image_task(std::size_t r_max, std::size_t n_classes, std::size_t n_per_class,
                       std::uint64_t seed) {
    DatasetConfig c;
    c.task = "image";
    c.seed = seed;
    c.n_classes = n_classes;
    c.n_per_class = n_per_class;
    c.r_max = r_max;
    return generate(c);
}

Dataset generate(const DatasetConfig& config) {
    Dataset ds;
    ds.config = config;
    ds.num_classes = config.n_classes;

    if (config.task == "feature") {
        if (config.n_per_class < 50)
            throw std::invalid_argument("n_per_class must be at least 50, got " +
                                        std::to_string(config.n_per_class));
        if (config.n_classes < 6 || config.n_classes % 2 != 0)
            throw std::invalid_argument("n_classes must be an even number >= 6 for the feature task");

        // Classes 0..3: two pairs sharing a feature-0 mean, split only by
        // feature 1. Classes 4/5: means differ only along feature 0 with the
        // same feature-1 distribution. Extra classes repeat the paired layout
        // further out so one feature alone stays insufficient.
        const double d = config.cluster_delta;
        std::vector<std::pair<double, double>> means;
        means.reserve(config.n_classes);
        means.emplace_back(0.0, 0.0);
        means.emplace_back(0.0, d);
        means.emplace_back(d, 0.0);
        means.emplace_back(d, d);
        means.emplace_back(2.0 * d, 0.5 * d);
        means.emplace_back(3.0 * d, 0.5 * d);
        for (std::size_t k = 6; k < config.n_classes; k += 2) {
            const double f1 = (4.0 + static_cast<double>(k - 6) / 2.0) * d;
            means.emplace_back(f1, 0.0);
            means.emplace_back(f1, d);
        }

        std::mt19937_64 g(config.seed);
        ds.input_dim = 2;
        for (std::size_t k = 0; k < config.n_classes; ++k)
            for (std::size_t i = 0; i < config.n_per_class; ++i) {
                Example ex;
                ex.x = {means[k].first + config.cluster_sigma * rng::normal(g),
                        means[k].second + config.cluster_sigma * rng::normal(g)};
                ex.y = k;
                ds.examples.push_back(std::move(ex));
            }
    } else if (config.task == "image") {
        if (config.n_per_class < 50)
            throw std::invalid_argument("n_per_class must be at least 50, got " +
                                        std::to_string(config.n_per_class));
        const std::size_t r = config.r_max;
        if (r < 8 || (r & (r - 1)) != 0)
            throw std::invalid_argument("r_max must be a power of two >= 8, got " +
                                        std::to_string(r));
        if (config.n_classes != 8)
            throw std::invalid_argument("n_classes must be 8 for the image task");

        std::mt19937_64 g(config.seed);
        ds.input_dim = r * r;
        for (std::size_t k = 0; k < config.n_classes; ++k)
            for (std::size_t i = 0; i < config.n_per_class; ++i) {
                const double amp = 0.5 * rng::uniform(g, config.amp_lo, config.amp_hi);
                Example ex;
                ex.x.resize(r * r);
                for (std::size_t row = 0; row < r; ++row)
                    for (std::size_t col = 0; col < r; ++col) {
                        double signal;
                        if (k == 0) {
                            signal = amp * (2.0 * static_cast<double>(col) /
                                                static_cast<double>(r - 1) -
                                            1.0);
                        } else if (k == 1) {
                            signal = amp * (2.0 * static_cast<double>(row) /
                                                static_cast<double>(r - 1) -
                                            1.0);
                        } else {
                            signal = amp * texture_value(k - 2, row, col);
                        }
                        ex.x[row * r + col] = 0.5 + signal + config.noise_sigma * rng::normal(g);
                    }
                ex.y = k;
                ds.examples.push_back(std::move(ex));
            }
    } else {
        throw std::invalid_argument("unknown task '" + config.task + "'");
    }

    ds.splits = make_splits(ds.examples, ds.num_classes, config.seed);
    validate(ds);
    return ds;
}

void validate(const Dataset& ds) {
    if (ds.examples.empty()) throw std::invalid_argument("dataset is empty");
    for (const auto& ex : ds.examples) {
        if (ex.x.size() != ds.input_dim) throw std::invalid_argument("example dimension mismatch");
        if (ex.y >= ds.num_classes) throw std::invalid_argument("label out of range");
    }
    std::set<std::size_t> seen;
    for (const auto* split : {&ds.splits.train, &ds.splits.val, &ds.splits.test})
        for (std::size_t idx : *split) {
            if (idx >= ds.examples.size()) throw std::invalid_argument("split index out of range");
            if (!seen.insert(idx).second) throw std::invalid_argument("splits overlap");
        }
    if (seen.size() != ds.examples.size())
        throw std::invalid_argument("splits do not cover the dataset");
}

ExpertSpec train_expert(const Dataset& ds, const PreprocessSpec& spec,
                        const std::vector<std::size_t>& hidden_widths,
                        const nn::TrainConfig& cfg) {
    if (cfg.batch_size == 0 || cfg.learning_rate <= 0.0 || cfg.steps == 0)
        throw std::invalid_argument("invalid training config");
    if (ds.splits.train.empty() || ds.splits.val.empty())
        throw std::invalid_argument("dataset needs train and val splits");

    // Preprocess once; experts only ever see the reduced view.
    std::vector<std::vector<double>> inputs(ds.examples.size());
    for (std::size_t i = 0; i < ds.examples.size(); ++i)
        inputs[i] = preprocess(spec, ds.examples[i].x);

    std::vector<std::size_t> widths;
    widths.push_back(inputs[0].size());
    for (std::size_t h : hidden_widths) widths.push_back(h);
    widths.push_back(ds.num_classes);

    nn::DenseNet net = nn::make_dense_net(widths, rng::mix(cfg.seed, 0x01));
    std::mt19937_64 g(rng::mix(cfg.seed, kShuffleStream));
    std::vector<std::size_t> order = ds.splits.train;
    rng::shuffle(order, g);
    std::size_t cursor = 0;

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        nn::Gradients grads = nn::zero_gradients(net);
        double loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                rng::shuffle(order, g);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            const auto logits = nn::forward(net, inputs[idx]);
            auto [l, dlogits] = nn::softmax_cross_entropy(logits, ds.examples[idx].y);
            loss += l;
            nn::accumulate(grads, nn::backward(net, inputs[idx], dlogits),
                           1.0 / static_cast<double>(cfg.batch_size));
        }
        if (!std::isfinite(loss))
            throw nn::training_diverged("non-finite loss in expert training",
                                        static_cast<long>(step));
        try {
            net = nn::sgd_step(net, grads, cfg.learning_rate);
        } catch (const nn::training_diverged& e) {
            throw nn::training_diverged(e.what(), static_cast<long>(step));
        }
    }

    ExpertSpec expert;
    expert.preprocess = spec;
    expert.net = std::move(net);
    expert.data_cost_bytes = cost_bytes(spec);

    std::size_t correct = 0;
    for (std::size_t idx : ds.splits.val) {
        const auto logits = nn::forward(expert.net, inputs[idx]);
        const std::size_t pred =
            std::max_element(logits.begin(), logits.end()) - logits.begin();
        if (pred == ds.examples[idx].y) ++correct;
    }
    expert.val_performance = static_cast<double>(correct) / ds.splits.val.size();
    return expert;
}

double expert_accuracy(const ExpertSpec& expert, const Dataset& ds,
                       const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("no indices to evaluate");
    std::size_t correct = 0;
    for (std::size_t idx : indices) {
        const auto logits = nn::forward(expert.net, preprocess(expert.preprocess, ds.examples[idx].x));
        const std::size_t pred =
            std::max_element(logits.begin(), logits.end()) - logits.begin();
        if (pred == ds.examples[idx].y) ++correct;
    }
    return static_cast<double>(correct) / indices.size();
}

void save_dataset(const Dataset& ds, const std::string& examples_path,
                  const std::string& sidecar_path) {
    std::ofstream out(examples_path);
    if (!out) throw std::runtime_error("cannot open " + examples_path + " for writing");
    for (const auto& ex : ds.examples) {
        nlohmann::json j{{"x", ex.x}, {"y", ex.y}};
        out << j.dump() << "\n";
    }

    nlohmann::json meta{{"config", config_to_json(ds.config)},
                        {"seed", ds.config.seed},
                        {"input_dim", ds.input_dim},
                        {"num_classes", ds.num_classes},
                        {"splits",
                         {{"train", ds.splits.train},
                          {"val", ds.splits.val},
                          {"test", ds.splits.test}}}};
    std::ofstream side(sidecar_path);
    if (!side) throw std::runtime_error("cannot open " + sidecar_path + " for writing");
    side << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& examples_path, const std::string& sidecar_path) {
    std::ifstream side(sidecar_path);
    if (!side) throw std::runtime_error("cannot open " + sidecar_path);
    nlohmann::json meta;
    side >> meta;

    Dataset ds;
    ds.config = config_from_json(meta.at("config"));
    ds.input_dim = meta.at("input_dim").get<std::size_t>();
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
    ds.splits.train = meta.at("splits").at("train").get<std::vector<std::size_t>>();
    ds.splits.val = meta.at("splits").at("val").get<std::vector<std::size_t>>();
    ds.splits.test = meta.at("splits").at("test").get<std::vector<std::size_t>>();

    std::ifstream in(examples_path);
    if (!in) throw std::runtime_error("cannot open " + examples_path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Example ex;
        ex.x = j.at("x").get<std::vector<double>>();
        ex.y = j.at("y").get<std::size_t>();
        ds.examples.push_back(std::move(ex));
    }
    validate(ds);
    return ds;
}

void save_expert(const ExpertSpec& expert, const std::string& path) {
    auto j = nlohmann::json::parse(nn::to_checkpoint_json(expert.net));
    j["id"] = expert.id;
    j["preprocess"] = nlohmann::json::parse(preprocess_to_json(expert.preprocess));
    j["cost_bytes"] = expert.data_cost_bytes;
    j["val_perf"] = expert.val_performance;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump() << "\n";
}

ExpertSpec load_expert(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;

    ExpertSpec expert;
    expert.net = nn::from_checkpoint_json(j.dump());
    expert.id = j.value("id", 0);
    expert.preprocess = preprocess_from_json(j.at("preprocess").dump());
    expert.data_cost_bytes = j.at("cost_bytes").get<std::size_t>();
    expert.val_performance = j.at("val_perf").get<double>();
    if (expert.data_cost_bytes != cost_bytes(expert.preprocess))
        throw std::invalid_argument("stored cost does not match preprocess spec in " + path);
    return expert;
}

}  // namespace bmoe::synth
