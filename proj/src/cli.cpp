#include "bmoe/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bmoe/bias.hpp"
#include "bmoe/eval.hpp"
#include "bmoe/lp.hpp"
#include "bmoe/nn.hpp"
#include "bmoe/rng.hpp"
#include "bmoe/synth.hpp"

namespace fs = std::filesystem;

namespace bmoe::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitNumerical = 4;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("short write to " + path.string());
}

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

// Manifest: what ran, with which effective settings, and a digest per
// artifact so reruns can be compared at a glance.
void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const nlohmann::json& config, const std::vector<fs::path>& artifacts) {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    j["artifacts"] = nlohmann::json::object();
    for (const auto& path : artifacts)
        j["artifacts"][path.filename().string()] = fnv1a64_hex(read_file(path));
    write_file(dir / "manifest.json", j.dump(2));
}

// Flag beats config file beats fallback.
template <typename T>
T pick(const CLI::Option* opt, const T& flag_value, const nlohmann::json& cfg,
       const std::string& key, const T& fallback) {
    if (opt != nullptr && opt->count() > 0) return flag_value;
    if (cfg.contains(key)) return cfg.at(key).get<T>();
    return fallback;
}

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    const auto j = nlohmann::json::parse(read_file(path));
    if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
    return j;
}

std::uint64_t env_seed_or(std::uint64_t fallback) {
    const char* s = std::getenv("BMOE_SEED");
    if (s == nullptr || *s == '\0') return fallback;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0')
        throw std::invalid_argument("BMOE_SEED must be an unsigned integer");
    return static_cast<std::uint64_t>(v);
}

// Accepts "[1,2]" JSON tokens, "1,2" comma lists, and repeated plain values.
std::vector<double> parse_number_list(const std::vector<std::string>& tokens) {
    std::vector<double> out;
    for (const auto& tok : tokens) {
        if (!tok.empty() && tok.front() == '[') {
            const auto j = nlohmann::json::parse(tok);
            if (!j.is_array()) throw std::invalid_argument("expected a JSON array of numbers");
            for (const auto& v : j) out.push_back(v.get<double>());
            continue;
        }
        std::stringstream ss(tok);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (part.empty()) continue;
            std::size_t used = 0;
            const double v = std::stod(part, &used);
            if (used != part.size()) throw std::invalid_argument("bad number: " + part);
            out.push_back(v);
        }
    }
    return out;
}

std::string canonical_method(const std::string& name) {
    if (name == "enforcement" || name == "bias_enforcement") return "bias_enforcement";
    if (name == "soft" || name == "soft_regularization") return "soft_regularization";
    if (name == "random" || name == "random_selection") return "random_selection";
    if (name == "single" || name == "single_expert") return "single_expert";
    throw std::invalid_argument("unknown method: " + name);
}

synth::Dataset load_data_dir(const std::string& dir) {
    const fs::path p(dir);
    return synth::load_dataset((p / "data.jsonl").string(), (p / "data.meta.json").string());
}

std::vector<fs::path> expert_paths(const std::string& dir) {
    const fs::path p(dir);
    const auto report = nlohmann::json::parse(read_file(p / "p_report.json"));
    if (!report.is_array() || report.empty())
        throw std::invalid_argument("p_report.json must hold a nonempty array");
    std::vector<fs::path> out;
    for (std::size_t k = 0; k < report.size(); ++k)
        out.push_back(p / ("expert_" + std::to_string(k) + ".json"));
    return out;
}

std::vector<synth::ExpertSpec> load_experts_dir(const std::string& dir) {
    std::vector<synth::ExpertSpec> experts;
    for (const auto& path : expert_paths(dir)) experts.push_back(synth::load_expert(path.string()));
    return experts;
}

std::vector<synth::PreprocessSpec> default_expert_specs(const std::string& task) {
    std::vector<synth::PreprocessSpec> specs;
    if (task == "feature") {
        synth::PreprocessSpec a;
        a.kind = synth::PreprocessSpec::Kind::FeatureMask;
        a.features = {0};
        synth::PreprocessSpec b = a;
        b.features = {0, 1};
        specs = {a, b};
    } else if (task == "image") {
        for (std::size_t r : {std::size_t{4}, std::size_t{8}, std::size_t{16}}) {
            synth::PreprocessSpec s;
            s.kind = synth::PreprocessSpec::Kind::AvgPoolSubsample;
            s.resolution = r;
            s.channels = 1;
            specs.push_back(s);
        }
    } else {
        throw std::invalid_argument("no default experts for task: " + task);
    }
    return specs;
}

std::vector<synth::PreprocessSpec> parse_expert_specs(const std::string& value) {
    std::string text = value;
    if (!value.empty() && value.front() != '[') text = read_file(value);
    const auto j = nlohmann::json::parse(text);
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("--experts must give a nonempty JSON array of preprocess specs");
    std::vector<synth::PreprocessSpec> specs;
    for (const auto& el : j) specs.push_back(synth::preprocess_from_json(el.dump()));
    return specs;
}

nlohmann::json p_report_json(const std::vector<synth::ExpertSpec>& experts) {
    nlohmann::json report = nlohmann::json::array();
    for (const auto& e : experts)
        report.push_back({{"id", e.id},
                          {"cost_bytes", e.data_cost_bytes},
                          {"val_perf", e.val_performance}});
    return report;
}

std::vector<fs::path> train_and_save_experts(const synth::Dataset& ds,
                                             const std::vector<synth::PreprocessSpec>& specs,
                                             const std::vector<std::size_t>& hidden,
                                             const nn::TrainConfig& base_cfg, std::uint64_t seed,
                                             const fs::path& out_dir,
                                             std::vector<synth::ExpertSpec>* out_experts) {
    std::vector<fs::path> written;
    std::vector<synth::ExpertSpec> experts;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        nn::TrainConfig tc = base_cfg;
        tc.seed = rng::mix(seed, k);
        auto expert = synth::train_expert(ds, specs[k], hidden, tc);
        expert.id = static_cast<int>(k);
        const fs::path path = out_dir / ("expert_" + std::to_string(k) + ".json");
        synth::save_expert(expert, path.string());
        written.push_back(path);
        experts.push_back(std::move(expert));
    }
    const fs::path report_path = out_dir / "p_report.json";
    write_file(report_path, p_report_json(experts).dump(2));
    written.push_back(report_path);
    if (out_experts != nullptr) *out_experts = std::move(experts);
    return written;
}

struct GenDataArgs {
    std::string config_path, task = "feature", output = ".";
    std::uint64_t seed = 0;
    std::size_t n_classes = 0, n_per_class = 0;
    CLI::Option *task_opt = nullptr, *seed_opt = nullptr, *classes_opt = nullptr,
                *per_class_opt = nullptr, *output_opt = nullptr;
};

int run_gen_data(const GenDataArgs& a) {
    const auto cfg = load_config(a.config_path);
    synth::DatasetConfig dc;
    dc.task = pick(a.task_opt, a.task, cfg, "task", std::string("feature"));
    dc.seed = pick(a.seed_opt, a.seed, cfg, "seed", env_seed_or(0));
    const bool image = dc.task == "image";
    dc.n_classes =
        pick(a.classes_opt, a.n_classes, cfg, "n_classes", std::size_t{image ? 8u : 6u});
    dc.n_per_class =
        pick(a.per_class_opt, a.n_per_class, cfg, "n_per_class", std::size_t{image ? 500u : 2000u});

    const fs::path out(pick(a.output_opt, a.output, cfg, "output", std::string(".")));
    const auto ds = synth::generate(dc);
    fs::create_directories(out);
    const fs::path data_path = out / "data.jsonl";
    const fs::path meta_path = out / "data.meta.json";
    synth::save_dataset(ds, data_path.string(), meta_path.string());

    nlohmann::json eff = {{"task", dc.task},
                          {"seed", dc.seed},
                          {"n_classes", dc.n_classes},
                          {"n_per_class", dc.n_per_class}};
    write_manifest(out, "gen-data", dc.seed, eff, {data_path, meta_path});
    std::cout << "wrote " << data_path.string() << " (" << ds.examples.size() << " examples)\n";
    return kExitOk;
}

struct TrainExpertsArgs {
    std::string config_path, data, experts, output = ".";
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden = {32};
    std::size_t steps = 2500, batch_size = 128;
    double lr = 0.05;
    CLI::Option *experts_opt = nullptr, *seed_opt = nullptr, *hidden_opt = nullptr,
                *steps_opt = nullptr, *batch_opt = nullptr, *lr_opt = nullptr,
                *output_opt = nullptr;
};

int run_train_experts(const TrainExpertsArgs& a) {
    const auto cfg = load_config(a.config_path);
    const auto ds = load_data_dir(a.data);
    const std::uint64_t seed = pick(a.seed_opt, a.seed, cfg, "seed", env_seed_or(ds.config.seed));
    const std::string experts_value =
        pick(a.experts_opt, a.experts, cfg, "experts", std::string());
    const auto specs = experts_value.empty() ? default_expert_specs(ds.config.task)
                                             : parse_expert_specs(experts_value);
    nn::TrainConfig tc;
    tc.batch_size = pick(a.batch_opt, a.batch_size, cfg, "batch_size", std::size_t{128});
    tc.learning_rate = pick(a.lr_opt, a.lr, cfg, "lr", 0.05);
    tc.steps = pick(a.steps_opt, a.steps, cfg, "steps", std::size_t{2500});
    const auto hidden = pick(a.hidden_opt, a.hidden, cfg, "hidden", std::vector<std::size_t>{32});

    const fs::path out(pick(a.output_opt, a.output, cfg, "output", std::string(".")));
    fs::create_directories(out);
    std::vector<synth::ExpertSpec> experts;
    const auto written = train_and_save_experts(ds, specs, hidden, tc, seed, out, &experts);

    nlohmann::json eff = {{"seed", seed},
                          {"data", a.data},
                          {"hidden", hidden},
                          {"steps", tc.steps},
                          {"lr", tc.learning_rate},
                          {"batch_size", tc.batch_size},
                          {"experts", nlohmann::json::parse(p_report_json(experts).dump())}};
    write_manifest(out, "train-experts", seed, eff, written);
    for (const auto& e : experts)
        std::cout << "expert " << e.id << ": cost_bytes=" << e.data_cost_bytes
                  << " val_perf=" << e.val_performance << "\n";
    return kExitOk;
}

struct SolveBiasArgs {
    std::string config_path, experts, output;
    std::vector<std::string> d_tokens, p_tokens;
    double cost = 0.0, perf = 0.0;
    CLI::Option *cost_opt = nullptr, *perf_opt = nullptr;
};

int run_solve_bias(const SolveBiasArgs& a) {
    lp::CostVector d;
    lp::PerfVector p;
    if (!a.experts.empty()) {
        const auto report =
            nlohmann::json::parse(read_file(fs::path(a.experts) / "p_report.json"));
        for (const auto& e : report) {
            d.d.push_back(e.at("cost_bytes").get<double>());
            p.p.push_back(e.at("val_perf").get<double>());
        }
    } else {
        d.d = parse_number_list(a.d_tokens);
        p.p = parse_number_list(a.p_tokens);
    }
    if (d.d.empty() || p.p.empty())
        throw std::invalid_argument("need --experts DIR or both --d and --p");

    const bool has_cost = a.cost_opt->count() > 0;
    const bool has_perf = a.perf_opt->count() > 0;
    if (has_cost == has_perf)
        throw std::invalid_argument("exactly one of --cost or --perf is required");
    const auto sol = has_cost ? lp::solve_for_cost(d, p, a.cost) : lp::solve_for_perf(d, p, a.perf);

    const std::string text = lp::to_json(sol);
    if (a.output.empty()) {
        std::cout << text << "\n";
    } else {
        write_file(a.output, text + "\n");
    }
    if (sol.status != lp::LPStatus::Optimal) {
        std::cerr << "target outside the feasible interval [" << sol.feasible_lo << ", "
                  << sol.feasible_hi << "]\n";
        return kExitInfeasible;
    }
    return kExitOk;
}

struct TrainMixtureArgs {
    std::string config_path, data, experts, method = "enforcement", output = ".";
    std::vector<std::string> bias_tokens;
    double cost = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden = {16};
    std::size_t steps = 1200, batch_size = 128;
    double lr = 0.05, w_bias = 1.0, weight_decay = 0.0;
    CLI::Option *bias_opt = nullptr, *cost_opt = nullptr, *seed_opt = nullptr,
                *method_opt = nullptr, *hidden_opt = nullptr, *steps_opt = nullptr,
                *batch_opt = nullptr, *lr_opt = nullptr, *w_bias_opt = nullptr,
                *decay_opt = nullptr, *output_opt = nullptr;
};

int run_train_mixture(const TrainMixtureArgs& a) {
    const auto cfg = load_config(a.config_path);
    const auto ds = load_data_dir(a.data);
    const auto experts = load_experts_dir(a.experts);
    const std::uint64_t seed = pick(a.seed_opt, a.seed, cfg, "seed", env_seed_or(0));
    const std::string method_name =
        canonical_method(pick(a.method_opt, a.method, cfg, "method", std::string("enforcement")));

    const bool has_bias = a.bias_opt->count() > 0 || cfg.contains("bias");
    const bool has_cost = a.cost_opt->count() > 0 || cfg.contains("cost");
    if (has_bias == has_cost)
        throw std::invalid_argument("exactly one of --bias or --cost is required");

    bias::BiasVector b;
    if (has_bias) {
        b.b = a.bias_opt->count() > 0 ? parse_number_list(a.bias_tokens)
                                      : cfg.at("bias").get<std::vector<double>>();
    } else {
        lp::CostVector d;
        lp::PerfVector p;
        for (const auto& e : experts) {
            d.d.push_back(static_cast<double>(e.data_cost_bytes));
            p.p.push_back(e.val_performance);
        }
        const double target = a.cost_opt->count() > 0 ? a.cost : cfg.at("cost").get<double>();
        const auto sol = lp::solve_for_cost(d, p, target);
        if (sol.status != lp::LPStatus::Optimal) {
            std::cerr << "cost target outside the feasible interval [" << sol.feasible_lo << ", "
                      << sol.feasible_hi << "]\n";
            return kExitInfeasible;
        }
        b = sol.b;
    }
    bias::validate(b);
    if (b.size() != experts.size())
        throw std::invalid_argument("bias length does not match the expert count");

    nn::TrainConfig tc;
    tc.batch_size = pick(a.batch_opt, a.batch_size, cfg, "batch_size", std::size_t{128});
    tc.learning_rate = pick(a.lr_opt, a.lr, cfg, "lr", 0.05);
    tc.steps = pick(a.steps_opt, a.steps, cfg, "steps", std::size_t{1200});
    tc.seed = seed;
    tc.weight_decay = pick(a.decay_opt, a.weight_decay, cfg, "weight_decay", 0.0);
    const auto hidden = pick(a.hidden_opt, a.hidden, cfg, "hidden", std::vector<std::size_t>{16});
    bias::BiasLossConfig lc;
    lc.w_bias = pick(a.w_bias_opt, a.w_bias, cfg, "w_bias", 1.0);

    bias::MixtureModel model;
    model.experts = experts;
    model.bias = b;
    model.method = bias::method_from_name(method_name);
    std::vector<std::size_t> widths = {ds.input_dim};
    for (std::size_t w : hidden) widths.push_back(w);
    widths.push_back(experts.size());
    model.gating_net = bias::make_gating_net(widths, rng::mix(seed, 0x11));

    const auto result = bias::train_mixture(model, ds, tc, lc);

    const fs::path out(pick(a.output_opt, a.output, cfg, "output", std::string(".")));
    fs::create_directories(out);
    std::vector<std::string> refs;
    for (const auto& path : expert_paths(a.experts)) {
        std::error_code ec;
        const fs::path rel = fs::relative(fs::absolute(path), fs::absolute(out), ec);
        refs.push_back(ec ? fs::absolute(path).string() : rel.string());
    }
    const fs::path mixture_path = out / "mixture.json";
    const fs::path log_path = out / "training_log.csv";
    bias::save_mixture(result.model, mixture_path.string(), refs);
    write_file(log_path, result.log.to_csv());

    nlohmann::json eff = {{"seed", seed},        {"method", method_name},
                          {"bias", b.b},         {"hidden", hidden},
                          {"steps", tc.steps},   {"lr", tc.learning_rate},
                          {"batch_size", tc.batch_size}, {"w_bias", lc.w_bias},
                          {"data", a.data},      {"experts", a.experts}};
    write_manifest(out, "train-mixture", seed, eff, {mixture_path, log_path});
    std::cout << "wrote " << mixture_path.string() << "\n";
    return kExitOk;
}

struct SweepArgs {
    std::string config_path, task = "feature", data, experts, output = ".";
    std::uint64_t seed = 0;
    std::vector<std::string> target_tokens, method_tokens, w_bias_tokens;
    std::vector<std::uint64_t> seeds;
    std::size_t jobs = 1, trials = 20, steps = 1200, batch_size = 128;
    std::size_t expert_steps = 2500;
    double lr = 0.05, expert_lr = 0.05, weight_decay = 0.0;
    std::vector<std::size_t> gating_hidden = {16}, expert_hidden = {32};
    CLI::Option *task_opt = nullptr, *seed_opt = nullptr, *targets_opt = nullptr,
                *methods_opt = nullptr, *seeds_opt = nullptr, *jobs_opt = nullptr,
                *trials_opt = nullptr, *steps_opt = nullptr, *batch_opt = nullptr,
                *lr_opt = nullptr, *w_bias_opt = nullptr, *decay_opt = nullptr,
                *gating_hidden_opt = nullptr, *expert_steps_opt = nullptr,
                *expert_lr_opt = nullptr, *expert_hidden_opt = nullptr, *output_opt = nullptr;
};

int run_sweep_cmd(const SweepArgs& a) {
    const auto cfg = load_config(a.config_path);
    const std::uint64_t seed = pick(a.seed_opt, a.seed, cfg, "seed", env_seed_or(0));
    const fs::path out(pick(a.output_opt, a.output, cfg, "output", std::string(".")));
    fs::create_directories(out);
    std::vector<fs::path> artifacts;

    synth::Dataset ds;
    if (!a.data.empty()) {
        ds = load_data_dir(a.data);
    } else {
        synth::DatasetConfig dc;
        dc.task = pick(a.task_opt, a.task, cfg, "task", std::string("feature"));
        dc.seed = seed;
        const bool image = dc.task == "image";
        dc.n_classes = image ? 8 : 6;
        dc.n_per_class = image ? 500 : 2000;
        ds = synth::generate(dc);
        const fs::path data_path = out / "data.jsonl";
        const fs::path meta_path = out / "data.meta.json";
        synth::save_dataset(ds, data_path.string(), meta_path.string());
        artifacts.push_back(data_path);
        artifacts.push_back(meta_path);
    }

    std::vector<synth::ExpertSpec> experts;
    if (!a.experts.empty()) {
        experts = load_experts_dir(a.experts);
    } else {
        nn::TrainConfig etc;
        etc.batch_size = 128;
        etc.learning_rate = pick(a.expert_lr_opt, a.expert_lr, cfg, "expert_lr", 0.05);
        etc.steps = pick(a.expert_steps_opt, a.expert_steps, cfg, "expert_steps", std::size_t{2500});
        const auto hidden = pick(a.expert_hidden_opt, a.expert_hidden, cfg, "expert_hidden",
                                 std::vector<std::size_t>{32});
        const auto written = train_and_save_experts(ds, default_expert_specs(ds.config.task),
                                                    hidden, etc, seed, out, &experts);
        artifacts.insert(artifacts.end(), written.begin(), written.end());
    }

    eval::SweepConfig sc;
    if (a.methods_opt->count() > 0) {
        sc.methods.clear();
        for (const auto& tok : a.method_tokens) {
            std::stringstream ss(tok);
            std::string part;
            while (std::getline(ss, part, ','))
                if (!part.empty()) sc.methods.push_back(canonical_method(part));
        }
    } else if (cfg.contains("methods")) {
        sc.methods.clear();
        for (const auto& m : cfg.at("methods")) sc.methods.push_back(canonical_method(m));
    }
    if (a.targets_opt->count() > 0) {
        sc.targets = parse_number_list(a.target_tokens);
    } else if (cfg.contains("targets")) {
        sc.targets = cfg.at("targets").get<std::vector<double>>();
    }
    sc.seeds = pick(a.seeds_opt, a.seeds, cfg, "seeds",
                    std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    if (a.w_bias_opt->count() > 0) {
        sc.w_bias_grid = parse_number_list(a.w_bias_tokens);
    } else if (cfg.contains("w_bias_grid")) {
        sc.w_bias_grid = cfg.at("w_bias_grid").get<std::vector<double>>();
    }
    sc.mixture_train.batch_size = pick(a.batch_opt, a.batch_size, cfg, "batch_size",
                                       std::size_t{128});
    sc.mixture_train.learning_rate = pick(a.lr_opt, a.lr, cfg, "lr", 0.05);
    sc.mixture_train.steps = pick(a.steps_opt, a.steps, cfg, "steps", std::size_t{1200});
    sc.mixture_train.weight_decay = pick(a.decay_opt, a.weight_decay, cfg, "weight_decay", 0.0);
    sc.gating_hidden = pick(a.gating_hidden_opt, a.gating_hidden, cfg, "gating_hidden",
                            std::vector<std::size_t>{16});
    sc.random_trials = pick(a.trials_opt, a.trials, cfg, "trials", std::size_t{20});
    sc.jobs = pick(a.jobs_opt, a.jobs, cfg, "jobs", std::size_t{1});

    // Feasibility pre-check so an entirely infeasible request maps to its own
    // exit code instead of a generic usage error.
    {
        lp::CostVector d;
        lp::PerfVector p;
        for (const auto& e : experts) {
            d.d.push_back(static_cast<double>(e.data_cost_bytes));
            p.p.push_back(e.val_performance);
        }
        const double d_min = *std::min_element(d.d.begin(), d.d.end());
        const double d_max = *std::max_element(d.d.begin(), d.d.end());
        const auto wanted = sc.targets.empty() ? eval::auto_targets(d_min, d_max) : sc.targets;
        bool any_feasible = false;
        for (double t : wanted) {
            const auto sol = lp::solve_for_cost(d, p, t);
            if (sol.status == lp::LPStatus::Optimal) {
                any_feasible = true;
            } else {
                std::cerr << "skipping infeasible target " << t << " (feasible interval ["
                          << sol.feasible_lo << ", " << sol.feasible_hi << "])\n";
            }
        }
        if (!any_feasible) {
            std::cerr << "no requested target is feasible\n";
            return kExitInfeasible;
        }
    }

    const auto report = eval::run_sweep(ds, experts, sc);

    const fs::path csv_path = out / "results.csv";
    const fs::path report_path = out / "report.json";
    write_file(csv_path, eval::results_csv(report));
    write_file(report_path, eval::report_json(report));
    artifacts.push_back(csv_path);
    artifacts.push_back(report_path);

    nlohmann::json eff = {{"task", ds.config.task},
                          {"seed", seed},
                          {"methods", sc.methods},
                          {"targets", report.targets},
                          {"skipped_targets", report.skipped_targets},
                          {"seeds", sc.seeds},
                          {"w_bias_grid", sc.w_bias_grid},
                          {"steps", sc.mixture_train.steps},
                          {"lr", sc.mixture_train.learning_rate},
                          {"batch_size", sc.mixture_train.batch_size},
                          {"gating_hidden", sc.gating_hidden},
                          {"trials", sc.random_trials},
                          {"jobs", sc.jobs}};
    write_manifest(out, "sweep", seed, eff, artifacts);
    for (const auto& ms : report.methods)
        std::cout << ms.method << ": rho_mean=" << ms.rho_mean << "\n";
    std::cout << "wrote " << csv_path.string() << "\n";
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"biased mixture-of-experts tooling"};
    app.require_subcommand(1);

    GenDataArgs gd;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", gd.config_path, "JSON config file; flags win");
    gd.task_opt = gen->add_option("--task", gd.task, "feature | image");
    gd.seed_opt = gen->add_option("--seed", gd.seed, "RNG seed");
    gd.classes_opt = gen->add_option("--n-classes", gd.n_classes, "class count");
    gd.per_class_opt = gen->add_option("--n-per-class", gd.n_per_class, "examples per class");
    gd.output_opt = gen->add_option("--output", gd.output, "output directory");

    TrainExpertsArgs te;
    auto* texp = app.add_subcommand("train-experts", "train one expert per preprocess spec");
    texp->add_option("--config", te.config_path, "JSON config file; flags win");
    texp->add_option("--data", te.data, "dataset directory")->required();
    te.experts_opt =
        texp->add_option("--experts", te.experts, "preprocess specs: JSON array or file path");
    te.seed_opt = texp->add_option("--seed", te.seed, "RNG seed");
    te.hidden_opt = texp->add_option("--hidden", te.hidden, "hidden layer widths");
    te.steps_opt = texp->add_option("--steps", te.steps, "SGD steps");
    te.batch_opt = texp->add_option("--batch-size", te.batch_size, "minibatch size");
    te.lr_opt = texp->add_option("--lr", te.lr, "learning rate");
    te.output_opt = texp->add_option("--output", te.output, "output directory");

    SolveBiasArgs sb;
    auto* solve = app.add_subcommand("solve-bias", "solve for the optimal bias vector");
    solve->add_option("--config", sb.config_path, "JSON config file; flags win");
    solve->add_option("--experts", sb.experts, "expert directory (uses p_report.json)");
    solve->add_option("--d", sb.d_tokens, "per-expert byte costs");
    solve->add_option("--p", sb.p_tokens, "per-expert performances");
    sb.cost_opt = solve->add_option("--cost", sb.cost, "target average bytes per input");
    sb.perf_opt = solve->add_option("--perf", sb.perf, "target performance");
    solve->add_option("--output", sb.output, "write the solution here instead of stdout");

    TrainMixtureArgs tm;
    auto* tmix = app.add_subcommand("train-mixture", "train a gating network over frozen experts");
    tmix->add_option("--config", tm.config_path, "JSON config file; flags win");
    tmix->add_option("--data", tm.data, "dataset directory")->required();
    tmix->add_option("--experts", tm.experts, "expert directory")->required();
    tm.bias_opt = tmix->add_option("--bias", tm.bias_tokens, "bias vector");
    tm.cost_opt = tmix->add_option("--cost", tm.cost, "solve the bias for this byte target");
    tm.method_opt = tmix->add_option("--method", tm.method, "enforcement | soft");
    tm.seed_opt = tmix->add_option("--seed", tm.seed, "RNG seed");
    tm.hidden_opt = tmix->add_option("--hidden", tm.hidden, "gating hidden widths");
    tm.steps_opt = tmix->add_option("--steps", tm.steps, "SGD steps");
    tm.batch_opt = tmix->add_option("--batch-size", tm.batch_size, "minibatch size");
    tm.lr_opt = tmix->add_option("--lr", tm.lr, "learning rate");
    tm.w_bias_opt = tmix->add_option("--w-bias", tm.w_bias, "bias loss weight");
    tm.decay_opt = tmix->add_option("--weight-decay", tm.weight_decay, "gating L2 shrink per step");
    tm.output_opt = tmix->add_option("--output", tm.output, "output directory");

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "full evaluation across methods and targets");
    sweep->add_option("--config", sw.config_path, "JSON config file; flags win");
    sw.task_opt = sweep->add_option("--task", sw.task, "feature | image");
    sw.seed_opt = sweep->add_option("--seed", sw.seed, "base RNG seed");
    sweep->add_option("--data", sw.data, "reuse this dataset directory");
    sweep->add_option("--experts", sw.experts, "reuse this expert directory");
    sw.targets_opt = sweep->add_option("--targets", sw.target_tokens, "byte targets");
    sw.methods_opt = sweep->add_option("--methods", sw.method_tokens, "methods to run");
    sw.seeds_opt = sweep->add_option("--seeds", sw.seeds, "training seeds");
    sw.jobs_opt = sweep->add_option("--jobs", sw.jobs, "worker threads");
    sw.trials_opt = sweep->add_option("--trials", sw.trials, "random baseline trials");
    sw.steps_opt = sweep->add_option("--steps", sw.steps, "mixture SGD steps");
    sw.batch_opt = sweep->add_option("--batch-size", sw.batch_size, "mixture minibatch size");
    sw.lr_opt = sweep->add_option("--lr", sw.lr, "mixture learning rate");
    sw.decay_opt =
        sweep->add_option("--weight-decay", sw.weight_decay, "gating L2 shrink per step");
    sw.w_bias_opt = sweep->add_option("--w-bias-grid", sw.w_bias_tokens, "bias weight grid");
    sw.gating_hidden_opt =
        sweep->add_option("--gating-hidden", sw.gating_hidden, "gating hidden widths");
    sw.expert_steps_opt = sweep->add_option("--expert-steps", sw.expert_steps, "expert SGD steps");
    sw.expert_lr_opt = sweep->add_option("--expert-lr", sw.expert_lr, "expert learning rate");
    sw.expert_hidden_opt =
        sweep->add_option("--expert-hidden", sw.expert_hidden, "expert hidden widths");
    sw.output_opt = sweep->add_option("--output", sw.output, "output directory");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("bmoe");
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen_data(gd);
        if (texp->parsed()) return run_train_experts(te);
        if (solve->parsed()) return run_solve_bias(sb);
        if (tmix->parsed()) return run_train_mixture(tm);
        if (sweep->parsed()) return run_sweep_cmd(sw);
        std::cerr << "no subcommand given\n";
        return kExitUsage;
    } catch (const nn::training_diverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const lp::SimplexError& e) {
        std::cerr << "solver failed: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace bmoe::cli
