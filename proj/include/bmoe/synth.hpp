#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bmoe/nn.hpp"

namespace bmoe::synth {

// Input reduction applied before an expert sees an example. The byte cost of
// an expert's input stream is a pure function of this spec.
struct PreprocessSpec {
    enum class Kind { FeatureMask, AvgPoolSubsample };

    Kind kind = Kind::FeatureMask;
    std::vector<std::size_t> features;   // FeatureMask: indices kept, nonempty
    std::size_t resolution = 0;          // AvgPoolSubsample: target R, divides source R
    std::size_t channels = 1;            // AvgPoolSubsample
    std::size_t bytes_per_value = 4;     // K
};

// Retained values times K bytes.
std::size_t cost_bytes(const PreprocessSpec& spec);

std::size_t output_dim(const PreprocessSpec& spec);

// feature_mask selects coordinates; avg_pool_subsample block-averages a
// channels x R x R input (R inferred from x.size()) down to resolution.
std::vector<double> preprocess(const PreprocessSpec& spec, const std::vector<double>& x);

std::string preprocess_to_json(const PreprocessSpec& spec);
PreprocessSpec preprocess_from_json(const std::string& text);

struct Example {
    std::vector<double> x;
    std::size_t y = 0;
};

struct Splits {
    std::vector<std::size_t> train, val, test;
};

// Everything a generator needs; regeneration from an equal config is
// bit-identical.
struct DatasetConfig {
    std::string task = "feature";  // "feature" | "image"
    std::uint64_t seed = 0;
    std::size_t n_classes = 6;
    std::size_t n_per_class = 2000;
    // feature task
    double cluster_sigma = 0.4;
    double cluster_delta = 4.0;
    // image task
    std::size_t r_max = 16;
    double noise_sigma = 0.25;
    double amp_lo = 0.7;
    double amp_hi = 1.3;
};

struct Dataset {
    DatasetConfig config;
    std::vector<Example> examples;
    Splits splits;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
};

// Gaussian clusters in R^2. Classes 4 and 5 differ only along feature 0 with
// identical feature-1 distributions; the other classes come in pairs that a
// single feature cannot separate.
Dataset gen_feature_task(std::size_t n_classes, std::size_t n_per_class, std::uint64_t seed);

// Single-channel r_max x r_max images. Classes 0/1 carry smooth gradients that
// survive heavy pooling; the rest carry stripe/checker textures that are
// zero-mean inside every aligned 4x4 block, so a 4x4 view of them is noise.
Dataset gen_image_task(std::size_t r_max, std::size_t n_classes, std::size_t n_per_class,
                       std::uint64_t seed);

Dataset generate(const DatasetConfig& config);

void validate(const Dataset& ds);

// A frozen per-cost model: reduced view in, class logits out.
struct ExpertSpec {
    int id = 0;
    PreprocessSpec preprocess;
    nn::DenseNet net;
    std::size_t data_cost_bytes = 0;
    double val_performance = 0.0;
};

// Trains a classifier on preprocessed inputs with minibatch SGD and records
// accuracy on the val split. Deterministic given cfg.seed.
ExpertSpec train_expert(const Dataset& ds, const PreprocessSpec& spec,
                        const std::vector<std::size_t>& hidden_widths,
                        const nn::TrainConfig& cfg);

// Accuracy of an expert alone over the given example indices.
double expert_accuracy(const ExpertSpec& expert, const Dataset& ds,
                       const std::vector<std::size_t>& indices);

// Dataset files: JSON-lines examples plus a sidecar with config, seed and
// splits. Expert file: network checkpoint extended with preprocess spec,
// cost and val performance.
void save_dataset(const Dataset& ds, const std::string& examples_path,
                  const std::string& sidecar_path);
Dataset load_dataset(const std::string& examples_path, const std::string& sidecar_path);

void save_expert(const ExpertSpec& expert, const std::string& path);
ExpertSpec load_expert(const std::string& path);

}  // namespace bmoe::synth
