#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

enum class Backbone { dot_product, stochastic };
enum class Mechanism { none, simp, value, add, stoc };
enum class RefineScale { sqrt_d, sqrt_n };

std::string to_string(Backbone b);
std::string to_string(Mechanism m);
std::string to_string(RefineScale s);
Backbone backbone_from_string(const std::string& s);
Mechanism mechanism_from_string(const std::string& s);
RefineScale refine_scale_from_string(const std::string& s);

/// Architecture and optimization hyperparameters.
struct ModelConfig {
    Backbone backbone = Backbone::dot_product;
    Mechanism mechanism = Mechanism::none;
    int d = 32;       // embedding dimension
    int n = 20;       // max sequence length
    int heads = 1;
    int layers = 1;
    double dropout = 0.0;
    double learning_rate = 1e-3;
    double l2_weight = 0.0;
    uint64_t seed = 42;
    RefineScale refine_scale = RefineScale::sqrt_d;

    int d_head() const { return d / heads; }
    void validate() const;  // throws UserError
};

/// Evaluation candidate set: full vocabulary or target + k sampled negatives.
struct EvalMode {
    bool full = true;
    int sampled = 0;

    std::string str() const { return full ? "full" : "sampled:" + std::to_string(sampled); }
    static EvalMode parse(const std::string& s);
};

/// Everything a run needs: model, data location, run directory, training
/// loop settings, evaluation settings. Loaded from a JSON config file with
/// strict unknown-key rejection; every field has a default.
struct RunConfig {
    ModelConfig model;
    std::string dataset_path;
    std::string run_dir;
    int batch_size = 128;
    int num_negatives = 1;
    int max_epochs = 200;
    int patience = 20;
    std::vector<int> eval_topn = {1, 5, 10, 20};
    EvalMode eval_mode;
    int export_last_k = 15;

    void validate() const;
    std::string to_json_string() const;  // resolved config, all keys explicit
    static RunConfig from_json_string(const std::string& text);
    static RunConfig load(const std::string& path);
};

std::string read_text_file(const std::string& path);  // throws UserError
void write_text_file(const std::string& path, const std::string& content);

}  // namespace seqrec
