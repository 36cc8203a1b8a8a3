#pragma once

#include <span>
#include <vector>

#include "seqrec/config.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

/// Causal + padding attention mask for one left-padded sequence.
/// allowed(k,t): position k may attend to t (both real, t <= k).
/// softmax_support additionally lets padding rows attend to themselves so
/// softmax never sees an empty row; those rows are zeroed afterwards via
/// keep_rows so final weights carry exact zeros everywhere outside `allowed`.
struct AttentionMask {
    int n = 0;
    std::vector<uint8_t> valid;  // per position, 1 = real item
    BoolMat allowed;
    BoolMat softmax_support;
    BoolMat keep_rows;

    static AttentionMask causal(std::span<const int> padded_ids);
};

/// Raw and refined attention for one layer/head. B is undefined for
/// mechanism none. weights is the final row-stochastic matrix actually used
/// for value aggregation (rows of padding positions are all zero).
struct AttentionRecord {
    int layer = 0;
    int head = 0;
    Tensor A;
    Tensor B;
    Tensor weights;
};

/// Per-head refinement parameters; which tensors are defined depends on the
/// mechanism (WRQ/WRK for simp and add, +WRV for value, WmuR/WsigmaR for stoc).
struct RefineParams {
    Tensor WRQ, WRK, WRV;
    Tensor WmuR, WsigmaR;
};

struct DotHeadParams {
    Tensor WQ, WK, WV;
};

struct StochHeadParams {
    Tensor WQ_mu, WK_mu, WV_mu;
    Tensor WQ_cov, WK_cov, WV_cov;
};

struct FeedForwardParams {
    Tensor W1, b1, W2, b2;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct LayerParams {
    std::vector<DotHeadParams> dot_heads;
    std::vector<StochHeadParams> stoch_heads;
    std::vector<RefineParams> refine;  // per head; empty tensors when mechanism none
    FeedForwardParams ffn;             // dot backbone, or the mean channel
    FeedForwardParams cov_ffn;         // stochastic covariance channel
};

/// A sequence encoder with item/position embeddings and `layers` blocks of
/// {multi-head attention with refinement -> residual + layer norm ->
/// position-wise feed-forward -> residual + layer norm}.
struct Model {
    ModelConfig config;
    int num_items = 0;  // vocabulary size; ids 1..num_items, 0 = padding

    Tensor item_emb, pos_emb;                      // dot backbone
    Tensor item_mu, item_cov, pos_mu, pos_cov;     // stochastic backbone
    std::vector<LayerParams> layer;

    std::vector<Parameter> parameters;  // registration order is fixed

    std::vector<double> snapshot_values() const;
    void restore_values(const std::vector<double>& flat);
    uint64_t values_checksum() const;
};

Model build_model(const ModelConfig& cfg, int num_items);

/// Final per-position states. Dot backbone fills `states`; stochastic fills
/// `mean` and `cov_raw` (effective covariance = elu_plus_one(cov_raw)).
struct EncodeResult {
    std::vector<int> padded_ids;
    AttentionMask mask;
    Tensor states;
    Tensor mean, cov_raw;
    std::vector<AttentionRecord> records;
};

/// Encode a (possibly shorter than n) id sequence. Longer than n is a
/// contract error; at least one real item is required. `dropout_rng` is only
/// consumed in train mode with config.dropout > 0.
EncodeResult encode(const Model& m, std::span<const int> ids, bool train_mode, Rng* dropout_rng = nullptr,
                    bool record_attention = false);

/// Raw dot-product attention scores A = (H WQ)(H WK)^T / sqrt(d_head).
Tensor dot_attention_scores(const Tensor& H, const Tensor& WQ, const Tensor& WK);

/// Raw stochastic attention scores A[k][t] = -W2(query dist k, key dist t),
/// with query/key distributions obtained by linear maps on the mean and
/// raw-covariance channels (covariance passed through elu_plus_one).
Tensor stochastic_attention_scores(const Tensor& mean, const Tensor& cov_raw, const StochHeadParams& p);

/// Preference scores of `candidates` at one encoded position: dot product
/// against item embeddings, or negative W2 against item distributions.
/// Higher is better. Unknown ids are an error.
Eigen::VectorXd score_items(const Model& m, const EncodeResult& enc, int position,
                            std::span<const int> candidates);

// Checkpointing: versioned JSON container of config + named parameters.
// Round-trips are bit-exact.
std::string checkpoint_to_json(const Model& m, const std::string& dataset_hash_hex);
void save_checkpoint(const Model& m, const std::string& path, const std::string& dataset_hash_hex = "");
struct Checkpoint {
    Model model;
    std::string dataset_hash_hex;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace seqrec
