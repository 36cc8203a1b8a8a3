#include "seqrec/backbone.hpp"

#include <cmath>
#include <cstring>
#include <set>

#include "seqrec/config_json.hpp"
#include "seqrec/data.hpp"
#include "seqrec/refine.hpp"

namespace seqrec {

using nlohmann::json;

AttentionMask AttentionMask::causal(std::span<const int> padded_ids) {
    AttentionMask m;
    m.n = static_cast<int>(padded_ids.size());
    m.valid.resize(m.n);
    for (int i = 0; i < m.n; ++i) m.valid[i] = padded_ids[i] != 0 ? 1 : 0;
    m.allowed = BoolMat::Constant(m.n, m.n, false);
    m.softmax_support = BoolMat::Constant(m.n, m.n, false);
    m.keep_rows = BoolMat::Constant(m.n, m.n, false);
    for (int k = 0; k < m.n; ++k) {
        if (m.valid[k]) {
            for (int t = 0; t <= k; ++t)
                if (m.valid[t]) {
                    m.allowed(k, t) = true;
                    m.softmax_support(k, t) = true;
                }
            m.keep_rows.row(k).setConstant(true);
        } else {
            // Padding rows keep a self entry so softmax stays well defined;
            // keep_rows erases them from the final weights.
            m.softmax_support(k, k) = true;
        }
    }
    return m;
}

namespace {

/// Registers parameters in a fixed order with the module's init convention:
/// weight matrices and embeddings uniform(-0.02, 0.02), biases zero,
/// layer-norm gains one.
struct Registrar {
    Model& m;
    Rng rng;

    Tensor weight(const std::string& name, Shape shape) {
        Tensor t = Tensor::uniform(std::move(shape), -0.02, 0.02, rng, true);
        m.parameters.push_back({name, t});
        return t;
    }
    Tensor constant(const std::string& name, Shape shape, double value) {
        Tensor t = Tensor::full(std::move(shape), value, true);
        m.parameters.push_back({name, t});
        return t;
    }
};

void register_ffn(Registrar& reg, FeedForwardParams& f, const std::string& prefix, int d) {
    f.W1 = reg.weight(prefix + ".W1", {d, d});
    f.b1 = reg.constant(prefix + ".b1", {1, d}, 0.0);
    f.W2 = reg.weight(prefix + ".W2", {d, d});
    f.b2 = reg.constant(prefix + ".b2", {1, d}, 0.0);
    f.ln1_gain = reg.constant(prefix + ".ln1_gain", {1, d}, 1.0);
    f.ln1_bias = reg.constant(prefix + ".ln1_bias", {1, d}, 0.0);
    f.ln2_gain = reg.constant(prefix + ".ln2_gain", {1, d}, 1.0);
    f.ln2_bias = reg.constant(prefix + ".ln2_bias", {1, d}, 0.0);
}

void register_refine(Registrar& reg, RefineParams& rp, const std::string& prefix, Mechanism mech, int n) {
    switch (mech) {
        case Mechanism::none: break;
        case Mechanism::simp:
        case Mechanism::add:
            rp.WRQ = reg.weight(prefix + ".WRQ", {n, n});
            rp.WRK = reg.weight(prefix + ".WRK", {n, n});
            break;
        case Mechanism::value:
            rp.WRQ = reg.weight(prefix + ".WRQ", {n, n});
            rp.WRK = reg.weight(prefix + ".WRK", {n, n});
            rp.WRV = reg.weight(prefix + ".WRV", {n, n});
            break;
        case Mechanism::stoc:
            rp.WmuR = reg.weight(prefix + ".WmuR", {n, n});
            rp.WsigmaR = reg.weight(prefix + ".WsigmaR", {n, n});
            break;
    }
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& f) {
    Tensor h = relu(row_broadcast_add(matmul(x, f.W1), f.b1));
    return row_broadcast_add(matmul(h, f.W2), f.b2);
}

}  // namespace

Model build_model(const ModelConfig& cfg, int num_items) {
    cfg.validate();
    if (num_items < 1) throw UserError("build_model: need at least one item");

    Model m;
    m.config = cfg;
    m.num_items = num_items;
    Registrar reg{m, Rng(derive_seed(cfg.seed, 0x1717))};

    int d = cfg.d, n = cfg.n, dh = cfg.d_head();
    if (cfg.backbone == Backbone::dot_product) {
        m.item_emb = reg.weight("item_emb", {num_items + 1, d});
        m.pos_emb = reg.weight("pos_emb", {n, d});
    } else {
        m.item_mu = reg.weight("item_emb.mu", {num_items + 1, d});
        m.item_cov = reg.weight("item_emb.cov", {num_items + 1, d});
        m.pos_mu = reg.weight("pos_emb.mu", {n, d});
        m.pos_cov = reg.weight("pos_emb.cov", {n, d});
    }

    m.layer.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerParams& lp = m.layer[l];
        std::string lpfx = "layer" + std::to_string(l);
        lp.refine.resize(cfg.heads);
        for (int h = 0; h < cfg.heads; ++h) {
            std::string hpfx = lpfx + ".head" + std::to_string(h);
            if (cfg.backbone == Backbone::dot_product) {
                DotHeadParams hp;
                hp.WQ = reg.weight(hpfx + ".WQ", {d, dh});
                hp.WK = reg.weight(hpfx + ".WK", {d, dh});
                hp.WV = reg.weight(hpfx + ".WV", {d, dh});
                lp.dot_heads.push_back(hp);
            } else {
                StochHeadParams hp;
                hp.WQ_mu = reg.weight(hpfx + ".WQ_mu", {d, dh});
                hp.WK_mu = reg.weight(hpfx + ".WK_mu", {d, dh});
                hp.WV_mu = reg.weight(hpfx + ".WV_mu", {d, dh});
                hp.WQ_cov = reg.weight(hpfx + ".WQ_cov", {d, dh});
                hp.WK_cov = reg.weight(hpfx + ".WK_cov", {d, dh});
                hp.WV_cov = reg.weight(hpfx + ".WV_cov", {d, dh});
                lp.stoch_heads.push_back(hp);
            }
            register_refine(reg, lp.refine[h], hpfx + ".refine", cfg.mechanism, n);
        }
        register_ffn(reg, lp.ffn, lpfx + (cfg.backbone == Backbone::stochastic ? ".mu_ffn" : ".ffn"), d);
        if (cfg.backbone == Backbone::stochastic) register_ffn(reg, lp.cov_ffn, lpfx + ".cov_ffn", d);
    }

    // Names must be unique: each tensor is registered with the optimizer once.
    std::set<std::string> names;
    for (const auto& p : m.parameters)
        if (!names.insert(p.name).second) throw ContractError("build_model: duplicate parameter " + p.name);
    return m;
}

Tensor dot_attention_scores(const Tensor& H, const Tensor& WQ, const Tensor& WK) {
    Tensor q = matmul(H, WQ);
    Tensor k = matmul(H, WK);
    double dh = static_cast<double>(WQ.cols());
    return scale(matmul(q, transpose(k)), 1.0 / std::sqrt(dh));
}

Tensor stochastic_attention_scores(const Tensor& mean, const Tensor& cov_raw, const StochHeadParams& p) {
    Tensor mu_q = matmul(mean, p.WQ_mu);
    Tensor mu_k = matmul(mean, p.WK_mu);
    Tensor cov_q = elu_plus_one(matmul(cov_raw, p.WQ_cov));
    Tensor cov_k = elu_plus_one(matmul(cov_raw, p.WK_cov));
    return scale(pairwise_w2(mu_q, cov_q, mu_k, cov_k), -1.0);
}

EncodeResult encode(const Model& m, std::span<const int> ids, bool train_mode, Rng* dropout_rng,
                    bool record_attention) {
    const ModelConfig& cfg = m.config;
    if (static_cast<int>(ids.size()) > cfg.n)
        throw ContractError("encode: sequence of length " + std::to_string(ids.size()) +
                            " exceeds max length n=" + std::to_string(cfg.n));
    int real = 0;
    for (int id : ids) {
        if (id < 0 || id > m.num_items)
            throw ContractError("encode: item id " + std::to_string(id) + " out of range");
        if (id != 0) ++real;
    }
    if (real == 0) throw ContractError("encode: sequence has no real items");

    EncodeResult res;
    res.padded_ids = left_pad(std::vector<int>(ids.begin(), ids.end()), cfg.n);
    res.mask = AttentionMask::causal(res.padded_ids);

    double p = cfg.dropout;
    auto drop = [&](const Tensor& t) { return dropout(t, p, train_mode, dropout_rng); };

    if (cfg.backbone == Backbone::dot_product) {
        Tensor H = drop(add(gather_rows(m.item_emb, res.padded_ids), m.pos_emb));
        for (int l = 0; l < cfg.layers; ++l) {
            const LayerParams& lp = m.layer[l];
            std::vector<Tensor> head_out;
            for (int h = 0; h < cfg.heads; ++h) {
                const DotHeadParams& hp = lp.dot_heads[h];
                Tensor A_raw = dot_attention_scores(H, hp.WQ, hp.WK);
                PipelineValues vals;
                vals.V = matmul(H, hp.WV);
                PipelineResult pr = refinement_pipeline(A_raw, res.mask, cfg, &lp.refine[h], vals);
                head_out.push_back(pr.out);
                if (record_attention) res.records.push_back({l, h, A_raw, pr.B, pr.weights});
            }
            Tensor attn = drop(concat_cols(head_out));
            Tensor H1 = layer_norm(add(H, attn), lp.ffn.ln1_gain, lp.ffn.ln1_bias);
            Tensor F = drop(feed_forward(H1, lp.ffn));
            H = layer_norm(add(H1, F), lp.ffn.ln2_gain, lp.ffn.ln2_bias);
        }
        res.states = H;
    } else {
        Tensor M = drop(add(gather_rows(m.item_mu, res.padded_ids), m.pos_mu));
        Tensor C = drop(add(gather_rows(m.item_cov, res.padded_ids), m.pos_cov));
        for (int l = 0; l < cfg.layers; ++l) {
            const LayerParams& lp = m.layer[l];
            std::vector<Tensor> mu_out, cov_out;
            for (int h = 0; h < cfg.heads; ++h) {
                const StochHeadParams& hp = lp.stoch_heads[h];
                Tensor A_raw = stochastic_attention_scores(M, C, hp);
                PipelineValues vals;
                vals.V_mu = matmul(M, hp.WV_mu);
                vals.V_cov = elu_plus_one(matmul(C, hp.WV_cov));
                PipelineResult pr = refinement_pipeline(A_raw, res.mask, cfg, &lp.refine[h], vals);
                mu_out.push_back(pr.out_mu);
                cov_out.push_back(pr.out_cov);
                if (record_attention) res.records.push_back({l, h, A_raw, pr.B, pr.weights});
            }
            Tensor AM = drop(concat_cols(mu_out));
            Tensor AC = drop(concat_cols(cov_out));
            Tensor M1 = layer_norm(add(M, AM), lp.ffn.ln1_gain, lp.ffn.ln1_bias);
            Tensor C1 = layer_norm(add(C, AC), lp.cov_ffn.ln1_gain, lp.cov_ffn.ln1_bias);
            Tensor FM = drop(feed_forward(M1, lp.ffn));
            Tensor FC = drop(feed_forward(C1, lp.cov_ffn));
            M = layer_norm(add(M1, FM), lp.ffn.ln2_gain, lp.ffn.ln2_bias);
            C = layer_norm(add(C1, FC), lp.cov_ffn.ln2_gain, lp.cov_ffn.ln2_bias);
        }
        res.mean = M;
        res.cov_raw = C;
    }
    return res;
}

Eigen::VectorXd score_items(const Model& m, const EncodeResult& enc, int position,
                            std::span<const int> candidates) {
    NoGradGuard ng;
    const int n = m.config.n;
    if (position < 0 || position >= n) throw ContractError("score_items: position out of range");
    for (int c : candidates)
        if (c < 1 || c > m.num_items)
            throw ContractError("score_items: unknown item id " + std::to_string(c));

    Eigen::VectorXd out(candidates.size());
    if (m.config.backbone == Backbone::dot_product) {
        Eigen::RowVectorXd state = enc.states.mat().row(position);
        ConstMatMap emb = m.item_emb.mat();
        for (size_t i = 0; i < candidates.size(); ++i) out[i] = emb.row(candidates[i]).dot(state);
    } else {
        Eigen::ArrayXd mu = enc.mean.mat().row(position).array();
        Eigen::ArrayXd sd = enc.cov_raw.mat().row(position).array().unaryExpr(
            [](double x) { return std::sqrt(x > 0 ? x + 1.0 : std::exp(x)); });
        ConstMatMap imu = m.item_mu.mat();
        ConstMatMap icov = m.item_cov.mat();
        for (size_t i = 0; i < candidates.size(); ++i) {
            Eigen::ArrayXd dmu = imu.row(candidates[i]).transpose().array() - mu;
            Eigen::ArrayXd isd = icov.row(candidates[i]).transpose().array().unaryExpr(
                [](double x) { return std::sqrt(x > 0 ? x + 1.0 : std::exp(x)); });
            double s2 = dmu.square().sum() + (isd - sd).square().sum();
            out[i] = -std::sqrt(s2);
        }
    }
    return out;
}

std::vector<double> Model::snapshot_values() const {
    std::vector<double> flat;
    for (const auto& p : parameters)
        flat.insert(flat.end(), p.tensor.data().data(), p.tensor.data().data() + p.tensor.size());
    return flat;
}

void Model::restore_values(const std::vector<double>& flat) {
    size_t off = 0;
    for (auto& p : parameters) {
        size_t sz = static_cast<size_t>(p.tensor.size());
        if (off + sz > flat.size()) throw ContractError("restore_values: snapshot too short");
        std::memcpy(p.tensor.mutable_data().data(), flat.data() + off, sz * sizeof(double));
        off += sz;
    }
    if (off != flat.size()) throw ContractError("restore_values: snapshot size mismatch");
}

uint64_t Model::values_checksum() const {
    uint64_t h = 1469598103934665603ULL;
    for (const auto& p : parameters) {
        const auto& d = p.tensor.data();
        for (Index i = 0; i < d.size(); ++i) {
            uint64_t bits;
            std::memcpy(&bits, &d[i], sizeof(bits));
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xFF;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

std::string checkpoint_to_json(const Model& m, const std::string& dataset_hash_hex) {
    json j;
    j["format_version"] = 1;
    j["config"] = model_config_to_json(m.config);
    j["num_items"] = m.num_items;
    j["dataset_hash"] = dataset_hash_hex;
    json params = json::array();
    for (const auto& p : m.parameters) {
        json jp;
        jp["name"] = p.name;
        jp["shape"] = p.tensor.shape();
        jp["data"] = std::vector<double>(p.tensor.data().data(), p.tensor.data().data() + p.tensor.size());
        params.push_back(std::move(jp));
    }
    j["params"] = std::move(params);
    return j.dump() + "\n";
}

void save_checkpoint(const Model& m, const std::string& path, const std::string& dataset_hash_hex) {
    write_text_file(path, checkpoint_to_json(m, dataset_hash_hex));
}

Checkpoint load_checkpoint(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw UserError("checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    Checkpoint ck;
    try {
        if (j.at("format_version").get<int>() != 1)
            throw UserError("checkpoint: unsupported format_version in " + path);
        ModelConfig cfg = model_config_from_json(j.at("config"));
        ck.model = build_model(cfg, j.at("num_items").get<int>());
        ck.dataset_hash_hex = j.value("dataset_hash", "");
        const json& params = j.at("params");
        if (params.size() != ck.model.parameters.size())
            throw UserError("checkpoint: parameter count mismatch in " + path);
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = ck.model.parameters[i];
            if (params[i].at("name").get<std::string>() != p.name)
                throw UserError("checkpoint: unexpected parameter order in " + path);
            auto data = params[i].at("data").get<std::vector<double>>();
            if (static_cast<Index>(data.size()) != p.tensor.size())
                throw UserError("checkpoint: bad data length for " + p.name);
            std::memcpy(p.tensor.mutable_data().data(), data.data(), data.size() * sizeof(double));
        }
    } catch (const json::exception& e) {
        throw UserError("checkpoint: missing or bad field in " + path + ": " + e.what());
    }
    return ck;
}

}  // namespace seqrec
