#include "seqrec/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "seqrec/config_json.hpp"
#include "seqrec/eval.hpp"

namespace seqrec {

using nlohmann::json;

Tensor bce_loss(const std::vector<Tensor>& pos_scores, const std::vector<std::vector<Tensor>>& neg_scores,
                const std::vector<std::vector<uint8_t>>& mask) {
    if (pos_scores.size() != neg_scores.size() || pos_scores.size() != mask.size())
        throw ContractError("bce_loss: batch size mismatch");
    size_t live = 0;
    Tensor total;
    for (size_t b = 0; b < pos_scores.size(); ++b) {
        const Tensor& pos = pos_scores[b];
        Index n = pos.rows();
        if (static_cast<size_t>(n) != mask[b].size()) throw ContractError("bce_loss: mask length mismatch");
        // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
        Tensor terms = softplus(scale(pos, -1.0));
        for (const Tensor& neg : neg_scores[b]) terms = add(terms, softplus(neg));
        BoolMat keep(n, 1);
        for (Index t = 0; t < n; ++t) {
            keep(t, 0) = mask[b][t] != 0;
            if (mask[b][t]) ++live;
        }
        Tensor masked = sum_all(mask_mul(terms, keep));
        total = total.defined() ? add(total, masked) : masked;
    }
    if (live == 0) throw ContractError("bce_loss: every position is masked");
    return scale(total, 1.0 / static_cast<double>(live));
}

double global_grad_norm(const std::vector<Parameter>& params) {
    double sq = 0;
    for (const auto& p : params)
        if (p.tensor.has_grad()) sq += p.tensor.grad().square().sum();
    return std::sqrt(sq);
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter>& params, double lr, double beta1, double beta2,
                             double eps, double l2_weight)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), l2_(l2_weight) {
    for (const auto& p : params) {
        m_.push_back(Eigen::ArrayXd::Zero(p.tensor.size()));
        v_.push_back(Eigen::ArrayXd::Zero(p.tensor.size()));
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : *params_) p.tensor.zero_grad();
}

void AdamOptimizer::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
        auto& p = (*params_)[i];
        if (!p.tensor.has_grad()) continue;
        const Eigen::ArrayXd& g0 = p.tensor.grad();
        if (!g0.isFinite().all())
            throw ContractError("adam: non-finite gradient in parameter '" + p.name + "'");
        Eigen::ArrayXd g = l2_ != 0.0 ? Eigen::ArrayXd(g0 + l2_ * p.tensor.data()) : Eigen::ArrayXd(g0);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
        Eigen::ArrayXd mhat = m_[i] / bc1;
        Eigen::ArrayXd vhat = v_[i] / bc2;
        p.tensor.mutable_data() -= lr_ * mhat / (vhat.sqrt() + eps_);
    }
}

std::string AdamOptimizer::state_to_json() const {
    json j;
    j["t"] = t_;
    json jm = json::array(), jv = json::array();
    for (const auto& a : m_) jm.push_back(std::vector<double>(a.data(), a.data() + a.size()));
    for (const auto& a : v_) jv.push_back(std::vector<double>(a.data(), a.data() + a.size()));
    j["m"] = std::move(jm);
    j["v"] = std::move(jv);
    return j.dump();
}

void AdamOptimizer::state_from_json(const std::string& text) {
    json j = json::parse(text);
    t_ = j.at("t").get<int64_t>();
    auto jm = j.at("m"), jv = j.at("v");
    if (jm.size() != m_.size() || jv.size() != v_.size())
        throw UserError("adam: optimizer state does not match the model");
    for (size_t i = 0; i < m_.size(); ++i) {
        auto dm = jm[i].get<std::vector<double>>();
        auto dv = jv[i].get<std::vector<double>>();
        if (static_cast<Index>(dm.size()) != m_[i].size()) throw UserError("adam: bad moment length");
        m_[i] = Eigen::Map<const Eigen::ArrayXd>(dm.data(), dm.size());
        v_[i] = Eigen::Map<const Eigen::ArrayXd>(dv.data(), dv.size());
    }
}

std::string epoch_record_to_json(const EpochRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["valid_ndcg5"] = r.valid_ndcg5;
    j["grad_norm"] = r.grad_norm;
    j["seconds"] = r.seconds;
    return j.dump();
}

SeqScores score_training_positions(const Model& m, const EncodeResult& enc,
                                   const std::vector<int>& targets,
                                   const std::vector<std::vector<int>>& negatives) {
    SeqScores out;
    int nneg = negatives.empty() ? 0 : static_cast<int>(negatives[0].size());
    auto column = [&](int j) {
        std::vector<int> ids(targets.size());
        for (size_t t = 0; t < targets.size(); ++t) ids[t] = negatives[t].empty() ? 0 : negatives[t][j];
        return ids;
    };
    if (m.config.backbone == Backbone::dot_product) {
        out.pos = row_sum(mul(enc.states, gather_rows(m.item_emb, targets)));
        for (int j = 0; j < nneg; ++j) {
            std::vector<int> ids = column(j);
            out.negs.push_back(row_sum(mul(enc.states, gather_rows(m.item_emb, ids))));
        }
    } else {
        Tensor state_var = elu_plus_one(enc.cov_raw);
        auto w2_against = [&](const std::vector<int>& ids) {
            Tensor mu = gather_rows(m.item_mu, ids);
            Tensor var = elu_plus_one(gather_rows(m.item_cov, ids));
            return scale(rowwise_w2(enc.mean, state_var, mu, var), -1.0);
        };
        out.pos = w2_against(targets);
        for (int j = 0; j < nneg; ++j) out.negs.push_back(w2_against(column(j)));
    }
    return out;
}

namespace {

struct RunDirWriter {
    std::string dir;

    bool enabled() const { return !dir.empty(); }
    std::string path(const std::string& name) const { return dir + "/" + name; }

    void write_log(const std::vector<EpochRecord>& history) const {
        if (!enabled()) return;
        std::string text;
        for (const auto& r : history) text += epoch_record_to_json(r) + "\n";
        write_text_file(path("train_log.jsonl"), text);
    }
};

json state_to_json(const TrainState& st, const AdamOptimizer& opt) {
    json j;
    j["epoch"] = st.epoch;
    j["best_valid_ndcg5"] = st.best_valid_ndcg5;
    j["best_epoch"] = st.best_epoch;
    j["epochs_since_improvement"] = st.epochs_since_improvement;
    json hist = json::array();
    for (const auto& r : st.history)
        hist.push_back(json::parse(epoch_record_to_json(r)));
    j["history"] = std::move(hist);
    j["adam"] = json::parse(opt.state_to_json());
    return j;
}

void state_from_json(const json& j, TrainState& st, AdamOptimizer& opt) {
    st.epoch = j.at("epoch").get<int>();
    st.best_valid_ndcg5 = j.at("best_valid_ndcg5").get<double>();
    st.best_epoch = j.at("best_epoch").get<int>();
    st.epochs_since_improvement = j.at("epochs_since_improvement").get<int>();
    st.history.clear();
    for (const auto& r : j.at("history")) {
        EpochRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.train_loss = r.at("train_loss").get<double>();
        rec.valid_ndcg5 = r.at("valid_ndcg5").get<double>();
        rec.grad_norm = r.at("grad_norm").get<double>();
        rec.seconds = r.at("seconds").get<double>();
        st.history.push_back(rec);
    }
    opt.state_from_json(j.at("adam").dump());
}

}  // namespace

FitResult fit(const RunConfig& cfg, const SequenceDataset& ds, const FitHooks& hooks) {
    cfg.validate();
    SplitDataset split = leave_one_out_split(ds);
    if (split.users.empty()) throw UserError("fit: no trainable users after splitting");

    RunDirWriter out{cfg.run_dir};
    TrainState st;
    Model model;
    std::vector<double> best_values;

    AdamOptimizer* opt = nullptr;
    std::unique_ptr<AdamOptimizer> opt_holder;

    bool resumed = false;
    if (out.enabled() && std::filesystem::exists(out.path("state.json")) &&
        std::filesystem::exists(out.path("checkpoint_last.json"))) {
        model = load_checkpoint(out.path("checkpoint_last.json")).model;
        if (model.num_items != ds.num_items() || model.config.n != cfg.model.n)
            throw UserError("fit: run directory state does not match the dataset/config");
        opt_holder = std::make_unique<AdamOptimizer>(model.parameters, cfg.model.learning_rate, 0.9, 0.999,
                                                     1e-8, cfg.model.l2_weight);
        state_from_json(json::parse(read_text_file(out.path("state.json"))), st, *opt_holder);
        if (st.best_epoch >= 1)
            best_values = load_checkpoint(out.path("checkpoint_best.json")).model.snapshot_values();
        resumed = true;
    } else {
        model = build_model(cfg.model, ds.num_items());
        opt_holder = std::make_unique<AdamOptimizer>(model.parameters, cfg.model.learning_rate, 0.9, 0.999,
                                                     1e-8, cfg.model.l2_weight);
    }
    opt = opt_holder.get();
    (void)resumed;

    std::string ds_hash = hex64(dataset_hash(ds));

    for (int epoch = st.epoch + 1; epoch <= cfg.max_epochs && !st.stopped(cfg.patience, cfg.max_epochs);
         ++epoch) {
        auto t0 = std::chrono::steady_clock::now();

        // Per-epoch streams are reseeded deterministically so an interrupted
        // run resumed at an epoch boundary replays the exact same draws.
        Rng dropout_rng(derive_seed(cfg.model.seed, 3 * static_cast<uint64_t>(epoch)));
        BatchStream stream(split, cfg.model.n, ds.num_items(), cfg.batch_size, cfg.num_negatives,
                           derive_seed(cfg.model.seed, 3 * static_cast<uint64_t>(epoch) + 1));

        double loss_sum = 0;
        size_t live_sum = 0, steps = 0;
        double norm_sum = 0;
        Batch batch;
        while (stream.next(batch)) {
            std::vector<Tensor> pos;
            std::vector<std::vector<Tensor>> negs;
            size_t batch_live = 0;
            for (size_t b = 0; b < batch.inputs.size(); ++b) {
                EncodeResult enc = encode(model, batch.inputs[b], /*train_mode=*/true, &dropout_rng);
                SeqScores s = score_training_positions(model, enc, batch.targets[b], batch.negatives[b]);
                pos.push_back(s.pos);
                negs.push_back(s.negs);
                for (uint8_t v : batch.loss_mask[b]) batch_live += v;
            }
            if (batch_live == 0) continue;  // every user in this batch had a 1-item train prefix
            Tensor loss = bce_loss(pos, negs, batch.loss_mask);
            double loss_val = loss.item();
            if (!std::isfinite(loss_val)) throw ContractError("fit: non-finite training loss");
            opt->zero_grad();
            backward(loss);
            if (hooks.post_backward) hooks.post_backward(model);
            norm_sum += global_grad_norm(model.parameters);
            ++steps;
            opt->step();
            loss_sum += loss_val * static_cast<double>(batch_live);
            live_sum += batch_live;
        }
        if (live_sum == 0) throw UserError("fit: dataset has no trainable positions");

        double valid_ndcg5;
        if (hooks.valid_metric) {
            valid_ndcg5 = hooks.valid_metric(epoch, model);
        } else {
            MetricsReport rep = evaluate(model, split, EvalTarget::valid, {5}, EvalMode{});
            valid_ndcg5 = rep.at.at(5).ndcg;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(live_sum);
        rec.valid_ndcg5 = valid_ndcg5;
        rec.grad_norm = steps > 0 ? norm_sum / static_cast<double>(steps) : 0.0;
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        st.epoch = epoch;
        st.history.push_back(rec);
        if (valid_ndcg5 > st.best_valid_ndcg5) {  // strict improvement resets the clock
            st.best_valid_ndcg5 = valid_ndcg5;
            st.best_epoch = epoch;
            st.epochs_since_improvement = 0;
            best_values = model.snapshot_values();
            if (out.enabled()) save_checkpoint(model, out.path("checkpoint_best.json"), ds_hash);
        } else {
            ++st.epochs_since_improvement;
        }

        if (out.enabled()) {
            save_checkpoint(model, out.path("checkpoint_last.json"), ds_hash);
            write_text_file(out.path("state.json"), state_to_json(st, *opt).dump() + "\n");
            out.write_log(st.history);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model, st);
    }

    if (best_values.empty()) throw ContractError("fit: no epochs ran");
    model.restore_values(best_values);
    return {std::move(model), std::move(st)};
}

}  // namespace seqrec
