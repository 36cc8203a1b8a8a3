#include "seqrec/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "seqrec/config_json.hpp"

namespace seqrec {

using nlohmann::json;

std::string to_string(Backbone b) {
    return b == Backbone::dot_product ? "dot_product" : "stochastic";
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::none: return "none";
        case Mechanism::simp: return "simp";
        case Mechanism::value: return "value";
        case Mechanism::add: return "add";
        case Mechanism::stoc: return "stoc";
    }
    return "none";
}

std::string to_string(RefineScale s) { return s == RefineScale::sqrt_d ? "sqrt_d" : "sqrt_n"; }

Backbone backbone_from_string(const std::string& s) {
    if (s == "dot_product") return Backbone::dot_product;
    if (s == "stochastic") return Backbone::stochastic;
    throw UserError("unknown backbone '" + s + "' (expected dot_product|stochastic)");
}

Mechanism mechanism_from_string(const std::string& s) {
    if (s == "none") return Mechanism::none;
    if (s == "simp") return Mechanism::simp;
    if (s == "value") return Mechanism::value;
    if (s == "add") return Mechanism::add;
    if (s == "stoc") return Mechanism::stoc;
    throw UserError("unknown mechanism '" + s + "' (expected none|simp|value|add|stoc)");
}

RefineScale refine_scale_from_string(const std::string& s) {
    if (s == "sqrt_d") return RefineScale::sqrt_d;
    if (s == "sqrt_n") return RefineScale::sqrt_n;
    throw UserError("unknown refine_scale '" + s + "' (expected sqrt_d|sqrt_n)");
}

void ModelConfig::validate() const {
    if (d < 1) throw UserError("config: d must be >= 1");
    if (n < 2) throw UserError("config: n must be >= 2");
    if (heads < 1 || d % heads != 0)
        throw UserError("config: d (" + std::to_string(d) + ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    if (layers < 1) throw UserError("config: layers must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw UserError("config: dropout must be in [0,1)");
    if (learning_rate <= 0.0) throw UserError("config: learning_rate must be positive");
    if (l2_weight < 0.0) throw UserError("config: l2_weight must be non-negative");
    if (mechanism == Mechanism::stoc && backbone != Backbone::stochastic)
        throw UserError("config: mechanism 'stoc' requires backbone 'stochastic'");
}

EvalMode EvalMode::parse(const std::string& s) {
    EvalMode m;
    if (s == "full") return m;
    if (s.rfind("sampled:", 0) == 0) {
        m.full = false;
        try {
            m.sampled = std::stoi(s.substr(8));
        } catch (...) {
            throw UserError("bad eval mode '" + s + "'");
        }
        if (m.sampled < 1) throw UserError("sampled eval mode needs a positive count");
        return m;
    }
    throw UserError("bad eval mode '" + s + "' (expected full|sampled:K)");
}

void RunConfig::validate() const {
    model.validate();
    if (batch_size < 1) throw UserError("config: batch_size must be >= 1");
    if (num_negatives < 1) throw UserError("config: num_negatives must be >= 1");
    if (max_epochs < 1) throw UserError("config: max_epochs must be >= 1");
    if (patience < 1) throw UserError("config: patience must be >= 1");
    if (eval_topn.empty()) throw UserError("config: eval.topn must not be empty");
    for (int n : eval_topn)
        if (n < 1) throw UserError("config: eval.topn entries must be >= 1");
    if (export_last_k < 1) throw UserError("config: export.last_k must be >= 1");
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!known.count(it.key()))
            throw UserError("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"backbone", to_string(cfg.backbone)},
                {"mechanism", to_string(cfg.mechanism)},
                {"d", cfg.d},
                {"n", cfg.n},
                {"heads", cfg.heads},
                {"layers", cfg.layers},
                {"dropout", cfg.dropout},
                {"learning_rate", cfg.learning_rate},
                {"l2_weight", cfg.l2_weight},
                {"seed", cfg.seed},
                {"refine_scale", to_string(cfg.refine_scale)}};
}

ModelConfig model_config_from_json(const json& m) {
    reject_unknown_keys(m,
                        {"backbone", "mechanism", "d", "n", "heads", "layers", "dropout", "learning_rate",
                         "l2_weight", "seed", "refine_scale"},
                        "model.");
    ModelConfig cfg;
    if (m.contains("backbone")) cfg.backbone = backbone_from_string(m["backbone"].get<std::string>());
    if (m.contains("mechanism")) cfg.mechanism = mechanism_from_string(m["mechanism"].get<std::string>());
    read_field(m, "d", cfg.d);
    read_field(m, "n", cfg.n);
    read_field(m, "heads", cfg.heads);
    read_field(m, "layers", cfg.layers);
    read_field(m, "dropout", cfg.dropout);
    read_field(m, "learning_rate", cfg.learning_rate);
    read_field(m, "l2_weight", cfg.l2_weight);
    read_field(m, "seed", cfg.seed);
    if (m.contains("refine_scale"))
        cfg.refine_scale = refine_scale_from_string(m["refine_scale"].get<std::string>());
    return cfg;
}

std::string RunConfig::to_json_string() const {
    json j;
    j["model"] = model_config_to_json(model);
    j["data"] = {{"dataset", dataset_path}};
    j["run_dir"] = run_dir;
    j["train"] = {{"batch_size", batch_size},
                  {"num_negatives", num_negatives},
                  {"max_epochs", max_epochs},
                  {"patience", patience}};
    j["eval"] = {{"topn", eval_topn}, {"mode", eval_mode.str()}};
    j["export"] = {{"last_k", export_last_k}};
    return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UserError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw UserError("config: top level must be a JSON object");
    reject_unknown_keys(j, {"model", "data", "run_dir", "train", "eval", "export"}, "");

    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"]);
    if (j.contains("data")) {
        reject_unknown_keys(j["data"], {"dataset"}, "data.");
        read_field(j["data"], "dataset", cfg.dataset_path);
    }
    read_field(j, "run_dir", cfg.run_dir);
    if (j.contains("train")) {
        const json& t = j["train"];
        reject_unknown_keys(t, {"batch_size", "num_negatives", "max_epochs", "patience"}, "train.");
        read_field(t, "batch_size", cfg.batch_size);
        read_field(t, "num_negatives", cfg.num_negatives);
        read_field(t, "max_epochs", cfg.max_epochs);
        read_field(t, "patience", cfg.patience);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        reject_unknown_keys(e, {"topn", "mode"}, "eval.");
        if (e.contains("topn")) cfg.eval_topn = e["topn"].get<std::vector<int>>();
        if (e.contains("mode")) cfg.eval_mode = EvalMode::parse(e["mode"].get<std::string>());
    }
    if (j.contains("export")) {
        reject_unknown_keys(j["export"], {"last_k"}, "export.");
        read_field(j["export"], "last_k", cfg.export_last_k);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    return from_json_string(read_text_file(path));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UserError("cannot write file: " + path);
    out << content;
    if (!out) throw UserError("write failed: " + path);
}

}  // namespace seqrec
