#include "seqrec/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "seqrec/acceptance.hpp"
#include "seqrec/config_json.hpp"
#include "seqrec/data.hpp"
#include "seqrec/eval.hpp"
#include "seqrec/export.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

using nlohmann::json;

namespace {

struct PrepareArgs {
    std::string input;
    std::string output;
    int min_core = 5;
    std::string core_mode = "both";
    int max_len = 50;
    std::string user_col = "user_id", item_col = "item_id", time_col = "timestamp";
    double malformed_threshold = 0.01;
    bool synthetic = false;
    int users = 1000, items = 200, seq_len = 30;
    double strength = 0.8;
    uint64_t seed = 42;
};

int cmd_prepare(const PrepareArgs& a) {
    InteractionLog log;
    std::map<std::string, std::string> source;
    json extra;
    if (a.synthetic) {
        log = generate_synthetic(a.users, a.items, a.seq_len, a.strength, a.seed);
        source["kind"] = "synthetic";
        source["users"] = std::to_string(a.users);
        source["items"] = std::to_string(a.items);
        source["seq_len"] = std::to_string(a.seq_len);
        source["order2_strength"] = std::to_string(a.strength);
        source["seed"] = std::to_string(a.seed);

        // measured frequency of the planted second-order rule
        std::vector<int> perm = synthetic_permutation(a.items, a.seed);
        std::map<std::string, std::vector<int>> seqs;
        for (const auto& r : log.records) {
            auto& s = seqs[r.user];
            s.resize(a.seq_len);
            s[r.timestamp] = std::stoi(r.item.substr(1));
        }
        size_t events = 0, chances = 0;
        for (auto& [u, s] : seqs)
            for (int t = 2; t < a.seq_len; ++t) {
                ++chances;
                if (s[t] == perm[s[t - 2]]) ++events;
            }
        extra["planted_rule"] = {{"configured_strength", a.strength},
                                 {"measured_frequency",
                                  chances ? static_cast<double>(events) / chances : 0.0}};
    } else {
        if (a.input.empty()) throw UserError("prepare: provide --input CSV or --synthetic");
        CsvFormat fmt;
        fmt.user_col = a.user_col;
        fmt.item_col = a.item_col;
        fmt.time_col = a.time_col;
        fmt.max_malformed_fraction = a.malformed_threshold;
        log = ingest_csv(a.input, fmt);
        source["kind"] = "csv";
        source["path"] = a.input;
    }

    CoreMode mode = a.core_mode == "user" ? CoreMode::users_only : CoreMode::users_and_items;
    InteractionLog filtered = five_core_filter(log, a.min_core, mode);
    SequenceDataset ds = build_sequences(filtered, a.max_len);
    ds.source_info = source;

    std::filesystem::create_directories(a.output);
    std::string ds_path = a.output + "/dataset.json";
    save_dataset(ds, ds_path);

    DatasetStats stats = dataset_stats(ds);
    json js;
    js["users"] = stats.users;
    js["items"] = stats.items;
    js["interactions"] = stats.interactions;
    js["density"] = stats.density;
    js["max_len"] = ds.max_len;
    js["dataset_hash"] = hex64(dataset_hash(ds));
    js["ingest"] = {{"malformed_rows", log.malformed_rows}, {"duplicate_rows", log.duplicate_rows}};
    js["core_filter"] = {{"min_core", a.min_core}, {"mode", a.core_mode}};
    js["source"] = source;
    if (!extra.is_null()) js.update(extra);
    write_text_file(a.output + "/stats.json", js.dump(2) + "\n");

    std::cout << "wrote " << ds_path << "\n" << js.dump(2) << "\n";
    if (log.malformed_rows > 0)
        std::cerr << "warning: " << log.malformed_rows << " malformed rows skipped\n";
    if (log.duplicate_rows > 0)
        std::cerr << "warning: " << log.duplicate_rows << " duplicate rows dropped\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.dataset_path.empty()) throw UserError("train: config must set data.dataset");
    if (cfg.run_dir.empty()) throw UserError("train: config must set run_dir");
    SequenceDataset ds = load_dataset(cfg.dataset_path);

    std::filesystem::create_directories(cfg.run_dir);
    bool resuming = std::filesystem::exists(cfg.run_dir + "/state.json");
    write_text_file(cfg.run_dir + "/resolved_config.json", cfg.to_json_string());
    json prov;
    prov["dataset_hash"] = hex64(dataset_hash(ds));
    prov["dataset_path"] = cfg.dataset_path;
    prov["seed"] = cfg.model.seed;
    write_text_file(cfg.run_dir + "/provenance.json", prov.dump(2) + "\n");
    if (resuming) std::cout << "resuming from " << cfg.run_dir << "/state.json\n";

    FitResult res = fit(cfg, ds);
    std::cout << "finished after epoch " << res.state.epoch << ", best validation NDCG@5 "
              << res.state.best_valid_ndcg5 << " at epoch " << res.state.best_epoch << "\n"
              << "checkpoints in " << cfg.run_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split_name,
             std::vector<int> topn, const std::string& mode_str, uint64_t seed,
             const std::string& output) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    SequenceDataset ds = load_dataset(data_path);
    if (!ck.dataset_hash_hex.empty() && ck.dataset_hash_hex != hex64(dataset_hash(ds)))
        std::cerr << "warning: dataset hash differs from the one the checkpoint was trained on\n";
    SplitDataset split = leave_one_out_split(ds);
    EvalTarget target;
    if (split_name == "test") target = EvalTarget::test;
    else if (split_name == "valid") target = EvalTarget::valid;
    else throw UserError("eval: --split must be test or valid");
    if (topn.empty()) topn = {1, 5, 10, 20};
    EvalMode mode = EvalMode::parse(mode_str);

    MetricsReport rep = evaluate(ck.model, split, target, topn, mode, seed);
    std::cout << rep.format_table();
    if (!output.empty()) {
        write_text_file(output, rep.to_json_string());
        std::cout << "wrote " << output << "\n";
    }
    return 0;
}

int cmd_export_attention(const std::string& ckpt_path, const std::string& data_path,
                         const std::string& user, int layer, int head, int last_k,
                         const std::string& output) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    SequenceDataset ds = load_dataset(data_path);
    SplitDataset split = leave_one_out_split(ds);

    int user_row = -1;
    for (size_t i = 0; i < split.users.size(); ++i)
        if (ds.users[split.users[i].user] == user) user_row = static_cast<int>(i);
    if (user_row < 0) throw UserError("export-attention: unknown user '" + user + "'");

    AttentionExport ex = export_attention(ck.model, split, user_row, layer, head, last_k, output);
    std::cout << "exported last " << ex.k << " positions for user " << user << "\n";
    for (const auto& f : ex.csv_files) std::cout << f << "\n";
    for (const auto& f : ex.image_files) std::cout << f << "\n";
    return 0;
}

int cmd_bench(const std::string& suite, const std::string& work_dir, const std::string& output,
              bool tamper, int only) {
    if (suite != "acceptance") throw UserError("bench: unknown suite '" + suite + "'");
    AcceptanceOptions opts;
    opts.work_dir = work_dir;
    opts.tamper_gradient = tamper;
    opts.only_criterion = only;
    std::vector<CriterionResult> results = run_acceptance(opts, std::cout);
    if (!output.empty()) {
        write_text_file(output, acceptance_report_json(results));
        std::cout << "wrote " << output << "\n";
    }
    return all_passed(results) ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"seqrec: self-attentive sequential recommender with attention-weight refinement"};
    app.name("seqrec");  // stable usage text regardless of the invocation path
    app.require_subcommand(1);

    PrepareArgs pa;
    CLI::App* prep = app.add_subcommand("prepare", "Ingest or generate interactions and build a dataset");
    prep->add_option("--input", pa.input, "Input CSV with a header row");
    prep->add_option("--output", pa.output, "Output directory for dataset.json and stats.json")
        ->required();
    prep->add_option("--min-core", pa.min_core, "Core filter threshold")->capture_default_str();
    prep->add_option("--core-mode", pa.core_mode, "Core filter scope: both | user")
        ->check(CLI::IsMember({"both", "user"}))
        ->capture_default_str();
    prep->add_option("--max-len", pa.max_len, "Max sequence length n (keeps n+2 recent items)")
        ->capture_default_str();
    prep->add_option("--user-col", pa.user_col, "User id column name")->capture_default_str();
    prep->add_option("--item-col", pa.item_col, "Item id column name")->capture_default_str();
    prep->add_option("--time-col", pa.time_col, "Timestamp column name")->capture_default_str();
    prep->add_option("--malformed-threshold", pa.malformed_threshold,
                     "Max tolerated fraction of malformed rows")
        ->capture_default_str();
    prep->add_flag("--synthetic", pa.synthetic, "Generate a synthetic second-order dataset instead");
    prep->add_option("--users", pa.users, "Synthetic: number of users")->capture_default_str();
    prep->add_option("--items", pa.items, "Synthetic: number of items")->capture_default_str();
    prep->add_option("--seq-len", pa.seq_len, "Synthetic: interactions per user")->capture_default_str();
    prep->add_option("--strength", pa.strength, "Synthetic: second-order rule probability in [0,1]")
        ->capture_default_str();
    prep->add_option("--seed", pa.seed, "Synthetic: generator seed")->capture_default_str();

    std::string config_path;
    CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config file");
    train->add_option("--config", config_path, "Run configuration JSON")->required();

    std::string ckpt, data, split_name = "test", mode_str = "full", eval_out;
    std::vector<int> topn;
    uint64_t eval_seed = 0;
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint with leave-one-out ranking");
    ev->add_option("--checkpoint", ckpt, "Model checkpoint JSON")->required();
    ev->add_option("--data", data, "dataset.json produced by prepare")->required();
    ev->add_option("--split", split_name, "Held-out target: test | valid")->capture_default_str();
    ev->add_option("--topn", topn, "Cutoffs, e.g. 1,5,10,20")->delimiter(',');
    ev->add_option("--mode", mode_str, "Candidate set: full | sampled:K")->capture_default_str();
    ev->add_option("--seed", eval_seed, "Sampling seed for sampled mode")->capture_default_str();
    ev->add_option("--output", eval_out, "Write the metrics report JSON here");

    std::string xc_ckpt, xc_data, xc_user, xc_out;
    int xc_layer = 0, xc_head = 0, xc_last = 15;
    CLI::App* xc = app.add_subcommand("export-attention",
                                      "Write attention matrices as CSV and grayscale PGM images");
    xc->add_option("--checkpoint", xc_ckpt, "Model checkpoint JSON")->required();
    xc->add_option("--data", xc_data, "dataset.json produced by prepare")->required();
    xc->add_option("--user", xc_user, "Original user id to visualize")->required();
    xc->add_option("--layer", xc_layer, "Layer index")->capture_default_str();
    xc->add_option("--head", xc_head, "Head index")->capture_default_str();
    xc->add_option("--last", xc_last, "Number of most recent positions")->capture_default_str();
    xc->add_option("--output", xc_out, "Output directory")->required();

    std::string suite = "acceptance", bench_work, bench_out;
    bool tamper = false;
    int bench_only = 0;
    CLI::App* bench = app.add_subcommand("bench", "Run the acceptance suite");
    bench->add_option("--suite", suite, "Suite name")->capture_default_str();
    bench->add_option("--work-dir", bench_work, "Scratch directory (temp dir when omitted)");
    bench->add_option("--output", bench_out, "Write the machine-readable report JSON here");
    bench->add_option("--only", bench_only, "Run a single criterion by id (1-11)");
    bench->add_flag("--tamper", tamper, "Negative control: corrupt one gradient before checking")
        ->group("");  // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // 0 for --help, non-zero for bad usage
    }

    try {
        if (prep->parsed()) return cmd_prepare(pa);
        if (train->parsed()) return cmd_train(config_path);
        if (ev->parsed()) return cmd_eval(ckpt, data, split_name, topn, mode_str, eval_seed, eval_out);
        if (xc->parsed())
            return cmd_export_attention(xc_ckpt, xc_data, xc_user, xc_layer, xc_head, xc_last, xc_out);
        if (bench->parsed()) return cmd_bench(suite, bench_work, bench_out, tamper, bench_only);
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ContractError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace seqrec
