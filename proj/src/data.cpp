#include "seqrec/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "seqrec/config.hpp"

namespace seqrec {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

InteractionLog ingest_csv(const std::string& path, const CsvFormat& format) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open input file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw UserError("ingest: no records in " + path);
    if (line.size() >= 3 && line[0] == '\xEF' && line[1] == '\xBB' && line[2] == '\xBF') line = line.substr(3);

    auto header = split_csv_line(line);
    int ucol = -1, icol = -1, tcol = -1;
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == format.user_col) ucol = static_cast<int>(i);
        if (header[i] == format.item_col) icol = static_cast<int>(i);
        if (header[i] == format.time_col) tcol = static_cast<int>(i);
    }
    if (ucol < 0 || icol < 0 || tcol < 0)
        throw UserError("ingest: header of " + path + " is missing required columns (" + format.user_col +
                        "," + format.item_col + "," + format.time_col + ")");

    InteractionLog log;
    std::set<std::tuple<std::string, std::string, int64_t>> seen;
    size_t total_rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++total_rows;
        auto fields = split_csv_line(line);
        int needed = std::max({ucol, icol, tcol});
        if (static_cast<int>(fields.size()) <= needed) {
            ++log.malformed_rows;
            continue;
        }
        const std::string& user = fields[ucol];
        const std::string& item = fields[icol];
        int64_t ts = 0;
        try {
            size_t pos = 0;
            ts = std::stoll(fields[tcol], &pos);
            if (pos != fields[tcol].size()) throw std::invalid_argument("trailing");
        } catch (...) {
            ++log.malformed_rows;
            continue;
        }
        if (user.empty() || item.empty() || ts < 0) {
            ++log.malformed_rows;
            continue;
        }
        if (!seen.insert({user, item, ts}).second) {
            ++log.duplicate_rows;
            continue;
        }
        log.records.push_back({user, item, ts, log.records.size()});
    }
    if (log.records.empty()) throw UserError("ingest: no records in " + path);
    double frac = static_cast<double>(log.malformed_rows) / static_cast<double>(total_rows);
    if (frac > format.max_malformed_fraction)
        throw UserError("ingest: " + std::to_string(log.malformed_rows) + " of " + std::to_string(total_rows) +
                        " rows malformed in " + path + " (threshold " +
                        std::to_string(format.max_malformed_fraction) + ")");
    return log;
}

InteractionLog five_core_filter(const InteractionLog& log, int min_core, CoreMode mode) {
    std::vector<Interaction> recs = log.records;
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, int> ucount;
        for (const auto& r : recs) ++ucount[r.user];
        std::vector<Interaction> kept;
        kept.reserve(recs.size());
        for (const auto& r : recs)
            if (ucount[r.user] >= min_core) kept.push_back(r);
        if (kept.size() != recs.size()) changed = true;
        recs.swap(kept);

        if (mode == CoreMode::users_and_items) {
            std::unordered_map<std::string, int> icount;
            for (const auto& r : recs) ++icount[r.item];
            kept.clear();
            for (const auto& r : recs)
                if (icount[r.item] >= min_core) kept.push_back(r);
            if (kept.size() != recs.size()) changed = true;
            recs.swap(kept);
        }
    }
    if (recs.empty())
        throw UserError("core filtering removed every interaction (min_core=" + std::to_string(min_core) + ")");
    InteractionLog out;
    out.records = std::move(recs);
    out.malformed_rows = log.malformed_rows;
    out.duplicate_rows = log.duplicate_rows;
    return out;
}

size_t SequenceDataset::num_interactions() const {
    size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
}

SequenceDataset build_sequences(const InteractionLog& log, int n) {
    if (n < 2) throw UserError("build_sequences: max length n must be >= 2, got " + std::to_string(n));

    // Deterministic contiguous ids: lexicographic order of the original ids.
    std::set<std::string> user_set, item_set;
    for (const auto& r : log.records) {
        user_set.insert(r.user);
        item_set.insert(r.item);
    }
    SequenceDataset ds;
    ds.max_len = n;
    ds.users.assign(user_set.begin(), user_set.end());
    ds.items.assign(item_set.begin(), item_set.end());
    std::unordered_map<std::string, int> uid, iid;
    for (size_t i = 0; i < ds.users.size(); ++i) uid[ds.users[i]] = static_cast<int>(i);
    for (size_t i = 0; i < ds.items.size(); ++i) iid[ds.items[i]] = static_cast<int>(i) + 1;

    std::vector<std::vector<const Interaction*>> per_user(ds.users.size());
    for (const auto& r : log.records) per_user[uid[r.user]].push_back(&r);

    ds.sequences.resize(ds.users.size());
    for (size_t u = 0; u < per_user.size(); ++u) {
        auto& rows = per_user[u];
        std::stable_sort(rows.begin(), rows.end(), [](const Interaction* a, const Interaction* b) {
            if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
            return a->file_order < b->file_order;
        });
        size_t keep = static_cast<size_t>(n) + 2;  // train window + valid + test
        size_t start = rows.size() > keep ? rows.size() - keep : 0;
        for (size_t i = start; i < rows.size(); ++i) ds.sequences[u].push_back(iid[rows[i]->item]);
    }
    return ds;
}

SplitDataset leave_one_out_split(const SequenceDataset& ds) {
    SplitDataset split;
    for (size_t u = 0; u < ds.sequences.size(); ++u) {
        const auto& seq = ds.sequences[u];
        if (seq.size() < 3) {
            ++split.dropped_users;
            continue;
        }
        SplitDataset::UserSplit us;
        us.user = static_cast<int>(u);
        us.train.assign(seq.begin(), seq.end() - 2);
        us.valid_target = seq[seq.size() - 2];
        us.test_target = seq[seq.size() - 1];
        split.users.push_back(std::move(us));
    }
    return split;
}

std::vector<int> synthetic_permutation(int num_items, uint64_t seed) {
    std::vector<int> perm(num_items + 1);
    for (int i = 1; i <= num_items; ++i) perm[i] = i;
    Rng rng(derive_seed(seed, 0xF));
    for (int i = num_items; i > 1; --i) {
        int j = 1 + static_cast<int>(rng.uniform_int(i));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

InteractionLog generate_synthetic(int num_users, int num_items, int seq_len, double order2_strength,
                                  uint64_t seed) {
    if (num_items < 20) throw UserError("generate_synthetic: need num_items >= 20");
    if (num_users < 1 || seq_len < 3) throw UserError("generate_synthetic: need users >= 1 and seq_len >= 3");
    if (order2_strength < 0.0 || order2_strength > 1.0)
        throw UserError("generate_synthetic: order2_strength must be in [0,1]");

    std::vector<int> perm = synthetic_permutation(num_items, seed);
    Rng rng(derive_seed(seed, 1));
    InteractionLog log;
    auto item_name = [](int id) { return "i" + std::to_string(id); };
    for (int u = 0; u < num_users; ++u) {
        std::string user = "u" + std::to_string(u);
        std::vector<int> seq(seq_len);
        for (int t = 0; t < seq_len; ++t) {
            if (t >= 2 && rng.bernoulli(order2_strength))
                seq[t] = perm[seq[t - 2]];
            else
                seq[t] = 1 + static_cast<int>(rng.uniform_int(num_items));
            log.records.push_back({user, item_name(seq[t]), t, log.records.size()});
        }
    }
    return log;
}

std::vector<int> left_pad(const std::vector<int>& seq, int n) {
    std::vector<int> out(n, 0);
    size_t len = std::min<size_t>(seq.size(), static_cast<size_t>(n));
    for (size_t i = 0; i < len; ++i) out[n - len + i] = seq[seq.size() - len + i];
    return out;
}

BatchStream::BatchStream(const SplitDataset& split, int n, int num_items, int batch_size, int num_negatives,
                         uint64_t seed)
    : split_(split), n_(n), num_items_(num_items), batch_size_(batch_size), num_negatives_(num_negatives),
      rng_(seed) {
    if (batch_size < 1) throw ContractError("BatchStream: batch_size must be >= 1");
    if (num_items < 2) throw ContractError("BatchStream: need at least 2 items to sample negatives");
    order_.resize(split.users.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    rng_.shuffle(order_);
}

void BatchStream::reset(uint64_t seed) {
    rng_ = Rng(seed);
    pos_ = 0;
    rng_.shuffle(order_);
}

bool BatchStream::next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    out = Batch{};
    size_t end = std::min(pos_ + static_cast<size_t>(batch_size_), order_.size());
    for (size_t i = pos_; i < end; ++i) {
        const auto& us = split_.users[order_[i]];
        std::vector<int> input = left_pad(us.train, n_);
        std::vector<int> target(n_, 0);
        std::vector<uint8_t> mask(n_, 0);
        std::vector<std::vector<int>> negs(n_);
        for (int t = 0; t < n_; ++t) {
            if (t + 1 < n_) target[t] = input[t + 1];
            mask[t] = (input[t] != 0 && target[t] != 0) ? 1 : 0;
            if (mask[t]) {
                negs[t].resize(num_negatives_);
                for (int j = 0; j < num_negatives_; ++j) {
                    int neg;
                    do {
                        neg = 1 + static_cast<int>(rng_.uniform_int(num_items_));
                    } while (neg == target[t]);
                    negs[t][j] = neg;
                }
            } else {
                negs[t].assign(num_negatives_, 0);
            }
        }
        out.user_rows.push_back(order_[i]);
        out.inputs.push_back(std::move(input));
        out.targets.push_back(std::move(target));
        out.negatives.push_back(std::move(negs));
        out.loss_mask.push_back(std::move(mask));
    }
    pos_ = end;
    return true;
}

DatasetStats dataset_stats(const SequenceDataset& ds) {
    DatasetStats s;
    s.users = ds.num_users();
    s.items = ds.num_items();
    s.interactions = ds.num_interactions();
    if (s.users > 0 && s.items > 0)
        s.density = static_cast<double>(s.interactions) /
                    (static_cast<double>(s.users) * static_cast<double>(s.items));
    return s;
}

std::string dataset_to_json(const SequenceDataset& ds) {
    json j;
    j["format_version"] = 1;
    j["max_len"] = ds.max_len;
    j["users"] = ds.users;
    j["items"] = ds.items;
    j["sequences"] = ds.sequences;
    j["source"] = ds.source_info;
    return j.dump() + "\n";
}

SequenceDataset dataset_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UserError(std::string("dataset: invalid JSON: ") + e.what());
    }
    SequenceDataset ds;
    try {
        if (j.at("format_version").get<int>() != 1) throw UserError("dataset: unsupported format_version");
        ds.max_len = j.at("max_len").get<int>();
        ds.users = j.at("users").get<std::vector<std::string>>();
        ds.items = j.at("items").get<std::vector<std::string>>();
        ds.sequences = j.at("sequences").get<std::vector<std::vector<int>>>();
        if (j.contains("source")) ds.source_info = j["source"].get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw UserError(std::string("dataset: missing or bad field: ") + e.what());
    }
    if (ds.sequences.size() != ds.users.size()) throw UserError("dataset: users/sequences size mismatch");
    for (const auto& seq : ds.sequences)
        for (int id : seq)
            if (id < 1 || id > ds.num_items()) throw UserError("dataset: item id out of range");
    return ds;
}

void save_dataset(const SequenceDataset& ds, const std::string& path) {
    write_text_file(path, dataset_to_json(ds));
}

SequenceDataset load_dataset(const std::string& path) { return dataset_from_json(read_text_file(path)); }

uint64_t dataset_hash(const SequenceDataset& ds) { return fnv1a(dataset_to_json(ds)); }

}  // namespace seqrec
