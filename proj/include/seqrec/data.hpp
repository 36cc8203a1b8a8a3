#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

/// Raw (user, item, timestamp) triples in file order.
struct Interaction {
    std::string user;
    std::string item;
    int64_t timestamp = 0;
    size_t file_order = 0;  // tie-break for equal timestamps
};

struct InteractionLog {
    std::vector<Interaction> records;
    size_t malformed_rows = 0;
    size_t duplicate_rows = 0;
};

struct CsvFormat {
    std::string user_col = "user_id";
    std::string item_col = "item_id";
    std::string time_col = "timestamp";
    double max_malformed_fraction = 0.01;
};

/// Parse a header CSV into an interaction log. Malformed rows are counted and
/// reported; more than max_malformed_fraction of them is an error, as is an
/// empty file. Duplicate (user,item,timestamp) triples are dropped and counted.
InteractionLog ingest_csv(const std::string& path, const CsvFormat& format = {});

enum class CoreMode { users_and_items, users_only };

/// Iterate user-count and item-count filters to fixpoint so that every user
/// has >= min_core interactions and (in users_and_items mode) every item
/// occurs >= min_core times. Errors if the fixpoint is empty.
InteractionLog five_core_filter(const InteractionLog& log, int min_core = 5,
                                CoreMode mode = CoreMode::users_and_items);

/// Per-user chronological sequences over contiguous integer ids.
/// Item ids run 1..num_items; 0 is reserved for padding.
struct SequenceDataset {
    int max_len = 0;                      // n
    std::vector<std::string> users;      // index -> original user id
    std::vector<std::string> items;      // index-1 -> original item id
    std::vector<std::vector<int>> sequences;  // per user, ascending time, length <= n+2
    std::map<std::string, std::string> source_info;  // provenance for the stats report

    int num_users() const { return static_cast<int>(users.size()); }
    int num_items() const { return static_cast<int>(items.size()); }
    size_t num_interactions() const;
};

/// Sort per user by (timestamp, file order), keep the most recent n+2 items,
/// map ids to contiguous integers. Requires n >= 2.
SequenceDataset build_sequences(const InteractionLog& log, int n);

/// Leave-one-out split: last item is the test target, second-last the
/// validation target, the rest is the train prefix. Users with fewer than
/// three items are dropped (counted in dropped_users).
struct SplitDataset {
    struct UserSplit {
        int user = 0;
        std::vector<int> train;
        int valid_target = 0;
        int test_target = 0;
    };
    std::vector<UserSplit> users;
    size_t dropped_users = 0;
};

SplitDataset leave_one_out_split(const SequenceDataset& ds);

/// Synthetic log with a planted second-order rule: with probability
/// `order2_strength` the next item is f(item two steps back) under a fixed
/// seeded permutation f; otherwise uniform. Timestamps are positions.
InteractionLog generate_synthetic(int num_users, int num_items, int seq_len, double order2_strength,
                                  uint64_t seed);

/// The permutation used by generate_synthetic for a given seed and item count
/// (index 1..num_items); exposed so evaluations can measure the planted rule.
std::vector<int> synthetic_permutation(int num_items, uint64_t seed);

/// One training batch. inputs[b] is the user's train prefix left-padded to n;
/// targets[b][t] is the next item after position t (0 when absent); mask is
/// true where a loss is defined (real input with a real target); negatives
/// are uniform over items distinct from the positive at that position.
struct Batch {
    std::vector<int> user_rows;                      // indices into split.users
    std::vector<std::vector<int>> inputs;            // [B][n]
    std::vector<std::vector<int>> targets;           // [B][n]
    std::vector<std::vector<std::vector<int>>> negatives;  // [B][n][num_negatives]
    std::vector<std::vector<uint8_t>> loss_mask;     // [B][n]
};

/// Deterministic batch stream: users shuffled by `seed`, negatives drawn from
/// the same generator. Each stream owns its RNG.
class BatchStream {
  public:
    BatchStream(const SplitDataset& split, int n, int num_items, int batch_size, int num_negatives,
                uint64_t seed);
    bool next(Batch& out);  // false when exhausted
    void reset(uint64_t seed);

  private:
    const SplitDataset& split_;
    int n_, num_items_, batch_size_, num_negatives_;
    std::vector<int> order_;
    size_t pos_ = 0;
    Rng rng_;
};

/// Left-pad (or truncate to the most recent n) a sequence to exactly n ids.
std::vector<int> left_pad(const std::vector<int>& seq, int n);

struct DatasetStats {
    int users = 0;
    int items = 0;
    size_t interactions = 0;
    double density = 0.0;
};

DatasetStats dataset_stats(const SequenceDataset& ds);

std::string dataset_to_json(const SequenceDataset& ds);
SequenceDataset dataset_from_json(const std::string& text);
void save_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset load_dataset(const std::string& path);
uint64_t dataset_hash(const SequenceDataset& ds);

}  // namespace seqrec
