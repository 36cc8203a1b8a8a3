#pragma once

#include <string>
#include <vector>

#include "seqrec/backbone.hpp"
#include "seqrec/data.hpp"

namespace seqrec {

/// Files written by export_attention. CSVs hold the last `k` query rows with
/// all n key columns (so each exported row carries its full unmasked support);
/// images are the k x k bottom-right square, 8-bit grayscale PGM with linear
/// min-max normalization per matrix.
struct AttentionExport {
    int k = 0;
    std::vector<std::string> csv_files;
    std::vector<std::string> image_files;
};

/// Export raw scores A, refined scores B (when the mechanism defines them)
/// and final weights for one user / layer / head of a trained model. The
/// encoded history is the user's train items plus the validation item, i.e.
/// the test-time input.
AttentionExport export_attention(const Model& m, const SplitDataset& split, int user_row, int layer,
                                 int head, int last_k, const std::string& out_dir);

void write_csv_matrix(const std::string& path, const MatrixRM& m);
void write_pgm(const std::string& path, const MatrixRM& m);  // linear min-max to 0..255
MatrixRM read_csv_matrix(const std::string& path);

}  // namespace seqrec
