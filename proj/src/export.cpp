#include "seqrec/export.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace seqrec {

void write_csv_matrix(const std::string& path, const MatrixRM& m) {
    std::ostringstream os;
    os.precision(17);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) os << ",";
            os << m(i, j);
        }
        os << "\n";
    }
    write_text_file(path, os.str());
}

MatrixRM read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot open CSV: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw UserError("empty CSV: " + path);
    MatrixRM m(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw UserError("ragged CSV: " + path);
        for (size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

void write_pgm(const std::string& path, const MatrixRM& m) {
    double lo = m.minCoeff(), hi = m.maxCoeff();
    double span = hi - lo;
    std::string body;
    body.reserve(m.size());
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) {
            double v = span > 0 ? (m(i, j) - lo) / span : 0.0;
            body.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    std::ostringstream os;
    os << "P5\n" << m.cols() << " " << m.rows() << "\n255\n" << body;
    write_text_file(path, os.str());
}

AttentionExport export_attention(const Model& m, const SplitDataset& split, int user_row, int layer,
                                 int head, int last_k, const std::string& out_dir) {
    if (user_row < 0 || user_row >= static_cast<int>(split.users.size()))
        throw UserError("export: user index out of range");
    if (layer < 0 || layer >= m.config.layers) throw UserError("export: layer out of range");
    if (head < 0 || head >= m.config.heads) throw UserError("export: head out of range");
    if (last_k < 1) throw UserError("export: last_k must be >= 1");

    const auto& us = split.users[user_row];
    std::vector<int> history = us.train;
    history.push_back(us.valid_target);
    if (static_cast<int>(history.size()) > m.config.n)
        history.erase(history.begin(), history.end() - m.config.n);

    NoGradGuard ng;
    EncodeResult enc = encode(m, history, /*train_mode=*/false, nullptr, /*record_attention=*/true);
    const AttentionRecord* rec = nullptr;
    for (const auto& r : enc.records)
        if (r.layer == layer && r.head == head) rec = &r;
    if (!rec) throw ContractError("export: attention record missing");

    int n = m.config.n;
    int k = std::min(last_k, n);
    std::filesystem::create_directories(out_dir);

    AttentionExport out;
    out.k = k;
    auto emit = [&](const std::string& name, const Tensor& t) {
        MatrixRM full = t.to_matrix();
        MatrixRM rows_win = full.bottomRows(k);     // last k query positions, all keys
        MatrixRM square = full.bottomRightCorner(k, k);
        std::string csv = out_dir + "/" + name + ".csv";
        std::string pgm = out_dir + "/" + name + ".pgm";
        write_csv_matrix(csv, rows_win);
        write_pgm(pgm, square);
        out.csv_files.push_back(csv);
        out.image_files.push_back(pgm);
    };
    emit("A", rec->A);
    if (rec->B.defined()) emit("B", rec->B);
    emit("weights", rec->weights);
    return out;
}

}  // namespace seqrec
