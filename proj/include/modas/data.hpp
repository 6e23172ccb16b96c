#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "modas/errors.hpp"
#include "modas/rng.hpp"
#include "modas/tensor.hpp"

namespace modas {

// Desk-scale datasets: seeded 2-D synthetic generators, half/half
// train-validation splitting, epoch minibatching, and a strict numeric CSV
// loader for external data.

struct Dataset {
    Tensor inputs;  // [n x d]
    std::vector<int> labels;
    int num_classes = 0;
    std::string provenance;

    int n() const { return inputs.rank() == 2 ? inputs.rows() : 0; }
    int width() const { return inputs.rank() == 2 ? inputs.cols() : 0; }

    void validate() const {
        if (inputs.rank() != 2 || n() < 1) throw ShapeError("dataset needs at least one row");
        if (static_cast<int>(labels.size()) != n()) throw ShapeError("dataset label count mismatch");
        if (!inputs.all_finite()) throw NumericError("dataset contains non-finite inputs");
        for (int l : labels) {
            if (l < 0 || l >= num_classes) {
                throw ShapeError("label " + std::to_string(l) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
            }
        }
    }
};

/// Rows of `ds` selected by index, in the given order.
inline Dataset take(const Dataset& ds, const std::vector<int>& idx) {
    Dataset out;
    out.inputs = Tensor::zeros({static_cast<int>(idx.size()), ds.width()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (int c = 0; c < ds.width(); ++c) {
            out.inputs.at(static_cast<int>(r), c) = ds.inputs.at(idx[r], c);
        }
        out.labels.push_back(ds.labels[static_cast<std::size_t>(idx[r])]);
    }
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    return out;
}

/// Two-class 2-D point clouds. Classes are balanced to within one example
/// (class 0 gets the extra point when n is odd); deterministic in the seed.
inline Dataset generate(const std::string& kind, int n, double noise, std::uint64_t seed) {
    if (n < 2) throw ConfigError("data.n must be >= 2");
    if (noise < 0) throw ConfigError("data.noise must be >= 0");
    const int n0 = (n + 1) / 2;
    const int n1 = n - n0;

    Rng rng(seed);
    Dataset ds;
    ds.inputs = Tensor::zeros({n, 2});
    ds.num_classes = 2;
    ds.provenance = kind + "(n=" + std::to_string(n) + ",noise=" + std::to_string(noise) +
                    ",seed=" + std::to_string(seed) + ")";

    auto emit = [&](int row, double x, double y, int label) {
        ds.inputs.at(row, 0) = x + noise * rng.normal();
        ds.inputs.at(row, 1) = y + noise * rng.normal();
        ds.labels.push_back(label);
        (void)row;
    };

    if (kind == "moons") {
        // Two interleaved half-circles: outer arc for class 0, shifted
        // reflected arc for class 1.
        for (int i = 0; i < n0; ++i) {
            const double t = n0 > 1 ? M_PI * i / (n0 - 1) : 0.0;
            emit(i, std::cos(t), std::sin(t), 0);
        }
        for (int i = 0; i < n1; ++i) {
            const double t = n1 > 1 ? M_PI * i / (n1 - 1) : 0.0;
            emit(n0 + i, 1.0 - std::cos(t), 0.5 - std::sin(t), 1);
        }
    } else if (kind == "spirals") {
        // Two interleaved spiral arms, offset by half a turn.
        for (int c = 0; c < 2; ++c) {
            const int nc = c == 0 ? n0 : n1;
            for (int i = 0; i < nc; ++i) {
                const double t = nc > 1 ? static_cast<double>(i) / (nc - 1) : 0.0;
                const double r = 0.25 + 0.75 * t;
                const double a = 3.0 * M_PI * t + c * M_PI;
                emit(c * n0 + i, r * std::cos(a), r * std::sin(a), c);
            }
        }
    } else if (kind == "blobs") {
        // Gaussian clouds around (-2, 0) and (2, 0).
        for (int i = 0; i < n0; ++i) emit(i, -2.0, 0.0, 0);
        for (int i = 0; i < n1; ++i) emit(n0 + i, 2.0, 0.0, 1);
    } else {
        throw ConfigError("unknown data kind '" + kind + "' (expected moons, spirals or blobs)");
    }
    ds.validate();
    return ds;
}

/// Shuffled half/half split; the train side gets the extra row when n is odd.
inline std::pair<Dataset, Dataset> split_half(const Dataset& ds, std::uint64_t seed) {
    if (ds.n() < 2) throw ShapeError("split_half needs at least 2 rows");
    std::vector<int> idx(static_cast<std::size_t>(ds.n()));
    for (int i = 0; i < ds.n(); ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    shuffle(idx, rng);
    const int n_train = (ds.n() + 1) / 2;
    const std::vector<int> tr(idx.begin(), idx.begin() + n_train);
    const std::vector<int> va(idx.begin() + n_train, idx.end());
    return {take(ds, tr), take(ds, va)};
}

/// One epoch of minibatch index slices: a shuffle keyed by (seed, epoch),
/// cut into batches of size B with the short final batch kept.
inline std::vector<std::vector<int>> batches(int n, int batch_size, std::uint64_t seed, int epoch) {
    if (batch_size < 1 || batch_size > n) {
        throw ConfigError("batch size " + std::to_string(batch_size) + " outside [1, " +
                          std::to_string(n) + "]");
    }
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch)}));
    shuffle(idx, rng);

    std::vector<std::vector<int>> out;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        out.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline double parse_number(const std::string& cell, const std::string& path, int line_no) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && *first == ' ') ++first;
    while (last != first && *(last - 1) == ' ') --last;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": cannot parse '" + cell +
                          "' as a number");
    }
    return v;
}

}  // namespace detail

/// Strict numeric CSV: header row, comma separation, one integer label column
/// named by `label_column`, every other column a feature. Row order is kept.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
    const std::vector<std::string> header = detail::split_csv_line(line);
    int label_idx = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == label_column) label_idx = static_cast<int>(i);
    }
    if (label_idx < 0) {
        throw ConfigError(path + ": no column named '" + label_column + "' in header");
    }
    const int d = static_cast<int>(header.size()) - 1;
    if (d < 1) throw ConfigError(path + ": no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " cells, got " +
                              std::to_string(cells.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const double v = detail::parse_number(cells[i], path, line_no);
            if (static_cast<int>(i) == label_idx) {
                if (v != std::floor(v) || v < 0) {
                    throw ConfigError(path + ":" + std::to_string(line_no) +
                                      ": label must be a nonnegative integer, got '" + cells[i] +
                                      "'");
                }
                labels.push_back(static_cast<int>(v));
            } else {
                values.push_back(v);
            }
        }
    }
    if (labels.empty()) throw ConfigError(path + ": no data rows");

    Dataset ds;
    ds.inputs = Tensor::matrix(static_cast<int>(labels.size()), d, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = 0;
    for (int l : ds.labels) ds.num_classes = std::max(ds.num_classes, l + 1);
    ds.provenance = path;
    ds.validate();
    return ds;
}

/// Per-feature z-score with statistics from the train split only. Features
/// with (near-)zero spread are left unscaled.
inline void standardize(Dataset& train, Dataset& val) {
    const int d = train.width();
    for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int r = 0; r < train.n(); ++r) mean += train.inputs.at(r, c);
        mean /= train.n();
        double var = 0.0;
        for (int r = 0; r < train.n(); ++r) {
            const double dv = train.inputs.at(r, c) - mean;
            var += dv * dv;
        }
        double sd = std::sqrt(var / train.n());
        if (sd < 1e-12) sd = 1.0;
        for (int r = 0; r < train.n(); ++r) {
            train.inputs.at(r, c) = (train.inputs.at(r, c) - mean) / sd;
        }
        for (int r = 0; r < val.n(); ++r) {
            val.inputs.at(r, c) = (val.inputs.at(r, c) - mean) / sd;
        }
    }
}

/// A bound minibatch: features and labels as tensors ready for graph binding.
struct Batch {
    Tensor x;  // [b x d]
    Tensor y;  // [b], integral values
};

inline Batch make_batch(const Dataset& ds, const std::vector<int>& idx) {
    Batch b;
    b.x = Tensor::zeros({static_cast<int>(idx.size()), ds.width()});
    b.y = Tensor::zeros({static_cast<int>(idx.size())});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (int c = 0; c < ds.width(); ++c) {
            b.x.at(static_cast<int>(r), c) = ds.inputs.at(idx[r], c);
        }
        b.y[static_cast<long>(r)] = ds.labels[static_cast<std::size_t>(idx[r])];
    }
    return b;
}

/// The whole dataset as one batch.
inline Batch full_batch(const Dataset& ds) {
    std::vector<int> idx(static_cast<std::size_t>(ds.n()));
    for (int i = 0; i < ds.n(); ++i) idx[static_cast<std::size_t>(i)] = i;
    return make_batch(ds, idx);
}

}  // namespace modas
