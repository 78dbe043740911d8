#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfed/binary_io.hpp"
#include "graphfed/dft.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/features.hpp"
#include "graphfed/matrix.hpp"
#include "graphfed/parallel.hpp"
#include "graphfed/recording.hpp"

namespace graphfed {

// Adjacency matrices are symmetric with zero diagonal and weights in [0, 1].
inline void validate_adjacency(const matrix& a, double tol = 1e-12) {
    if (a.rows() != a.cols())
        throw shape_error("adjacency must be square, got " + shape_str(a));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (a(i, i) != 0.0)
            throw validation_error("adjacency diagonal nonzero at node " + std::to_string(i));
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double v = a(i, j);
            if (!std::isfinite(v))
                throw validation_error("adjacency has non-finite weight at (" +
                                       std::to_string(i) + ", " + std::to_string(j) + ")");
            if (v < -tol || v > 1.0 + tol)
                throw validation_error("adjacency weight " + std::to_string(v) +
                                       " outside [0, 1] at (" + std::to_string(i) + ", " +
                                       std::to_string(j) + ")");
            if (std::abs(v - a(j, i)) > tol)
                throw validation_error("adjacency not symmetric at (" + std::to_string(i) +
                                       ", " + std::to_string(j) + ")");
        }
    }
}

inline matrix clamp_adjacency(matrix a) {
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            a(i, j) = std::clamp(a(i, j), 0.0, 1.0);
    return a;
}

enum class corr_kind { db, knn, pcc, plv };

inline std::string to_string(corr_kind k) {
    switch (k) {
        case corr_kind::db: return "db";
        case corr_kind::knn: return "knn";
        case corr_kind::pcc: return "pcc";
        case corr_kind::plv: return "plv";
    }
    throw config_error("unknown correlation kind");
}

inline corr_kind corr_kind_from_string(const std::string& s) {
    if (s == "db") return corr_kind::db;
    if (s == "knn") return corr_kind::knn;
    if (s == "pcc") return corr_kind::pcc;
    if (s == "plv") return corr_kind::plv;
    throw config_error("unknown correlation kind '" + s + "' (use db, knn, pcc, or plv)");
}

struct corr_config {
    corr_kind kind = corr_kind::pcc;
    std::size_t k = 3;                   // neighbour count for knn
    std::optional<double> sigma;         // kernel width for db; absent: mean pairwise distance
    double threshold = 0.0;              // prune weights strictly below this
};

namespace detail {

inline double sq_dist3(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

// Gaussian kernel over electrode distance: a_ij = exp(-d_ij^2 / (2 sigma^2)).
// Geometry-only, so the same matrix serves every timestamp.
inline matrix corr_db(const electrode_positions& pos, const corr_config& cfg) {
    const std::size_t n = pos.names.size();
    if (n < 2) throw data_error("distance graph needs at least 2 electrodes");
    matrix d2(n, n);
    double dist_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = detail::sq_dist3(pos.coords[i], pos.coords[j]);
            d2(i, j) = d2(j, i) = s;
            dist_sum += std::sqrt(s);
            ++pairs;
        }
    double sigma = cfg.sigma.value_or(0.0);
    if (!(sigma > 0.0)) sigma = dist_sum / double(pairs);
    if (!(sigma > 0.0))
        throw data_error("electrode positions are degenerate: all pairwise distances are zero");
    const double denom = 2.0 * sigma * sigma;
    matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            a(i, j) = (i == j) ? 0.0 : std::exp(-d2(i, j) / denom);
    return a;
}

// K nearest neighbours by Euclidean distance in feature space, symmetrised by
// union: a_ij = 1 if i is among j's neighbours or vice versa. Ties broken by
// lower node index.
inline matrix corr_knn(const matrix& x, std::size_t k) {
    const std::size_t n = x.rows();
    if (n < 2) throw data_error("knn graph needs at least 2 nodes");
    if (k == 0 || k >= n)
        throw config_error("knn neighbour count " + std::to_string(k) +
                           " must be in [1, " + std::to_string(n - 1) + "]");
    matrix a(n, n);
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double d = x(i, c) - x(j, c);
                s += d * d;
            }
            order.emplace_back(s, j);
        }
        std::sort(order.begin(), order.end());
        for (std::size_t r = 0; r < k; ++r) {
            const std::size_t j = order[r].second;
            a(i, j) = 1.0;
            a(j, i) = 1.0;
        }
    }
    return a;
}

// Absolute Pearson correlation between node feature rows.
inline matrix corr_pcc(const matrix& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw data_error("correlation graph needs at least 2 nodes");
    if (d < 2) throw data_error("correlation needs at least 2 features per node");
    std::vector<double> mean(n, 0.0), sd(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += x(i, c);
        mean[i] = s / double(d);
        double v = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dev = x(i, c) - mean[i];
            v += dev * dev;
        }
        if (!(v > 0.0))
            throw data_error("node " + std::to_string(i) +
                             " has constant features; correlation is undefined");
        sd[i] = std::sqrt(v);
    }
    matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double cov = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                cov += (x(i, c) - mean[i]) * (x(j, c) - mean[j]);
            const double r = std::abs(cov / (sd[i] * sd[j]));
            a(i, j) = a(j, i) = std::min(r, 1.0);
        }
    return a;
}

// Phase locking value between node rows: magnitude of the mean unit phasor of
// the instantaneous phase difference.
inline matrix corr_plv(const matrix& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw data_error("phase graph needs at least 2 nodes");
    if (d < 4) throw data_error("phase locking needs at least 4 samples per node");
    std::vector<std::vector<double>> phases(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> row = x.row(i);
        double lo = row[0], hi = row[0];
        for (double v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(hi > lo))
            throw data_error("node " + std::to_string(i) +
                             " has a constant signal; phase is undefined");
        phases[i] = instantaneous_phase(row);
    }
    matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double re = 0.0, im = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double dp = phases[i][t] - phases[j][t];
                re += std::cos(dp);
                im += std::sin(dp);
            }
            const double plv = std::sqrt(re * re + im * im) / double(d);
            a(i, j) = a(j, i) = std::min(plv, 1.0);
        }
    return a;
}

struct graph_sample {
    matrix x;  // node features, n x d
    matrix a;  // adjacency, n x n
    int label = 0;
};

struct graph_dataset {
    std::string corr_kind_name;
    std::string extractor_kind;
    std::size_t n_nodes = 0;
    std::size_t feature_dim = 0;
    std::size_t n_classes = 0;
    std::vector<graph_sample> samples;
};

inline matrix features_at(const feature_tensor& f, std::size_t t) {
    matrix x(f.n_nodes, f.dim);
    for (std::size_t n = 0; n < f.n_nodes; ++n) {
        const auto src = f.row(t, n);
        const auto dst = x.row(n);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return x;
}

inline matrix apply_threshold(matrix a, double threshold) {
    if (threshold <= 0.0) return a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (a(i, j) < threshold) a(i, j) = 0.0;
    return a;
}

// Build one graph per timestamp. Node features always come from the feature
// tensor; the adjacency source depends on the method (electrode geometry for
// db, feature rows otherwise).
inline graph_dataset assemble_dataset(const feature_tensor& feats, const label_set& labels,
                                      const corr_config& cfg, const std::string& extractor_kind,
                                      const electrode_positions* positions = nullptr,
                                      std::size_t workers = 1) {
    if (labels.labels.size() != feats.n_timestamps)
        throw validation_error("label count " + std::to_string(labels.labels.size()) +
                               " does not match timestamp count " +
                               std::to_string(feats.n_timestamps));
    matrix shared(0, 0);
    if (cfg.kind == corr_kind::db) {
        if (!positions)
            throw config_error("distance graphs need electrode positions");
        if (positions->names.size() != feats.n_nodes)
            throw validation_error("position count " + std::to_string(positions->names.size()) +
                                   " does not match node count " +
                                   std::to_string(feats.n_nodes));
        shared = clamp_adjacency(apply_threshold(corr_db(*positions, cfg), cfg.threshold));
        validate_adjacency(shared);
    }

    graph_dataset ds;
    ds.corr_kind_name = to_string(cfg.kind);
    ds.extractor_kind = extractor_kind;
    ds.n_nodes = feats.n_nodes;
    ds.feature_dim = feats.dim;
    ds.n_classes = labels.n_classes;
    ds.samples.resize(feats.n_timestamps);

    parallel_for(feats.n_timestamps, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            try {
                matrix x = features_at(feats, t);
                matrix a(0, 0);
                switch (cfg.kind) {
                    case corr_kind::db: a = shared; break;
                    case corr_kind::knn: a = corr_knn(x, cfg.k); break;
                    case corr_kind::pcc: a = corr_pcc(x); break;
                    case corr_kind::plv: a = corr_plv(x); break;
                }
                if (cfg.kind != corr_kind::db) {
                    a = clamp_adjacency(apply_threshold(std::move(a), cfg.threshold));
                    validate_adjacency(a);
                }
                ds.samples[t] = graph_sample{std::move(x), std::move(a), labels.labels[t]};
            } catch (const error& e) {
                throw data_error("timestamp " + std::to_string(t) + ": " + e.what());
            }
        }
    });
    return ds;
}

// .gds container: JSON with a metadata object and a samples array. Numbers are
// printed with 17 significant digits so a round trip is exact.
inline constexpr int kGdsVersion = 1;

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_matrix_json(std::ostream& os, const matrix& m) {
    os << '[';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) os << ',';
        os << '[';
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << ',';
            os << fmt_double(m(i, j));
        }
        os << ']';
    }
    os << ']';
}

inline matrix read_matrix_json(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                               const std::string& what) {
    if (!j.is_array() || j.size() != rows)
        throw format_error(what + ": want " + std::to_string(rows) + " rows");
    matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != cols)
            throw format_error(what + ": row " + std::to_string(i) + " wants " +
                               std::to_string(cols) + " values");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row[c].is_number())
                throw format_error(what + ": non-numeric entry in row " + std::to_string(i));
            m(i, c) = row[c].get<double>();
        }
    }
    return m;
}

} // namespace detail

inline void write_dataset(const graph_dataset& ds, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        os << "{\"metadata\":{";
        os << "\"generator_version\":" << kGdsVersion;
        os << ",\"corr_kind\":\"" << ds.corr_kind_name << '"';
        os << ",\"extractor_kind\":\"" << ds.extractor_kind << '"';
        os << ",\"n\":" << ds.n_nodes;
        os << ",\"d\":" << ds.feature_dim;
        os << ",\"n_classes\":" << ds.n_classes;
        os << "},\"samples\":[";
        for (std::size_t s = 0; s < ds.samples.size(); ++s) {
            if (s) os << ',';
            os << "{\"y\":" << ds.samples[s].label << ",\"x\":";
            detail::write_matrix_json(os, ds.samples[s].x);
            os << ",\"a\":";
            detail::write_matrix_json(os, ds.samples[s].a);
            os << '}';
        }
        os << "]}";
    });
}

inline graph_dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error(path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("metadata") || !j.contains("samples"))
        throw format_error(path.string() + ": want metadata and samples");
    const auto& meta = j["metadata"];
    graph_dataset ds;
    try {
        if (meta.at("generator_version").get<int>() != kGdsVersion)
            throw format_error(path.string() + ": unsupported generator version");
        ds.corr_kind_name = meta.at("corr_kind").get<std::string>();
        ds.extractor_kind = meta.at("extractor_kind").get<std::string>();
        ds.n_nodes = meta.at("n").get<std::size_t>();
        ds.feature_dim = meta.at("d").get<std::size_t>();
        ds.n_classes = meta.at("n_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path.string() + ": bad metadata: " + e.what());
    }
    const auto& samples = j["samples"];
    if (!samples.is_array())
        throw format_error(path.string() + ": samples must be an array");
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& js = samples[s];
        const std::string what = path.string() + " sample " + std::to_string(s);
        if (!js.is_object() || !js.contains("x") || !js.contains("a") || !js.contains("y"))
            throw format_error(what + ": want x, a, y");
        graph_sample gs;
        gs.x = detail::read_matrix_json(js["x"], ds.n_nodes, ds.feature_dim, what + " x");
        gs.a = detail::read_matrix_json(js["a"], ds.n_nodes, ds.n_nodes, what + " a");
        if (!js["y"].is_number_integer())
            throw format_error(what + ": label must be an integer");
        gs.label = js["y"].get<int>();
        if (gs.label < 0 || std::size_t(gs.label) >= ds.n_classes)
            throw validation_error(what + ": label " + std::to_string(gs.label) +
                                   " outside [0, " + std::to_string(ds.n_classes) + ")");
        try {
            validate_adjacency(gs.a);
        } catch (const error& e) {
            throw validation_error(what + ": " + e.what());
        }
        ds.samples.push_back(std::move(gs));
    }
    return ds;
}

inline label_set dataset_labels(const graph_dataset& ds) {
    label_set ls;
    ls.n_classes = int(ds.n_classes);
    for (const auto& s : ds.samples) ls.labels.push_back(s.label);
    return ls;
}

} // namespace graphfed
