#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphfed/adam.hpp"
#include "graphfed/binary_io.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/graph.hpp"
#include "graphfed/matrix.hpp"
#include "graphfed/rng.hpp"

namespace graphfed {

// Graph classifier: L rounds of weighted-mean message passing with ReLU and
// dropout, mean readout over nodes, then a sigmoid one-vs-rest head trained
// with summed binary cross entropy. Gradients are computed manually.

struct model_config {
    std::size_t n_layers = 2;
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t n_classes = 5;
    double dropout_rate = 0.3;
};

inline void validate_config(const model_config& cfg) {
    if (cfg.n_layers < 1) throw config_error("model needs at least 1 layer");
    if (cfg.in_dim < 1) throw config_error("model input dimension must be positive");
    if (cfg.hidden_dim < 1) throw config_error("model hidden dimension must be positive");
    if (cfg.n_classes < 2) throw config_error("model needs at least 2 classes");
    if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0))
        throw config_error("dropout rate must be in [0, 1)");
}

struct model_weights {
    std::vector<matrix> layers;  // W^1 is hidden x in, the rest hidden x hidden
    matrix classifier;           // n_classes x hidden
};

inline void validate_weights(const model_weights& w, const model_config& cfg) {
    if (w.layers.size() != cfg.n_layers)
        throw shape_error("weights hold " + std::to_string(w.layers.size()) + " layers, want " +
                          std::to_string(cfg.n_layers));
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const std::size_t want_in = l == 0 ? cfg.in_dim : cfg.hidden_dim;
        if (w.layers[l].rows() != cfg.hidden_dim || w.layers[l].cols() != want_in)
            throw shape_error("layer " + std::to_string(l) + " is " + shape_str(w.layers[l]) +
                              ", want " + std::to_string(cfg.hidden_dim) + "x" +
                              std::to_string(want_in));
        if (!w.layers[l].all_finite())
            throw numeric_error("layer " + std::to_string(l) + " has non-finite weights");
    }
    if (w.classifier.rows() != cfg.n_classes || w.classifier.cols() != cfg.hidden_dim)
        throw shape_error("classifier is " + shape_str(w.classifier) + ", want " +
                          std::to_string(cfg.n_classes) + "x" + std::to_string(cfg.hidden_dim));
    if (!w.classifier.all_finite())
        throw numeric_error("classifier has non-finite weights");
}

namespace detail {

inline matrix glorot_uniform(std::size_t rows, std::size_t cols, rng_stream& rng) {
    const double limit = std::sqrt(6.0 / double(rows + cols));
    matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            m(i, j) = (2.0 * rng.uniform() - 1.0) * limit;
    return m;
}

} // namespace detail

inline model_weights init_weights(const model_config& cfg, rng_stream& rng) {
    validate_config(cfg);
    model_weights w;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        w.layers.push_back(detail::glorot_uniform(cfg.hidden_dim,
                                                  l == 0 ? cfg.in_dim : cfg.hidden_dim, rng));
    w.classifier = detail::glorot_uniform(cfg.n_classes, cfg.hidden_dim, rng);
    return w;
}

inline std::size_t n_params(const model_config& cfg) {
    std::size_t n = cfg.hidden_dim * cfg.in_dim;
    for (std::size_t l = 1; l < cfg.n_layers; ++l) n += cfg.hidden_dim * cfg.hidden_dim;
    return n + cfg.n_classes * cfg.hidden_dim;
}

// Flatten order: layer matrices in depth order, row-major, then the
// classifier row-major. Every serialization and optimizer step uses this.
inline std::vector<double> flatten(const model_weights& w) {
    std::vector<double> out;
    for (const auto& m : w.layers) out.insert(out.end(), m.data().begin(), m.data().end());
    out.insert(out.end(), w.classifier.data().begin(), w.classifier.data().end());
    return out;
}

inline void unflatten(std::span<const double> flat, model_weights& w) {
    std::size_t need = w.classifier.size();
    for (const auto& m : w.layers) need += m.size();
    if (flat.size() != need)
        throw shape_error("unflatten: " + std::to_string(flat.size()) + " values for " +
                          std::to_string(need) + " parameters");
    std::size_t off = 0;
    for (auto& m : w.layers) {
        std::copy(flat.begin() + off, flat.begin() + off + m.size(), m.data().begin());
        off += m.size();
    }
    std::copy(flat.begin() + off, flat.end(), w.classifier.data().begin());
}

namespace detail {

// Weighted-mean aggregation: m_v = (h_v + sum_u a_vu h_u) / (1 + sum_u a_vu).
// With binary adjacency this is the plain mean over the node and its
// neighbours. Also returns the per-node denominators for the backward pass.
inline matrix aggregate(const matrix& h, const matrix& a, std::vector<double>& denoms) {
    const std::size_t n = h.rows(), f = h.cols();
    matrix m(n, f);
    denoms.assign(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        double denom = 1.0;
        for (std::size_t j = 0; j < f; ++j) m(v, j) = h(v, j);
        for (std::size_t u = 0; u < n; ++u) {
            const double w = a(v, u);
            if (w == 0.0) continue;
            denom += w;
            for (std::size_t j = 0; j < f; ++j) m(v, j) += w * h(u, j);
        }
        denoms[v] = denom;
        for (std::size_t j = 0; j < f; ++j) m(v, j) /= denom;
    }
    return m;
}

// Transpose of the aggregation viewed as a linear map over node rows.
inline matrix aggregate_transpose(const matrix& dm, const matrix& a,
                                  const std::vector<double>& denoms) {
    const std::size_t n = dm.rows(), f = dm.cols();
    matrix dh(n, f);
    for (std::size_t v = 0; v < n; ++v) {
        const double inv = 1.0 / denoms[v];
        for (std::size_t j = 0; j < f; ++j) dh(v, j) += inv * dm(v, j);
        for (std::size_t u = 0; u < n; ++u) {
            const double w = a(v, u);
            if (w == 0.0) continue;
            const double scaled = w * inv;
            for (std::size_t j = 0; j < f; ++j) dh(u, j) += scaled * dm(v, j);
        }
    }
    return dh;
}

} // namespace detail

// One message-passing layer. Dropout masks are drawn row-major over the
// output only in training mode with a positive rate, so evaluation never
// touches the rng. Mask entries are 0 or 1/(1-p) (inverted scaling).
inline std::pair<matrix, matrix> layer_forward(const matrix& h, const matrix& a, const matrix& w,
                                               bool training, rng_stream& rng,
                                               double dropout_rate = 0.0) {
    if (a.rows() != a.cols() || a.rows() != h.rows())
        throw shape_error("layer_forward: features " + shape_str(h) + " vs adjacency " +
                          shape_str(a));
    if (w.cols() != h.cols())
        throw shape_error("layer_forward: transform " + shape_str(w) + " vs features " +
                          shape_str(h));
    std::vector<double> denoms;
    const matrix m = detail::aggregate(h, a, denoms);
    matrix s = matmul(m, transpose(w));
    matrix mask(s.rows(), s.cols(), 1.0);
    if (training && dropout_rate > 0.0) {
        const double scale = 1.0 / (1.0 - dropout_rate);
        for (std::size_t i = 0; i < s.rows(); ++i)
            for (std::size_t j = 0; j < s.cols(); ++j)
                mask(i, j) = rng.uniform() < dropout_rate ? 0.0 : scale;
    }
    matrix out(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t j = 0; j < s.cols(); ++j)
            out(i, j) = std::max(0.0, s(i, j)) * mask(i, j);
    return {std::move(out), std::move(mask)};
}

inline std::vector<double> readout(const matrix& h) {
    if (h.rows() < 1) throw shape_error("readout: empty node set");
    std::vector<double> out(h.cols(), 0.0);
    for (std::size_t v = 0; v < h.rows(); ++v)
        for (std::size_t j = 0; j < h.cols(); ++j)
            out[j] += h(v, j);
    for (double& v : out) v /= double(h.rows());
    return out;
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline std::vector<double> classify(std::span<const double> hg, const matrix& w) {
    if (w.cols() != hg.size())
        throw shape_error("classify: head " + shape_str(w) + " vs embedding of " +
                          std::to_string(hg.size()));
    std::vector<double> z(w.rows(), 0.0);
    for (std::size_t c = 0; c < w.rows(); ++c) {
        double u = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) u += w(c, j) * hg[j];
        z[c] = sigmoid(u);
    }
    return z;
}

inline constexpr double kProbClamp = 1e-7;

// Summed one-vs-rest binary cross entropy against a one-hot target.
inline double bce_loss(std::span<const double> z, std::span<const double> y) {
    if (z.size() != y.size())
        throw shape_error("bce_loss: " + std::to_string(z.size()) + " probabilities vs " +
                          std::to_string(y.size()) + " targets");
    double ones = 0.0;
    for (double v : y) {
        if (v != 0.0 && v != 1.0)
            throw validation_error("bce_loss: target is not one-hot");
        ones += v;
    }
    if (ones != 1.0) throw validation_error("bce_loss: target is not one-hot");
    double loss = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
        const double p = std::clamp(z[c], kProbClamp, 1.0 - kProbClamp);
        loss -= y[c] * std::log(p) + (1.0 - y[c]) * std::log(1.0 - p);
    }
    return loss;
}

inline std::vector<double> one_hot(int label, std::size_t n_classes) {
    if (label < 0 || std::size_t(label) >= n_classes)
        throw validation_error("label " + std::to_string(label) + " outside [0, " +
                               std::to_string(n_classes) + ")");
    std::vector<double> y(n_classes, 0.0);
    y[std::size_t(label)] = 1.0;
    return y;
}

struct forward_cache {
    std::vector<matrix> inputs;              // H^{l-1} fed to each layer; inputs[0] is X
    std::vector<matrix> aggregated;          // M^l
    std::vector<matrix> pre_act;             // S^l = M^l (W^l)^T
    std::vector<matrix> masks;               // dropout masks, scaled
    std::vector<std::vector<double>> denoms; // aggregation denominators per layer
    std::vector<double> hg;                  // readout
    std::vector<double> probs;               // z
};

struct forward_result {
    std::vector<double> probs;
    double loss = 0.0;
    std::optional<forward_cache> cache;
};

inline forward_result forward(const graph_sample& g, const model_weights& w,
                              const model_config& cfg, bool training, rng_stream& rng) {
    validate_config(cfg);
    validate_weights(w, cfg);
    if (g.x.cols() != cfg.in_dim)
        throw shape_error("graph features " + shape_str(g.x) + " vs input dimension " +
                          std::to_string(cfg.in_dim));
    if (g.a.rows() != g.x.rows() || g.a.cols() != g.x.rows())
        throw shape_error("graph adjacency " + shape_str(g.a) + " vs " +
                          std::to_string(g.x.rows()) + " nodes");
    if (g.x.rows() < 1) throw shape_error("graph has no nodes");

    forward_cache cache;
    matrix h = g.x;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        std::vector<double> denoms;
        matrix m = detail::aggregate(h, g.a, denoms);
        matrix s = matmul(m, transpose(w.layers[l]));
        matrix mask(s.rows(), s.cols(), 1.0);
        if (training && cfg.dropout_rate > 0.0) {
            const double scale = 1.0 / (1.0 - cfg.dropout_rate);
            for (std::size_t i = 0; i < s.rows(); ++i)
                for (std::size_t j = 0; j < s.cols(); ++j)
                    mask(i, j) = rng.uniform() < cfg.dropout_rate ? 0.0 : scale;
        }
        matrix next(s.rows(), s.cols());
        for (std::size_t i = 0; i < s.rows(); ++i)
            for (std::size_t j = 0; j < s.cols(); ++j)
                next(i, j) = std::max(0.0, s(i, j)) * mask(i, j);
        if (training) {
            cache.inputs.push_back(std::move(h));
            cache.aggregated.push_back(std::move(m));
            cache.pre_act.push_back(std::move(s));
            cache.masks.push_back(std::move(mask));
            cache.denoms.push_back(std::move(denoms));
        }
        h = std::move(next);
    }

    forward_result res;
    std::vector<double> hg = readout(h);
    res.probs = classify(hg, w.classifier);
    res.loss = bce_loss(res.probs, one_hot(g.label, cfg.n_classes));
    if (training) {
        cache.hg = std::move(hg);
        cache.probs = res.probs;
        res.cache = std::move(cache);
    }
    return res;
}

// Gradients share the weight layout so they flatten the same way.
using model_gradients = model_weights;

inline model_gradients backward(const forward_cache& cache, const graph_sample& g,
                                const model_weights& w, const model_config& cfg) {
    if (cache.inputs.size() != cfg.n_layers || cache.probs.size() != cfg.n_classes)
        throw error("backward: cache missing or from a different configuration");
    if (!(cache.inputs[0] == g.x))
        throw error("backward: cache was built from a different graph");
    const std::vector<double> y = one_hot(g.label, cfg.n_classes);
    const std::size_t n = g.x.rows();

    // Clamped probabilities contribute no gradient; otherwise the sigmoid and
    // cross-entropy derivatives cancel to z - y.
    std::vector<double> dlogit(cfg.n_classes, 0.0);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const double z = cache.probs[c];
        if (z < kProbClamp || z > 1.0 - kProbClamp) continue;
        dlogit[c] = z - y[c];
    }

    model_gradients grads;
    grads.classifier = matrix(cfg.n_classes, cfg.hidden_dim);
    std::vector<double> dhg(cfg.hidden_dim, 0.0);
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
            grads.classifier(c, j) = dlogit[c] * cache.hg[j];
            dhg[j] += w.classifier(c, j) * dlogit[c];
        }

    matrix dh(n, cfg.hidden_dim);
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j)
            dh(v, j) = dhg[j] / double(n);

    grads.layers.resize(cfg.n_layers);
    for (std::size_t li = cfg.n_layers; li-- > 0;) {
        const matrix& s = cache.pre_act[li];
        const matrix& mask = cache.masks[li];
        matrix ds(s.rows(), s.cols());
        for (std::size_t i = 0; i < s.rows(); ++i)
            for (std::size_t j = 0; j < s.cols(); ++j)
                ds(i, j) = s(i, j) > 0.0 ? dh(i, j) * mask(i, j) : 0.0;
        grads.layers[li] = matmul(transpose(ds), cache.aggregated[li]);
        if (li > 0) {
            const matrix dm = matmul(ds, w.layers[li]);
            dh = detail::aggregate_transpose(dm, g.a, cache.denoms[li]);
        }
    }
    return grads;
}

inline double train_batch(model_weights& w, const std::vector<graph_sample>& batch,
                          const model_config& cfg, adam_state& opt, rng_stream& rng) {
    if (batch.empty()) throw config_error("train_batch: empty batch");
    std::vector<double> acc(n_params(cfg), 0.0);
    double loss_sum = 0.0;
    for (const graph_sample& g : batch) {
        forward_result res = forward(g, w, cfg, true, rng);
        loss_sum += res.loss;
        const model_gradients grads = backward(*res.cache, g, w, cfg);
        const std::vector<double> flat = flatten(grads);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += flat[i];
    }
    const double inv = 1.0 / double(batch.size());
    for (double& v : acc) v *= inv;
    std::vector<double> flat_w = flatten(w);
    adam_step(flat_w, acc, opt);
    unflatten(flat_w, w);
    return loss_sum * inv;
}

struct metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double mean_loss = 0.0;
    std::vector<double> per_class_f1;
    bool absent_classes = false;  // some class appears in neither truth nor predictions
};

inline std::size_t argmax_class(std::span<const double> z) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c)
        if (z[c] > z[best]) best = c;
    return best;
}

inline metrics evaluate(const model_weights& w, const std::vector<graph_sample>& data,
                        const model_config& cfg) {
    if (data.empty()) throw data_error("evaluate: empty sample list");
    rng_stream unused(0, 0);
    std::vector<std::size_t> tp(cfg.n_classes, 0), fp(cfg.n_classes, 0), fn(cfg.n_classes, 0);
    std::vector<bool> seen(cfg.n_classes, false);
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (const graph_sample& g : data) {
        const forward_result res = forward(g, w, cfg, false, unused);
        loss_sum += res.loss;
        const std::size_t pred = argmax_class(res.probs);
        const std::size_t truth = std::size_t(g.label);
        seen[pred] = seen[truth] = true;
        if (pred == truth) {
            ++tp[truth];
            ++correct;
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    metrics m;
    m.accuracy = double(correct) / double(data.size());
    m.mean_loss = loss_sum / double(data.size());
    m.per_class_f1.resize(cfg.n_classes, 0.0);
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
        m.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * double(tp[c]) / double(denom);
        f1_sum += m.per_class_f1[c];
        if (!seen[c]) m.absent_classes = true;
    }
    m.macro_f1 = f1_sum / double(cfg.n_classes);
    return m;
}

// .mwt checkpoint: magic "MWT1", config block, then all parameters in flatten
// order as little-endian f64.
inline constexpr char kMwtMagic[] = "MWT1";

inline void write_model(const model_config& cfg, const model_weights& w,
                        const std::filesystem::path& path) {
    validate_weights(w, cfg);
    io::atomic_write(path, [&](std::ostream& os) {
        io::put_magic(os, kMwtMagic);
        io::put_le<std::uint32_t>(os, std::uint32_t(cfg.n_layers));
        io::put_le<std::uint32_t>(os, std::uint32_t(cfg.in_dim));
        io::put_le<std::uint32_t>(os, std::uint32_t(cfg.hidden_dim));
        io::put_le<std::uint32_t>(os, std::uint32_t(cfg.n_classes));
        io::put_f64(os, cfg.dropout_rate);
        for (double v : flatten(w)) io::put_f64(os, v);
    });
}

inline std::pair<model_config, model_weights> load_model(const std::filesystem::path& path) {
    std::ifstream is = io::open_input(path);
    io::expect_magic(is, kMwtMagic, path.string());
    model_config cfg;
    cfg.n_layers = io::get_le<std::uint32_t>(is);
    cfg.in_dim = io::get_le<std::uint32_t>(is);
    cfg.hidden_dim = io::get_le<std::uint32_t>(is);
    cfg.n_classes = io::get_le<std::uint32_t>(is);
    cfg.dropout_rate = io::get_f64(is);
    validate_config(cfg);
    model_weights w;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        w.layers.emplace_back(cfg.hidden_dim, l == 0 ? cfg.in_dim : cfg.hidden_dim);
    w.classifier = matrix(cfg.n_classes, cfg.hidden_dim);
    std::vector<double> flat(n_params(cfg));
    for (double& v : flat) {
        v = io::get_f64(is);
        if (!is) throw truncation_error(path.string() + ": truncated parameter block");
    }
    io::expect_eof(is, path.string());
    unflatten(flat, w);
    validate_weights(w, cfg);
    return {cfg, w};
}

} // namespace graphfed
