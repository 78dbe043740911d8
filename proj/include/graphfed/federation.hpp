#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "graphfed/adam.hpp"
#include "graphfed/binary_io.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/gnn.hpp"
#include "graphfed/graph.hpp"
#include "graphfed/parallel.hpp"
#include "graphfed/rng.hpp"
#include "graphfed/split.hpp"

namespace graphfed {

// Simulated cross-client training: label-skewed partitioning, per-round local
// steps on every client, unweighted weight averaging on a central server, and
// a size-matched single-model baseline.

// Reserved rng stream ids. Client streams use the client index directly, so
// auxiliary streams start far above any plausible client count.
inline constexpr std::uint64_t kSplitStream = 1'000'000'000;
inline constexpr std::uint64_t kPartitionStream = 1'000'000'001;
inline constexpr std::uint64_t kInitStream = 1'000'000'002;
inline constexpr std::uint64_t kBaselineSampleStream = 1'000'000'003;

struct partition_params {
    std::size_t n_clients = 5;
    std::size_t n_partitions = 15;
    std::size_t partitions_per_client = 3;
};

struct partition_plan {
    partition_params params;
    std::vector<std::vector<std::size_t>> partitions;         // partition -> sample positions
    std::vector<std::vector<std::size_t>> client_partitions;  // client -> partition ids
};

// Label-skewed split: sort sample positions by label (ties by position), cut
// into contiguous chunks, shuffle chunk ids, deal them round-free to clients
// in order. With n_partitions == n_classes * partitions_per_client each chunk
// is single-label, so a client sees at most partitions_per_client labels.
inline partition_plan partition_noniid(const std::vector<int>& labels,
                                       const partition_params& params, rng_stream& rng) {
    const std::size_t s = labels.size();
    if (params.n_clients < 1 || params.partitions_per_client < 1)
        throw config_error("partitioning needs at least 1 client and 1 partition per client");
    if (params.n_clients * params.partitions_per_client != params.n_partitions)
        throw config_error("clients (" + std::to_string(params.n_clients) + ") x partitions per client (" +
                           std::to_string(params.partitions_per_client) + ") must equal partitions (" +
                           std::to_string(params.n_partitions) + ")");
    if (s < params.n_partitions)
        throw data_error(std::to_string(s) + " samples cannot fill " +
                         std::to_string(params.n_partitions) + " partitions");

    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return labels[a] < labels[b]; });

    partition_plan plan;
    plan.params = params;
    const std::size_t base = s / params.n_partitions;
    const std::size_t rem = s % params.n_partitions;
    std::size_t off = 0;
    for (std::size_t p = 0; p < params.n_partitions; ++p) {
        const std::size_t len = base + (p < rem ? 1 : 0);
        plan.partitions.emplace_back(order.begin() + off, order.begin() + off + len);
        off += len;
    }

    std::vector<std::size_t> ids(params.n_partitions);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    for (std::size_t c = 0; c < params.n_clients; ++c)
        plan.client_partitions.emplace_back(
            ids.begin() + c * params.partitions_per_client,
            ids.begin() + (c + 1) * params.partitions_per_client);
    return plan;
}

// Unweighted mean of client weights. Computed as the first client's weights
// plus the mean offset of the others, accumulated in ascending client order,
// so averaging identical weight sets reproduces them without rounding.
inline model_weights fedavg(const std::vector<model_weights>& clients) {
    if (clients.empty()) throw config_error("fedavg: no client weights");
    if (clients.size() == 1) return clients[0];
    for (std::size_t i = 1; i < clients.size(); ++i) {
        if (clients[i].layers.size() != clients[0].layers.size())
            throw shape_error("fedavg: client " + std::to_string(i) + " layer count differs");
        for (std::size_t l = 0; l < clients[0].layers.size(); ++l)
            require_same_shape(clients[0].layers[l], clients[i].layers[l], "fedavg layer");
        require_same_shape(clients[0].classifier, clients[i].classifier, "fedavg classifier");
    }
    const std::vector<double> base = flatten(clients[0]);
    std::vector<double> offset(base.size(), 0.0);
    for (std::size_t i = 1; i < clients.size(); ++i) {
        const std::vector<double> f = flatten(clients[i]);
        for (std::size_t j = 0; j < base.size(); ++j) offset[j] += f[j] - base[j];
    }
    const double inv = 1.0 / double(clients.size());
    std::vector<double> flat(base.size());
    for (std::size_t j = 0; j < base.size(); ++j)
        flat[j] = offset[j] == 0.0 ? base[j] : base[j] + offset[j] * inv;
    model_weights out = clients[0];
    unflatten(flat, out);
    return out;
}

struct client_state {
    std::size_t id = 0;
    std::vector<graph_sample> samples;
    model_weights local;
    adam_state opt;
    rng_stream rng;
    std::vector<std::size_t> order;  // visit order, reshuffled at each local epoch
    std::size_t cursor = 0;

    client_state(std::size_t client_id, std::vector<graph_sample> data, const model_config& cfg,
                 double lr, std::uint64_t seed)
        : id(client_id),
          samples(std::move(data)),
          opt(n_params(cfg), lr),
          rng(seed, client_id),
          order(samples.size()) {
        if (samples.empty())
            throw config_error("client " + std::to_string(client_id) + " has no samples");
        std::iota(order.begin(), order.end(), 0);
    }

    std::size_t batches_per_epoch(std::size_t batch_size) const {
        return (samples.size() + batch_size - 1) / batch_size;
    }

    std::vector<graph_sample> next_batch(std::size_t batch_size) {
        if (cursor == 0) rng.shuffle(order);
        const std::size_t take = std::min(batch_size, order.size() - cursor);
        std::vector<graph_sample> batch;
        batch.reserve(take);
        for (std::size_t i = 0; i < take; ++i) batch.push_back(samples[order[cursor + i]]);
        cursor += take;
        if (cursor >= order.size()) cursor = 0;
        return batch;
    }
};

struct round_report {
    std::size_t round = 0;
    std::vector<std::vector<double>> client_batch_losses;  // [client][local batch]
    std::vector<double> client_mean_loss;
    double test_loss = 0.0;
    metrics test_metrics;
    double wall_seconds = 0.0;  // in-memory diagnostics only, never serialized
};

// One aggregation round: every client starts from the global weights, takes
// local train steps, and the server averages the results in ascending client
// order before evaluating on the shared test set.
inline round_report run_round(model_weights& global, std::vector<client_state>& clients,
                              const model_config& cfg, std::size_t batch_size,
                              std::size_t local_batches, const std::vector<graph_sample>& test,
                              std::size_t round_index, std::size_t workers = 1) {
    if (clients.empty()) throw config_error("run_round: no clients");
    const auto t0 = std::chrono::steady_clock::now();
    round_report report;
    report.round = round_index;
    report.client_batch_losses.assign(clients.size(), {});

    parallel_for(clients.size(), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            client_state& client = clients[c];
            client.local = global;
            auto& losses = report.client_batch_losses[c];
            for (std::size_t b = 0; b < local_batches; ++b) {
                const std::vector<graph_sample> batch = client.next_batch(batch_size);
                losses.push_back(train_batch(client.local, batch, cfg, client.opt, client.rng));
            }
        }
    });

    std::vector<model_weights> uploads;
    uploads.reserve(clients.size());
    for (const client_state& client : clients) uploads.push_back(client.local);
    global = fedavg(uploads);

    for (const auto& losses : report.client_batch_losses) {
        double mean = 0.0;
        for (double v : losses) mean += v;
        report.client_mean_loss.push_back(losses.empty() ? 0.0 : mean / double(losses.size()));
    }
    report.test_metrics = evaluate(global, test, cfg);
    report.test_loss = report.test_metrics.mean_loss;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

enum class train_mode { federated, centralized };

inline std::string to_string(train_mode m) {
    return m == train_mode::federated ? "federated" : "centralized";
}

inline train_mode train_mode_from_string(const std::string& s) {
    if (s == "federated") return train_mode::federated;
    if (s == "centralized") return train_mode::centralized;
    throw config_error("unknown training mode '" + s + "' (use federated or centralized)");
}

struct federation_config {
    std::size_t n_clients = 5;
    std::size_t n_partitions = 15;
    std::size_t partitions_per_client = 3;
    std::size_t epochs = 5;
    std::size_t local_batches_per_round = 1;
    double lr = 0.015;
    std::size_t batch_size = 8;
    double test_ratio = 0.25;
};

inline void validate_federation_config(const federation_config& cfg) {
    if (cfg.n_clients < 1) throw config_error("need at least 1 client");
    if (cfg.epochs < 1) throw config_error("need at least 1 epoch");
    if (cfg.local_batches_per_round < 1)
        throw config_error("need at least 1 local batch per round");
    if (cfg.batch_size < 1) throw config_error("batch size must be positive");
    if (!(cfg.lr > 0.0)) throw config_error("learning rate must be positive");
    if (!(cfg.test_ratio > 0.0 && cfg.test_ratio < 1.0))
        throw config_error("test ratio must be in (0, 1)");
}

struct training_result {
    train_mode mode = train_mode::federated;
    std::string corr_kind_name;
    model_config model_cfg;
    model_weights weights;
    std::vector<round_report> rounds;
    metrics final_metrics;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::vector<std::size_t> client_sample_counts;
    std::vector<std::size_t> train_indices;  // dataset positions
    std::vector<std::size_t> test_indices;
};

namespace detail {

inline std::vector<graph_sample> gather(const graph_dataset& ds,
                                        const std::vector<std::size_t>& indices) {
    std::vector<graph_sample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(ds.samples[i]);
    return out;
}

} // namespace detail

// Full training run. Federated: non-IID partitions over the train split, one
// model per client, rounds until every client has made `epochs` passes over
// its data. Centralized baseline: one model on a random subset of the train
// split sized to a single client's share, same test set and hyperparameters.
inline training_result run_training(const graph_dataset& ds, train_mode mode,
                                    const federation_config& fcfg, model_config mcfg,
                                    std::uint64_t seed, std::size_t workers = 1) {
    validate_federation_config(fcfg);
    mcfg.in_dim = ds.feature_dim;
    mcfg.n_classes = ds.n_classes;
    validate_config(mcfg);

    const label_set labels = dataset_labels(ds);
    rng_stream split_rng(seed, kSplitStream);
    const dataset_split split = split_train_test(labels, fcfg.test_ratio, split_rng);
    const std::vector<graph_sample> test = detail::gather(ds, split.test);

    training_result result;
    result.mode = mode;
    result.corr_kind_name = ds.corr_kind_name;
    result.model_cfg = mcfg;
    result.n_train = split.train.size();
    result.n_test = split.test.size();
    result.train_indices = split.train;
    result.test_indices = split.test;

    std::vector<client_state> clients;
    if (mode == train_mode::federated) {
        std::vector<int> train_labels;
        train_labels.reserve(split.train.size());
        for (std::size_t i : split.train) train_labels.push_back(labels.labels[i]);
        rng_stream part_rng(seed, kPartitionStream);
        const partition_plan plan = partition_noniid(
            train_labels,
            {fcfg.n_clients, fcfg.n_partitions, fcfg.partitions_per_client}, part_rng);
        for (std::size_t c = 0; c < fcfg.n_clients; ++c) {
            std::vector<std::size_t> mine;
            for (std::size_t p : plan.client_partitions[c])
                for (std::size_t pos : plan.partitions[p]) mine.push_back(split.train[pos]);
            clients.emplace_back(c, detail::gather(ds, mine), mcfg, fcfg.lr, seed);
        }
    } else {
        // One client's share of the train split, drawn uniformly.
        std::size_t share = split.train.size() * fcfg.partitions_per_client / fcfg.n_partitions;
        share = std::max<std::size_t>(share, 1);
        std::vector<std::size_t> pool = split.train;
        rng_stream sample_rng(seed, kBaselineSampleStream);
        sample_rng.shuffle(pool);
        pool.resize(share);
        clients.emplace_back(0, detail::gather(ds, pool), mcfg, fcfg.lr, seed);
    }

    for (const client_state& c : clients) result.client_sample_counts.push_back(c.samples.size());

    rng_stream init_rng(seed, kInitStream);
    model_weights global = init_weights(mcfg, init_rng);

    std::size_t max_batches = 0;
    for (const client_state& c : clients)
        max_batches = std::max(max_batches, c.batches_per_epoch(fcfg.batch_size));
    const std::size_t total_steps = max_batches * fcfg.epochs;
    const std::size_t n_rounds =
        (total_steps + fcfg.local_batches_per_round - 1) / fcfg.local_batches_per_round;

    for (std::size_t r = 0; r < n_rounds; ++r)
        result.rounds.push_back(run_round(global, clients, mcfg, fcfg.batch_size,
                                          fcfg.local_batches_per_round, test, r, workers));

    result.weights = std::move(global);
    result.final_metrics = result.rounds.back().test_metrics;
    return result;
}

namespace detail {

inline std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// metrics.json holds only seed-determined quantities, so identical runs
// produce identical bytes.
inline void write_metrics_json(const training_result& result, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        os << "{\"mode\":\"" << to_string(result.mode) << '"';
        os << ",\"corr_kind\":\"" << result.corr_kind_name << '"';
        os << ",\"rounds\":" << result.rounds.size();
        os << ",\"final\":{\"accuracy\":" << detail::fmt_metric(result.final_metrics.accuracy);
        os << ",\"macro_f1\":" << detail::fmt_metric(result.final_metrics.macro_f1);
        os << ",\"per_class_f1\":[";
        for (std::size_t c = 0; c < result.final_metrics.per_class_f1.size(); ++c) {
            if (c) os << ',';
            os << detail::fmt_metric(result.final_metrics.per_class_f1[c]);
        }
        os << "]},\"per_round\":[";
        for (std::size_t r = 0; r < result.rounds.size(); ++r) {
            const round_report& rep = result.rounds[r];
            double train_loss = 0.0;
            for (double v : rep.client_mean_loss) train_loss += v;
            if (!rep.client_mean_loss.empty()) train_loss /= double(rep.client_mean_loss.size());
            if (r) os << ',';
            os << "{\"round\":" << rep.round;
            os << ",\"train_loss\":" << detail::fmt_metric(train_loss);
            os << ",\"test_loss\":" << detail::fmt_metric(rep.test_loss);
            os << ",\"accuracy\":" << detail::fmt_metric(rep.test_metrics.accuracy);
            os << ",\"macro_f1\":" << detail::fmt_metric(rep.test_metrics.macro_f1);
            os << '}';
        }
        os << "]}";
    });
}

inline void write_losses_csv(const training_result& result, const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        os << "round,client,batch,split,loss\n";
        for (const round_report& rep : result.rounds) {
            for (std::size_t c = 0; c < rep.client_batch_losses.size(); ++c)
                for (std::size_t b = 0; b < rep.client_batch_losses[c].size(); ++b)
                    os << rep.round << ',' << c << ',' << b << ",train,"
                       << detail::fmt_metric(rep.client_batch_losses[c][b]) << '\n';
            os << rep.round << ",-1,0,test," << detail::fmt_metric(rep.test_loss) << '\n';
        }
    });
}

} // namespace graphfed
