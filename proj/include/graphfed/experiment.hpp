#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphfed/conv_net.hpp"
#include "graphfed/errors.hpp"
#include "graphfed/features.hpp"
#include "graphfed/federation.hpp"
#include "graphfed/gnn.hpp"
#include "graphfed/graph.hpp"
#include "graphfed/recording.hpp"
#include "graphfed/synthetic.hpp"

namespace graphfed {

// Declarative experiment description: one JSON document covering every stage,
// with defaults for everything, strict unknown-key rejection, and dotted-path
// command line overrides.

struct experiment_config {
    std::uint64_t seed = 0;
    std::string extractor_kind = "stat";  // stat | conv
    std::size_t n_bands = 10;
    std::filesystem::path conv_weights;   // required for the conv extractor
    corr_config corr;
    model_config model;
    federation_config federation;
    synth_config synthetic;

    std::filesystem::path out_dir = "out";
    std::filesystem::path recording_path;  // default <out_dir>/recording.sts
    std::filesystem::path labels_path;     // default <out_dir>/labels.csv
    std::filesystem::path positions_path;  // default <out_dir>/positions.csv
    std::filesystem::path features_path;   // default <out_dir>/features.ftr
    std::filesystem::path graphs_path;     // default <out_dir>/graphs.gds
    std::filesystem::path checkpoint_path; // default <out_dir>/model.mwt
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    if (!j.is_object())
        throw config_error(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) { ok = true; break; }
        if (!ok) throw config_error("unknown config key '" + where + "." + key + "'");
    }
}

inline std::size_t get_count(const json& j, const char* key, std::size_t fallback,
                             const std::string& where) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw config_error(where + "." + key + " must be a non-negative integer");
    return v.get<std::size_t>();
}

inline double get_real(const json& j, const char* key, double fallback,
                       const std::string& where) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (!v.is_number())
        throw config_error(where + "." + key + " must be a number");
    return v.get<double>();
}

inline std::string get_string(const json& j, const char* key, const std::string& fallback,
                              const std::string& where) {
    if (!j.contains(key)) return fallback;
    const auto& v = j[key];
    if (!v.is_string())
        throw config_error(where + "." + key + " must be a string");
    return v.get<std::string>();
}

} // namespace detail

inline experiment_config parse_experiment_config(const nlohmann::json& doc) {
    using detail::check_keys;
    using detail::get_count;
    using detail::get_real;
    using detail::get_string;

    check_keys(doc, {"seed", "paths", "extractor", "corr", "model", "federation", "synthetic"},
               "config");
    experiment_config cfg;

    if (doc.contains("seed")) {
        const auto& v = doc["seed"];
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw config_error("config.seed must be a non-negative integer");
        cfg.seed = v.get<std::uint64_t>();
    }

    if (doc.contains("extractor")) {
        const auto& e = doc["extractor"];
        check_keys(e, {"kind", "n_bands", "weights"}, "config.extractor");
        cfg.extractor_kind = get_string(e, "kind", cfg.extractor_kind, "config.extractor");
        if (cfg.extractor_kind != "stat" && cfg.extractor_kind != "conv")
            throw config_error("config.extractor.kind must be 'stat' or 'conv'");
        cfg.n_bands = get_count(e, "n_bands", cfg.n_bands, "config.extractor");
        if (cfg.n_bands < 1) throw config_error("config.extractor.n_bands must be positive");
        cfg.conv_weights = get_string(e, "weights", "", "config.extractor");
        if (cfg.extractor_kind == "conv" && cfg.conv_weights.empty())
            throw config_error("config.extractor.weights is required for the conv extractor");
    }

    if (doc.contains("corr")) {
        const auto& c = doc["corr"];
        check_keys(c, {"kind", "k", "sigma", "threshold"}, "config.corr");
        cfg.corr.kind = corr_kind_from_string(get_string(c, "kind", "pcc", "config.corr"));
        cfg.corr.k = get_count(c, "k", cfg.corr.k, "config.corr");
        if (cfg.corr.k < 1) throw config_error("config.corr.k must be positive");
        if (c.contains("sigma")) {
            const double s = get_real(c, "sigma", 0.0, "config.corr");
            if (!(s > 0.0)) throw config_error("config.corr.sigma must be positive");
            cfg.corr.sigma = s;
        }
        cfg.corr.threshold = get_real(c, "threshold", 0.0, "config.corr");
        if (!(cfg.corr.threshold >= 0.0 && cfg.corr.threshold < 1.0))
            throw config_error("config.corr.threshold must be in [0, 1)");
    }

    if (doc.contains("model")) {
        const auto& m = doc["model"];
        check_keys(m, {"layers", "hidden", "n_classes", "dropout"}, "config.model");
        cfg.model.n_layers = get_count(m, "layers", cfg.model.n_layers, "config.model");
        cfg.model.hidden_dim = get_count(m, "hidden", cfg.model.hidden_dim, "config.model");
        cfg.model.n_classes = get_count(m, "n_classes", cfg.model.n_classes, "config.model");
        cfg.model.dropout_rate = get_real(m, "dropout", cfg.model.dropout_rate, "config.model");
        if (cfg.model.n_layers < 1) throw config_error("config.model.layers must be positive");
        if (cfg.model.hidden_dim < 1) throw config_error("config.model.hidden must be positive");
        if (cfg.model.n_classes < 2) throw config_error("config.model.n_classes must be at least 2");
        if (!(cfg.model.dropout_rate >= 0.0 && cfg.model.dropout_rate < 1.0))
            throw config_error("config.model.dropout must be in [0, 1)");
    }

    if (doc.contains("federation")) {
        const auto& f = doc["federation"];
        check_keys(f,
                   {"clients", "partitions", "partitions_per_client", "epochs",
                    "local_batches_per_round", "lr", "batch", "test_ratio"},
                   "config.federation");
        auto& fed = cfg.federation;
        fed.n_clients = get_count(f, "clients", fed.n_clients, "config.federation");
        fed.n_partitions = get_count(f, "partitions", fed.n_partitions, "config.federation");
        fed.partitions_per_client =
            get_count(f, "partitions_per_client", fed.partitions_per_client, "config.federation");
        fed.epochs = get_count(f, "epochs", fed.epochs, "config.federation");
        fed.local_batches_per_round = get_count(f, "local_batches_per_round",
                                                fed.local_batches_per_round, "config.federation");
        fed.lr = get_real(f, "lr", fed.lr, "config.federation");
        fed.batch_size = get_count(f, "batch", fed.batch_size, "config.federation");
        fed.test_ratio = get_real(f, "test_ratio", fed.test_ratio, "config.federation");
        validate_federation_config(fed);
    }

    if (doc.contains("synthetic")) {
        const auto& s = doc["synthetic"];
        check_keys(s, {"classes", "channels", "epochs", "samples_per_epoch", "noise", "sample_rate"},
                   "config.synthetic");
        auto& syn = cfg.synthetic;
        syn.n_classes = get_count(s, "classes", syn.n_classes, "config.synthetic");
        syn.n_channels = get_count(s, "channels", syn.n_channels, "config.synthetic");
        syn.n_epochs = get_count(s, "epochs", syn.n_epochs, "config.synthetic");
        syn.samples_per_epoch =
            get_count(s, "samples_per_epoch", syn.samples_per_epoch, "config.synthetic");
        syn.noise = get_real(s, "noise", syn.noise, "config.synthetic");
        syn.sample_rate = get_real(s, "sample_rate", syn.sample_rate, "config.synthetic");
        validate_synth_config(syn);
    }

    if (doc.contains("paths")) {
        const auto& p = doc["paths"];
        check_keys(p,
                   {"out_dir", "recording", "labels", "positions", "features", "graphs",
                    "checkpoint"},
                   "config.paths");
        cfg.out_dir = get_string(p, "out_dir", cfg.out_dir.string(), "config.paths");
        cfg.recording_path = get_string(p, "recording", "", "config.paths");
        cfg.labels_path = get_string(p, "labels", "", "config.paths");
        cfg.positions_path = get_string(p, "positions", "", "config.paths");
        cfg.features_path = get_string(p, "features", "", "config.paths");
        cfg.graphs_path = get_string(p, "graphs", "", "config.paths");
        cfg.checkpoint_path = get_string(p, "checkpoint", "", "config.paths");
    }
    if (cfg.recording_path.empty()) cfg.recording_path = cfg.out_dir / "recording.sts";
    if (cfg.labels_path.empty()) cfg.labels_path = cfg.out_dir / "labels.csv";
    if (cfg.positions_path.empty()) cfg.positions_path = cfg.out_dir / "positions.csv";
    if (cfg.features_path.empty()) cfg.features_path = cfg.out_dir / "features.ftr";
    if (cfg.graphs_path.empty()) cfg.graphs_path = cfg.out_dir / "graphs.gds";
    if (cfg.checkpoint_path.empty()) cfg.checkpoint_path = cfg.out_dir / "model.mwt";
    return cfg;
}

// Dotted-path override: "federation.lr=0.02" or "corr.kind=plv". The value is
// parsed as a JSON literal when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw config_error("override '" + spec + "' must look like key.path=value");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty())
            throw config_error("override '" + spec + "' has an empty path segment");
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
        node = &(*node)[key];
        if (!node->is_object())
            throw config_error("override '" + spec + "' descends into a non-object value");
        start = dot + 1;
    }
}

inline experiment_config load_experiment_config(
    const std::optional<std::filesystem::path>& config_path,
    const std::vector<std::string>& overrides,
    std::optional<std::uint64_t> seed_override) {
    nlohmann::json doc = nlohmann::json::object();
    if (config_path) {
        std::ifstream is(*config_path);
        if (!is) throw config_error("cannot open config file " + config_path->string());
        try {
            doc = nlohmann::json::parse(is, nullptr, true, true);  // allow comments
        } catch (const nlohmann::json::parse_error& e) {
            throw config_error(config_path->string() + ": " + e.what());
        }
    }
    for (const std::string& o : overrides) apply_override(doc, o);
    experiment_config cfg = parse_experiment_config(doc);
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

// Canonical serialization of the effective config, archived next to training
// artifacts. Field order is fixed so identical configs give identical bytes.
inline void write_experiment_config(const experiment_config& cfg,
                                    const std::filesystem::path& path) {
    io::atomic_write(path, [&](std::ostream& os) {
        auto real = [](double v) { return detail::fmt_metric(v); };
        os << "{\n  \"seed\": " << cfg.seed << ",\n";
        os << "  \"extractor\": {\"kind\": \"" << cfg.extractor_kind
           << "\", \"n_bands\": " << cfg.n_bands;
        if (!cfg.conv_weights.empty())
            os << ", \"weights\": \"" << cfg.conv_weights.string() << '"';
        os << "},\n";
        os << "  \"corr\": {\"kind\": \"" << to_string(cfg.corr.kind)
           << "\", \"k\": " << cfg.corr.k;
        if (cfg.corr.sigma) os << ", \"sigma\": " << real(*cfg.corr.sigma);
        os << ", \"threshold\": " << real(cfg.corr.threshold) << "},\n";
        os << "  \"model\": {\"layers\": " << cfg.model.n_layers
           << ", \"hidden\": " << cfg.model.hidden_dim
           << ", \"n_classes\": " << cfg.model.n_classes
           << ", \"dropout\": " << real(cfg.model.dropout_rate) << "},\n";
        os << "  \"federation\": {\"clients\": " << cfg.federation.n_clients
           << ", \"partitions\": " << cfg.federation.n_partitions
           << ", \"partitions_per_client\": " << cfg.federation.partitions_per_client
           << ", \"epochs\": " << cfg.federation.epochs
           << ", \"local_batches_per_round\": " << cfg.federation.local_batches_per_round
           << ", \"lr\": " << real(cfg.federation.lr)
           << ", \"batch\": " << cfg.federation.batch_size
           << ", \"test_ratio\": " << real(cfg.federation.test_ratio) << "},\n";
        os << "  \"synthetic\": {\"classes\": " << cfg.synthetic.n_classes
           << ", \"channels\": " << cfg.synthetic.n_channels
           << ", \"epochs\": " << cfg.synthetic.n_epochs
           << ", \"samples_per_epoch\": " << cfg.synthetic.samples_per_epoch
           << ", \"noise\": " << real(cfg.synthetic.noise)
           << ", \"sample_rate\": " << real(cfg.synthetic.sample_rate) << "},\n";
        os << "  \"paths\": {\"out_dir\": \"" << cfg.out_dir.string()
           << "\", \"recording\": \"" << cfg.recording_path.string()
           << "\", \"labels\": \"" << cfg.labels_path.string()
           << "\", \"positions\": \"" << cfg.positions_path.string()
           << "\", \"features\": \"" << cfg.features_path.string()
           << "\", \"graphs\": \"" << cfg.graphs_path.string()
           << "\", \"checkpoint\": \"" << cfg.checkpoint_path.string() << "\"}\n}\n";
    });
}

namespace detail {

inline void ensure_parent_dir(const std::filesystem::path& p) {
    const std::filesystem::path dir = p.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

inline void require_file(const std::filesystem::path& p, const char* what) {
    if (!std::filesystem::exists(p))
        throw data_error(std::string(what) + " file not found: " + p.string());
}

inline std::unique_ptr<feature_extractor> make_extractor(const experiment_config& cfg) {
    if (cfg.extractor_kind == "stat")
        return std::make_unique<stat_extractor>(cfg.n_bands);
    require_file(cfg.conv_weights, "extractor weights");
    return std::make_unique<conv_extractor>(load_conv_weights(cfg.conv_weights));
}

} // namespace detail

inline void cmd_gen_synthetic(const experiment_config& cfg, std::ostream& out = std::cout) {
    const synth_result data = gen_synthetic(cfg.synthetic, cfg.seed);
    detail::ensure_parent_dir(cfg.recording_path);
    detail::ensure_parent_dir(cfg.labels_path);
    detail::ensure_parent_dir(cfg.positions_path);
    write_recording(data.rec, cfg.recording_path);
    write_labels(data.labels, cfg.labels_path);
    write_positions(data.positions, cfg.positions_path);
    out << "wrote " << cfg.recording_path.string() << " (" << data.rec.n_channels << " channels, "
        << data.rec.n_epochs << " epochs, " << data.rec.samples_per_epoch
        << " samples per epoch)\n";
    out << "wrote " << cfg.labels_path.string() << " and " << cfg.positions_path.string() << "\n";
}

inline void cmd_extract(const experiment_config& cfg, std::size_t workers,
                        std::ostream& out = std::cout) {
    detail::require_file(cfg.recording_path, "recording");
    const std::unique_ptr<feature_extractor> ex = detail::make_extractor(cfg);
    const recording rec = load_recording(cfg.recording_path);
    const feature_tensor feats = extract_all(rec, *ex, unsigned(workers));
    detail::ensure_parent_dir(cfg.features_path);
    write_features(feats, cfg.features_path);
    out << "wrote " << cfg.features_path.string() << " (" << feats.n_timestamps << " x "
        << feats.n_nodes << " x " << feats.dim << ", " << ex->kind() << " extractor)\n";
}

inline void cmd_build_graphs(const experiment_config& cfg, std::size_t workers,
                             std::ostream& out = std::cout) {
    detail::require_file(cfg.features_path, "features");
    detail::require_file(cfg.labels_path, "labels");
    const feature_tensor feats = load_features(cfg.features_path);
    const label_set labels = load_labels(cfg.labels_path, int(cfg.model.n_classes));
    std::optional<electrode_positions> pos;
    if (cfg.corr.kind == corr_kind::db) {
        if (!std::filesystem::exists(cfg.positions_path))
            throw config_error("distance adjacency needs electrode positions; none at " +
                               cfg.positions_path.string());
        pos = load_positions(cfg.positions_path);
    }
    const graph_dataset ds = assemble_dataset(feats, labels, cfg.corr, cfg.extractor_kind,
                                              pos ? &*pos : nullptr, workers);
    detail::ensure_parent_dir(cfg.graphs_path);
    write_dataset(ds, cfg.graphs_path);
    out << "wrote " << cfg.graphs_path.string() << " (" << ds.samples.size() << " graphs, "
        << ds.corr_kind_name << " adjacency)\n";
}

inline training_result cmd_train(const experiment_config& cfg, train_mode mode,
                                 std::size_t workers, std::ostream& out = std::cout) {
    detail::require_file(cfg.graphs_path, "graph dataset");
    const graph_dataset ds = load_dataset(cfg.graphs_path);
    const training_result result =
        run_training(ds, mode, cfg.federation, cfg.model, cfg.seed, workers);
    std::filesystem::create_directories(cfg.out_dir);
    detail::ensure_parent_dir(cfg.checkpoint_path);
    write_metrics_json(result, cfg.out_dir / "metrics.json");
    write_losses_csv(result, cfg.out_dir / "losses.csv");
    write_model(result.model_cfg, result.weights, cfg.checkpoint_path);
    write_experiment_config(cfg, cfg.out_dir / "config.json");
    out << to_string(mode) << " training: " << result.rounds.size() << " rounds, "
        << result.n_train << " train / " << result.n_test << " test samples\n";
    out << "final accuracy " << detail::fmt_metric(result.final_metrics.accuracy)
        << ", macro F1 " << detail::fmt_metric(result.final_metrics.macro_f1) << "\n";
    out << "wrote " << (cfg.out_dir / "metrics.json").string() << ", "
        << (cfg.out_dir / "losses.csv").string() << ", " << cfg.checkpoint_path.string() << "\n";
    return result;
}

inline metrics cmd_evaluate(const experiment_config& cfg, std::ostream& out = std::cout) {
    detail::require_file(cfg.graphs_path, "graph dataset");
    detail::require_file(cfg.checkpoint_path, "model checkpoint");
    const graph_dataset ds = load_dataset(cfg.graphs_path);
    const auto [mcfg, weights] = load_model(cfg.checkpoint_path);
    if (mcfg.in_dim != ds.feature_dim || mcfg.n_classes != ds.n_classes)
        throw data_error("checkpoint expects " + std::to_string(mcfg.in_dim) + "-dim features and " +
                         std::to_string(mcfg.n_classes) + " classes, dataset has " +
                         std::to_string(ds.feature_dim) + " and " + std::to_string(ds.n_classes));

    const label_set labels = dataset_labels(ds);
    rng_stream split_rng(cfg.seed, kSplitStream);
    const dataset_split split = split_train_test(labels, cfg.federation.test_ratio, split_rng);
    std::vector<graph_sample> test;
    for (std::size_t i : split.test) test.push_back(ds.samples[i]);

    const metrics m = evaluate(weights, test, mcfg);
    out << "test samples: " << test.size() << "\n";
    out << "accuracy " << detail::fmt_metric(m.accuracy) << "\n";
    out << "macro F1 " << detail::fmt_metric(m.macro_f1) << "\n";
    for (std::size_t c = 0; c < m.per_class_f1.size(); ++c)
        out << "class " << c << " F1 " << detail::fmt_metric(m.per_class_f1[c]) << "\n";
    if (m.absent_classes)
        out << "note: some classes absent from both truth and predictions\n";
    return m;
}

inline void cmd_inspect(const std::filesystem::path& path, std::ostream& out = std::cout) {
    detail::require_file(path, "input");
    const std::string ext = path.extension().string();
    if (ext == ".sts") {
        const recording rec = load_recording(path);
        out << "recording: " << rec.n_channels << " channels x " << rec.n_epochs
            << " epochs x " << rec.samples_per_epoch << " samples, "
            << detail::fmt_metric(rec.sample_rate) << " Hz\n";
        out << "channels:";
        for (const auto& n : rec.channel_names) out << ' ' << n;
        out << "\n";
        double lo = rec.values[0], hi = rec.values[0];
        for (double v : rec.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        out << "value range [" << detail::fmt_metric(lo) << ", " << detail::fmt_metric(hi)
            << "]\n";
    } else if (ext == ".ftr") {
        const feature_tensor f = load_features(path);
        out << "features: " << f.n_timestamps << " timestamps x " << f.n_nodes << " nodes x "
            << f.dim << " dims\n";
    } else if (ext == ".gds") {
        const graph_dataset ds = load_dataset(path);
        out << "graph dataset: " << ds.samples.size() << " samples, " << ds.n_nodes
            << " nodes, " << ds.feature_dim << "-dim features, " << ds.n_classes
            << " classes\n";
        out << "adjacency: " << ds.corr_kind_name << ", extractor: " << ds.extractor_kind
            << "\n";
        std::vector<std::size_t> hist(ds.n_classes, 0);
        for (const auto& s : ds.samples) ++hist[std::size_t(s.label)];
        out << "label counts:";
        for (std::size_t c = 0; c < hist.size(); ++c) out << ' ' << c << ':' << hist[c];
        out << "\n";
    } else if (ext == ".mwt") {
        const auto [mcfg, weights] = load_model(path);
        out << "model: " << mcfg.n_layers << " layers, " << mcfg.in_dim << " -> "
            << mcfg.hidden_dim << " hidden, " << mcfg.n_classes << " classes, dropout "
            << detail::fmt_metric(mcfg.dropout_rate) << "\n";
        out << "parameters: " << n_params(mcfg) << "\n";
    } else if (ext == ".cpw") {
        const conv_pipeline_weights w = load_conv_weights(path);
        out << "conv weights: 2 branches x 4 layers\n";
        for (const auto& [branch, name] :
             {std::pair{&w.temporal, "temporal"}, std::pair{&w.spectral, "spectral"}})
            for (std::size_t l = 0; l < branch->convs.size(); ++l)
                out << name << " conv " << l << ": " << branch->convs[l].in_channels << " -> "
                    << branch->convs[l].out_channels << " channels, kernel "
                    << branch->convs[l].kernel << "\n";
    } else {
        throw config_error("cannot inspect '" + path.string() +
                           "': expected .sts, .ftr, .gds, .mwt, or .cpw");
    }
}

} // namespace graphfed
