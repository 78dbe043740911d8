#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include <graphfed/errors.hpp>
#include <graphfed/experiment.hpp>

#include "test_helpers.hpp"

using namespace graphfed;

namespace {

std::string slurp_text(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

experiment_config tiny_experiment(const std::filesystem::path& out_dir, std::uint64_t seed) {
    experiment_config cfg;
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    cfg.recording_path = out_dir / "recording.sts";
    cfg.labels_path = out_dir / "labels.csv";
    cfg.positions_path = out_dir / "positions.csv";
    cfg.features_path = out_dir / "features.ftr";
    cfg.graphs_path = out_dir / "graphs.gds";
    cfg.checkpoint_path = out_dir / "model.mwt";
    cfg.n_bands = 4;
    cfg.synthetic.n_classes = 3;
    cfg.synthetic.n_channels = 6;
    cfg.synthetic.n_epochs = 36;
    cfg.synthetic.samples_per_epoch = 64;
    cfg.synthetic.noise = 0.05;
    cfg.model.n_classes = 3;
    cfg.model.hidden_dim = 8;
    cfg.federation.n_clients = 3;
    cfg.federation.n_partitions = 9;
    cfg.federation.partitions_per_client = 3;
    cfg.federation.epochs = 2;
    cfg.federation.batch_size = 8;
    return cfg;
}

bool cli_available() { return std::getenv("GRAPHFED_BIN") != nullptr; }

} // namespace

TEST_CASE("an empty document yields the default experiment") {
    const experiment_config cfg = parse_experiment_config(nlohmann::json::object());
    CHECK(cfg.seed == 0);
    CHECK(cfg.extractor_kind == "stat");
    CHECK(cfg.n_bands == 10);
    CHECK(cfg.corr.kind == corr_kind::pcc);
    CHECK(cfg.corr.k == 3);
    CHECK(!cfg.corr.sigma.has_value());
    CHECK(cfg.corr.threshold == 0.0);
    CHECK(cfg.model.n_layers == 2);
    CHECK(cfg.model.hidden_dim == 64);
    CHECK(cfg.model.n_classes == 5);
    CHECK(cfg.model.dropout_rate == 0.3);
    CHECK(cfg.federation.n_clients == 5);
    CHECK(cfg.federation.n_partitions == 15);
    CHECK(cfg.federation.partitions_per_client == 3);
    CHECK(cfg.federation.epochs == 5);
    CHECK(cfg.federation.local_batches_per_round == 1);
    CHECK(cfg.federation.lr == 0.015);
    CHECK(cfg.federation.batch_size == 8);
    CHECK(cfg.federation.test_ratio == 0.25);
    CHECK(cfg.synthetic.n_classes == 5);
    CHECK(cfg.synthetic.n_channels == 10);
    CHECK(cfg.synthetic.n_epochs == 500);
    CHECK(cfg.synthetic.samples_per_epoch == 256);
    CHECK(cfg.out_dir == "out");
    CHECK(cfg.recording_path == std::filesystem::path("out") / "recording.sts");
    CHECK(cfg.graphs_path == std::filesystem::path("out") / "graphs.gds");
}

TEST_CASE("unknown configuration keys are rejected") {
    CHECK_THROWS_MATCHES(parse_experiment_config(nlohmann::json::parse(R"({"foo":1})")),
                         config_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("config.foo")));
    CHECK_THROWS_MATCHES(
        parse_experiment_config(nlohmann::json::parse(R"({"model":{"depth":3}})")),
        config_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("config.model.depth")));
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"federation":{"rounds":3}})")),
        config_error);
}

TEST_CASE("mistyped configuration values are rejected") {
    CHECK_THROWS_AS(parse_experiment_config(nlohmann::json::parse(R"({"seed":"abc"})")),
                    config_error);
    CHECK_THROWS_AS(parse_experiment_config(nlohmann::json::parse(R"({"seed":-1})")),
                    config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"model":{"hidden":4.5}})")),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"model":{"hidden":0}})")),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"corr":{"sigma":0}})")),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"corr":{"threshold":1.0}})")),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"corr":{"kind":"cosine"}})")),
        config_error);
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"extractor":{"kind":"conv"}})")),
        config_error); // conv without weights
    CHECK_THROWS_AS(
        parse_experiment_config(nlohmann::json::parse(R"({"federation":{"test_ratio":1.5}})")),
        config_error);
}

TEST_CASE("a valid document overrides only what it names") {
    const auto doc = nlohmann::json::parse(
        R"({"seed":7,"corr":{"kind":"plv","threshold":0.3},"model":{"hidden":16}})");
    const experiment_config cfg = parse_experiment_config(doc);
    CHECK(cfg.seed == 7);
    CHECK(cfg.corr.kind == corr_kind::plv);
    CHECK(cfg.corr.threshold == 0.3);
    CHECK(cfg.model.hidden_dim == 16);
    CHECK(cfg.model.n_layers == 2); // untouched default
}

TEST_CASE("dotted overrides patch the document") {
    nlohmann::json doc = nlohmann::json::object();
    apply_override(doc, "federation.lr=0.02");
    apply_override(doc, "corr.kind=plv");
    apply_override(doc, "model.hidden=32");
    apply_override(doc, "seed=9");
    apply_override(doc, "paths.out_dir=\"quoted dir\"");
    CHECK(doc["federation"]["lr"] == 0.02);
    CHECK(doc["corr"]["kind"] == "plv"); // bare word falls back to a string
    CHECK(doc["model"]["hidden"] == 32);
    CHECK(doc["seed"] == 9);
    CHECK(doc["paths"]["out_dir"] == "quoted dir");

    const experiment_config cfg = parse_experiment_config(doc);
    CHECK(cfg.federation.lr == 0.02);
    CHECK(cfg.corr.kind == corr_kind::plv);
    CHECK(cfg.model.hidden_dim == 32);
    CHECK(cfg.out_dir == "quoted dir");
}

TEST_CASE("malformed overrides are rejected") {
    nlohmann::json doc = nlohmann::json::object();
    CHECK_THROWS_AS(apply_override(doc, "noequals"), config_error);
    CHECK_THROWS_AS(apply_override(doc, "=5"), config_error);
    CHECK_THROWS_AS(apply_override(doc, "a..b=1"), config_error);
    apply_override(doc, "seed=3");
    CHECK_THROWS_AS(apply_override(doc, "seed.nested=1"), config_error);
}

TEST_CASE("config files load with comments and overrides and seed precedence") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "config.json";
    std::ofstream(path) << R"({
        // comments are fine
        "seed": 5,
        "model": {"hidden": 12}
    })";
    const experiment_config base = load_experiment_config(path, {}, std::nullopt);
    CHECK(base.seed == 5);
    CHECK(base.model.hidden_dim == 12);

    const experiment_config with_override =
        load_experiment_config(path, {"model.hidden=20"}, std::nullopt);
    CHECK(with_override.model.hidden_dim == 20);

    const experiment_config with_seed = load_experiment_config(path, {"seed=9"}, 42);
    CHECK(with_seed.seed == 42); // explicit seed beats file and override

    CHECK_THROWS_AS(load_experiment_config(dir.path() / "missing.json", {}, std::nullopt),
                    config_error);
}

TEST_CASE("the archived config parses back to the same experiment") {
    helpers::temp_dir dir;
    experiment_config cfg = tiny_experiment(dir.path() / "out", 17);
    cfg.corr.kind = corr_kind::knn;
    cfg.corr.k = 2;
    cfg.corr.sigma = 1.5;
    cfg.corr.threshold = 0.25;
    const auto path = dir.path() / "config.json";
    write_experiment_config(cfg, path);

    const experiment_config back = load_experiment_config(path, {}, std::nullopt);
    CHECK(back.seed == cfg.seed);
    CHECK(back.extractor_kind == cfg.extractor_kind);
    CHECK(back.n_bands == cfg.n_bands);
    CHECK(back.corr.kind == cfg.corr.kind);
    CHECK(back.corr.k == cfg.corr.k);
    CHECK(back.corr.sigma == cfg.corr.sigma);
    CHECK(back.corr.threshold == cfg.corr.threshold);
    CHECK(back.model.hidden_dim == cfg.model.hidden_dim);
    CHECK(back.model.n_classes == cfg.model.n_classes);
    CHECK(back.federation.n_clients == cfg.federation.n_clients);
    CHECK(back.federation.lr == cfg.federation.lr);
    CHECK(back.synthetic.n_epochs == cfg.synthetic.n_epochs);
    CHECK(back.out_dir == cfg.out_dir);
    CHECK(back.graphs_path == cfg.graphs_path);
}

TEST_CASE("the full pipeline runs through the command drivers") {
    helpers::temp_dir dir;
    const experiment_config cfg = tiny_experiment(dir.path() / "out", 23);
    std::ostringstream sink;

    cmd_gen_synthetic(cfg, sink);
    CHECK(std::filesystem::exists(cfg.recording_path));
    CHECK(std::filesystem::exists(cfg.labels_path));
    CHECK(std::filesystem::exists(cfg.positions_path));

    cmd_extract(cfg, 2, sink);
    REQUIRE(std::filesystem::exists(cfg.features_path));
    const feature_tensor feats = load_features(cfg.features_path);
    CHECK(feats.n_timestamps == 36);
    CHECK(feats.n_nodes == 6);
    CHECK(feats.dim == 10); // 6 moments + 4 bands

    cmd_build_graphs(cfg, 2, sink);
    REQUIRE(std::filesystem::exists(cfg.graphs_path));
    const graph_dataset ds = load_dataset(cfg.graphs_path);
    CHECK(ds.samples.size() == 36);
    CHECK(ds.corr_kind_name == "pcc");
    CHECK(ds.extractor_kind == "stat");

    const training_result res = cmd_train(cfg, train_mode::federated, 2, sink);
    CHECK(res.rounds.size() > 0);
    CHECK(std::filesystem::exists(cfg.out_dir / "metrics.json"));
    CHECK(std::filesystem::exists(cfg.out_dir / "losses.csv"));
    CHECK(std::filesystem::exists(cfg.out_dir / "config.json"));
    CHECK(std::filesystem::exists(cfg.checkpoint_path));

    const metrics m = cmd_evaluate(cfg, sink);
    CHECK(m.accuracy == res.final_metrics.accuracy);
    CHECK(m.macro_f1 == res.final_metrics.macro_f1);
}

TEST_CASE("graph datasets rewrite byte for byte") {
    helpers::temp_dir dir;
    const experiment_config cfg = tiny_experiment(dir.path() / "out", 29);
    std::ostringstream sink;
    cmd_gen_synthetic(cfg, sink);
    cmd_extract(cfg, 1, sink);
    cmd_build_graphs(cfg, 1, sink);

    const graph_dataset ds = load_dataset(cfg.graphs_path);
    const auto copy = dir.path() / "copy.gds";
    write_dataset(ds, copy);
    CHECK(slurp_text(copy) == slurp_text(cfg.graphs_path));
}

TEST_CASE("distance graphs without a positions file are a configuration error") {
    helpers::temp_dir dir;
    experiment_config cfg = tiny_experiment(dir.path() / "out", 31);
    std::ostringstream sink;
    cmd_gen_synthetic(cfg, sink);
    cmd_extract(cfg, 1, sink);
    cfg.corr.kind = corr_kind::db;
    cfg.positions_path = dir.path() / "out" / "nope.csv";
    CHECK_THROWS_AS(cmd_build_graphs(cfg, 1, sink), config_error);

    // with the real positions file the same call succeeds
    cfg.positions_path = dir.path() / "out" / "positions.csv";
    CHECK_NOTHROW(cmd_build_graphs(cfg, 1, sink));
    const graph_dataset ds = load_dataset(cfg.graphs_path);
    CHECK(ds.corr_kind_name == "db");
}

TEST_CASE("missing inputs are data errors with the file named") {
    helpers::temp_dir dir;
    const experiment_config cfg = tiny_experiment(dir.path() / "out", 37);
    std::ostringstream sink;
    CHECK_THROWS_MATCHES(cmd_extract(cfg, 1, sink), data_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("recording.sts")));
    CHECK_THROWS_AS(cmd_build_graphs(cfg, 1, sink), data_error);
    CHECK_THROWS_AS(cmd_train(cfg, train_mode::federated, 1, sink), data_error);
    CHECK_THROWS_AS(cmd_evaluate(cfg, sink), data_error);
}

TEST_CASE("a checkpoint from a different dataset shape is rejected") {
    helpers::temp_dir dir;
    const experiment_config cfg = tiny_experiment(dir.path() / "out", 41);
    std::ostringstream sink;
    cmd_gen_synthetic(cfg, sink);
    cmd_extract(cfg, 1, sink);
    cmd_build_graphs(cfg, 1, sink);
    cmd_train(cfg, train_mode::federated, 1, sink);

    // rebuild features with a different band count: feature dim changes
    experiment_config wide = cfg;
    wide.n_bands = 8;
    cmd_extract(wide, 1, sink);
    cmd_build_graphs(wide, 1, sink);
    CHECK_THROWS_AS(cmd_evaluate(wide, sink), data_error);
}

TEST_CASE("inspect prints a summary for every container") {
    helpers::temp_dir dir;
    const experiment_config cfg = tiny_experiment(dir.path() / "out", 43);
    std::ostringstream sink;
    cmd_gen_synthetic(cfg, sink);
    cmd_extract(cfg, 1, sink);
    cmd_build_graphs(cfg, 1, sink);
    cmd_train(cfg, train_mode::federated, 1, sink);

    std::ostringstream out;
    cmd_inspect(cfg.recording_path, out);
    CHECK(out.str().find("6 channels") != std::string::npos);

    out.str("");
    cmd_inspect(cfg.features_path, out);
    CHECK(out.str().find("36 timestamps") != std::string::npos);

    out.str("");
    cmd_inspect(cfg.graphs_path, out);
    CHECK(out.str().find("36 samples") != std::string::npos);
    CHECK(out.str().find("label counts") != std::string::npos);

    out.str("");
    cmd_inspect(cfg.checkpoint_path, out);
    CHECK(out.str().find("2 layers") != std::string::npos);

    CHECK_THROWS_AS(cmd_inspect(dir.path() / "missing.gds", out), data_error);
    const auto stray = dir.path() / "stray.txt";
    std::ofstream(stray) << "hello";
    CHECK_THROWS_AS(cmd_inspect(stray, out), config_error);
}

TEST_CASE("conv weight files work through the extract driver") {
    helpers::temp_dir dir;
    experiment_config cfg = tiny_experiment(dir.path() / "out", 47);
    cfg.synthetic.samples_per_epoch = 3000;
    cfg.synthetic.n_epochs = 6;
    cfg.extractor_kind = "conv";
    cfg.conv_weights = dir.path() / "weights.cpw";
    write_conv_weights(helpers::make_conv_weights(3), cfg.conv_weights);

    std::ostringstream sink;
    cmd_gen_synthetic(cfg, sink);
    cmd_extract(cfg, 2, sink);
    const feature_tensor feats = load_features(cfg.features_path);
    CHECK(feats.n_timestamps == 6);
    CHECK(feats.dim == 256);

    std::ostringstream out;
    cmd_inspect(cfg.conv_weights, out);
    CHECK(out.str().find("temporal conv 0: 1 -> 32") != std::string::npos);
}

TEST_CASE("the command line binary maps outcomes to exit codes") {
    if (!cli_available()) SKIP("GRAPHFED_BIN not set");
    helpers::temp_dir dir;
    const std::string out = (dir.path() / "out").string();
    const std::string tiny =
        " --set synthetic.classes=3 --set synthetic.channels=6 --set synthetic.epochs=36"
        " --set synthetic.samples_per_epoch=64 --set synthetic.noise=0.05"
        " --set model.n_classes=3 --set model.hidden=8"
        " --set federation.clients=3 --set federation.partitions=9 --set federation.epochs=2"
        " --set paths.out_dir=" + out + " --seed 3";

    CHECK(helpers::run_cli("") == 2);                 // missing subcommand
    CHECK(helpers::run_cli("--help") == 0);
    CHECK(helpers::run_cli("frobnicate") == 2);       // unknown subcommand
    CHECK(helpers::run_cli("extract --set bad-override") == 2);
    CHECK(helpers::run_cli("train --mode sideways" + tiny) == 2);

    CHECK(helpers::run_cli("extract" + tiny) == 3);   // recording not generated yet

    CHECK(helpers::run_cli("gen-synthetic" + tiny) == 0);
    CHECK(helpers::run_cli("extract" + tiny) == 0);
    CHECK(helpers::run_cli("build-graphs" + tiny) == 0);
    CHECK(helpers::run_cli("build-graphs --set corr.kind=db --set paths.positions=" +
                           (dir.path() / "nope.csv").string() + tiny) == 2);
    CHECK(helpers::run_cli("train --mode federated" + tiny) == 0);
    CHECK(helpers::run_cli("evaluate" + tiny) == 0);
    CHECK(helpers::run_cli("inspect " + out + "/graphs.gds") == 0);
    CHECK(helpers::run_cli("inspect " + out + "/missing.gds") == 3);
}

TEST_CASE("the binary writes identical reports regardless of worker count") {
    if (!cli_available()) SKIP("GRAPHFED_BIN not set");
    helpers::temp_dir dir;
    const std::string shared = (dir.path() / "shared").string();
    const std::string base =
        " --set synthetic.classes=3 --set synthetic.channels=6 --set synthetic.epochs=36"
        " --set synthetic.samples_per_epoch=64 --set synthetic.noise=0.05"
        " --set model.n_classes=3 --set model.hidden=8"
        " --set federation.clients=3 --set federation.partitions=9 --set federation.epochs=2"
        " --set paths.out_dir=" + shared + " --seed 11";

    REQUIRE(helpers::run_cli("gen-synthetic" + base) == 0);
    REQUIRE(helpers::run_cli("extract" + base) == 0);
    REQUIRE(helpers::run_cli("build-graphs" + base) == 0);

    const std::string out1 = (dir.path() / "run1").string();
    const std::string out2 = (dir.path() / "run2").string();
    const std::string gds = " --set paths.graphs=" + shared + "/graphs.gds";
    REQUIRE(helpers::run_cli("train --mode federated --workers 1" + base + gds +
                             " --set paths.out_dir=" + out1) == 0);
    REQUIRE(helpers::run_cli("train --mode federated --workers 4" + base + gds +
                             " --set paths.out_dir=" + out2) == 0);

    CHECK(slurp_text(out1 + "/metrics.json") == slurp_text(out2 + "/metrics.json"));
    CHECK(slurp_text(out1 + "/losses.csv") == slurp_text(out2 + "/losses.csv"));
}
