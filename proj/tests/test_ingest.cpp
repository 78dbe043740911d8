#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <graphfed/binary_io.hpp>
#include <graphfed/errors.hpp>
#include <graphfed/recording.hpp>
#include <graphfed/rng.hpp>
#include <graphfed/split.hpp>

#include "test_helpers.hpp"

using namespace graphfed;

namespace {

recording make_recording(std::size_t n, std::size_t t, std::size_t d) {
    recording rec;
    rec.n_channels = n;
    rec.n_epochs = t;
    rec.samples_per_epoch = d;
    rec.sample_rate = 250.0;
    for (std::size_t c = 0; c < n; ++c) rec.channel_names.push_back("ch" + std::to_string(c));
    rec.values.resize(n * t * d);
    for (std::size_t i = 0; i < rec.values.size(); ++i)
        rec.values[i] = double(float(i) * 0.25f - 3.0f);
    return rec;
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
    std::ofstream os(p, std::ios::binary);
    REQUIRE(os);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

} // namespace

TEST_CASE("recording survives a write and load round trip") {
    helpers::temp_dir dir;
    const recording rec = make_recording(3, 4, 8);
    const auto path = dir.path() / "a.sts";
    write_recording(rec, path);
    const recording back = load_recording(path);
    CHECK(back.n_channels == rec.n_channels);
    CHECK(back.n_epochs == rec.n_epochs);
    CHECK(back.samples_per_epoch == rec.samples_per_epoch);
    CHECK(back.sample_rate == rec.sample_rate);
    CHECK(back.channel_names == rec.channel_names);
    CHECK(back.values == rec.values);
}

TEST_CASE("recording writes are byte identical across repeats") {
    helpers::temp_dir dir;
    const recording rec = make_recording(2, 3, 5);
    const auto a = dir.path() / "a.sts";
    const auto b = dir.path() / "b.sts";
    write_recording(rec, a);
    write_recording(rec, b);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("truncated recording payload is reported with a sample count") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.sts";
    write_recording(make_recording(2, 2, 4), path);
    auto bytes = slurp(path);
    bytes.resize(bytes.size() - 4);
    const auto cut = dir.path() / "cut.sts";
    spit(cut, bytes);
    CHECK_THROWS_MATCHES(load_recording(cut), truncation_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("15 of 16")));
}

TEST_CASE("trailing bytes after the declared payload are rejected") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.sts";
    write_recording(make_recording(2, 2, 4), path);
    auto bytes = slurp(path);
    bytes.push_back('x');
    spit(path, bytes);
    CHECK_THROWS_AS(load_recording(path), format_error);
}

TEST_CASE("wrong magic is a format error") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.sts";
    spit(path, {'B', 'O', 'G', 'U', 'S', 1, 0, 0});
    CHECK_THROWS_AS(load_recording(path), format_error);
}

TEST_CASE("unsupported version is a format error") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.sts";
    write_recording(make_recording(2, 1, 2), path);
    auto bytes = slurp(path);
    bytes[5] = 9;
    spit(path, bytes);
    CHECK_THROWS_AS(load_recording(path), format_error);
}

TEST_CASE("a NaN sample is rejected with the channel name") {
    helpers::temp_dir dir;
    recording rec = make_recording(3, 2, 4);
    rec.at(1, 0, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_MATCHES(write_recording(rec, dir.path() / "a.sts"), validation_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("ch1")));
}

TEST_CASE("a NaN on disk is rejected at load with the channel name") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.sts";
    const recording rec = make_recording(2, 1, 4);
    write_recording(rec, path);
    auto bytes = slurp(path);
    // Overwrite the last f32 (channel 1, epoch 0, sample 3) with a NaN pattern.
    bytes[bytes.size() - 4] = char(0x00);
    bytes[bytes.size() - 3] = char(0x00);
    bytes[bytes.size() - 2] = char(0xC0);
    bytes[bytes.size() - 1] = char(0x7F);
    spit(path, bytes);
    CHECK_THROWS_MATCHES(load_recording(path), validation_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("ch1")));
}

TEST_CASE("a failed write leaves no file behind") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "sub" / "a.bin";
    std::filesystem::create_directories(path.parent_path());
    CHECK_THROWS_AS(io::atomic_write(path,
                                     [](std::ostream&) { throw data_error("mid-write failure"); }),
                    data_error);
    CHECK(std::filesystem::is_empty(path.parent_path()));
}

TEST_CASE("a failed write leaves an existing file untouched") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "a.txt";
    io::atomic_write(path, [](std::ostream& os) { os << "original"; });
    CHECK_THROWS_AS(io::atomic_write(path,
                                     [](std::ostream& os) {
                                         os << "partial";
                                         throw data_error("boom");
                                     }),
                    data_error);
    const auto bytes = slurp(path);
    CHECK(std::string(bytes.begin(), bytes.end()) == "original");
}

TEST_CASE("labels round trip through csv") {
    helpers::temp_dir dir;
    label_set labels;
    labels.n_classes = 5;
    labels.labels = {0, 1, 2, 3, 4, 4, 3, 2, 1, 0};
    const auto path = dir.path() / "labels.csv";
    write_labels(labels, path);
    const label_set back = load_labels(path, 5);
    CHECK(back.labels == labels.labels);
    CHECK(back.n_classes == 5);
}

TEST_CASE("labels csv with a bad header is rejected") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "labels.csv";
    std::ofstream(path) << "epoch;label\n0,1\n";
    CHECK_THROWS_AS(load_labels(path, 5), format_error);
}

TEST_CASE("labels outside the class range are rejected") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "labels.csv";
    std::ofstream(path) << "epoch,label\n0,0\n1,5\n";
    CHECK_THROWS_AS(load_labels(path, 5), validation_error);
}

TEST_CASE("labels with out of order epoch column are rejected") {
    helpers::temp_dir dir;
    const auto path = dir.path() / "labels.csv";
    std::ofstream(path) << "epoch,label\n0,0\n2,1\n";
    CHECK_THROWS_AS(load_labels(path, 5), validation_error);
}

TEST_CASE("positions round trip through csv exactly") {
    helpers::temp_dir dir;
    electrode_positions pos;
    pos.names = {"ch00", "ch01", "ch02"};
    pos.coords = {{0.1, -0.2, 0.3}, {1.0 / 3.0, 2.0 / 7.0, -5.5}, {0.0, 0.0, 1.0}};
    const auto path = dir.path() / "positions.csv";
    write_positions(pos, path);
    const electrode_positions back = load_positions(path);
    CHECK(back.names == pos.names);
    REQUIRE(back.coords.size() == pos.coords.size());
    for (std::size_t i = 0; i < pos.coords.size(); ++i)
        for (int k = 0; k < 3; ++k)
            CHECK(back.coords[i][k] == pos.coords[i][k]);
}

TEST_CASE("match_channels reorders positions to the recording order") {
    const recording rec = make_recording(3, 1, 4);
    electrode_positions pos;
    pos.names = {"ch2", "ch0", "ch1"};
    pos.coords = {{2, 2, 2}, {0, 0, 0}, {1, 1, 1}};
    const electrode_positions matched = match_channels(pos, rec);
    CHECK(matched.names == rec.channel_names);
    CHECK(matched.coords[0][0] == 0.0);
    CHECK(matched.coords[1][0] == 1.0);
    CHECK(matched.coords[2][0] == 2.0);
}

TEST_CASE("match_channels rejects a missing channel") {
    const recording rec = make_recording(3, 1, 4);
    electrode_positions pos;
    pos.names = {"ch0", "ch1", "other"};
    pos.coords = {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
    CHECK_THROWS_AS(match_channels(pos, rec), validation_error);
}

TEST_CASE("match_channels rejects a count mismatch") {
    const recording rec = make_recording(3, 1, 4);
    electrode_positions pos;
    pos.names = {"ch0", "ch1"};
    pos.coords = {{0, 0, 0}, {1, 1, 1}};
    CHECK_THROWS_AS(match_channels(pos, rec), validation_error);
}

TEST_CASE("split keeps per class proportions") {
    label_set labels;
    labels.n_classes = 5;
    for (int rep = 0; rep < 20; ++rep)
        for (int c = 0; c < 5; ++c) labels.labels.push_back(c);
    rng_stream rng(1, 0);
    const dataset_split split = split_train_test(labels, 0.25, rng);
    CHECK(split.test.size() == 25);
    CHECK(split.train.size() == 75);
    std::vector<int> test_per_class(5, 0);
    for (std::size_t i : split.test) ++test_per_class[labels.labels[i]];
    for (int c = 0; c < 5; ++c) CHECK(test_per_class[c] == 5);
}

TEST_CASE("split partitions the index set with no overlap") {
    label_set labels;
    labels.n_classes = 3;
    for (int i = 0; i < 47; ++i) labels.labels.push_back(i % 3);
    rng_stream rng(2, 0);
    const dataset_split split = split_train_test(labels, 0.3, rng);
    std::vector<std::size_t> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 47);
    for (std::size_t i = 0; i < 47; ++i) CHECK(all[i] == i);
}

TEST_CASE("split is deterministic for a fixed rng state") {
    label_set labels;
    labels.n_classes = 4;
    for (int i = 0; i < 60; ++i) labels.labels.push_back(i % 4);
    rng_stream a(7, 3), b(7, 3);
    const dataset_split s1 = split_train_test(labels, 0.2, a);
    const dataset_split s2 = split_train_test(labels, 0.2, b);
    CHECK(s1.train == s2.train);
    CHECK(s1.test == s2.test);
}

TEST_CASE("split keeps at least one sample per class on each side") {
    label_set labels;
    labels.n_classes = 2;
    labels.labels = {0, 0, 1, 1};
    rng_stream low(3, 0);
    const dataset_split tiny = split_train_test(labels, 0.01, low);
    std::vector<int> test_per_class(2, 0), train_per_class(2, 0);
    for (std::size_t i : tiny.test) ++test_per_class[labels.labels[i]];
    for (std::size_t i : tiny.train) ++train_per_class[labels.labels[i]];
    for (int c = 0; c < 2; ++c) {
        CHECK(test_per_class[c] >= 1);
        CHECK(train_per_class[c] >= 1);
    }
    rng_stream high(3, 1);
    const dataset_split fat = split_train_test(labels, 0.99, high);
    test_per_class.assign(2, 0);
    train_per_class.assign(2, 0);
    for (std::size_t i : fat.test) ++test_per_class[labels.labels[i]];
    for (std::size_t i : fat.train) ++train_per_class[labels.labels[i]];
    for (int c = 0; c < 2; ++c) {
        CHECK(test_per_class[c] >= 1);
        CHECK(train_per_class[c] >= 1);
    }
}

TEST_CASE("split rejects a class with a single sample") {
    label_set labels;
    labels.n_classes = 2;
    labels.labels = {0, 0, 0, 1};
    rng_stream rng(4, 0);
    CHECK_THROWS_AS(split_train_test(labels, 0.25, rng), data_error);
}

TEST_CASE("split rejects ratios outside the open unit interval") {
    label_set labels;
    labels.n_classes = 2;
    labels.labels = {0, 0, 1, 1};
    rng_stream rng(5, 0);
    CHECK_THROWS_AS(split_train_test(labels, 0.0, rng), config_error);
    CHECK_THROWS_AS(split_train_test(labels, 1.0, rng), config_error);
    CHECK_THROWS_AS(split_train_test(labels, -0.5, rng), config_error);
}
