#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cl4ctr/data.hpp"

using namespace cl4ctr;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

RawDataset toy_raw() {
    RawDataset raw;
    raw.schema.fields = {"user", "item"};
    raw.schema.label = "label";
    raw.rows = {{"a", "x"}, {"b", "x"}, {"a", "x"}};
    raw.labels = {1, 0, 1};
    return raw;
}

}  // namespace

TEST_CASE("schema rejects malformed definitions") {
    Schema s{{"only"}, "label"};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    Schema dup{{"a", "a"}, "label"};
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
    Schema overlap{{"a", "b"}, "a"};
    CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);
    Schema ok{{"a", "b"}, "label"};
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("delimited reader handles comma and tab sources") {
    std::string path = temp_path("cl4ctr_data_test.csv");
    write_file(path, "user,item,label\nu1,i1,1\nu2,i1,0\n\nu1,i2,1\n");
    RawDataset d = read_delimited(path, "label");
    CHECK(d.schema.fields == std::vector<std::string>{"user", "item"});
    CHECK(d.size() == 3);
    CHECK(d.rows[0] == std::vector<std::string>{"u1", "i1"});
    CHECK(d.labels[0] == 1);
    CHECK(d.labels[1] == 0);

    std::string tsv = temp_path("cl4ctr_data_test.tsv");
    write_file(tsv, "label\tuser\titem\n0\tu9\ti3\n");
    RawDataset t = read_delimited(tsv, "label");
    CHECK(t.schema.fields == std::vector<std::string>{"user", "item"});
    CHECK(t.rows[0] == std::vector<std::string>{"u9", "i3"});
    CHECK(t.labels[0] == 0);

    std::string bad_label = temp_path("cl4ctr_data_bad1.csv");
    write_file(bad_label, "user,item,label\nu1,i1,yes\n");
    CHECK_THROWS_AS(read_delimited(bad_label, "label"), std::runtime_error);

    std::string bad_width = temp_path("cl4ctr_data_bad2.csv");
    write_file(bad_width, "user,item,label\nu1,1\n");
    CHECK_THROWS_AS(read_delimited(bad_width, "label"), std::runtime_error);

    CHECK_THROWS_AS(read_delimited(path, "click"), std::runtime_error);
    CHECK_THROWS_AS(read_delimited(temp_path("cl4ctr_missing.csv"), "label"),
                    std::runtime_error);

    for (const auto& p : {path, tsv, bad_label, bad_width}) std::filesystem::remove(p);
}

TEST_CASE("vocabulary assigns contiguous per-field ranges with an OOV slot") {
    RawDataset raw = toy_raw();
    Vocabulary v = Vocabulary::build(raw, 1);

    CHECK(v.field_count() == 2);
    // field 0: a, b + OOV; field 1: x + OOV
    CHECK(v.partition().range(0).size() == 3);
    CHECK(v.partition().range(1).size() == 2);
    CHECK(v.total_features() == 5);

    // Lexicographic in-vocab order, OOV at the end of each range.
    CHECK(v.encode_token(0, "a") == 0);
    CHECK(v.encode_token(0, "b") == 1);
    CHECK(v.oov_index(0) == 2);
    CHECK(v.encode_token(1, "x") == 3);
    CHECK(v.oov_index(1) == 4);

    // Counts follow global index order; unused OOV slots count 0.
    CHECK(v.counts() == std::vector<std::uint64_t>{2, 1, 0, 3, 0});

    // Partition covers [0, M) and each index belongs to exactly one field.
    std::uint32_t covered = 0;
    for (std::size_t f = 0; f < v.field_count(); ++f) covered += v.partition().range(f).size();
    CHECK(covered == v.total_features());
    CHECK(v.partition().field_of(1) == 0);
    CHECK(v.partition().field_of(3) == 1);
    CHECK_THROWS_AS(v.partition().field_of(5), std::invalid_argument);
}

TEST_CASE("sub-threshold tokens collapse into the OOV slot") {
    RawDataset raw = toy_raw();  // "b" occurs once
    Vocabulary v = Vocabulary::build(raw, 2);
    CHECK(v.partition().range(0).size() == 2);  // a + OOV only
    CHECK(v.encode_token(0, "b") == v.oov_index(0));
    // The collapsed occurrence is credited to the OOV count.
    CHECK(v.counts()[v.oov_index(0)] == 1);

    RawDataset empty;
    empty.schema = raw.schema;
    CHECK_THROWS_AS(Vocabulary::build(empty, 1), std::invalid_argument);
}

TEST_CASE("encode maps unseen tokens to the field OOV index") {
    Vocabulary v = Vocabulary::build(toy_raw(), 1);
    auto enc = v.encode_row({"b", "never-seen"});
    CHECK(enc[0] == 1);
    CHECK(enc[1] == v.oov_index(1));
    CHECK_THROWS_AS(v.encode_row({"a"}), std::invalid_argument);
}

TEST_CASE("encoding is injective on in-vocabulary rows and decode round-trips") {
    RawDataset raw;
    raw.schema.fields = {"f1", "f2", "f3"};
    raw.schema.label = "y";
    for (const char* a : {"p", "q"}) {
        for (const char* b : {"r", "s", "t"}) {
            for (const char* c : {"u", "v"}) {
                raw.rows.push_back({a, b, c});
                raw.labels.push_back(0);
            }
        }
    }
    Vocabulary v = Vocabulary::build(raw, 1);

    std::set<std::vector<std::uint32_t>> images;
    for (const auto& row : raw.rows) {
        auto enc = v.encode_row(row);
        images.insert(enc);
        CHECK(v.decode(enc) == row);
    }
    CHECK(images.size() == raw.rows.size() / 2 * 2);  // 12 distinct rows, none collide
    CHECK(images.size() == 12);
}

TEST_CASE("vocabulary survives a save/load round trip") {
    Vocabulary v = Vocabulary::build(toy_raw(), 1);
    std::string path = temp_path("cl4ctr_vocab_test.json");
    v.save(path);
    Vocabulary r = Vocabulary::load(path);
    CHECK(r.field_count() == v.field_count());
    CHECK(r.total_features() == v.total_features());
    CHECK(r.counts() == v.counts());
    CHECK(r.encode_token(0, "b") == v.encode_token(0, "b"));
    CHECK(r.schema().fields == v.schema().fields);

    write_file(path, "{\"format\": \"other\"}");
    CHECK_THROWS_AS(Vocabulary::load(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("frequency cdf is a nondecreasing curve ending at 1") {
    SUBCASE("degenerate distribution") {
        FrequencyCDF cdf = frequency_cdf({5, 5, 5});
        REQUIRE(cdf.points.size() == 1);
        CHECK(cdf.points[0].first == 5);
        CHECK(cdf.points[0].second == 1.0);
    }
    SUBCASE("hand-counted points") {
        FrequencyCDF cdf = frequency_cdf({1, 1, 1, 10});
        REQUIRE(cdf.points.size() == 2);
        CHECK(cdf.points[0] == std::pair<std::uint64_t, double>{1, 0.75});
        CHECK(cdf.points[1] == std::pair<std::uint64_t, double>{10, 1.0});
    }
    SUBCASE("zero-count reserve slots are not corpus features") {
        FrequencyCDF cdf = frequency_cdf({2, 0, 2, 0});
        REQUIRE(cdf.points.size() == 1);
        CHECK(cdf.points[0].first == 2);
        CHECK(cdf.points[0].second == 1.0);
    }
    SUBCASE("csv serialization") {
        std::ostringstream out;
        write_cdf_csv(out, frequency_cdf({1, 1, 1, 10}));
        CHECK(out.str() == "threshold,cumulative_fraction\n1,0.75\n10,1\n");
    }
}

TEST_CASE("split partitions the dataset by exact floor sizes") {
    EncodedDataset data;
    data.field_count = 2;
    for (std::uint32_t i = 0; i < 10; ++i) {
        std::vector<std::uint32_t> inst{i, 10 + i};
        data.append(inst, static_cast<std::uint8_t>(i % 2));
    }

    SplitResult s = split(data, 0.8, 0.1, 0.1, 7);
    CHECK(s.train.size() == 8);
    CHECK(s.valid.size() == 1);
    CHECK(s.test.size() == 1);

    // Disjoint cover: every original instance lands in exactly one part.
    std::set<std::uint32_t> seen;
    for (const EncodedDataset* part : {&s.train, &s.valid, &s.test}) {
        for (std::size_t i = 0; i < part->size(); ++i) {
            CHECK(seen.insert(part->instance(i)[0]).second);
        }
    }
    CHECK(seen.size() == 10);

    SplitResult again = split(data, 0.8, 0.1, 0.1, 7);
    CHECK(again.train.features == s.train.features);
    CHECK(again.valid.features == s.valid.features);
    CHECK(again.test.labels == s.test.labels);

    SplitResult other = split(data, 0.8, 0.1, 0.1, 8);
    CHECK(other.train.features != s.train.features);

    CHECK_THROWS_AS(split(data, 0.5, 0.2, 0.2, 1), std::invalid_argument);
    EncodedDataset tiny;
    tiny.field_count = 2;
    std::vector<std::uint32_t> inst{0, 1};
    tiny.append(inst, 0);
    CHECK_THROWS_AS(split(tiny, 0.8, 0.1, 0.1, 1), std::invalid_argument);
}

TEST_CASE("synthetic generator with zero exponent draws uniform features") {
    SynthConfig cfg;
    cfg.fields = 2;
    cfg.features_per_field = 20;
    cfg.zipf_exponent = 0.0;
    cfg.instances = 100000;
    cfg.sample_seed = 3;
    SynthResult r = synth_generate(cfg);
    CHECK(r.data.size() == cfg.instances);
    CHECK(r.partition.total() == 40);

    std::vector<double> obs(20, 0.0);
    for (std::size_t i = 0; i < r.data.size(); ++i) obs[r.data.instance(i)[0]] += 1.0;
    double expect = static_cast<double>(cfg.instances) / 20.0;
    double chi2 = 0.0;
    for (double o : obs) chi2 += (o - expect) * (o - expect) / expect;
    // 19 degrees of freedom; chi-square critical value at p = 0.01 is 36.19.
    CHECK(chi2 < 36.19);
}

TEST_CASE("zipf 1.2 concentrates most draws in the top fifth of features") {
    SynthConfig cfg;
    cfg.fields = 2;
    cfg.features_per_field = 1000;
    cfg.zipf_exponent = 1.2;
    cfg.instances = 200000;
    cfg.sample_seed = 5;

    // Oracle: the exact Zipf(1.2) mass of ranks 1..200 out of 1..1000,
    // summed directly before generating anything.
    double top = 0.0, total = 0.0;
    for (int k = 1; k <= 1000; ++k) {
        double m = std::pow(static_cast<double>(k), -1.2);
        total += m;
        if (k <= 200) top += m;
    }
    double oracle = top / total;
    CHECK(oracle > 0.6);

    SynthResult r = synth_generate(cfg);
    std::size_t in_top = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) {
        if (r.data.instance(i)[0] < 200) ++in_top;
    }
    double empirical = static_cast<double>(in_top) / static_cast<double>(r.data.size());
    CHECK(empirical > 0.6);
    CHECK(std::abs(empirical - oracle) < 0.01);
}

TEST_CASE("pure-noise labels come out as a fair coin") {
    SynthConfig cfg;
    cfg.fields = 2;
    cfg.features_per_field = 10;
    cfg.instances = 100000;
    cfg.signal_strength = 0.0;
    cfg.noise = 1e6;
    cfg.sample_seed = 11;
    SynthResult r = synth_generate(cfg);
    double positives = 0.0;
    for (std::uint8_t y : r.data.labels) positives += y;
    CHECK(std::abs(positives / static_cast<double>(cfg.instances) - 0.5) < 0.01);
}

TEST_CASE("synthetic generation is deterministic per seed pair") {
    SynthConfig cfg;
    cfg.fields = 3;
    cfg.features_per_field = 15;
    cfg.instances = 500;
    SynthResult a = synth_generate(cfg);
    SynthResult b = synth_generate(cfg);
    CHECK(a.data.features == b.data.features);
    CHECK(a.data.labels == b.data.labels);

    cfg.sample_seed = 2;
    SynthResult c = synth_generate(cfg);
    CHECK(c.data.features != a.data.features);

    SynthConfig bad = cfg;
    bad.fields = 1;
    CHECK_THROWS_AS(synth_generate(bad), std::invalid_argument);
}

TEST_CASE("dataset binary file round-trips and rejects corruption") {
    SynthConfig cfg;
    cfg.fields = 3;
    cfg.features_per_field = 7;
    cfg.instances = 123;
    EncodedDataset data = synth_generate(cfg).data;

    std::string path = temp_path("cl4ctr_dataset_test.bin");
    save_dataset(path, data);
    EncodedDataset r = load_dataset(path);
    CHECK(r.field_count == data.field_count);
    CHECK(r.features == data.features);
    CHECK(r.labels == data.labels);

    write_file(path, "NOPE");
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);

    save_dataset(path, data);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
    std::filesystem::remove(path);

    EncodedDataset bad;
    bad.field_count = 2;
    std::vector<std::uint32_t> inst{0, 1};
    CHECK_THROWS_AS(bad.append(inst, 2), std::invalid_argument);
    std::vector<std::uint32_t> narrow{0};
    CHECK_THROWS_AS(bad.append(narrow, 0), std::invalid_argument);
}
