#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "nfm/data.hpp"

using namespace nfm;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("nfm_test_data_" + name)).string();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string error_of(const std::string& path, const TableSchema& schema) {
    try {
        load_table(path, schema);
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

std::size_t count_class(const Dataset& d, std::size_t c) {
    std::size_t n = 0;
    for (std::size_t k : d.class_indices()) n += k == c;
    return n;
}

}  // namespace

TEST_CASE("noiseless outer circle has unit radius") {
    RngStream rng(0, streams::data);
    CirclesSpec spec;
    spec.noise_std = 0.0;
    auto [train, test] = make_circles(spec, rng);
    std::size_t outer = 0;
    for (const Dataset* d : {&train, &test}) {
        const auto cls = d->class_indices();
        for (std::size_t i = 0; i < d->size(); ++i) {
            const double r = std::hypot(d->inputs(i, 0), d->inputs(i, 1));
            if (cls[i] == 0) {
                CHECK(std::abs(r - 1.0) <= 1e-12);
                ++outer;
            } else {
                CHECK(std::abs(r - spec.scale_factor) <= 1e-12);
            }
        }
    }
    CHECK(outer == 250);
}

TEST_CASE("default toy split sizes and class balance") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream rng(seed, streams::data);
        auto [train, test] = make_circles({}, rng);
        CHECK(train.size() == 300);
        CHECK(test.size() == 200);
        CHECK(train.split == "train");
        CHECK(test.split == "test");
        for (const Dataset* d : {&train, &test}) {
            const double frac = static_cast<double>(count_class(*d, 0)) / static_cast<double>(d->size());
            CHECK(std::abs(frac - 0.5) <= 0.1);
        }
    }
}

TEST_CASE("stratified split keeps classes exactly balanced") {
    RngStream rng(3, streams::data);
    CirclesSpec spec;
    spec.stratified = true;
    auto [train, test] = make_circles(spec, rng);
    CHECK(count_class(train, 0) == 150);
    CHECK(count_class(test, 1) == 100);
}

TEST_CASE("make_circles is deterministic per seed with one-hot labels and finite inputs") {
    RngStream a(7, streams::data), b(7, streams::data), c(8, streams::data);
    auto [ta, sa] = make_circles({}, a);
    auto [tb, sb] = make_circles({}, b);
    auto [tc, sc] = make_circles({}, c);
    CHECK(ta.inputs.bit_equal(tb.inputs));
    CHECK(sa.labels.bit_equal(sb.labels));
    CHECK_FALSE(ta.inputs.bit_equal(tc.inputs));
    CHECK(ta.provenance == tb.provenance);
    CHECK(ta.provenance.at("generator") == "make_circles");
    CHECK_NOTHROW(ta.validate());
    CHECK_NOTHROW(sa.validate());
    for (std::size_t i = 0; i < ta.labels.size(); ++i)
        CHECK((ta.labels[i] == 0.0 || ta.labels[i] == 1.0));
}

TEST_CASE("make_circles rejects invalid parameters") {
    RngStream rng(0, streams::data);
    CirclesSpec s;
    s.n = 1;
    CHECK_THROWS_AS(make_circles(s, rng), std::invalid_argument);
    s = {};
    s.scale_factor = 1.0;
    CHECK_THROWS_AS(make_circles(s, rng), std::invalid_argument);
    s = {};
    s.noise_std = -0.1;
    CHECK_THROWS_AS(make_circles(s, rng), std::invalid_argument);
}

TEST_CASE("table round trip is bit-exact") {
    RngStream rng(11, streams::data);
    auto [train, test] = make_circles({}, rng);
    const std::string path = temp_path("roundtrip.csv");
    save_table(train, path);
    const Dataset back = load_table(path, {2, 2});
    CHECK(back.inputs.bit_equal(train.inputs));
    CHECK(back.labels.bit_equal(train.labels));
    CHECK(back.provenance.at("sha256").size() == 64);
    std::filesystem::remove(path);
}

TEST_CASE("load_table errors") {
    const std::string path = temp_path("bad.csv");
    write_file(path, "");
    CHECK(error_of(path, {2, 2}).find("empty") != std::string::npos);

    write_file(path, "x0,x1,label\n0.5,1.0,0\n0.1,0.2,3\n");
    const std::string label_err = error_of(path, {2, 2});
    CHECK(label_err.find(":3:") != std::string::npos);
    CHECK(label_err.find("label 3") != std::string::npos);

    write_file(path, "x0,x1,label\n0.5,1.0,0\n0.5,abc,1\n");
    const std::string bad_num = error_of(path, {2, 2});
    CHECK(bad_num.find(":3:") != std::string::npos);
    CHECK(bad_num.find("abc") != std::string::npos);

    write_file(path, "x0,x1,label\n0.5,1.0,0\n0.1,1\n");
    CHECK(error_of(path, {2, 2}).find(":3:") != std::string::npos);

    write_file(path, "x0,x1,label\n");
    CHECK(error_of(path, {2, 2}).find("no data rows") != std::string::npos);

    CHECK_FALSE(error_of(temp_path("missing.csv"), {2, 2}).empty());
    std::filesystem::remove(path);
}

TEST_CASE("one_hot") {
    const Tensor y = one_hot({0, 2, 1}, 3);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(1, 2) == 1.0);
    CHECK(y(2, 1) == 1.0);
    CHECK(y(1, 0) == 0.0);
    CHECK_THROWS_AS(one_hot({3}, 3), std::out_of_range);
}
