#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fsl/dataset.hpp"

using namespace fsl;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Dataset tiny_dataset() {
    Dataset ds;
    ds.name = "tiny";
    ds.input_shape = {2};
    ds.classes = {{"a", Partition::TRAIN}, {"b", Partition::TEST}};
    ds.inputs = {0.25, -1.5, 3.0, 0.0, 1e-3, 42.5};
    ds.class_ids = {0, 0, 1};
    return ds;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace

TEST_CASE("dataset file round-trip is bit-exact") {
    const std::string path = temp_path("fsl_roundtrip.fslds");
    Dataset ds = tiny_dataset();
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    CHECK(back.name == ds.name);
    CHECK(back.input_shape == ds.input_shape);
    CHECK(back.class_ids == ds.class_ids);
    REQUIRE(back.classes.size() == ds.classes.size());
    for (std::size_t i = 0; i < ds.classes.size(); ++i) {
        CHECK(back.classes[i].name == ds.classes[i].name);
        CHECK(back.classes[i].partition == ds.classes[i].partition);
    }
    // values pass through f32 storage; a second round-trip must be exact
    save_dataset(back, path + ".2");
    CHECK(read_file(path) == read_file(path + ".2"));
    Dataset back2 = load_dataset(path + ".2");
    CHECK(back2.inputs == back.inputs);
    std::remove(path.c_str());
    std::remove((path + ".2").c_str());
}

TEST_CASE("empty dataset round-trips") {
    const std::string path = temp_path("fsl_empty.fslds");
    Dataset ds;
    ds.name = "empty";
    ds.input_shape = {3};
    save_dataset(ds, path);
    Dataset back = load_dataset(path);
    CHECK(back.num_items() == 0);
    CHECK(back.num_classes() == 0);
    std::remove(path.c_str());
}

TEST_CASE("corrupted files are rejected") {
    const std::string path = temp_path("fsl_corrupt.fslds");
    save_dataset(tiny_dataset(), path);
    const std::string good = read_file(path);

    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        write_file(path, bad);
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("magic"), IoError);
    }
    SUBCASE("flipped payload byte fails the checksum") {
        std::string bad = good;
        bad[bad.size() - 10] ^= 0x01;
        write_file(path, bad);
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("checksum"), IoError);
    }
    SUBCASE("truncation") {
        write_file(path, good.substr(0, good.size() - 7));
        CHECK_THROWS_AS(load_dataset(path), IoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_dataset(path + ".nope"), IoError);
    }
    std::remove(path.c_str());
}

TEST_CASE("synthetic generation is deterministic and shaped by the spec") {
    SyntheticSpec spec;
    spec.num_categories = 5;
    spec.classes_per_category = 3;
    spec.items_per_class = 4;
    spec.input_dim = 6;
    spec.val_categories = 1;
    spec.test_categories = 1;
    spec.seed = 42;

    Dataset a = gen_synthetic(spec);
    Dataset b = gen_synthetic(spec);
    CHECK(a.inputs == b.inputs);
    CHECK(a.class_ids == b.class_ids);
    CHECK(a.num_classes() == 15);
    CHECK(a.num_items() == 60);
    CHECK(a.input_shape == Shape{6});
    CHECK(a.classes_in(Partition::TRAIN).size() == 9);
    CHECK(a.classes_in(Partition::VAL).size() == 3);
    CHECK(a.classes_in(Partition::TEST).size() == 3);

    spec.seed = 43;
    Dataset c = gen_synthetic(spec);
    CHECK(a.inputs != c.inputs);
}

TEST_CASE("classes of one category never straddle partitions") {
    SyntheticSpec spec;
    spec.num_categories = 6;
    spec.classes_per_category = 4;
    spec.items_per_class = 2;
    spec.seed = 7;
    Dataset ds = gen_synthetic(spec);
    for (int cat = 0; cat < spec.num_categories; ++cat) {
        const Partition first = ds.classes[static_cast<std::size_t>(cat * 4)].partition;
        for (int k = 1; k < 4; ++k)
            CHECK(ds.classes[static_cast<std::size_t>(cat * 4 + k)].partition == first);
    }
}

TEST_CASE("nuisance dimensions extend the input without moving class structure") {
    SyntheticSpec spec;
    spec.num_categories = 4;
    spec.classes_per_category = 2;
    spec.items_per_class = 3;
    spec.input_dim = 5;
    spec.nuisance_dims = 7;
    spec.val_categories = 1;
    spec.test_categories = 1;
    spec.seed = 9;
    Dataset ds = gen_synthetic(spec);
    CHECK(ds.input_shape == Shape{12});
    CHECK_NOTHROW(ds.validate());
}

TEST_CASE("within-category classes are closer than across-category classes") {
    SyntheticSpec spec;
    spec.num_categories = 8;
    spec.classes_per_category = 4;
    spec.items_per_class = 10;
    spec.input_dim = 8;
    spec.category_center_scale = 5.0;
    spec.class_center_scale = 1.0;
    spec.within_class_noise = 0.5;
    spec.seed = 17;
    Dataset ds = gen_synthetic(spec);

    // class means
    auto by = ds.items_by_class();
    std::vector<std::vector<double>> mean(by.size(), std::vector<double>(8, 0.0));
    for (std::size_t c = 0; c < by.size(); ++c) {
        for (int item : by[c])
            for (int d = 0; d < 8; ++d)
                mean[c][static_cast<std::size_t>(d)] += ds.item(item)[d];
        for (auto& v : mean[c])
            v /= static_cast<double>(by[c].size());
    }
    double within = 0.0, across = 0.0;
    int n_within = 0, n_across = 0;
    for (std::size_t a = 0; a < mean.size(); ++a)
        for (std::size_t b = a + 1; b < mean.size(); ++b) {
            double d2 = 0.0;
            for (int d = 0; d < 8; ++d)
                d2 += (mean[a][static_cast<std::size_t>(d)] - mean[b][static_cast<std::size_t>(d)]) *
                      (mean[a][static_cast<std::size_t>(d)] - mean[b][static_cast<std::size_t>(d)]);
            if (a / 4 == b / 4) {
                within += d2;
                ++n_within;
            } else {
                across += d2;
                ++n_across;
            }
        }
    CHECK(within / n_within < across / n_across);
}

TEST_CASE("invalid synthetic specs are rejected") {
    SyntheticSpec spec;
    spec.num_categories = 3;
    spec.val_categories = 2;
    spec.test_categories = 1;
    CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
    spec = SyntheticSpec{};
    spec.within_class_noise = 0.0;
    CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
    spec = SyntheticSpec{};
    spec.nuisance_dims = -1;
    CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
}

TEST_CASE("labeled/unlabeled split proportions and determinism") {
    SyntheticSpec spec;
    spec.num_categories = 3;
    spec.classes_per_category = 2;
    spec.items_per_class = 20;
    spec.val_categories = 1;
    spec.test_categories = 1;
    spec.seed = 1;
    Dataset ds = gen_synthetic(spec);

    SUBCASE("ratio 0.1 on 20 items gives 2/18") {
        auto split = make_split(ds, 0.1, 99);
        for (std::size_t c = 0; c < split.labeled.size(); ++c) {
            CHECK(split.labeled[c].size() == 2);
            CHECK(split.unlabeled[c].size() == 18);
        }
    }
    SUBCASE("ratio 0.4 gives 8/12") {
        auto split = make_split(ds, 0.4, 99);
        for (std::size_t c = 0; c < split.labeled.size(); ++c) {
            CHECK(split.labeled[c].size() == 8);
            CHECK(split.unlabeled[c].size() == 12);
        }
    }
    SUBCASE("ratio 0.4 on 100 items gives 40/60") {
        SyntheticSpec big = spec;
        big.items_per_class = 100;
        Dataset ds100 = gen_synthetic(big);
        auto split = make_split(ds100, 0.4, 5);
        CHECK(split.labeled[0].size() == 40);
        CHECK(split.unlabeled[0].size() == 60);
    }
    SUBCASE("same seed reproduces the split, and it partitions each class") {
        auto s1 = make_split(ds, 0.3, 7);
        auto s2 = make_split(ds, 0.3, 7);
        CHECK(s1.labeled == s2.labeled);
        CHECK(s1.unlabeled == s2.unlabeled);
        auto by = ds.items_by_class();
        for (std::size_t c = 0; c < by.size(); ++c) {
            std::vector<int> joined = s1.labeled[c];
            joined.insert(joined.end(), s1.unlabeled[c].begin(), s1.unlabeled[c].end());
            std::sort(joined.begin(), joined.end());
            std::vector<int> want = by[c];
            std::sort(want.begin(), want.end());
            CHECK(joined == want);
        }
    }
    SUBCASE("ratio outside (0,1) is rejected") {
        CHECK_THROWS_AS(make_split(ds, 0.0, 1), ConfigError);
        CHECK_THROWS_AS(make_split(ds, 1.0, 1), ConfigError);
    }
}
