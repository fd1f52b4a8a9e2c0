#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "auditkit/data.hpp"
#include "auditkit/image_io.hpp"
#include "testutil.hpp"

using audit::ClassLabel;
using audit::LabeledImage;
using audit::NormalizationStats;
using audit::SplitConfig;
using audit::Tensor;

namespace {

SplitConfig small_cfg(int train, int test, std::uint64_t seed = 42) {
    SplitConfig cfg;
    cfg.per_class_train = train;
    cfg.per_class_test = test;
    cfg.seed = seed;
    return cfg;
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("data.benchmark") {
    TEST_CASE("same seed gives bit-identical pixels") {
        const auto [tr1, te1] = audit::generate_synthetic_benchmark(small_cfg(3, 2), 32);
        const auto [tr2, te2] = audit::generate_synthetic_benchmark(small_cfg(3, 2), 32);
        REQUIRE(tr1.size() == tr2.size());
        for (std::size_t i = 0; i < tr1.size(); ++i) {
            CHECK(tr1[i].source_id == tr2[i].source_id);
            for (std::int64_t p = 0; p < tr1[i].pixels.size(); ++p)
                CHECK(tr1[i].pixels.data[p] == tr2[i].pixels.data[p]);
        }
        for (std::size_t i = 0; i < te1.size(); ++i)
            CHECK((te1[i].pixels.data == te2[i].pixels.data).all());
    }

    TEST_CASE("different seeds give different pixels") {
        const auto [tr1, _1] = audit::generate_synthetic_benchmark(small_cfg(1, 1, 42), 32);
        const auto [tr2, _2] = audit::generate_synthetic_benchmark(small_cfg(1, 1, 43), 32);
        CHECK_FALSE((tr1[0].pixels.data == tr2[0].pixels.data).all());
    }

    TEST_CASE("test split has 150 images at 50 per class") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(2, 50), 32);
        CHECK(test.size() == 150);
        int counts[3] = {0, 0, 0};
        for (const auto& img : test) ++counts[img.label.index];
        for (int c : counts) CHECK(c == 50);
    }

    TEST_CASE("train and test source ids are disjoint") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(10, 10), 32);
        std::set<std::string> train_ids;
        for (const auto& img : train) train_ids.insert(img.source_id);
        CHECK(train_ids.size() == train.size());
        for (const auto& img : test) CHECK(train_ids.count(img.source_id) == 0);
    }

    TEST_CASE("all pixels stay inside the unit interval") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(5, 5), 32);
        for (const auto& img : train) img.check_invariants();
        for (const auto& img : test) img.check_invariants();
    }

    TEST_CASE("class mean brightness separates by three pooled sigmas") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(60, 2), 32);
        std::vector<std::vector<double>> means(3);
        for (const auto& img : train)
            means[img.label.index].push_back(img.pixels.data.cast<double>().mean());
        double mu[3], var[3];
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (double m : means[c]) s += m;
            mu[c] = s / means[c].size();
            double v = 0;
            for (double m : means[c]) v += (m - mu[c]) * (m - mu[c]);
            var[c] = v / (means[c].size() - 1);
        }
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) {
                const double pooled = std::sqrt((var[a] + var[b]) / 2.0);
                CHECK(std::abs(mu[a] - mu[b]) >= 3.0 * pooled);
            }
    }

    TEST_CASE("rejects degenerate configs") {
        CHECK_THROWS_AS(audit::generate_synthetic_benchmark(small_cfg(0, 5), 32),
                        audit::validation_error);
        CHECK_THROWS_AS(audit::generate_synthetic_benchmark(small_cfg(5, 5), 8),
                        audit::validation_error);
    }
}

TEST_SUITE("data.resize") {
    TEST_CASE("constant image stays constant through downsampling") {
        const Tensor big = Tensor::full({1, 224, 224}, 0.37f);
        const Tensor small = audit::bilinear_resize(big, 32);
        REQUIRE(small.shape == audit::Shape{1, 32, 32});
        for (std::int64_t i = 0; i < small.size(); ++i)
            CHECK(small.data[i] == doctest::Approx(0.37f).epsilon(1e-6));
    }

    TEST_CASE("identity when already at the target size") {
        audit::SplitMix64 rng(5);
        const Tensor img = testutil::random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
        const Tensor same = audit::bilinear_resize(img, 16);
        CHECK((same.data == img.data).all());
    }

    TEST_CASE("interpolation stays within the input range") {
        const Tensor tiny = Tensor::from({1, 2, 2}, {0.f, 1.f, 1.f, 0.f});
        const Tensor up = audit::bilinear_resize(tiny, 8);
        CHECK(up.data.minCoeff() >= 0.0f);
        CHECK(up.data.maxCoeff() <= 1.0f);
        CHECK(up.data.maxCoeff() > 0.5f);
    }
}

TEST_SUITE("data.normalize") {
    TEST_CASE("channel zero maps its mean to zero") {
        LabeledImage img;
        img.pixels = Tensor::full({3, 4, 4}, 0.485f);
        img.label = {0, "COVID-19"};
        img.source_id = "t";
        const Tensor n = audit::normalize(img, NormalizationStats::imagenet());
        for (std::int64_t i = 0; i < 16; ++i) CHECK(n.data[i] == doctest::Approx(0.0f));
    }

    TEST_CASE("normalize then denormalize is the identity") {
        audit::SplitMix64 rng(9);
        const Tensor px = testutil::random_tensor<float>({3, 8, 8}, rng, 0.0, 1.0);
        const auto stats = NormalizationStats::imagenet();
        const Tensor back = audit::denormalize(audit::normalize_pixels(px, stats), stats);
        for (std::int64_t i = 0; i < px.size(); ++i)
            CHECK(back.data[i] == doctest::Approx(px.data[i]).epsilon(1e-6));
    }

    TEST_CASE("unit constant under half-half stats is unchanged") {
        const Tensor px = Tensor::full({1, 4, 4}, 1.0f);
        const Tensor n = audit::normalize_pixels(px, NormalizationStats::grayscale());
        for (std::int64_t i = 0; i < n.size(); ++i) CHECK(n.data[i] == doctest::Approx(1.0f));
    }

    TEST_CASE("channel mismatch is rejected") {
        const Tensor px = Tensor::full({1, 4, 4}, 0.5f);
        CHECK_THROWS_AS(audit::normalize_pixels(px, NormalizationStats::imagenet()),
                        audit::validation_error);
    }
}

TEST_SUITE("data.sampling") {
    TEST_CASE("draws the requested count per class") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(60, 2), 32);
        const auto sample = audit::stratified_sample(train, 50, 42);
        CHECK(sample.size() == 150);
        int counts[3] = {0, 0, 0};
        for (const auto& img : sample) ++counts[img.label.index];
        for (int c : counts) CHECK(c == 50);
    }

    TEST_CASE("selection is independent of input ordering") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(12, 2), 32);
        auto reversed = train;
        std::reverse(reversed.begin(), reversed.end());
        const auto a = audit::stratified_sample(train, 8, 7);
        const auto b = audit::stratified_sample(reversed, 8, 7);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].source_id == b[i].source_id);
    }

    TEST_CASE("full-size draw is a permutation of the class") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(6, 2), 32);
        const auto sample = audit::stratified_sample(train, 6, 3);
        std::multiset<std::string> in_ids, out_ids;
        for (const auto& img : train) in_ids.insert(img.source_id);
        for (const auto& img : sample) out_ids.insert(img.source_id);
        CHECK(in_ids == out_ids);
    }

    TEST_CASE("short classes are named in the error") {
        const auto [train, test] = audit::generate_synthetic_benchmark(small_cfg(4, 2), 32);
        try {
            audit::stratified_sample(train, 5, 1);
            FAIL("expected validation_error");
        } catch (const audit::validation_error& e) {
            CHECK(std::string(e.what()).find("COVID-19") != std::string::npos);
        }
    }
}

TEST_SUITE("data.codecs") {
    TEST_CASE("pgm extremes scale to the unit interval") {
        testutil::TempDir tmp;
        const std::string path = tmp.file("g.pgm");
        // 2x1, pixels 255 and 0, with a header comment
        write_bytes(path, std::string("P5\n# probe\n2 1\n255\n") + '\xff' + '\x00');
        const Tensor img = audit::read_pnm(path);
        REQUIRE(img.shape == audit::Shape{1, 1, 2});
        CHECK(img.at3(0, 0, 0) == 1.0f);
        CHECK(img.at3(0, 0, 1) == 0.0f);
    }

    TEST_CASE("ppm carries three channels") {
        testutil::TempDir tmp;
        const std::string path = tmp.file("c.ppm");
        write_bytes(path, std::string("P6\n1 1\n255\n") + '\xff' + '\x00' + '\x80');
        const Tensor img = audit::read_pnm(path);
        REQUIRE(img.shape == audit::Shape{3, 1, 1});
        CHECK(img.at3(0, 0, 0) == 1.0f);
        CHECK(img.at3(1, 0, 0) == 0.0f);
        CHECK(img.at3(2, 0, 0) == doctest::Approx(128.0f / 255.0f));
    }

    TEST_CASE("pnm round trip preserves quantized values") {
        testutil::TempDir tmp;
        audit::SplitMix64 rng(21);
        Tensor img = testutil::random_tensor<float>({3, 5, 7}, rng, 0.0, 1.0);
        // snap to the 8-bit grid so the round trip is exact
        for (std::int64_t i = 0; i < img.size(); ++i)
            img.data[i] = std::round(img.data[i] * 255.0f) / 255.0f;
        audit::write_pnm(tmp.file("rt.ppm"), img);
        const Tensor back = audit::read_pnm(tmp.file("rt.ppm"));
        REQUIRE(back.shape == img.shape);
        for (std::int64_t i = 0; i < img.size(); ++i)
            CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    }

    TEST_CASE("png round trip preserves quantized values") {
        testutil::TempDir tmp;
        audit::SplitMix64 rng(22);
        Tensor img = testutil::random_tensor<float>({1, 6, 4}, rng, 0.0, 1.0);
        for (std::int64_t i = 0; i < img.size(); ++i)
            img.data[i] = std::round(img.data[i] * 255.0f) / 255.0f;
        audit::write_png(tmp.file("rt.png"), img);
        const Tensor back = audit::read_png(tmp.file("rt.png"));
        REQUIRE(back.shape == img.shape);
        for (std::int64_t i = 0; i < img.size(); ++i)
            CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    }

    TEST_CASE("malformed inputs raise io errors") {
        testutil::TempDir tmp;
        write_bytes(tmp.file("bad.pgm"), "P5\n2 2\n65535\n....");
        CHECK_THROWS_AS(audit::read_pnm(tmp.file("bad.pgm")), audit::io_error);
        write_bytes(tmp.file("short.pgm"), std::string("P5\n4 4\n255\n") + "xy");
        CHECK_THROWS_AS(audit::read_pnm(tmp.file("short.pgm")), audit::io_error);
        write_bytes(tmp.file("junk.png"), "not a png at all");
        CHECK_THROWS_AS(audit::read_png(tmp.file("junk.png")), audit::io_error);
        CHECK_THROWS_AS(audit::read_image(tmp.file("absent.png")), audit::io_error);
        CHECK_THROWS_AS(audit::read_image(tmp.file("file.bmp")), audit::io_error);
    }
}

TEST_SUITE("data.directory") {
    TEST_CASE("loads one subdirectory per class") {
        testutil::TempDir tmp;
        const auto labels = audit::default_labels();
        for (const auto& label : labels) {
            std::filesystem::create_directories(tmp.path / label.name);
            for (int i = 0; i < 2; ++i) {
                const Tensor img = Tensor::full({1, 8, 8}, 0.25f * (label.index + 1));
                audit::write_pnm((tmp.path / label.name / ("img" + std::to_string(i) + ".pgm")).string(),
                                 img);
            }
        }
        const auto images = audit::load_image_directory(tmp.path.string(), labels,
                                                        NormalizationStats::grayscale(), 8);
        CHECK(images.size() == 6);
        int counts[3] = {0, 0, 0};
        for (const auto& img : images) {
            ++counts[img.label.index];
            img.check_invariants();
            CHECK(img.pixels.shape == audit::Shape{1, 8, 8});
        }
        for (int c : counts) CHECK(c == 2);
    }

    TEST_CASE("gray images replicate to the channel count the stats expect") {
        testutil::TempDir tmp;
        const std::vector<ClassLabel> labels{{0, "only"}};
        std::filesystem::create_directories(tmp.path / "only");
        audit::write_pnm((tmp.path / "only" / "g.pgm").string(), Tensor::full({1, 4, 4}, 0.5f));
        const auto images = audit::load_image_directory(tmp.path.string(), labels,
                                                        NormalizationStats::imagenet(), 4);
        REQUIRE(images.size() == 1);
        CHECK(images[0].pixels.shape == audit::Shape{3, 4, 4});
        CHECK(images[0].pixels.at3(2, 0, 0) == doctest::Approx(0.5f).epsilon(0.01));
    }

    TEST_CASE("unreadable files are skipped with a warning") {
        testutil::TempDir tmp;
        const std::vector<ClassLabel> labels{{0, "only"}};
        std::filesystem::create_directories(tmp.path / "only");
        audit::write_pnm((tmp.path / "only" / "ok.pgm").string(), Tensor::full({1, 4, 4}, 0.5f));
        write_bytes((tmp.path / "only" / "broken.png").string(), "garbage");
        std::vector<std::string> warnings;
        const auto images = audit::load_image_directory(tmp.path.string(), labels,
                                                        NormalizationStats::grayscale(), 4, &warnings);
        CHECK(images.size() == 1);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("broken.png") != std::string::npos);
    }

    TEST_CASE("missing or empty class directories fail loudly") {
        testutil::TempDir tmp;
        const std::vector<ClassLabel> labels{{0, "present"}, {1, "absent"}};
        std::filesystem::create_directories(tmp.path / "present");
        audit::write_pnm((tmp.path / "present" / "a.pgm").string(), Tensor::full({1, 4, 4}, 0.1f));
        CHECK_THROWS_AS(audit::load_image_directory(tmp.path.string(), labels,
                                                    NormalizationStats::grayscale(), 4),
                        audit::validation_error);
        std::filesystem::create_directories(tmp.path / "absent");
        CHECK_THROWS_AS(audit::load_image_directory(tmp.path.string(), labels,
                                                    NormalizationStats::grayscale(), 4),
                        audit::validation_error);
    }
}

TEST_SUITE("data.manifest") {
    TEST_CASE("round trips entries and materializes a split") {
        testutil::TempDir tmp;
        audit::write_pnm(tmp.file("a.pgm"), Tensor::full({1, 4, 4}, 0.2f));
        audit::write_pnm(tmp.file("b.pgm"), Tensor::full({1, 4, 4}, 0.8f));
        write_bytes(tmp.file("manifest.json"),
                    R"([{"path":"a.pgm","label":"COVID-19","split":"train"},
                        {"path":"b.pgm","label":"Normal","split":"test"}])");
        const auto entries = audit::read_dataset_manifest(tmp.file("manifest.json"));
        REQUIRE(entries.size() == 2);
        CHECK(entries[0].label == "COVID-19");
        const auto test_imgs = audit::load_manifest_split(tmp.file("manifest.json"),
                                                          audit::default_labels(),
                                                          NormalizationStats::grayscale(), 4, "test");
        REQUIRE(test_imgs.size() == 1);
        CHECK(test_imgs[0].label.name == "Normal");
        CHECK(test_imgs[0].pixels.at3(0, 0, 0) == doctest::Approx(0.8f).epsilon(0.01));
    }

    TEST_CASE("rejects malformed manifests") {
        testutil::TempDir tmp;
        write_bytes(tmp.file("notjson.json"), "{{{{");
        CHECK_THROWS_AS(audit::read_dataset_manifest(tmp.file("notjson.json")),
                        audit::validation_error);
        write_bytes(tmp.file("notarray.json"), R"({"path":"x"})");
        CHECK_THROWS_AS(audit::read_dataset_manifest(tmp.file("notarray.json")),
                        audit::validation_error);
        write_bytes(tmp.file("badsplit.json"), R"([{"path":"a","label":"b","split":"val"}])");
        CHECK_THROWS_AS(audit::read_dataset_manifest(tmp.file("badsplit.json")),
                        audit::validation_error);
        CHECK_THROWS_AS(audit::read_dataset_manifest(tmp.file("missing.json")), audit::io_error);
    }
}
