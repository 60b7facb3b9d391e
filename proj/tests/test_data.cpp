#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "ensemblefit/augment.hpp"
#include "ensemblefit/dataset.hpp"
#include "ensemblefit/synthetic.hpp"

using namespace ensemblefit;
namespace fs = std::filesystem;

namespace {

// 3x2 grayscale PNG: rows {0,128,255} and {10,20,30}
const unsigned char kGrayPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x02, 0x08, 0x00, 0x00, 0x00, 0x00, 0xb8,
    0x1f, 0x39, 0xc6, 0x00, 0x00, 0x00, 0x10, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60,
    0x68, 0xf8, 0xcf, 0xc8, 0xc5, 0xc5, 0x05, 0x00, 0x08, 0x43, 0x01, 0x9f, 0xb2, 0x83, 0x14,
    0x05, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82};

// 2x2 RGB PNG: (255,0,0) (0,255,0) / (0,0,255) (9,18,27)
const unsigned char kRgbPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0xfd,
    0xd4, 0x9a, 0x73, 0x00, 0x00, 0x00, 0x16, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8,
    0xcf, 0xc0, 0xc0, 0xf0, 0x9f, 0x81, 0x81, 0x81, 0xe1, 0x3f, 0xa7, 0x90, 0x34, 0x00, 0x1a,
    0x4e, 0x03, 0x34, 0x47, 0xf0, 0x5f, 0x19, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44,
    0xae, 0x42, 0x60, 0x82};

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ensemblefit_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const unsigned char* data, std::size_t len) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
}

Image flat_image(std::size_t h, std::size_t w, double value) {
    return Image(h, w, 1, value);
}

Dataset tiny_dataset(std::size_t n_normal, std::size_t n_defect) {
    Dataset d;
    for (std::size_t i = 0; i < n_normal; ++i) {
        LabeledImage item;
        item.pixels = flat_image(2, 2, 0.5);
        item.raw_label = "normal";
        item.label = 0;
        item.id = "n" + std::to_string(i);
        d.items.push_back(item);
    }
    for (std::size_t i = 0; i < n_defect; ++i) {
        LabeledImage item;
        item.pixels = flat_image(2, 2, 0.2);
        item.raw_label = "defect";
        item.label = 1;
        item.id = "d" + std::to_string(i);
        d.items.push_back(item);
    }
    return d;
}

} // namespace

TEST_CASE("png decoding") {
    const fs::path dir = fresh_dir("png");
    write_bytes(dir / "gray.png", kGrayPng, sizeof(kGrayPng));
    write_bytes(dir / "rgb.png", kRgbPng, sizeof(kRgbPng));

    const Image gray = read_png((dir / "gray.png").string());
    REQUIRE(gray.height == 2);
    REQUIRE(gray.width == 3);
    REQUIRE(gray.channels == 1);
    CHECK(gray.at(0, 0) == 0.0);
    CHECK(gray.at(0, 1) == 128.0);
    CHECK(gray.at(0, 2) == 255.0);
    CHECK(gray.at(1, 0) == 10.0);

    const Image rgb = read_png((dir / "rgb.png").string());
    REQUIRE(rgb.channels == 3);
    CHECK(rgb.at(0, 0, 0) == 255.0);
    CHECK(rgb.at(0, 1, 1) == 255.0);
    CHECK(rgb.at(1, 0, 2) == 255.0);
    CHECK(rgb.at(1, 1, 0) == 9.0);
}

TEST_CASE("pgm round trip") {
    const fs::path dir = fresh_dir("pgm");
    Image img(3, 4, 1);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = static_cast<double>(i) / 11.0;
    }
    write_pgm(img, (dir / "a.pgm").string());
    const Image back = read_pgm((dir / "a.pgm").string());
    REQUIRE(back.height == 3);
    REQUIRE(back.width == 4);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        CHECK(back.pixels[i] / 255.0 == doctest::Approx(img.pixels[i]).epsilon(0.005));
    }
}

TEST_CASE("ingest counts per directory and skips corrupt files") {
    const fs::path root = fresh_dir("ingest");
    fs::create_directories(root / "defect");
    fs::create_directories(root / "normal");
    fs::create_directories(root / "empty_label");
    for (int i = 0; i < 3; ++i) {
        write_pgm(flat_image(4, 4, 0.3), (root / "defect" / ("d" + std::to_string(i) + ".pgm")).string());
    }
    for (int i = 0; i < 6; ++i) {
        write_pgm(flat_image(4, 4, 0.8), (root / "normal" / ("n" + std::to_string(i) + ".pgm")).string());
    }
    {
        std::ofstream bad(root / "normal" / "broken.pgm");
        bad << "not a pgm";
    }

    IngestReport report;
    const Dataset d = ingest(root.string(), &report);
    CHECK(d.size() == 9);
    CHECK(report.per_label.at("defect") == 3);
    CHECK(report.per_label.at("normal") == 6);
    CHECK(report.per_label.at("empty_label") == 0);
    CHECK(report.skipped == 1);
    const auto counts = d.class_counts();
    CHECK(counts.at(1) == 3);
    CHECK(counts.at(0) == 6);

    SUBCASE("empty root is an error") {
        const fs::path empty = fresh_dir("ingest_empty");
        CHECK_THROWS_AS(ingest(empty.string()), std::runtime_error);
    }
}

TEST_CASE("group_labels applies longest-prefix rules") {
    Dataset d;
    for (const char* raw : {"Broken Flange WM66- L3 Verify", "Broken Flange WM66- R1 Monitor",
                            "Missing Bolt X1", "Oddball"}) {
        LabeledImage item;
        item.pixels = flat_image(2, 2, 0.5);
        item.raw_label = raw;
        d.items.push_back(item);
    }
    const PrefixRules rules = {{"Broken Flange", "Broken Flange"}, {"Missing Bolt", "Missing Bolt"}};
    GroupReport report;
    const Dataset grouped = group_labels(d, rules, &report);
    CHECK(grouped.items[0].raw_label == "Broken Flange");
    CHECK(grouped.items[1].raw_label == "Broken Flange");
    CHECK(grouped.items[2].raw_label == "Missing Bolt");
    CHECK(grouped.items[3].raw_label == "Oddball");
    CHECK(report.unmatched == std::set<std::string>{"Oddball"});
    CHECK(grouped.size() == d.size());

    SUBCASE("longest prefix wins") {
        const PrefixRules overlapping = {{"Broken", "Parent A"}, {"Broken Flange", "Parent B"}};
        const Dataset g = group_labels(d, overlapping);
        CHECK(g.items[0].raw_label == "Parent B");
    }
    SUBCASE("identical prefixes mapping to different parents are rejected") {
        const PrefixRules conflicting = {{"Broken", "A"}, {"Broken", "B"}};
        CHECK_THROWS_AS(group_labels(d, conflicting), std::runtime_error);
    }
}

TEST_CASE("to_binary maps declared classes") {
    Dataset d;
    for (int i = 0; i < 4; ++i) {
        LabeledImage item;
        item.pixels = flat_image(2, 2, 0.5);
        item.raw_label = i < 2 ? "Broken Flange" : "normal";
        d.items.push_back(item);
    }
    const Dataset mapped = to_binary(d, {"Broken Flange"}, {"normal"});
    CHECK(mapped.items[0].label == 1);
    CHECK(mapped.items[1].label == 1);
    CHECK(mapped.items[2].label == 0);
    CHECK(mapped.size() == d.size());

    SUBCASE("empty defect set labels everything 0") {
        const Dataset zeros = to_binary(d, {}, {"Broken Flange", "normal"});
        for (const auto& item : zeros.items) CHECK(item.label == 0);
    }
    SUBCASE("undeclared class is an error naming it") {
        CHECK_THROWS_WITH_AS(to_binary(d, {"Broken Flange"}, {}),
                             doctest::Contains("'normal'"), std::runtime_error);
    }
}

TEST_CASE("split produces stratified floor allocations") {
    const Dataset d = tiny_dataset(2000, 1000);
    const SplitResult s = split(d, 0.6, 0.2, 0.2, 42);
    CHECK(s.train.size() == 1800);
    CHECK(s.val.size() == 600);
    CHECK(s.test.size() == 600);
    CHECK(s.train.class_counts().at(0) == 1200);
    CHECK(s.train.class_counts().at(1) == 600);
    CHECK(s.val.class_counts().at(0) == 400);
    CHECK(s.test.class_counts().at(1) == 200);

    SUBCASE("deterministic under the seed") {
        const SplitResult again = split(d, 0.6, 0.2, 0.2, 42);
        REQUIRE(again.train.size() == s.train.size());
        for (std::size_t i = 0; i < s.train.size(); ++i) {
            CHECK(again.train.items[i].id == s.train.items[i].id);
        }
    }
    SUBCASE("disjoint and exhaustive") {
        std::set<std::string> seen;
        for (const Dataset* part : {&s.train, &s.val, &s.test}) {
            for (const auto& item : part->items) {
                CHECK(seen.insert(item.id).second);
            }
        }
        CHECK(seen.size() == d.size());
    }
    SUBCASE("everything lands in train for (1,0,0)") {
        const SplitResult all = split(d, 1.0, 0.0, 0.0, 7);
        CHECK(all.train.size() == d.size());
        CHECK(all.val.empty());
        CHECK(all.test.empty());
    }
    SUBCASE("tiny stratum errors") {
        const Dataset small = tiny_dataset(5, 2);
        CHECK_THROWS_AS(split(small, 0.4, 0.3, 0.3, 1), std::runtime_error);
    }
    SUBCASE("ratios must sum to one") {
        CHECK_THROWS_AS(split(d, 0.5, 0.2, 0.2, 1), std::invalid_argument);
    }
}

TEST_CASE("synthetic generation is deterministic") {
    SyntheticConfig cfg;
    cfg.n_normal = 20;
    cfg.n_defect = 10;
    cfg.seed = 7;
    const Dataset a = generate_synthetic(cfg);
    const Dataset b = generate_synthetic(cfg);
    REQUIRE(a.size() == 30);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.items[i].pixels.pixels == b.items[i].pixels.pixels);
        CHECK(a.items[i].label == b.items[i].label);
    }
    CHECK(a.class_counts().at(0) == 20);
    CHECK(a.class_counts().at(1) == 10);
}

TEST_CASE("visible cracks cut well below the plate texture") {
    SyntheticConfig cfg;
    cfg.n_normal = 4;
    cfg.n_defect = 6;
    cfg.confusable_fraction = 0.0;
    cfg.seed = 11;
    const Dataset d = generate_synthetic(cfg);
    for (std::size_t i = 0; i < cfg.n_defect; ++i) {
        const LabeledImage& defect = d.items[cfg.n_normal + i];
        REQUIRE(defect.label == 1);
        // re-render the crack-free base from the same stream
        Rng rng(derive_seed(cfg.seed, synth_detail::defect_base_stream(i)));
        const Image base =
            synth_detail::render_base(cfg.height, cfg.width, cfg.max_rivets, rng);
        std::size_t big_diff = 0;
        for (std::size_t p = 0; p < base.pixels.size(); ++p) {
            if (std::abs(base.pixels[p] - defect.pixels.pixels[p]) > 0.1) ++big_diff;
        }
        CHECK(big_diff >= static_cast<std::size_t>(cfg.stroke_len));
    }
}

TEST_CASE("confusable pairs are nearly identical") {
    SyntheticConfig cfg;
    cfg.n_normal = 10;
    cfg.n_defect = 10;
    cfg.confusable_fraction = 0.3;
    cfg.seed = 13;
    const Dataset d = generate_synthetic(cfg);
    const std::size_t n_confusable = 3;
    for (std::size_t i = 0; i < n_confusable; ++i) {
        const LabeledImage& normal = d.items[i];
        const LabeledImage& defect = d.items[cfg.n_normal + i];
        REQUIRE(normal.confusable);
        REQUIRE(defect.confusable);
        double total = 0.0;
        std::size_t over_005 = 0;
        for (std::size_t p = 0; p < normal.pixels.pixels.size(); ++p) {
            const double diff = std::abs(normal.pixels.pixels[p] - defect.pixels.pixels[p]);
            total += diff;
            if (diff > 0.05) ++over_005;
        }
        CHECK(total / static_cast<double>(normal.pixels.pixels.size()) < 0.01);
        // fewer than 1% of pixels may exceed 0.05; the faint crack never does
        CHECK(over_005 < normal.pixels.pixels.size() / 100);
    }
}

TEST_CASE("preprocess resizes and rescales") {
    SUBCASE("uniform 255 becomes 1.0") {
        Image img(4, 4, 1, 255.0);
        const Tensor t = preprocess(img, 4, 4);
        for (double v : t.values) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("identity resize keeps values") {
        Image img(5, 7, 1);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 0.01 * static_cast<double>(i);
        const Tensor t = preprocess(img, 5, 7, 1.0);
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            CHECK(t.values[i] == doctest::Approx(img.pixels[i]).epsilon(1e-12));
        }
    }
    SUBCASE("2x2 checker to 3x3 bilinear center") {
        Image img(2, 2, 1);
        img.at(0, 0) = 0.0;
        img.at(0, 1) = 1.0;
        img.at(1, 0) = 1.0;
        img.at(1, 1) = 0.0;
        const Tensor t = preprocess(img, 3, 3, 1.0);
        CHECK(t.values[4] == doctest::Approx(0.5));
    }
    SUBCASE("zero-area target errors") {
        Image img(2, 2, 1, 0.5);
        CHECK_THROWS_AS(preprocess(img, 0, 3), std::invalid_argument);
    }
    SUBCASE("channel-first layout") {
        Image img(2, 2, 3);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t x = 0; x < 2; ++x) img.at(y, x, c) = static_cast<double>(c);
        const Tensor t = preprocess(img, 2, 2, 1.0);
        REQUIRE(t.shape == std::vector<std::size_t>{3, 2, 2});
        CHECK(t.values[0] == 0.0);
        CHECK(t.values[4] == 1.0);
        CHECK(t.values[8] == 2.0);
    }
}

TEST_CASE("augment basics") {
    Image img(8, 8, 1);
    Rng fill(3);
    for (double& v : img.pixels) v = fill.uniform();

    SUBCASE("disabled pipeline is the identity") {
        AugmentPipeline p;
        p.flip_h = false;
        p.flip_v = false;
        p.rotation_factor = 0.0;
        p.zoom_factor = 0.0;
        Rng rng(1);
        const Image out = augment(img, p, rng);
        CHECK(out.pixels == img.pixels);
    }
    SUBCASE("horizontal flip is an involution") {
        CHECK(flip_horizontal(flip_horizontal(img)).pixels == img.pixels);
        CHECK(flip_vertical(flip_vertical(img)).pixels == img.pixels);
    }
    SUBCASE("rotation draws stay inside the factor bound") {
        AugmentPipeline p;
        p.flip_h = false;
        p.flip_v = false;
        p.rotation_factor = 0.2;
        p.zoom_factor = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            const Image out = augment(img, p, rng);
            Rng replay(seed);
            const double angle = replay.uniform(-0.2 * 360.0, 0.2 * 360.0);
            CHECK(std::abs(angle) <= 72.0);
            const Image expected = rotate_zoom(img, angle, 1.0);
            CHECK(out.pixels == expected.pixels);
        }
    }
    SUBCASE("output range stays in [0,1]") {
        AugmentPipeline p;
        p.rotation_factor = 0.2;
        p.zoom_factor = 0.2;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            const Image out = augment(img, p, rng);
            REQUIRE(out.height == img.height);
            REQUIRE(out.width == img.width);
            for (double v : out.pixels) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("manifest round trip") {
    SyntheticConfig cfg;
    cfg.n_normal = 5;
    cfg.n_defect = 5;
    cfg.confusable_fraction = 0.2;
    cfg.seed = 3;
    const Dataset d = generate_synthetic(cfg);
    const fs::path dir = fresh_dir("manifest");
    save_manifest(d, dir.string());
    const Dataset back = load_manifest((dir / "manifest.csv").string());
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.items[i].label == d.items[i].label);
        CHECK(back.items[i].raw_label == d.items[i].raw_label);
        CHECK(back.items[i].confusable == d.items[i].confusable);
        // 8-bit quantization on disk
        for (std::size_t p = 0; p < d.items[i].pixels.pixels.size(); ++p) {
            CHECK(back.items[i].pixels.pixels[p] / 255.0 ==
                  doctest::Approx(d.items[i].pixels.pixels[p]).epsilon(0.01));
        }
    }
}
