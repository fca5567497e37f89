#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "qlife/data.hpp"
#include "qlife/errors.hpp"
#include "qlife/image_io.hpp"
#include "qlife/layers.hpp"
#include "qlife/losses.hpp"
#include "qlife/optim.hpp"
#include "testutil.hpp"

using namespace qlife;
namespace fs = std::filesystem;

namespace {

data::SyntheticSpec small_spec(std::uint64_t seed = 1) {
    data::SyntheticSpec spec;
    spec.image_size = 32;
    spec.counts = {{{30, 30, 30}, {12, 12, 12}}};
    spec.seed = seed;
    return spec;
}

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("qlife-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Defect coverage read straight off the image: bright pixels outside the
// full-width stripe rows (a row counts as stripe when almost all of it is
// bright or when it is brighter than its neighbors by the artifact offset).
double bright_defect_fraction(const Tensor& image) {
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::size_t bright = 0;
    for (std::size_t y = 0; y < h; ++y) {
        std::size_t row_bright = 0;
        for (std::size_t x = 0; x < w; ++x) {
            if (image[y * w + x] > 0.85f) ++row_bright;
        }
        // Stripe rows are bright across the background too; defect blotches
        // never are. Count only rows that are not saturated end to end.
        bool is_stripe = true;
        for (std::size_t x = 0; x < w; ++x) {
            if (image[y * w + x] < 0.4f) {
                is_stripe = false;
                break;
            }
        }
        if (!is_stripe) bright += row_bright;
    }
    return static_cast<double>(bright) / static_cast<double>(h * w);
}

}  // namespace

TEST_CASE("generator reproduces the reference dataset shape exactly") {
    data::SyntheticSpec spec;
    spec.image_size = 16;  // smallest allowed; this test only counts samples
    spec.counts = {{{975, 294, 364}, {179, 21, 11}}};
    spec.seed = 3;
    data::Dataset ds = data::generate(spec);
    REQUIRE(ds.size() == 975 + 294 + 364 + 179 + 21 + 11);
    int counts[2][3] = {};
    for (const auto& s : ds.samples) ++counts[s.domain_id][s.class_id];
    CHECK(counts[0][0] == 975);
    CHECK(counts[0][1] == 294);
    CHECK(counts[0][2] == 364);
    CHECK(counts[1][0] == 179);
    CHECK(counts[1][1] == 21);
    CHECK(counts[1][2] == 11);
}

TEST_CASE("generation is bitwise deterministic per seed") {
    data::Dataset a = data::generate(small_spec(7));
    data::Dataset b = data::generate(small_spec(7));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.samples[i].image.size() == b.samples[i].image.size());
        CHECK(std::memcmp(a.samples[i].image.data(), b.samples[i].image.data(),
                          a.samples[i].image.size() * sizeof(float)) == 0);
    }
    data::Dataset c = data::generate(small_spec(8));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i) {
        any_diff = std::memcmp(a.samples[i].image.data(), c.samples[i].image.data(),
                               a.samples[i].image.size() * sizeof(float)) != 0;
    }
    CHECK(any_diff);
}

TEST_CASE("mean defect coverage is strictly ordered good < minor < damaged") {
    data::SyntheticSpec spec = small_spec(11);
    spec.counts = {{{60, 60, 60}, {40, 40, 40}}};
    data::Dataset ds = data::generate(spec);
    for (int domain = 0; domain < 2; ++domain) {
        double mean_frac[3] = {};
        int n[3] = {};
        for (const auto& s : ds.samples) {
            if (s.domain_id != domain) continue;
            mean_frac[s.class_id] += bright_defect_fraction(s.image);
            ++n[s.class_id];
        }
        for (int c = 0; c < 3; ++c) mean_frac[c] /= n[c];
        INFO("domain ", domain, ": ", mean_frac[0], " ", mean_frac[1], " ", mean_frac[2]);
        CHECK(mean_frac[0] < mean_frac[1]);
        CHECK(mean_frac[1] < mean_frac[2]);
    }
}

TEST_CASE("target images carry the line artifact and source images never do") {
    data::Dataset ds = data::generate(small_spec(13));
    auto stripe_rows = [](const Tensor& image) {
        const std::size_t h = image.dim(1), w = image.dim(2);
        int rows = 0;
        for (std::size_t y = 0; y < h; ++y) {
            // A stripe lifts the dark background; look at the frame columns.
            if (image[y * w] > 0.3f && image[y * w + (w - 1)] > 0.3f) ++rows;
        }
        return rows;
    };
    for (const auto& s : ds.samples) {
        if (s.domain_id == 1) {
            CHECK(stripe_rows(s.image) >= 4);
        } else {
            CHECK(stripe_rows(s.image) == 0);
        }
    }
}

TEST_CASE("impossible defect area is rejected") {
    data::SyntheticSpec spec = small_spec(1);
    spec.damaged_defect_lo = spec.damaged_defect_hi = 1.5f;
    CHECK_THROWS_AS(data::generate(spec), DataError);
}

TEST_CASE("png round trip preserves generated tensors exactly") {
    data::SyntheticSpec spec = small_spec(17);
    spec.counts = {{{3, 3, 3}, {2, 2, 2}}};
    data::Dataset ds = data::generate(spec);
    const fs::path dir = temp_dir("roundtrip");
    data::write_dataset(ds, dir.string());
    data::Dataset back = data::ingest(dir.string());
    REQUIRE(back.size() == ds.size());
    // Ingest orders by directory walk; match by id.
    for (const auto& orig : ds.samples) {
        bool found = false;
        for (const auto& got : back.samples) {
            if (got.id != orig.id) continue;
            found = true;
            CHECK(got.class_id == orig.class_id);
            CHECK(got.domain_id == orig.domain_id);
            REQUIRE(got.image.size() == orig.image.size());
            CHECK(std::memcmp(got.image.data(), orig.image.data(),
                              orig.image.size() * sizeof(float)) == 0);
        }
        CHECK(found);
    }
    fs::remove_all(dir);
}

TEST_CASE("ingest walks a 2x3 directory tree with correct labels") {
    const fs::path dir = temp_dir("tree");
    Tensor img = Tensor::full({1, 16, 16}, 0.5f);
    for (const auto& domain : data::kDomainNames) {
        for (const auto& cls : data::kClassNames) {
            fs::create_directories(dir / domain / cls);
            write_png_gray((dir / domain / cls / "a.png").string(), img);
        }
    }
    data::Dataset ds = data::ingest(dir.string());
    REQUIRE(ds.size() == 6);
    int seen[2][3] = {};
    for (const auto& s : ds.samples) ++seen[s.domain_id][s.class_id];
    for (int d = 0; d < 2; ++d) {
        for (int c = 0; c < 3; ++c) CHECK(seen[d][c] == 1);
    }
    fs::remove_all(dir);
}

TEST_CASE("unknown directory names and empty class directories are rejected") {
    const fs::path dir = temp_dir("badtree");
    fs::create_directories(dir / "weird-domain" / "good");
    CHECK_THROWS_AS(data::ingest(dir.string()), DataError);
    fs::remove_all(dir);

    const fs::path dir2 = temp_dir("emptyclass");
    fs::create_directories(dir2 / "source" / "good");
    CHECK_THROWS_AS(data::ingest(dir2.string()), DataError);
    fs::remove_all(dir2);
}

TEST_CASE("feature tables ingest as precomputed samples") {
    const fs::path dir = temp_dir("feats");
    const fs::path csv = dir / "features.csv";
    {
        std::ofstream out(csv);
        out << "f0,f1,f2,class,domain\n";
        out << "0.5,1.5,-2,good,source\n";
        out << "0.25,0,3.5,damaged,target\n";
    }
    data::Dataset ds = data::ingest(csv.string());
    REQUIRE(ds.size() == 2);
    CHECK(ds.samples[0].precomputed());
    CHECK(ds.samples[0].class_id == 0);
    CHECK(ds.samples[0].domain_id == 0);
    CHECK(ds.samples[1].class_id == 2);
    CHECK(ds.samples[1].domain_id == 1);
    CHECK(ds.samples[1].features[2] == doctest::Approx(3.5f));
    fs::remove_all(dir);
}

TEST_CASE("splits are stratified, disjoint and deterministic") {
    data::Dataset ds = data::generate(small_spec(19));
    data::DataSplit s1 = data::split(ds, 0.7, 0.0, 0.3, 5);
    data::DataSplit s2 = data::split(ds, 0.7, 0.0, 0.3, 5);
    CHECK(s1.train == s2.train);
    CHECK(s1.test == s2.test);
    CHECK(s1.val.empty());
    CHECK(s1.train.size() + s1.test.size() == ds.size());

    std::vector<char> seen(ds.size(), 0);
    for (int i : s1.train) seen[static_cast<std::size_t>(i)] += 1;
    for (int i : s1.test) seen[static_cast<std::size_t>(i)] += 1;
    for (char c : seen) CHECK(c == 1);

    // Stratification: per (domain, class), counts within one of exact.
    for (int d = 0; d < 2; ++d) {
        for (int c = 0; c < 3; ++c) {
            int total = 0, train = 0;
            for (std::size_t i = 0; i < ds.size(); ++i) {
                if (ds.samples[i].domain_id != d || ds.samples[i].class_id != c) continue;
                ++total;
            }
            for (int i : s1.train) {
                const auto& s = ds.samples[static_cast<std::size_t>(i)];
                if (s.domain_id == d && s.class_id == c) ++train;
            }
            CHECK(std::fabs(train - 0.7 * total) <= 1.0);
        }
    }
}

TEST_CASE("split rejects classes too small for a nonzero fraction") {
    data::SyntheticSpec spec = small_spec(23);
    spec.counts = {{{2, 1, 2}, {0, 0, 0}}};
    data::Dataset ds = data::generate(spec);
    CHECK_THROWS_AS(data::split(ds, 0.5, 0.25, 0.25, 1), DataError);
}

TEST_CASE("identity augmentation returns the original image twice") {
    data::Dataset ds = data::generate(small_spec(29));
    Rng rng(1);
    auto [v1, v2] = data::augment_pair(ds.samples[0], data::AugmentConfig::identity(), rng);
    CHECK(std::memcmp(v1.data(), ds.samples[0].image.data(), v1.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(v2.data(), ds.samples[0].image.data(), v2.size() * sizeof(float)) == 0);
}

TEST_CASE("augmentation is deterministic per seed and in-bounds under fuzz") {
    data::Dataset ds = data::generate(small_spec(31));
    data::AugmentConfig cfg;  // defaults: crop, flip, jitter
    {
        Rng a(9), b(9);
        Tensor va = data::augment_view(ds.samples[3].image, cfg, a);
        Tensor vb = data::augment_view(ds.samples[3].image, cfg, b);
        CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(float)) == 0);
    }
    Rng rng(33);
    for (int i = 0; i < 200; ++i) {
        const auto& s = ds.samples[static_cast<std::size_t>(rng.below(ds.size()))];
        Tensor v = data::augment_view(s.image, cfg, rng);
        CHECK(v.same_shape(s.image));
        bool in_range = true;
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (v[k] < 0.0f || v[k] > 1.0f || !std::isfinite(v[k])) in_range = false;
        }
        CHECK(in_range);
    }
}

TEST_CASE("precomputed samples cannot be augmented") {
    data::LabeledSample s;
    s.features = Tensor({4});
    s.id = "p0";
    Rng rng(0);
    CHECK_THROWS_AS(data::augment_pair(s, data::AugmentConfig(), rng), DataError);
}

TEST_CASE("a linear pixel probe separates the source classes") {
    data::SyntheticSpec spec = small_spec(37);
    spec.counts = {{{70, 70, 70}, {0, 0, 0}}};
    data::Dataset ds = data::generate(spec);
    const std::size_t dim = static_cast<std::size_t>(spec.image_size) * spec.image_size;

    // Flatten pixels and fit a linear softmax classifier.
    Tensor x({ds.size(), dim});
    std::vector<int> y(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::copy(ds.samples[i].image.data(), ds.samples[i].image.data() + dim, x.data() + i * dim);
        y[i] = ds.samples[i].class_id;
    }
    Rng rng(41);
    Dense probe(dim, 3);
    probe.init_kaiming(rng);
    SgdOptimizer opt(0.1f, 0.9f);
    for (int step = 0; step < 300; ++step) {
        probe.zero_grads();
        Loss ce = cross_entropy(probe.forward(x, Mode::train), y);
        probe.backward(ce.grad);
        auto params = probe.params();
        auto grads = probe.grads();
        opt.step(params, grads);
    }
    Tensor logits = probe.infer(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const float* row = logits.data() + i * 3;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < 3; ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        if (static_cast<int>(arg) == y[i]) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(ds.size());
    INFO("pixel probe accuracy ", acc);
    CHECK(acc >= 0.8);
}
