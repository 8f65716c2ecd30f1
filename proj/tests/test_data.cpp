#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "dpap/data.hpp"
#include "test_util.hpp"

using namespace dpap;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

/// Hand-built IDX byte stream: one 2x3 image with the given pixel bytes.
std::vector<unsigned char> tiny_idx_images(const std::vector<unsigned char>& pixels, int n,
                                           int h, int w) {
    std::vector<unsigned char> b;
    detail::write_be32(b, 0x00000803u);
    detail::write_be32(b, static_cast<std::uint32_t>(n));
    detail::write_be32(b, static_cast<std::uint32_t>(h));
    detail::write_be32(b, static_cast<std::uint32_t>(w));
    b.insert(b.end(), pixels.begin(), pixels.end());
    return b;
}

std::vector<unsigned char> tiny_idx_labels(const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> b;
    detail::write_be32(b, 0x00000801u);
    detail::write_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

std::vector<unsigned char> gzip_bytes(const std::vector<unsigned char>& in) {
    z_stream zs{};
    REQUIRE(deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8,
                         Z_DEFAULT_STRATEGY) == Z_OK);
    std::vector<unsigned char> out(in.size() + 256);
    zs.next_in = const_cast<unsigned char*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    REQUIRE(deflate(&zs, Z_FINISH) == Z_STREAM_END);
    out.resize(out.size() - zs.avail_out);
    deflateEnd(&zs);
    return out;
}

}  // namespace

TEST_CASE("idx loader parses images and labels with 1/255 scaling") {
    const auto img = tiny_idx_images({0, 255, 128, 1, 254, 64}, 1, 2, 3);
    const auto lab = tiny_idx_labels({7});
    const auto ip = temp_path("dpap_idx_img.bin");
    const auto lp = temp_path("dpap_idx_lab.bin");
    write_file_bytes(ip, img);
    write_file_bytes(lp, lab);

    const auto ds = load_mnist_idx<double>(ip, lp);
    CHECK(ds.size() == 1);
    CHECK(ds.images.shape() == Shape{1, 1, 2, 3});
    CHECK(ds.images(0, 0, 0, 0) == 0.0);
    CHECK(ds.images(0, 0, 0, 1) == 1.0);
    CHECK(ds.images(0, 0, 0, 2) == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
    CHECK(ds.labels[0] == 7);
}

TEST_CASE("idx loader accepts gzip-compressed files transparently") {
    const auto img = tiny_idx_images({10, 20, 30, 40}, 1, 2, 2);
    const auto lab = tiny_idx_labels({3});
    const auto ip = temp_path("dpap_idx_img.gz");
    const auto lp = temp_path("dpap_idx_lab.gz");
    write_file_bytes(ip, gzip_bytes(img));
    write_file_bytes(lp, gzip_bytes(lab));

    const auto ds = load_mnist_idx<float>(ip, lp);
    CHECK(ds.images(0, 0, 1, 1) == doctest::Approx(40.0f / 255.0f));
    CHECK(ds.labels[0] == 3);
}

TEST_CASE("idx loader rejects bad magic, truncation, and count mismatch") {
    auto img = tiny_idx_images({1, 2, 3, 4}, 1, 2, 2);
    auto lab = tiny_idx_labels({0});
    const auto ip = temp_path("dpap_idx_bad_img.bin");
    const auto lp = temp_path("dpap_idx_bad_lab.bin");

    SUBCASE("bad magic reports the offending value") {
        img[2] = 0x09;
        write_file_bytes(ip, img);
        CHECK_THROWS_WITH_AS(load_idx_bytes(ip, 0x00000803u),
                             doctest::Contains("bad magic at byte 0"), std::invalid_argument);
    }
    SUBCASE("truncated payload reports sizes") {
        img.pop_back();
        write_file_bytes(ip, img);
        CHECK_THROWS_WITH_AS(load_idx_bytes(ip, 0x00000803u),
                             doctest::Contains("does not match declared size"),
                             std::invalid_argument);
    }
    SUBCASE("truncated header reports the wanted offset") {
        img.resize(6);
        write_file_bytes(ip, img);
        CHECK_THROWS_WITH_AS(load_idx_bytes(ip, 0x00000803u),
                             doctest::Contains("truncated"), std::invalid_argument);
    }
    SUBCASE("image/label count mismatch is rejected") {
        write_file_bytes(ip, img);
        lab = tiny_idx_labels({0, 1});
        write_file_bytes(lp, lab);
        CHECK_THROWS_WITH_AS((load_mnist_idx<double>(ip, lp)),
                             doctest::Contains("does not match label count"),
                             std::invalid_argument);
    }
}

TEST_CASE("loaded idx data re-serializes to the original bytes") {
    Rng rng(99);
    std::vector<unsigned char> pixels(3 * 28 * 28);
    for (auto& p : pixels) p = static_cast<unsigned char>(rng.uniform_int(256));
    const auto img = tiny_idx_images(pixels, 3, 28, 28);
    const auto lab = tiny_idx_labels({4, 0, 9});
    const auto ip = temp_path("dpap_idx_rt_img.bin");
    const auto lp = temp_path("dpap_idx_rt_lab.bin");
    write_file_bytes(ip, img);
    write_file_bytes(lp, lab);

    SUBCASE("double precision") {
        const auto ds = load_mnist_idx<double>(ip, lp);
        const auto [img2, lab2] = serialize_mnist_idx(ds);
        CHECK(img2 == img);
        CHECK(lab2 == lab);
    }
    SUBCASE("single precision") {
        const auto ds = load_mnist_idx<float>(ip, lp);
        const auto [img2, lab2] = serialize_mnist_idx(ds);
        CHECK(img2 == img);
        CHECK(lab2 == lab);
    }
}

TEST_CASE("cifar binary records split into label and three planes") {
    std::vector<unsigned char> rec(2 * (1 + 3072));
    rec[0] = 5;                    // label of record 0
    rec[1] = 255;                  // R plane, pixel (0,0)
    rec[1 + 1024] = 51;            // G plane, pixel (0,0)
    rec[1 + 2048 + 33] = 102;      // B plane, pixel (1,1)
    rec[3073] = 2;                 // label of record 1
    rec[3073 + 1 + 3071] = 204;    // last pixel of record 1
    const auto p = temp_path("dpap_cifar.bin");
    write_file_bytes(p, rec);

    const auto ds = load_cifar_batches<double>({p});
    CHECK(ds.size() == 2);
    CHECK(ds.images.shape() == Shape{2, 3, 32, 32});
    CHECK(ds.labels == std::vector<int>{5, 2});
    CHECK(ds.images(0, 0, 0, 0) == 1.0);
    CHECK(ds.images(0, 1, 0, 0) == doctest::Approx(51.0 / 255.0));
    CHECK(ds.images(0, 2, 1, 1) == doctest::Approx(102.0 / 255.0));
    CHECK(ds.images(1, 2, 31, 31) == doctest::Approx(204.0 / 255.0));

    SUBCASE("partial record is rejected") {
        rec.pop_back();
        write_file_bytes(p, rec);
        CHECK_THROWS_WITH_AS((load_cifar_batches<double>({p})),
                             doctest::Contains("record"), std::invalid_argument);
    }
}

TEST_CASE("stratified subset balances classes and stays deterministic") {
    const auto full = synth_digits<double>(400, 7);
    const auto [train, test] = subset(full, 100, 50, 11);

    CHECK(train.size() == 100);
    CHECK(test.size() == 50);
    std::map<int, int> tr_counts, te_counts;
    for (int l : train.labels) tr_counts[l]++;
    for (int l : test.labels) te_counts[l]++;
    for (int c = 0; c < 10; ++c) {
        CHECK(tr_counts[c] == 10);
        CHECK(te_counts[c] == 5);
    }

    SUBCASE("same seed reproduces the same bytes") {
        const auto [train2, test2] = subset(full, 100, 50, 11);
        CHECK(testutil::max_abs_diff(train.images, train2.images) == 0.0);
        CHECK(train.labels == train2.labels);
        CHECK(test.labels == test2.labels);
    }
    SUBCASE("different seed picks a different selection") {
        const auto [train3, test3] = subset(full, 100, 50, 12);
        CHECK(testutil::max_abs_diff(train.images, train3.images) > 0.0);
    }
    SUBCASE("train and test are disjoint") {
        // Fingerprint each image by its byte content; the synthetic samples
        // are pairwise distinct under jitter.
        std::set<std::uint64_t> seen;
        auto fp = [&](const LabeledDataset<double>& d, int i) {
            std::uint64_t h = 0;
            for (int j = 0; j < 784; ++j)
                h = splitmix64(h ^ static_cast<std::uint64_t>(std::lround(
                                       d.images[static_cast<size_t>(i) * 784 + j] * 255.0)));
            return h;
        };
        for (int i = 0; i < train.size(); ++i) CHECK(seen.insert(fp(train, i)).second);
        for (int i = 0; i < test.size(); ++i) CHECK(seen.insert(fp(test, i)).second);
    }
}

TEST_CASE("subset of the full dataset preserves content order") {
    const auto full = synth_digits<double>(60, 3);
    const auto [train, test] = subset(full, 60, 0, 5);
    CHECK(train.size() == 60);
    CHECK(test.size() == 0 + 0);
    CHECK(testutil::max_abs_diff(train.images, full.images) == 0.0);
    CHECK(train.labels == full.labels);
}

TEST_CASE("subset rejects requests a class cannot satisfy") {
    auto full = synth_digits<double>(40, 3);
    CHECK_THROWS_WITH_AS(subset(full, 30, 20, 1), doctest::Contains("exceeds"),
                         std::invalid_argument);
    // 40 samples hold 4 per class; asking 35 train needs 4 from class 0 plus
    // test draws that class 0 cannot cover.
    CHECK_THROWS_WITH_AS(subset(full, 35, 5, 1), doctest::Contains("class"),
                         std::invalid_argument);
}

TEST_CASE("poisson encoding is binary with the requested rate") {
    Tensor<double> rates({2, 2});
    rates(0, 0) = 0.0;
    rates(0, 1) = 1.0;
    rates(1, 0) = 0.5;
    rates(1, 1) = 0.25;
    const int T = 10000;
    const auto spikes = synth_poisson(rates, T, 42);
    REQUIRE(static_cast<int>(spikes.size()) == T);
    double sum_half = 0, sum_quarter = 0;
    for (const auto& s : spikes) {
        CHECK(s(0, 0) == 0.0);
        CHECK(s(0, 1) == 1.0);
        CHECK((s(1, 0) == 0.0 || s(1, 0) == 1.0));
        sum_half += s(1, 0);
        sum_quarter += s(1, 1);
    }
    CHECK(sum_half / T == doctest::Approx(0.5).epsilon(0.04));
    CHECK(sum_quarter / T == doctest::Approx(0.25).epsilon(0.08));

    SUBCASE("rates outside the unit interval are rejected") {
        rates(0, 0) = 1.5;
        CHECK_THROWS_WITH_AS(synth_poisson(rates, 4, 1), doctest::Contains("outside [0,1]"),
                             std::invalid_argument);
    }
    SUBCASE("same seed gives identical spike trains") {
        const auto again = synth_poisson(rates, T, 42);
        for (int t = 0; t < T; t += 997)
            CHECK(testutil::max_abs_diff(spikes[t], again[t]) == 0.0);
    }
}

TEST_CASE("one-hot targets place a single unit mass") {
    const auto y = one_hot<double>({2, 0}, 4);
    CHECK(y.shape() == Shape{2, 4});
    CHECK(y(0, 2) == 1.0);
    CHECK(y(1, 0) == 1.0);
    double total = 0;
    for (size_t i = 0; i < y.size(); ++i) total += y[i];
    CHECK(total == 2.0);
    CHECK_THROWS_WITH_AS((one_hot<double>({4}, 4)), doctest::Contains("outside"),
                         std::invalid_argument);
}

TEST_CASE("encode_batch covers constant and bernoulli modes") {
    const auto ds = synth_digits<double>(8, 21);
    const auto [batch, labels] = gather_rows(ds, {0, 1, 2, 3, 4, 5, 6, 7}, 0, 4);
    CHECK(batch.shape() == Shape{4, 1, 28, 28});

    const auto constant = encode_batch(batch, labels, 10, 8, false, 1);
    CHECK(constant.constant);
    CHECK(constant.drive.size() == 1);
    CHECK(testutil::max_abs_diff(constant.at(0), batch) == 0.0);
    CHECK(testutil::max_abs_diff(constant.at(7), batch) == 0.0);
    CHECK(constant.targets.shape() == Shape{4, 10});

    const auto spiky = encode_batch(batch, labels, 10, 8, true, 1);
    CHECK_FALSE(spiky.constant);
    CHECK(spiky.drive.size() == 8);
    for (int t = 0; t < 8; ++t)
        for (size_t i = 0; i < spiky.at(t).size(); ++i)
            CHECK((spiky.at(t)[i] == 0.0 || spiky.at(t)[i] == 1.0));
    CHECK(testutil::max_abs_diff(spiky.targets, constant.targets) == 0.0);
}

TEST_CASE("synthetic digits are reproducible, bounded, and idx-clean") {
    const auto a = synth_digits<double>(50, 123);
    const auto b = synth_digits<double>(50, 123);
    CHECK(testutil::max_abs_diff(a.images, b.images) == 0.0);
    CHECK(a.labels == b.labels);

    for (size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i] >= 0.0);
        CHECK(a.images[i] <= 1.0);
    }
    for (int i = 0; i < 50; ++i) CHECK(a.labels[i] == i % 10);

    // Every image carries ink, and byte quantization is exact so the IDX
    // round trip reproduces the generated tensor bit for bit.
    for (int i = 0; i < 50; ++i) {
        double ink = 0;
        for (int j = 0; j < 784; ++j) ink += a.images[static_cast<size_t>(i) * 784 + j];
        CHECK(ink > 5.0);
    }
    const auto [img_bytes, lab_bytes] = serialize_mnist_idx(a);
    const auto ip = temp_path("dpap_synth_img.bin");
    const auto lp = temp_path("dpap_synth_lab.bin");
    write_file_bytes(ip, img_bytes);
    write_file_bytes(lp, lab_bytes);
    const auto back = load_mnist_idx<double>(ip, lp);
    CHECK(testutil::max_abs_diff(back.images, a.images) == 0.0);
    CHECK(back.labels == a.labels);
}

TEST_CASE("dataset fingerprint tracks content") {
    const auto a = synth_digits<double>(30, 9);
    const auto b = synth_digits<double>(30, 9);
    auto c = synth_digits<double>(30, 10);
    CHECK(dataset_fingerprint(a) == dataset_fingerprint(b));
    CHECK(dataset_fingerprint(a) != dataset_fingerprint(c));
    c = a;
    c.labels[0] = (c.labels[0] + 1) % 10;
    CHECK(dataset_fingerprint(a) != dataset_fingerprint(c));
}

TEST_CASE("gather_rows follows the given order") {
    const auto ds = synth_digits<double>(10, 4);
    const std::vector<int> order = {9, 0, 3, 5, 1, 2, 4, 6, 7, 8};
    const auto [batch, labels] = gather_rows(ds, order, 1, 4);
    CHECK(batch.dim(0) == 3);
    CHECK(labels == std::vector<int>{0, 3, 5});
    for (int j = 0; j < 784; ++j)
        CHECK(batch[j] == ds.images[static_cast<size_t>(0) * 784 + j]);
}
