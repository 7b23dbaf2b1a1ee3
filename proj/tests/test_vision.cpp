#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include "avx/vision.hpp"
#include "avx/params.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace avx;
using Catch::Approx;
using testing_support::TempDir;

namespace {

Image gradient_image(int h, int w, float offset = 0.0f) {
    Image img;
    img.height = h;
    img.width = w;
    img.rgb.resize(static_cast<size_t>(h * w * 3));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.rgb[(size_t(y) * w + x) * 3 + c] = std::min(1.0f, offset + float(y * w + x + c) / float(h * w + 3));
    return img;
}

}  // namespace

TEST_CASE("PNG round trip keeps 8-bit values", "[vision]") {
    TempDir dir;
    const Image img = gradient_image(5, 7);
    write_png(dir / "a.png", img);
    const Image back = read_png(dir / "a.png");
    REQUIRE(back.height == 5);
    REQUIRE(back.width == 7);
    for (size_t i = 0; i < img.rgb.size(); ++i) CHECK(back.rgb[i] == Approx(img.rgb[i]).margin(0.5 / 255 + 1e-6));
}

TEST_CASE("binary PPM frames load", "[vision]") {
    TempDir dir;
    {
        std::ofstream os(dir / "f.ppm", std::ios::binary);
        os << "P6\n# comment\n2 1\n255\n";
        const unsigned char px[] = {255, 0, 0, 0, 0, 255};
        os.write(reinterpret_cast<const char*>(px), sizeof px);
    }
    const Image img = read_image(dir / "f.ppm");
    CHECK(img.width == 2);
    CHECK(img.height == 1);
    CHECK(img.at(0, 0, 0) == 1.0f);
    CHECK(img.at(0, 1, 2) == 1.0f);
    CHECK(img.at(0, 1, 0) == 0.0f);
    std::ofstream(dir / "x.gif") << "GIF89a";
    CHECK_THROWS_AS(read_image(dir / "x.gif"), UnsupportedError);
}

TEST_CASE("frame directories load in numeric order", "[vision]") {
    TempDir dir;
    // Index 10 would sort before 9 lexically without zero padding; write 9 and 10 to check numeric order.
    write_png(dir / "frame_10.png", gradient_image(4, 4, 0.5f));
    write_png(dir / "frame_9.png", gradient_image(4, 4, 0.0f));
    write_png(dir / "frame_000002.png", gradient_image(4, 4, 0.25f));
    std::ofstream(dir / "notes.txt") << "ignored";
    const VideoClip clip = load_frames(dir.path());
    REQUIRE(clip.frames.size() == 3);
    CHECK(clip.frames[0].rgb[0] == Approx(0.25f).margin(0.01));
    CHECK(clip.frames[1].rgb[0] == Approx(0.0f).margin(0.01));
    CHECK(clip.frames[2].rgb[0] == Approx(0.5f).margin(0.01));

    write_png(dir / "frame_11.png", gradient_image(4, 5));
    CHECK_THROWS_AS(load_frames(dir.path()), FormatError);
    CHECK(frame_filename(3) == "frame_000003.png");
}

TEST_CASE("uniform frame sampling", "[vision]") {
    CHECK(sample_frame_indices(10, 4) == std::vector<int>{0, 2, 5, 7});
    CHECK(sample_frame_indices(3, 5) == std::vector<int>{0, 0, 1, 1, 2});
    CHECK(sample_frame_indices(100, 100).back() == 99);
    CHECK_THROWS_AS(sample_frame_indices(0, 4), ContractError);
}

TEST_CASE("patchify lays out patches row-major", "[vision]") {
    VisionEncoderConfig cfg;
    cfg.image_size = 4;
    cfg.patch = 2;
    const Image img = gradient_image(4, 4);
    const Tensor p = patchify(img, cfg);
    REQUIRE(p.shape() == Shape{4, 12});
    // Patch 1 is the top-right block; its first pixel is (0, 2).
    CHECK(p.at(1, 0) == img.at(0, 2, 0));
    // Patch 2, second row of the patch, first column: pixel (3, 0), channel 1.
    CHECK(p.at(2, 6 + 1) == img.at(3, 0, 1));
}

TEST_CASE("remainder pixels are cropped at 384/14", "[vision]") {
    VisionEncoderConfig cfg;
    cfg.image_size = 384;
    cfg.patch = 14;
    CHECK(cfg.grid() == 27);
    CHECK(cfg.patches() == 729);
    const Tensor p = patchify(gradient_image(384, 384), cfg);
    CHECK(p.rows() == 729);
    cfg.crop_remainder = false;
    CHECK_THROWS_AS(patchify(gradient_image(384, 384), cfg), ConfigError);
    cfg.crop_remainder = true;
    CHECK_THROWS_AS(patchify(gradient_image(300, 300), cfg), ConfigError);
}

TEST_CASE("spatio-temporal pooling matches the double loop", "[vision]") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> nd(1, 8), pd(1, 16), dd(1, 8);
    std::normal_distribution<double> val;
    for (int trial = 0; trial < 25; ++trial) {
        const int N = nd(rng), P = pd(rng), d = dd(rng);
        std::vector<double> feats(static_cast<size_t>(N * P * d));
        for (auto& x : feats) x = val(rng);
        const Tensor t = Tensor::from({int64_t{N} * P, d}, std::vector<Scalar>(feats.begin(), feats.end()));
        const VideoTokens v = pool_spatiotemporal({N, P, t});
        REQUIRE(v.spatial == P);
        REQUIRE(v.temporal == N);
        const auto ref = oracle::brute_pool(feats, N, P, d);
        for (int r = 0; r < P + N; ++r)
            for (int c = 0; c < d; ++c) CHECK(v.embeddings.at(r, c) == Approx(ref[size_t(r)][size_t(c)]).margin(1e-5));
    }
    CHECK_THROWS_AS(pool_spatiotemporal({2, 3, Tensor::zeros({5, 2})}), DimensionError);
}

TEST_CASE("encode_clip yields one grid row per patch and frame", "[vision]") {
    ParameterSet set;
    VisionEncoderConfig cfg;
    const auto enc = VisionEncoder::create(set, cfg, Initializer(3));
    VideoClip clip;
    for (int i = 0; i < 3; ++i) clip.frames.push_back(gradient_image(8, 8, 0.1f * i));
    const auto g = encode_clip(clip, enc);
    CHECK(g.frames == 3);
    CHECK(g.patches == 4);
    CHECK(g.features.shape() == Shape{12, cfg.d_model});
}
