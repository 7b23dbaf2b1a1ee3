#pragma once

// Visual branch: frame IO, uniform frame sampling, a ViT-style patch encoder
// and spatial/temporal average pooling.

#include <filesystem>
#include <vector>

#include "avx/transformer.hpp"

namespace avx::AVX_ABI_NS {

struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> rgb;  // [H x W x 3], values in [0, 1]

    float at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);  // by extension

struct VideoClip {
    std::vector<Image> frames;
    double fps = 0;  // metadata only
};

// Loads frame_%06d.{png,ppm} files sorted by their numeric index.
VideoClip load_frames(const std::filesystem::path& dir);
std::filesystem::path frame_filename(int index, const std::string& ext = ".png");

// i_k = min(floor(k*T/N), T-1) for k in [0, N).
std::vector<int> sample_frame_indices(int total, int count);
VideoClip sample_frames(const VideoClip& clip, int count);

struct VisionEncoderConfig {
    int image_size = 8;
    int patch = 4;
    int d_model = 32;
    int n_layers = 1;
    int n_heads = 2;
    bool use_positions = true;
    // Crop the bottom/right remainder when image_size is not a multiple of patch.
    bool crop_remainder = true;

    int grid() const { return image_size / patch; }
    int patches() const { return grid() * grid(); }
};

struct VisionEncoder {
    VisionEncoderConfig cfg;
    Tensor patch_w, patch_b, pos;
    std::vector<BlockParams> layers;
    Tensor ln_g, ln_b;

    // Registers parameters under "vision.".
    static VisionEncoder create(ParameterSet& set, const VisionEncoderConfig& cfg, const Initializer& init);
};

// Non-overlapping patches flattened row-major as (py, px, channel).
Tensor patchify(const Image& img, const VisionEncoderConfig& cfg);
// Per-patch last hidden state [P x d_model]; no class token.
Tensor encode_frame(const Image& img, const VisionEncoder& enc);

struct FrameFeatureGrid {
    int frames = 0;   // N
    int patches = 0;  // P
    Tensor features;  // [(N * P) x d], frame-major
};

FrameFeatureGrid encode_clip(const VideoClip& sampled, const VisionEncoder& enc);

struct VideoTokens {
    Tensor embeddings;  // [(P + N) x d]: spatial tokens, then temporal tokens
    int spatial = 0;
    int temporal = 0;
    int count() const { return spatial + temporal; }
};

VideoTokens pool_spatiotemporal(const FrameFeatureGrid& g);

}  // namespace avx
