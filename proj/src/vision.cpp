#include "avx/vision.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>

namespace avx::AVX_ABI_NS {

Image read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw FormatError(path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw FormatError(path.string() + ": " + img.message);
    }
    Image out;
    out.height = static_cast<int>(img.height);
    out.width = static_cast<int>(img.width);
    out.rgb.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) out.rgb[i] = static_cast<float>(buf[i]) / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(img.rgb.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw std::runtime_error(path.string() + ": " + pi.message);
    }
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6") throw FormatError(path.string() + ": only binary PPM (P6) is supported");
    auto next_int = [&]() {
        is >> std::ws;
        while (is.peek() == '#') {
            std::string line;
            std::getline(is, line);
            is >> std::ws;
        }
        int v = -1;
        if (!(is >> v)) throw FormatError(path.string() + ": malformed PPM header");
        return v;
    };
    Image img;
    img.width = next_int();
    img.height = next_int();
    const int maxval = next_int();
    if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
        throw FormatError(path.string() + ": unsupported PPM geometry or depth");
    }
    is.get();
    std::vector<unsigned char> buf(static_cast<size_t>(img.width) * img.height * 3);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
        throw FormatError(path.string() + ": truncated PPM payload");
    }
    img.rgb.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) img.rgb[i] = static_cast<float>(buf[i]) / static_cast<float>(maxval);
    return img;
}

Image read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm") return read_ppm(path);
    throw UnsupportedError(path.string() + ": unsupported image type");
}

std::filesystem::path frame_filename(int index, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%06d", index);
    return std::string(buf) + ext;
}

VideoClip load_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("frame directory not found: " + dir.string());
    static const std::regex pattern(R"(frame_(\d+)\.(png|ppm))");
    std::map<long, std::filesystem::path> ordered;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const auto name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) ordered[std::stol(m[1].str())] = entry.path();
    }
    VideoClip clip;
    for (const auto& [idx, p] : ordered) clip.frames.push_back(read_image(p));
    if (clip.frames.empty()) throw ContractError("no frames in " + dir.string());
    for (const auto& f : clip.frames) {
        if (f.height != clip.frames[0].height || f.width != clip.frames[0].width) {
            throw FormatError(dir.string() + ": frames differ in size");
        }
    }
    return clip;
}

std::vector<int> sample_frame_indices(int total, int count) {
    if (total < 1) throw ContractError("cannot sample from an empty clip");
    if (count < 1) throw ContractError("frame count must be at least 1");
    std::vector<int> idx(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        const auto i = static_cast<int>((static_cast<int64_t>(k) * total) / count);
        idx[static_cast<size_t>(k)] = std::min(i, total - 1);
    }
    return idx;
}

VideoClip sample_frames(const VideoClip& clip, int count) {
    VideoClip out;
    out.fps = clip.fps;
    for (int i : sample_frame_indices(static_cast<int>(clip.frames.size()), count)) {
        out.frames.push_back(clip.frames[static_cast<size_t>(i)]);
    }
    return out;
}

VisionEncoder VisionEncoder::create(ParameterSet& set, const VisionEncoderConfig& cfg, const Initializer& init) {
    if (cfg.patch < 1 || cfg.image_size < cfg.patch) throw ConfigError("image smaller than one patch");
    if (cfg.d_model % cfg.n_heads != 0) throw ConfigError("vision d_model must be divisible by n_heads");
    VisionEncoder e;
    e.cfg = cfg;
    const int64_t d = cfg.d_model;
    const int64_t patch_dim = int64_t{cfg.patch} * cfg.patch * 3;
    e.patch_w = set.add("vision.patch.w", init.normal("vision.patch.w", {patch_dim, d}, 0.1));
    e.patch_b = set.add("vision.patch.b", Tensor::zeros({d}));
    e.pos = set.add("vision.pos", init.normal("vision.pos", {cfg.patches(), d}, 0.02));
    for (int l = 0; l < cfg.n_layers; ++l) {
        e.layers.push_back(make_block(set, "vision.layers." + std::to_string(l), d, 4 * d, init));
    }
    e.ln_g = set.add("vision.ln_post.g", Tensor::full({d}, 1));
    e.ln_b = set.add("vision.ln_post.b", Tensor::zeros({d}));
    return e;
}

Tensor patchify(const Image& img, const VisionEncoderConfig& cfg) {
    if (img.height != cfg.image_size || img.width != cfg.image_size) {
        throw ConfigError("frame is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          ", encoder expects " + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size));
    }
    if (!cfg.crop_remainder && cfg.image_size % cfg.patch != 0) {
        throw ConfigError("image size " + std::to_string(cfg.image_size) + " not divisible by patch " +
                          std::to_string(cfg.patch));
    }
    const int g = cfg.grid();
    const int pd = cfg.patch * cfg.patch * 3;
    std::vector<Scalar> out(static_cast<size_t>(g) * g * pd);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            Scalar* dst = out.data() + static_cast<ptrdiff_t>(gy * g + gx) * pd;
            for (int py = 0; py < cfg.patch; ++py)
                for (int px = 0; px < cfg.patch; ++px)
                    for (int c = 0; c < 3; ++c)
                        *dst++ = img.at(gy * cfg.patch + py, gx * cfg.patch + px, c);
        }
    return Tensor::from({int64_t{g} * g, pd}, std::move(out));
}

Tensor encode_frame(const Image& img, const VisionEncoder& enc) {
    Tensor h = linear(patchify(img, enc.cfg), enc.patch_w, enc.patch_b);
    if (enc.cfg.use_positions) h = add(h, enc.pos);
    for (const auto& layer : enc.layers) h = block_forward(layer, h, enc.cfg.n_heads, {});
    return layer_norm(h, enc.ln_g, enc.ln_b);
}

FrameFeatureGrid encode_clip(const VideoClip& sampled, const VisionEncoder& enc) {
    if (sampled.frames.empty()) throw ContractError("no frames to encode");
    std::vector<Tensor> per_frame;
    for (const auto& f : sampled.frames) per_frame.push_back(encode_frame(f, enc));
    FrameFeatureGrid g;
    g.frames = static_cast<int>(per_frame.size());
    g.patches = static_cast<int>(per_frame.front().rows());
    g.features = concat_rows(per_frame);
    return g;
}

VideoTokens pool_spatiotemporal(const FrameFeatureGrid& g) {
    const int N = g.frames, P = g.patches;
    if (N < 1 || P < 1) throw ContractError("pooling needs at least one frame and one patch");
    if (g.features.rows() != int64_t{N} * P) throw DimensionError("feature grid rows do not equal N*P");
    RowMix mix(static_cast<size_t>(P + N));
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(N);
    const Scalar inv_p = Scalar(1) / static_cast<Scalar>(P);
    for (int p = 0; p < P; ++p)
        for (int n = 0; n < N; ++n) mix[static_cast<size_t>(p)].emplace_back(int64_t{n} * P + p, inv_n);
    for (int n = 0; n < N; ++n)
        for (int p = 0; p < P; ++p) mix[static_cast<size_t>(P + n)].emplace_back(int64_t{n} * P + p, inv_p);
    return {mix_rows(g.features, mix), P, N};
}

}  // namespace avx
