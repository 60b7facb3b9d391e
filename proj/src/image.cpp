#include "ensemblefit/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <png.h>

namespace ensemblefit {

namespace {

int next_pgm_token(std::istream& in) {
    // skips whitespace and '#' comment lines, returns the next integer
    int c = in.get();
    while (in) {
        if (c == '#') {
            while (in && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (!in) throw std::runtime_error("truncated PGM header");
    int value = 0;
    while (in && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

std::string lower_ext(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext;
}

} // namespace

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') {
        throw std::runtime_error("'" + path + "' is not a binary PGM (P5)");
    }
    const int w = next_pgm_token(in);
    const int h = next_pgm_token(in);
    const int maxval = next_pgm_token(in);
    if (w <= 0 || h <= 0) throw std::runtime_error("'" + path + "' has invalid dimensions");
    if (maxval != 255) {
        throw std::runtime_error("'" + path + "': only 8-bit PGM supported (maxval " +
                                 std::to_string(maxval) + ")");
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("'" + path + "' truncated pixel data");
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), 1);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<double>(raw[i]);
    return img;
}

void write_pgm(const Image& img, const std::string& path) {
    if (img.channels != 1) {
        throw std::runtime_error("write_pgm: grayscale image required, got " +
                                 std::to_string(img.channels) + " channels");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double v = std::clamp(img.pixels[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

Image read_png(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw std::runtime_error("cannot decode '" + path + "': " + png.message);
    }
    const bool gray = PNG_IMAGE_PIXEL_CHANNELS(png.format) == 1;
    png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> raw(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw std::runtime_error("cannot decode '" + path + "': " + msg);
    }
    Image img(png.height, png.width, gray ? 1 : 3);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<double>(raw[i]);
    return img;
}

Image read_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "pgm") return read_pgm(path);
    if (ext == "png") return read_png(path);
    throw std::runtime_error("unsupported image format '" + path + "' (expected .png or .pgm)");
}

Image bilinear_resize(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (img.empty()) throw std::invalid_argument("bilinear_resize: empty image");
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("bilinear_resize: zero-area target");
    if (out_h == img.height && out_w == img.width) return img;

    Image out(out_h, out_w, img.channels);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = cy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = cx - static_cast<double>(x0);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({img.channels, img.height, img.width});
    std::size_t i = 0;
    for (std::size_t c = 0; c < img.channels; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x) t.values[i++] = img.at(y, x, c);
    return t;
}

Tensor preprocess(const Image& img, std::size_t target_h, std::size_t target_w, double rescale) {
    if (img.empty()) throw std::invalid_argument("preprocess: empty image");
    if (target_h == 0 || target_w == 0) throw std::invalid_argument("preprocess: zero-area target");
    Image resized = bilinear_resize(img, target_h, target_w);
    Tensor t = image_to_tensor(resized);
    if (rescale != 1.0) {
        for (double& v : t.values) v *= rescale;
    }
    return t;
}

} // namespace ensemblefit
