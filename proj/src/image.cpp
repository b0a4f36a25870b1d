#include "oavm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace oavm {

Image::Image(int h, int w, int c) : height(h), width(w), channels(c) {
    if (h <= 0 || w <= 0) {
        throw std::invalid_argument("Image dimensions must be positive, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    if (c != 1 && c != 3) {
        throw std::invalid_argument("Image channels must be 1 or 3, got " + std::to_string(c));
    }
    data.assign(static_cast<std::size_t>(h) * w * c, 0.0);
}

Image Image::constant(int h, int w, int c, double value) {
    Image img(h, w, c);
    std::fill(img.data.begin(), img.data.end(), value);
    return img;
}

// --- Netpbm ------------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::istream& in, const std::string& what) {
    auto pos = in.tellg();
    std::string offset = pos < 0 ? "end of file" : "byte " + std::to_string(static_cast<long long>(pos));
    throw std::runtime_error(path + ": " + what + " at " + offset);
}

// whitespace-and-comment-skipping integer read, Netpbm header style
int read_header_int(const std::string& path, std::istream& in, const std::string& field) {
    int ch = in.peek();
    while (ch != EOF && (std::isspace(ch) || ch == '#')) {
        if (ch == '#') {
            std::string comment;
            std::getline(in, comment);
        } else {
            in.get();
        }
        ch = in.peek();
    }
    long long value = 0;
    if (!(in >> value)) parse_fail(path, in, "malformed " + field);
    if (value <= 0 || value > 1 << 20) parse_fail(path, in, field + " out of range");
    return static_cast<int>(value);
}

}  // namespace

Image read_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels;
    if (magic[0] == 'P' && magic[1] == '5') {
        channels = 1;
    } else if (magic[0] == 'P' && magic[1] == '6') {
        channels = 3;
    } else {
        parse_fail(path, in, "bad magic (want P5 or P6)");
    }

    const int width = read_header_int(path, in, "width");
    const int height = read_header_int(path, in, "height");
    const int maxval = read_header_int(path, in, "maxval");
    if (maxval != 255 && maxval != 65535) parse_fail(path, in, "unsupported maxval");
    in.get();  // the single whitespace byte before the payload

    Image img(height, width, channels);
    const std::size_t samples = img.numel();
    if (maxval == 255) {
        std::vector<unsigned char> raw(samples);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(samples));
        if (static_cast<std::size_t>(in.gcount()) != samples) {
            parse_fail(path, in, "truncated payload");
        }
        for (std::size_t i = 0; i < samples; ++i) img.data[i] = raw[i] / 255.0;
    } else {
        std::vector<unsigned char> raw(samples * 2);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(samples * 2));
        if (static_cast<std::size_t>(in.gcount()) != samples * 2) {
            parse_fail(path, in, "truncated payload");
        }
        for (std::size_t i = 0; i < samples; ++i) {
            const int v = (raw[2 * i] << 8) | raw[2 * i + 1];  // big-endian
            img.data[i] = v / 65535.0;
        }
    }
    return img;
}

void write_image(const Image& img, const std::string& path, int maxval) {
    if (maxval != 255 && maxval != 65535) {
        throw std::invalid_argument("write_image: maxval must be 255 or 65535");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << (img.channels == 1 ? "P5" : "P6") << '\n'
        << img.width << ' ' << img.height << '\n'
        << maxval << '\n';
    for (double v : img.data) {
        const long q = std::lround(std::clamp(v, 0.0, 1.0) * maxval);
        if (maxval == 255) {
            out.put(static_cast<char>(q));
        } else {
            out.put(static_cast<char>(q >> 8));
            out.put(static_cast<char>(q & 0xFF));
        }
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

ImageDims read_image_dims(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    ImageDims dims;
    if (magic[0] == 'P' && magic[1] == '5') {
        dims.channels = 1;
    } else if (magic[0] == 'P' && magic[1] == '6') {
        dims.channels = 3;
    } else {
        parse_fail(path, in, "bad magic (want P5 or P6)");
    }
    dims.width = read_header_int(path, in, "width");
    dims.height = read_header_int(path, in, "height");
    return dims;
}

// --- resampling and morphology ----------------------------------------------

Image resample_bilinear(const Image& img, int new_h, int new_w) {
    if (new_h <= 0 || new_w <= 0) {
        throw std::invalid_argument("resample_bilinear: target dimensions must be positive");
    }
    if (new_h == img.height && new_w == img.width) return img;

    Image out(new_h, new_w, img.channels);
    const double sy = static_cast<double>(img.height) / new_h;
    const double sx = static_cast<double>(img.width) / new_w;
    for (int y = 0; y < new_h; ++y) {
        const double src_y = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(std::floor(src_y));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = src_y - y0;
        for (int x = 0; x < new_w; ++x) {
            const double src_x = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(std::floor(src_x));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = src_x - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image binarize(const Image& img, double thresh) {
    if (img.channels != 1) {
        throw std::invalid_argument("binarize: expected a single-channel image, got " +
                                    std::to_string(img.channels) + " channels");
    }
    Image out(img.height, img.width, 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        out.data[i] = img.data[i] >= thresh ? 1.0 : 0.0;
    }
    return out;
}

bool is_binary(const Image& img) {
    for (double v : img.data) {
        if (v != 0.0 && v != 1.0) return false;
    }
    return true;
}

Image dilate(const Image& mask, int ks) {
    if (mask.channels != 1) {
        throw std::invalid_argument("dilate: expected a single-channel mask");
    }
    if (ks < 1 || ks % 2 == 0) {
        throw std::invalid_argument("dilate: kernel size must be odd and >= 1, got " +
                                    std::to_string(ks));
    }
    if (!is_binary(mask)) {
        throw std::invalid_argument("dilate: mask must be binary (values in {0,1})");
    }
    if (ks == 1) return mask;

    const int r = ks / 2;
    Image out(mask.height, mask.width, 1);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            double hit = 0.0;
            for (int dy = -r; dy <= r && hit == 0.0; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= mask.height) continue;
                for (int dx = -r; dx <= r; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= mask.width) continue;
                    if (mask.at(yy, xx) == 1.0) { hit = 1.0; break; }
                }
            }
            out.at(y, x) = hit;
        }
    }
    return out;
}

}  // namespace oavm
