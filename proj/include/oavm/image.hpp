#pragma once

#include <string>
#include <vector>

namespace oavm {

/// Planar-free HWC image, values in [0,1]. 1 channel for alphas and masks,
/// 3 for RGB frames.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c);

    static Image zeros(int h, int w, int c = 1) { return Image(h, w, c); }
    static Image constant(int h, int w, int c, double value);

    double& at(int y, int x, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t numel() const { return data.size(); }
    bool same_dims(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }
};

// --- Netpbm I/O --------------------------------------------------------------
// PGM (P5) for single channel, PPM (P6) for RGB. maxval 255 or 65535; 16-bit
// payloads are big-endian per the Netpbm convention. Quantization both ways is
// v_int = round(v * maxval), v = v_int / maxval, so write -> read round-trips
// stored values exactly.

Image read_image(const std::string& path);
void write_image(const Image& img, const std::string& path, int maxval = 255);

/// Header-only probe: (height, width, channels) without decoding the payload.
struct ImageDims {
    int height = 0;
    int width = 0;
    int channels = 0;
};
ImageDims read_image_dims(const std::string& path);

// --- resampling and morphology ----------------------------------------------

/// Bilinear resample, align-corners-false grid (source coordinate of output
/// pixel x is (x + 0.5) * scale - 0.5, edge-clamped). Identity when the target
/// size equals the source size.
Image resample_bilinear(const Image& img, int new_h, int new_w);

/// v >= thresh -> 1, else 0. Boundary inclusive. Single channel only.
Image binarize(const Image& img, double thresh);

/// Binary dilation with a ks x ks square structuring element, zero-padded
/// borders. ks must be odd; ks=1 is the identity.
Image dilate(const Image& mask, int ks);

bool is_binary(const Image& img);

}  // namespace oavm
