#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace oavm {

/// Dense row-major tensor of 64-bit floats. The universal numeric carrier:
/// feature maps are [H,W,C], token matrices [T,C], weights [out,in].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // row-major indexing, rank checked
    double& at(int i);
    double at(int i) const;
    double& at(int i, int j);
    double at(int i, int j) const;
    double& at(int i, int j, int k);
    double at(int i, int j, int k) const;
    double& at(int i, int j, int k, int l);
    double at(int i, int j, int k, int l) const;

    /// Same data, new shape; element count must match.
    Tensor reshape(std::vector<int> new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_to_string(const std::vector<int>& shape);

/// Deterministic, platform-independent 64-bit PRNG (splitmix64 update).
/// The same seed yields the same stream on every platform: the state update is
///   s += 0x9E3779B97F4A7C15, then two xor-shift-multiply mixing steps.
/// Doubles are drawn as (u64 >> 11) * 2^-53, uniform in [0,1).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    double next_double();                       // [0,1)
    double uniform(double lo, double hi);       // [lo,hi)
    bool bernoulli(double p) { return next_double() < p; }
    std::uint64_t fork();                       // sub-seed for a child stream

private:
    std::uint64_t state_;
};

/// y = x W^T + b applied over the last axis.
struct LinearLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    int in_features() const { return weight.dim(1); }
    int out_features() const { return weight.dim(0); }

    /// Fan-in uniform init: entries in [-1/sqrt(in), +1/sqrt(in)].
    static LinearLayer seeded(int out, int in, Rng& rng);
    static LinearLayer identity(int n);
    static LinearLayer zero(int out, int in);
};

/// Exact triple-loop matrix product, row-major inner summation order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// a [m,k] times b^T for b [n,k]; the attention-score product Q K^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Row softmax over the last axis with max-subtraction. -inf entries map to
/// exactly 0. A row that is entirely -inf throws; callers that want the
/// unmasked fallback apply `apply_mask_rows_with_fallback` to scores first.
Tensor softmax_rows(const Tensor& x);

/// scores + mask, except rows whose mask is entirely -inf are left unmasked.
/// `fallback_rows`, when given, receives the number of rows that fell back.
Tensor apply_mask_rows_with_fallback(const Tensor& scores, const Tensor& mask,
                                     int* fallback_rows = nullptr);

Tensor linear(const LinearLayer& layer, const Tensor& x);

/// Fixed 2D sinusoidal position code, [h, w, c]. First c/2 channels encode y,
/// last c/2 encode x; sin/cos interleave with 10000-base frequencies.
/// c must be divisible by 4.
Tensor sinusoidal_pos_embed(int h, int w, int c);

// --- weight file format -----------------------------------------------------
// One compact JSON header line {"name":..,"shape":[..],"seed":..} terminated
// by '\n', followed by the flat payload as little-endian float64.

struct NamedTensor {
    std::string name;
    std::uint64_t seed = 0;
    Tensor tensor;
};

void save_tensor(const std::string& path, const std::string& name,
                 const Tensor& t, std::uint64_t seed);
NamedTensor load_tensor(const std::string& path);

}  // namespace oavm
