#include "oavm/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace oavm {

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) {
        throw std::invalid_argument("Tensor shape must have at least one dimension");
    }
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("Tensor dimensions must be positive, got " +
                                        shape_to_string(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
}

namespace {
[[noreturn]] void rank_error(const Tensor& t, int wanted) {
    throw std::out_of_range("Tensor rank is " + std::to_string(t.rank()) +
                            ", indexed as rank " + std::to_string(wanted));
}
}  // namespace

double& Tensor::at(int i) {
    if (rank() != 1) rank_error(*this, 1);
    return data_[static_cast<std::size_t>(i)];
}
double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int i, int j) {
    if (rank() != 2) rank_error(*this, 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
}
double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

double& Tensor::at(int i, int j, int k) {
    if (rank() != 3) rank_error(*this, 3);
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(int i, int j, int k) const { return const_cast<Tensor*>(this)->at(i, j, k); }

double& Tensor::at(int i, int j, int k, int l) {
    if (rank() != 4) rank_error(*this, 4);
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}
double Tensor::at(int i, int j, int k, int l) const {
    return const_cast<Tensor*>(this)->at(i, j, k, l);
}

Tensor Tensor::reshape(std::vector<int> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
        throw std::invalid_argument("reshape from " + shape_str() + " to " +
                                    shape_to_string(new_shape) + " changes element count");
    }
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

// --- rng ---------------------------------------------------------------------

std::uint64_t Rng::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

std::uint64_t Rng::fork() { return next_u64(); }

// --- linear layer ------------------------------------------------------------

LinearLayer LinearLayer::seeded(int out, int in, Rng& rng) {
    LinearLayer layer;
    layer.weight = Tensor({out, in});
    layer.bias = Tensor({out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < layer.weight.numel(); ++i) {
        layer.weight[i] = rng.uniform(-bound, bound);
    }
    for (std::size_t i = 0; i < layer.bias.numel(); ++i) {
        layer.bias[i] = rng.uniform(-bound, bound);
    }
    return layer;
}

LinearLayer LinearLayer::identity(int n) {
    LinearLayer layer;
    layer.weight = Tensor({n, n});
    layer.bias = Tensor({n});
    for (int i = 0; i < n; ++i) layer.weight.at(i, i) = 1.0;
    return layer;
}

LinearLayer LinearLayer::zero(int out, int in) {
    LinearLayer layer;
    layer.weight = Tensor({out, in});
    layer.bias = Tensor({out});
    return layer;
}

// --- numeric primitives ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul expects rank-2 tensors, got " + a.shape_str() +
                                    " x " + b.shape_str());
    }
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions differ: " + a.shape_str() + " x " +
                                    b.shape_str());
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) {
                acc += pa[static_cast<std::size_t>(i) * k + t] *
                       pb[static_cast<std::size_t>(t) * n + j];
            }
            po[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul_nt expects rank-2 tensors, got " + a.shape_str() +
                                    " x " + b.shape_str());
    }
    if (a.dim(1) != b.dim(1)) {
        throw std::invalid_argument("matmul_nt: inner dimensions differ: " + a.shape_str() +
                                    " x " + b.shape_str() + "^T");
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) {
                acc += pa[static_cast<std::size_t>(i) * k + t] *
                       pb[static_cast<std::size_t>(j) * k + t];
            }
            po[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw std::invalid_argument("softmax_rows: empty tensor");
    const int n = x.dim(x.rank() - 1);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * n;
        double m = neg_inf;
        for (int j = 0; j < n; ++j) m = std::max(m, row[j]);
        if (m == neg_inf) {
            throw std::runtime_error("softmax_rows: row " + std::to_string(r) +
                                     " is fully masked (all -inf)");
        }
        double denom = 0.0;
        double* orow = po + r * n;
        for (int j = 0; j < n; ++j) {
            // exp(-inf - m) is exactly 0, so masked entries drop out
            orow[j] = std::exp(row[j] - m);
            denom += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= denom;
    }
    return out;
}

Tensor apply_mask_rows_with_fallback(const Tensor& scores, const Tensor& mask,
                                     int* fallback_rows) {
    if (!scores.same_shape(mask)) {
        throw std::invalid_argument("mask shape " + mask.shape_str() +
                                    " does not match scores shape " + scores.shape_str());
    }
    const int n = scores.dim(scores.rank() - 1);
    const std::size_t rows = scores.numel() / static_cast<std::size_t>(n);
    Tensor out(scores.shape());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    int fell_back = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* srow = scores.data() + r * n;
        const double* mrow = mask.data() + r * n;
        bool all_masked = true;
        for (int j = 0; j < n; ++j) {
            if (mrow[j] != neg_inf) { all_masked = false; break; }
        }
        double* orow = out.data() + r * n;
        for (int j = 0; j < n; ++j) {
            orow[j] = all_masked ? srow[j] : srow[j] + mrow[j];
        }
        if (all_masked) ++fell_back;
    }
    if (fallback_rows) *fallback_rows = fell_back;
    return out;
}

Tensor linear(const LinearLayer& layer, const Tensor& x) {
    const int in = layer.in_features();
    const int out_f = layer.out_features();
    if (x.dim(x.rank() - 1) != in) {
        throw std::invalid_argument("linear: input " + x.shape_str() + " does not end in " +
                                    std::to_string(in) + " features (weight " +
                                    layer.weight.shape_str() + ")");
    }
    std::vector<int> out_shape = x.shape();
    out_shape.back() = out_f;
    Tensor y(out_shape);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(in);
    const double* px = x.data();
    const double* pw = layer.weight.data();
    const double* pb = layer.bias.data();
    double* py = y.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * in;
        double* yr = py + r * out_f;
        for (int o = 0; o < out_f; ++o) {
            double acc = pb[o];
            const double* wr = pw + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    return y;
}

Tensor sinusoidal_pos_embed(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0) {
        throw std::invalid_argument("sinusoidal_pos_embed: dims must be positive");
    }
    if (c % 4 != 0) {
        throw std::invalid_argument("sinusoidal_pos_embed: channel count " + std::to_string(c) +
                                    " must be divisible by 4");
    }
    const int half = c / 2;       // channels per axis
    const int pairs = half / 2;   // sin/cos pairs per axis
    Tensor out({h, w, c});
    for (int p = 0; p < pairs; ++p) {
        const double freq = std::pow(10000.0, -2.0 * p / half);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(y, x, 2 * p) = std::sin(y * freq);
                out.at(y, x, 2 * p + 1) = std::cos(y * freq);
                out.at(y, x, half + 2 * p) = std::sin(x * freq);
                out.at(y, x, half + 2 * p + 1) = std::cos(x * freq);
            }
        }
    }
    return out;
}

// --- serialization -----------------------------------------------------------

namespace {

void put_f64_le(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

double get_f64_le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

void save_tensor(const std::string& path, const std::string& name, const Tensor& t,
                 std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    nlohmann::json header;
    header["name"] = name;
    header["shape"] = t.shape();
    header["seed"] = seed;
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < t.numel(); ++i) put_f64_le(out, t[i]);
    if (!out) throw std::runtime_error("short write to " + path);
}

NamedTensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing weight header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": bad weight header: " + e.what());
    }
    NamedTensor result;
    result.name = header.at("name").get<std::string>();
    result.seed = header.at("seed").get<std::uint64_t>();
    std::vector<int> shape = header.at("shape").get<std::vector<int>>();
    result.tensor = Tensor(shape);
    for (std::size_t i = 0; i < result.tensor.numel(); ++i) {
        result.tensor[i] = get_f64_le(in);
        if (!in) {
            throw std::runtime_error(path + ": truncated payload at element " + std::to_string(i));
        }
    }
    return result;
}

}  // namespace oavm
