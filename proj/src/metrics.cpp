#include "oavm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace oavm {

namespace {

constexpr double kSigma = 1.4;
constexpr int kRadius = 4;  // taps within the 3-sigma truncation (3 * 1.4 = 4.2)
constexpr double kConnTheta = 0.15;
constexpr double kConnStep = 0.1;

void check_pair(const AlphaSequence& pred, const AlphaSequence& gt) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("metric: sequence lengths differ (" +
                                    std::to_string(pred.size()) + " vs " +
                                    std::to_string(gt.size()) + ")");
    }
    if (pred.empty()) throw std::invalid_argument("metric: empty sequence");
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t].channels != 1 || gt[t].channels != 1) {
            throw std::invalid_argument("metric: alphas must be single-channel");
        }
        if (!pred[t].same_dims(gt[t])) {
            throw std::invalid_argument("metric: frame " + std::to_string(t) +
                                        " dimensions differ");
        }
    }
}

double frame_mad(const Image& p, const Image& g) {
    double acc = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) acc += std::abs(p.data[i] - g.data[i]);
    return acc / static_cast<double>(p.data.size()) * 1e3;
}

double frame_mse(const Image& p, const Image& g) {
    double acc = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double d = p.data[i] - g.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(p.data.size()) * 1e3;
}

// separable convolution with replicate borders; kx along x, ky along y
std::vector<double> conv_separable(const Image& img, const std::vector<double>& kx,
                                   const std::vector<double>& ky) {
    const int h = img.height, w = img.width;
    const int rx = static_cast<int>(kx.size()) / 2;
    const int ry = static_cast<int>(ky.size()) / 2;
    std::vector<double> tmp(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = -rx; k <= rx; ++k) {
                const int sx = std::clamp(x + k, 0, w - 1);
                acc += img.at(y, sx) * kx[static_cast<std::size_t>(k + rx)];
            }
            tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    std::vector<double> out(tmp.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int k = -ry; k <= ry; ++k) {
                const int sy = std::clamp(y + k, 0, h - 1);
                acc += tmp[static_cast<std::size_t>(sy) * w + x] * ky[static_cast<std::size_t>(k + ry)];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

std::vector<double> gradient_magnitude(const Image& img) {
    const std::vector<double> smooth = gaussian_kernel(kSigma, kRadius);
    const std::vector<double> deriv = gaussian_deriv_kernel(kSigma, kRadius);
    const std::vector<double> gx = conv_separable(img, deriv, smooth);
    const std::vector<double> gy = conv_separable(img, smooth, deriv);
    std::vector<double> mag(gx.size());
    for (std::size_t i = 0; i < gx.size(); ++i) {
        mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    }
    return mag;
}

double frame_grad(const Image& p, const Image& g) {
    if (p.height < 2 * kRadius + 1 || p.width < 2 * kRadius + 1) {
        throw std::invalid_argument("grad: frame " + std::to_string(p.height) + "x" +
                                    std::to_string(p.width) + " smaller than the " +
                                    std::to_string(2 * kRadius + 1) + "-tap kernel");
    }
    const std::vector<double> mp = gradient_magnitude(p);
    const std::vector<double> mg = gradient_magnitude(g);
    double acc = 0;
    for (std::size_t i = 0; i < mp.size(); ++i) {
        const double d = mp[i] - mg[i];
        acc += d * d;
    }
    return acc / static_cast<double>(mp.size()) * 1e3;
}

double frame_conn(const Image& p, const Image& g) {
    std::vector<double> phi_p, phi_g;
    connectivity_phi(p, g, phi_p, phi_g);
    double acc = 0;
    for (std::size_t i = 0; i < phi_p.size(); ++i) acc += std::abs(phi_p[i] - phi_g[i]);
    return acc / static_cast<double>(phi_p.size()) * 1e3;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

std::vector<double> gaussian_deriv_kernel(double sigma, int radius) {
    // derivative of the normalized Gaussian: dg(i) = -i / sigma^2 * g(i)
    std::vector<double> g = gaussian_kernel(sigma, radius);
    std::vector<double> k(g.size());
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] =
            -static_cast<double>(i) / (sigma * sigma) * g[static_cast<std::size_t>(i + radius)];
    }
    return k;
}

void connectivity_phi(const Image& pred, const Image& gt, std::vector<double>& phi_pred,
                      std::vector<double>& phi_gt) {
    const int h = pred.height, w = pred.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> l_map(n, -1.0);
    std::vector<int> label(n);
    std::vector<char> joint(n);

    for (int step = 1; step <= 9; ++step) {
        const double theta = step * kConnStep;
        const double theta_prev = (step - 1) * kConnStep;
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            joint[i] = pred.data[i] >= theta && gt.data[i] >= theta;
            any = any || joint[i];
        }
        if (!any) continue;  // no source region at this level, leave l_map as is

        // 4-connected labeling via BFS, scan order; track the largest region
        std::fill(label.begin(), label.end(), -1);
        int best_label = -1, best_size = 0, next = 0;
        std::queue<int> queue;
        for (std::size_t start = 0; start < n; ++start) {
            if (!joint[start] || label[start] != -1) continue;
            const int cur = next++;
            int size = 0;
            label[start] = cur;
            queue.push(static_cast<int>(start));
            while (!queue.empty()) {
                const int i = queue.front();
                queue.pop();
                ++size;
                const int y = i / w, x = i % w;
                const int neighbors[4] = {y > 0 ? i - w : -1, y + 1 < h ? i + w : -1,
                                          x > 0 ? i - 1 : -1, x + 1 < w ? i + 1 : -1};
                for (int nb : neighbors) {
                    if (nb >= 0 && joint[static_cast<std::size_t>(nb)] &&
                        label[static_cast<std::size_t>(nb)] == -1) {
                        label[static_cast<std::size_t>(nb)] = cur;
                        queue.push(nb);
                    }
                }
            }
            if (size > best_size) {  // ties keep the earliest region in scan order
                best_size = size;
                best_label = cur;
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            if (l_map[i] == -1.0 && label[i] != best_label) l_map[i] = theta_prev;
        }
    }

    phi_pred.assign(n, 0.0);
    phi_gt.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double l = l_map[i] == -1.0 ? 1.0 : l_map[i];
        const double dp = pred.data[i] - l;
        const double dg = gt.data[i] - l;
        phi_pred[i] = 1.0 - (dp >= kConnTheta ? dp : 0.0);
        phi_gt[i] = 1.0 - (dg >= kConnTheta ? dg : 0.0);
    }
}

double mad(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    double acc = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) acc += frame_mad(pred[t], gt[t]);
    return acc / static_cast<double>(pred.size());
}

double mse(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    double acc = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) acc += frame_mse(pred[t], gt[t]);
    return acc / static_cast<double>(pred.size());
}

double grad_error(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    double acc = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) acc += frame_grad(pred[t], gt[t]);
    return acc / static_cast<double>(pred.size());
}

double conn_error(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    double acc = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) acc += frame_conn(pred[t], gt[t]);
    return acc / static_cast<double>(pred.size());
}

double dtssd(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    if (pred.size() < 2) {
        throw std::invalid_argument("dtssd: needs at least two frames");
    }
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t t = 1; t < pred.size(); ++t) {
        for (std::size_t i = 0; i < pred[t].data.size(); ++i) {
            const double dp = pred[t].data[i] - pred[t - 1].data[i];
            const double dg = gt[t].data[i] - gt[t - 1].data[i];
            acc += (dp - dg) * (dp - dg);
            ++count;
        }
    }
    return std::sqrt(acc / static_cast<double>(count)) * 1e2;
}

MetricsReport evaluate_all(const AlphaSequence& pred, const AlphaSequence& gt) {
    check_pair(pred, gt);
    MetricsReport report;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        report.per_frame.mad.push_back(frame_mad(pred[t], gt[t]));
        report.per_frame.mse.push_back(frame_mse(pred[t], gt[t]));
        report.per_frame.grad.push_back(frame_grad(pred[t], gt[t]));
        report.per_frame.conn.push_back(frame_conn(pred[t], gt[t]));
    }
    report.mad = mad(pred, gt);
    report.mse = mse(pred, gt);
    report.grad = grad_error(pred, gt);
    report.conn = conn_error(pred, gt);
    if (pred.size() >= 2) {
        report.dtssd = dtssd(pred, gt);
        report.has_dtssd = true;
        for (std::size_t t = 1; t < pred.size(); ++t) {
            AlphaSequence p2{pred[t - 1], pred[t]};
            AlphaSequence g2{gt[t - 1], gt[t]};
            report.per_frame.dtssd.push_back(dtssd(p2, g2));
        }
    }
    return report;
}

std::string metrics_report_to_json(const MetricsReport& report) {
    nlohmann::json doc;
    doc["mad"] = report.mad;
    doc["mse"] = report.mse;
    doc["grad"] = report.grad;
    doc["conn"] = report.conn;
    if (report.has_dtssd) doc["dtssd"] = report.dtssd;
    doc["per_frame"]["mad"] = report.per_frame.mad;
    doc["per_frame"]["mse"] = report.per_frame.mse;
    doc["per_frame"]["grad"] = report.per_frame.grad;
    doc["per_frame"]["conn"] = report.per_frame.conn;
    if (report.has_dtssd) doc["per_frame"]["dtssd"] = report.per_frame.dtssd;
    return doc.dump(2);
}

std::string metrics_report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "frame,mad,mse,grad,conn,dtssd\n";
    for (std::size_t t = 0; t < report.per_frame.mad.size(); ++t) {
        out << t << ',' << report.per_frame.mad[t] << ',' << report.per_frame.mse[t] << ','
            << report.per_frame.grad[t] << ',' << report.per_frame.conn[t] << ',';
        if (t >= 1 && report.has_dtssd) out << report.per_frame.dtssd[t - 1];
        out << '\n';
    }
    return out.str();
}

}  // namespace oavm
