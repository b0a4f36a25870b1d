#pragma once

#include <string>
#include <vector>

#include "oavm/image.hpp"

namespace oavm {

using AlphaSequence = std::vector<Image>;

/// Aggregate matting quality scores. Conventions (the usual video-matting
/// benchmark ones, fixed here since they are nowhere formally defined):
///   mad   mean |a - a*|            x 1e3
///   mse   mean (a - a*)^2          x 1e3
///   grad  mean squared difference of Gaussian-derivative gradient magnitudes
///         (sigma 1.4, truncated at 3 sigma, replicate borders)                      x 1e3
///   conn  mean |phi(a) - phi(a*)| over the 0.1..0.9 threshold ladder,
///         4-connected largest joint region, theta 0.15                  x 1e3
///   dtssd sqrt(mean ((da_t) - (da*_t))^2 over frames t>=2)              x 1e2
/// MAD/MSE/Grad/Conn aggregate frame means; dtSSD takes one global root.
struct MetricsReport {
    double mad = 0;
    double mse = 0;
    double grad = 0;
    double conn = 0;
    double dtssd = 0;
    bool has_dtssd = false;  // requires at least two frames

    struct PerFrame {
        std::vector<double> mad, mse, grad, conn;
        std::vector<double> dtssd;  // entry t is the frame (t+1, t+2) pair
    } per_frame;
};

double mad(const AlphaSequence& pred, const AlphaSequence& gt);
double mse(const AlphaSequence& pred, const AlphaSequence& gt);
double grad_error(const AlphaSequence& pred, const AlphaSequence& gt);
double conn_error(const AlphaSequence& pred, const AlphaSequence& gt);
double dtssd(const AlphaSequence& pred, const AlphaSequence& gt);

MetricsReport evaluate_all(const AlphaSequence& pred, const AlphaSequence& gt);

std::string metrics_report_to_json(const MetricsReport& report);
std::string metrics_report_to_csv(const MetricsReport& report);

// exposed for unit checks against hand convolutions
std::vector<double> gaussian_kernel(double sigma, int radius);
std::vector<double> gaussian_deriv_kernel(double sigma, int radius);

/// Per-pixel connectedness map phi for one frame pair; returned pair is
/// (phi_pred, phi_gt). Exposed so the flood-fill route can be compared with an
/// independent labeling.
void connectivity_phi(const Image& pred, const Image& gt, std::vector<double>& phi_pred,
                      std::vector<double>& phi_gt);

}  // namespace oavm
