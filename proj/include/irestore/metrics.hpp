#pragma once

#include <string>
#include <vector>

#include "irestore/image.hpp"

namespace irestore {

// Evaluation metrics, all pure double-precision functions of [0,1] images.
// EN/SD/MI histogram on the 8-bit quantization of the image; VIF follows the
// pixel-domain formulation on the 255 scale with sigma_nsq = 2; constants for
// the edge-transfer metric are in metrics.cpp.

double metric_en(const Image& a);
double metric_sd(const Image& a);
double metric_mi(const Image& a, const Image& b);
double metric_psnr(const Image& a, const Image& b);
double ssim(const Image& a, const Image& b);
double metric_qabf(const Image& fused, const Image& src);
double metric_scd(const Image& fused, const Image& src_a, const Image& src_b);
double metric_vif(const Image& ref, const Image& dist);

struct MetricRow {
    std::string id;
    double en = 0, sd = 0, mi = 0, vif = 0, qabf = 0, scd = 0, psnr = 0, ssim = 0;
};

// One row per image plus aggregates; serialized as CSV (rows) and JSON
// (means and standard deviations).
struct MetricReport {
    std::vector<MetricRow> rows;

    MetricRow mean() const;
    MetricRow stddev() const;
    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

}  // namespace irestore
