#include "irestore/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace irestore {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check_pair(const Image& a, const Image& b, const char* who) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument(std::string(who) + ": image extents disagree");
    if (a.size() == 0) throw std::invalid_argument(std::string(who) + ": empty image");
}

int quantize8(double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<int>(std::floor(c * 255.0 + 0.5));
}

std::vector<double> histogram8(const Image& a) {
    std::vector<double> p(256, 0.0);
    for (double v : a.pixels) p[static_cast<std::size_t>(quantize8(v))] += 1.0;
    const double inv = 1.0 / static_cast<double>(a.size());
    for (auto& x : p) x *= inv;
    return p;
}

// Separable valid-region filter with one symmetric 1-d window.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& win,
                                 int& oh, int& ow) {
    const int k = static_cast<int>(win.size());
    oh = h - k + 1;
    ow = w - k + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("metric filter: image smaller than window");
    std::vector<double> mid(static_cast<std::size_t>(h) * ow);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += win[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(r) * w + c + i];
            mid[static_cast<std::size_t>(r) * ow + c] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += win[static_cast<std::size_t>(i)] * mid[static_cast<std::size_t>(r + i) * ow + c];
            out[static_cast<std::size_t>(r) * ow + c] = s;
        }
    return out;
}

std::vector<double> gaussian_window(int k, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(k));
    const double c = (k - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

double clamp_at(const Image& a, int r, int c) {
    r = r < 0 ? 0 : (r >= a.height ? a.height - 1 : r);
    c = c < 0 ? 0 : (c >= a.width ? a.width - 1 : c);
    return a.at(r, c);
}

// Sobel pair with replicated borders, so constant regions have zero response
// everywhere including the edge rows.
void sobel(const Image& a, std::vector<double>& gx, std::vector<double>& gy) {
    gx.assign(a.size(), 0.0);
    gy.assign(a.size(), 0.0);
    for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c) {
            const double p00 = clamp_at(a, r - 1, c - 1), p01 = clamp_at(a, r - 1, c), p02 = clamp_at(a, r - 1, c + 1);
            const double p10 = clamp_at(a, r, c - 1), p12 = clamp_at(a, r, c + 1);
            const double p20 = clamp_at(a, r + 1, c - 1), p21 = clamp_at(a, r + 1, c), p22 = clamp_at(a, r + 1, c + 1);
            gx[static_cast<std::size_t>(r) * a.width + c] = (p02 + 2 * p12 + p22) - (p00 + 2 * p10 + p20);
            gy[static_cast<std::size_t>(r) * a.width + c] = (p20 + 2 * p21 + p22) - (p00 + 2 * p01 + p02);
        }
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cab = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cab += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;  // degenerate variance, defined as uncorrelated
    return cab / std::sqrt(va * vb);
}

}  // namespace

double metric_en(const Image& a) {
    if (a.size() == 0) throw std::invalid_argument("metric_en: empty image");
    double en = 0.0;
    for (double p : histogram8(a))
        if (p > 0.0) en -= p * std::log2(p);
    return en;
}

double metric_sd(const Image& a) {
    if (a.size() == 0) throw std::invalid_argument("metric_sd: empty image");
    // shifted two-pass: exact zero on constant images, shift-invariant anyway
    const double ref = a.pixels[0];
    double m = 0.0;
    for (double v : a.pixels) m += v - ref;
    m /= static_cast<double>(a.size());
    double acc = 0.0;
    for (double v : a.pixels) acc += (v - ref - m) * (v - ref - m);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

double metric_mi(const Image& a, const Image& b) {
    check_pair(a, b, "metric_mi");
    std::vector<double> joint(256 * 256, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        joint[static_cast<std::size_t>(quantize8(a.pixels[i])) * 256 + quantize8(b.pixels[i])] += 1.0;
    const double inv = 1.0 / static_cast<double>(a.size());
    for (auto& x : joint) x *= inv;
    const std::vector<double> pa = histogram8(a), pb = histogram8(b);
    // log-difference form keeps MI(x,x) bitwise equal to EN(x)
    double mi = 0.0;
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 256; ++j) {
            const double p = joint[static_cast<std::size_t>(i) * 256 + j];
            if (p > 0.0) mi += p * (std::log2(p) - std::log2(pa[static_cast<std::size_t>(i)]) -
                                    std::log2(pb[static_cast<std::size_t>(j)]));
        }
    return mi;
}

double metric_psnr(const Image& a, const Image& b) {
    check_pair(a, b, "metric_psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    check_pair(a, b, "ssim");
    constexpr int K = 11;
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    if (a.height < K || a.width < K) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    const std::vector<double> win = gaussian_window(K, 1.5);
    int oh = 0, ow = 0;
    auto sq = [](const Image& im) {
        std::vector<double> v(im.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = im.pixels[i] * im.pixels[i];
        return v;
    };
    std::vector<double> ab(a.size());
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] = a.pixels[i] * b.pixels[i];
    const auto mu1 = filter_valid(a.pixels, a.height, a.width, win, oh, ow);
    const auto mu2 = filter_valid(b.pixels, a.height, a.width, win, oh, ow);
    const auto raw11 = filter_valid(sq(a), a.height, a.width, win, oh, ow);
    const auto raw22 = filter_valid(sq(b), a.height, a.width, win, oh, ow);
    const auto raw12 = filter_valid(ab, a.height, a.width, win, oh, ow);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        const double m1 = mu1[i], m2 = mu2[i];
        const double s11 = raw11[i] - m1 * m1, s22 = raw22[i] - m2 * m2, s12 = raw12[i] - m1 * m2;
        acc += ((2 * m1 * m2 + C1) * (2 * s12 + C2)) / ((m1 * m1 + m2 * m2 + C1) * (s11 + s22 + C2));
    }
    return acc / static_cast<double>(mu1.size());
}

double metric_qabf(const Image& fused, const Image& src) {
    check_pair(fused, src, "metric_qabf");
    // edge-transfer similarity (gradient magnitude and orientation through
    // sigmoids), weighted by source edge strength
    constexpr double Gg = 0.9994, Kg = -15.0, Sg = 0.5;
    constexpr double Ga = 0.9879, Ka = -22.0, Sa = 0.8;
    std::vector<double> ax, ay, fx, fy;
    sobel(src, ax, ay);
    sobel(fused, fx, fy);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ax.size(); ++i) {
        const double ga = std::hypot(ax[i], ay[i]);
        const double gf = std::hypot(fx[i], fy[i]);
        const double aa = (ax[i] == 0.0 && ay[i] == 0.0) ? 0.0 : std::atan(ay[i] / ax[i]);
        const double af = (fx[i] == 0.0 && fy[i] == 0.0) ? 0.0 : std::atan(fy[i] / fx[i]);
        const double G = ga > gf ? gf / ga : (gf > 0.0 ? ga / gf : 0.0);
        const double A = 1.0 - std::abs(aa - af) / (kPi / 2.0);
        const double Qg = Gg / (1.0 + std::exp(Kg * (G - Sg)));
        const double Qa = Ga / (1.0 + std::exp(Ka * (A - Sa)));
        num += Qg * Qa * ga;
        den += ga;
    }
    return den > 0.0 ? num / den : 0.0;
}

double metric_scd(const Image& fused, const Image& src_a, const Image& src_b) {
    check_pair(fused, src_a, "metric_scd");
    check_pair(fused, src_b, "metric_scd");
    std::vector<double> d1(fused.size()), d2(fused.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        d1[i] = fused.pixels[i] - src_b.pixels[i];
        d2[i] = fused.pixels[i] - src_a.pixels[i];
    }
    return pearson(d1, src_a.pixels) + pearson(d2, src_b.pixels);
}

double metric_vif(const Image& ref, const Image& dist) {
    check_pair(ref, dist, "metric_vif");
    constexpr double sigma_nsq = 2.0;  // on the 255 intensity scale
    std::vector<double> r(ref.size()), d(ref.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = ref.pixels[i] * 255.0;
        d[i] = dist.pixels[i] * 255.0;
    }
    int h = ref.height, w = ref.width;
    double num = 0.0, den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int k = (1 << (4 - scale + 1)) + 1;
        const std::vector<double> win = gaussian_window(k, k / 5.0);
        if (scale > 1) {
            int fh = 0, fw = 0;
            std::vector<double> rf = filter_valid(r, h, w, win, fh, fw);
            std::vector<double> df = filter_valid(d, h, w, win, fh, fw);
            const int dh = (fh + 1) / 2, dw = (fw + 1) / 2;
            std::vector<double> rd(static_cast<std::size_t>(dh) * dw), dd(rd.size());
            for (int y = 0; y < dh; ++y)
                for (int x = 0; x < dw; ++x) {
                    rd[static_cast<std::size_t>(y) * dw + x] = rf[static_cast<std::size_t>(2 * y) * fw + 2 * x];
                    dd[static_cast<std::size_t>(y) * dw + x] = df[static_cast<std::size_t>(2 * y) * fw + 2 * x];
                }
            r = std::move(rd);
            d = std::move(dd);
            h = dh;
            w = dw;
        }
        int oh = 0, ow = 0;
        auto sqv = [](const std::vector<double>& v) {
            std::vector<double> s(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] * v[i];
            return s;
        };
        std::vector<double> rd_(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) rd_[i] = r[i] * d[i];
        const auto mu1 = filter_valid(r, h, w, win, oh, ow);
        const auto mu2 = filter_valid(d, h, w, win, oh, ow);
        const auto raw11 = filter_valid(sqv(r), h, w, win, oh, ow);
        const auto raw22 = filter_valid(sqv(d), h, w, win, oh, ow);
        const auto raw12 = filter_valid(rd_, h, w, win, oh, ow);
        for (std::size_t i = 0; i < mu1.size(); ++i) {
            double s1 = raw11[i] - mu1[i] * mu1[i];
            double s2 = raw22[i] - mu2[i] * mu2[i];
            const double s12 = raw12[i] - mu1[i] * mu2[i];
            if (s1 < 0.0) s1 = 0.0;
            if (s2 < 0.0) s2 = 0.0;
            double g = s12 / (s1 + 1e-10);
            double sv = s2 - g * s12;
            if (s1 < 1e-10) {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if (s2 < 1e-10) {
                g = 0.0;
                sv = 0.0;
            }
            if (g < 0.0) {
                sv = s2;
                g = 0.0;
            }
            if (sv <= 1e-10) sv = 1e-10;
            num += std::log10(1.0 + g * g * s1 / (sv + sigma_nsq));
            den += std::log10(1.0 + s1 / sigma_nsq);
        }
    }
    return den > 0.0 ? num / den : 0.0;
}

MetricRow MetricReport::mean() const {
    MetricRow m;
    m.id = "mean";
    if (rows.empty()) return m;
    for (const auto& r : rows) {
        m.en += r.en;
        m.sd += r.sd;
        m.mi += r.mi;
        m.vif += r.vif;
        m.qabf += r.qabf;
        m.scd += r.scd;
        m.psnr += r.psnr;
        m.ssim += r.ssim;
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    m.en *= inv;
    m.sd *= inv;
    m.mi *= inv;
    m.vif *= inv;
    m.qabf *= inv;
    m.scd *= inv;
    m.psnr *= inv;
    m.ssim *= inv;
    return m;
}

MetricRow MetricReport::stddev() const {
    MetricRow s;
    s.id = "stddev";
    if (rows.size() < 2) return s;
    const MetricRow m = mean();
    for (const auto& r : rows) {
        s.en += (r.en - m.en) * (r.en - m.en);
        s.sd += (r.sd - m.sd) * (r.sd - m.sd);
        s.mi += (r.mi - m.mi) * (r.mi - m.mi);
        s.vif += (r.vif - m.vif) * (r.vif - m.vif);
        s.qabf += (r.qabf - m.qabf) * (r.qabf - m.qabf);
        s.scd += (r.scd - m.scd) * (r.scd - m.scd);
        s.psnr += (r.psnr - m.psnr) * (r.psnr - m.psnr);
        s.ssim += (r.ssim - m.ssim) * (r.ssim - m.ssim);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    s.en = std::sqrt(s.en * inv);
    s.sd = std::sqrt(s.sd * inv);
    s.mi = std::sqrt(s.mi * inv);
    s.vif = std::sqrt(s.vif * inv);
    s.qabf = std::sqrt(s.qabf * inv);
    s.scd = std::sqrt(s.scd * inv);
    s.psnr = std::sqrt(s.psnr * inv);
    s.ssim = std::sqrt(s.ssim * inv);
    return s;
}

namespace {

std::string num_field(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void MetricReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "# reference metrics vs the clean target; EN and SD are no-reference values of the output; unit scale\n";
    out << "id,EN,SD,MI,VIF,QABF,SCD,PSNR,SSIM\n";
    auto line = [&](const MetricRow& r) {
        out << r.id << ',' << num_field(r.en) << ',' << num_field(r.sd) << ',' << num_field(r.mi) << ','
            << num_field(r.vif) << ',' << num_field(r.qabf) << ',' << num_field(r.scd) << ',' << num_field(r.psnr)
            << ',' << num_field(r.ssim) << '\n';
    };
    for (const auto& r : rows) line(r);
    line(mean());
    if (!out) throw std::runtime_error("cannot write " + path);
}

void MetricReport::write_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const MetricRow m = mean(), s = stddev();
    auto jnum = [](double v) {
        // JSON has no infinity literal; non-finite values become strings
        return std::isfinite(v) ? num_field(v) : "\"" + num_field(v) + "\"";
    };
    auto obj = [&](const MetricRow& r) {
        out << "{\"EN\": " << jnum(r.en) << ", \"SD\": " << jnum(r.sd) << ", \"MI\": " << jnum(r.mi)
            << ", \"VIF\": " << jnum(r.vif) << ", \"QABF\": " << jnum(r.qabf) << ", \"SCD\": " << jnum(r.scd)
            << ", \"PSNR\": " << jnum(r.psnr) << ", \"SSIM\": " << jnum(r.ssim) << "}";
    };
    out << "{\n  \"note\": \"reference metrics vs the clean target; EN and SD are no-reference values of the output; "
           "unit scale\",\n  \"images\": "
        << rows.size() << ",\n  \"mean\": ";
    obj(m);
    out << ",\n  \"stddev\": ";
    obj(s);
    out << "\n}\n";
    if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace irestore
