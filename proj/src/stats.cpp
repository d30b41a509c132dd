#include "clarify/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clarify::stats {

namespace {

// Continued fraction for the regularized incomplete beta, modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 500;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) {
        throw ArgumentError("incomplete beta requires a > 0 and b > 0");
    }
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int df) {
    if (df < 1) throw ArgumentError("student_t_cdf requires df >= 1");
    if (t == 0.0) return 0.5;
    const double nu = static_cast<double>(df);
    const double x = nu / (nu + t * t);
    const double tail = 0.5 * regularized_incomplete_beta(nu / 2.0, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

double student_t_two_sided_p(double t, int df) {
    if (df < 1) throw ArgumentError("two-sided p requires df >= 1");
    if (!std::isfinite(t)) return 0.0;
    const double nu = static_cast<double>(df);
    const double x = nu / (nu + t * t);
    return regularized_incomplete_beta(nu / 2.0, 0.5, x);
}

double mean(const std::vector<double>& v) {
    if (v.empty()) throw ArgumentError("mean of an empty vector");
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) throw ArgumentError("sample sd requires n >= 2");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void PairedSample::validate() const {
    if (a.size() != b.size()) {
        throw ArgumentError("paired sample vectors differ in length");
    }
    if (!labels.empty() && labels.size() != a.size()) {
        throw ArgumentError("paired sample labels misaligned with values");
    }
    if (a.size() < 2) throw ArgumentError("paired sample requires >= 2 pairs");
}

TTestResult paired_t_test(const PairedSample& sample) {
    sample.validate();
    const size_t n = sample.a.size();
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = sample.a[i] - sample.b[i];
    TTestResult result;
    result.df = static_cast<int>(n) - 1;
    const double sd = sample_sd(d);
    if (sd == 0.0) {
        result.degenerate = true;
        result.t = std::numeric_limits<double>::quiet_NaN();
        result.p = std::numeric_limits<double>::quiet_NaN();
        return result;
    }
    result.t = mean(d) * std::sqrt(static_cast<double>(n)) / sd;
    result.p = student_t_two_sided_p(result.t, result.df);
    return result;
}

TTestResult welch_t_test(const std::vector<double>& a,
                         const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw ArgumentError("welch test requires >= 2 samples on each side");
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = sample_sd(a) * sample_sd(a);
    const double vb = sample_sd(b) * sample_sd(b);
    TTestResult result;
    if (va == 0.0 && vb == 0.0) {
        result.degenerate = true;
        result.t = std::numeric_limits<double>::quiet_NaN();
        result.p = std::numeric_limits<double>::quiet_NaN();
        result.df = static_cast<int>(na + nb) - 2;
        return result;
    }
    const double se2 = va / na + vb / nb;
    result.t = (mean(a) - mean(b)) / std::sqrt(se2);
    const double df_num = se2 * se2;
    const double df_den = (va / na) * (va / na) / (na - 1.0) +
                          (vb / nb) * (vb / nb) / (nb - 1.0);
    result.df = std::max(1, static_cast<int>(std::floor(df_num / df_den)));
    result.p = student_t_two_sided_p(result.t, result.df);
    return result;
}

double pearson_p_from_r(double r, int n) {
    if (n < 3) throw ArgumentError("pearson p requires n >= 3");
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double t = r * std::sqrt(static_cast<double>(n - 2) / (1.0 - r2));
    return student_t_two_sided_p(t, n - 2);
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ArgumentError("pearson inputs differ in length");
    if (x.size() < 3) throw ArgumentError("pearson requires n >= 3");
    const size_t n = x.size();
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    PearsonResult result;
    result.n = static_cast<int>(n);
    if (sxx == 0.0 || syy == 0.0) {
        result.degenerate = true;
        result.r = std::numeric_limits<double>::quiet_NaN();
        result.p = std::numeric_limits<double>::quiet_NaN();
        return result;
    }
    result.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    result.p = pearson_p_from_r(result.r, result.n);
    return result;
}

std::string marker_for_baseline(PromptScheme baseline) {
    switch (baseline) {
        case PromptScheme::Standard: return "*";
        case PromptScheme::AtStandard: return "†";  // †
        case PromptScheme::Cot: return "Δ";         // Δ
        default: throw ArgumentError("at_cot is never a marker baseline");
    }
}

std::map<PromptScheme, std::string> significance_markers(
    const std::map<PromptScheme, std::map<std::string, double>>& per_query,
    double alpha, bool unpaired) {
    static constexpr std::array<PromptScheme, 3> kBaselines = {
        PromptScheme::Standard, PromptScheme::AtStandard, PromptScheme::Cot};

    // All present schemes must share one label set.
    const std::map<std::string, double>* reference = nullptr;
    for (const auto& [scheme, scores] : per_query) {
        if (!reference) {
            reference = &scores;
            continue;
        }
        if (scores.size() != reference->size()) {
            throw ArgumentError("schemes disagree on the query set");
        }
        for (const auto& [label, _] : scores) {
            if (!reference->count(label)) {
                throw ArgumentError("schemes disagree on the query set: " + label);
            }
        }
    }

    std::map<PromptScheme, std::string> markers;
    for (const auto& [scheme, scores] : per_query) {
        std::string mark;
        for (PromptScheme baseline : kBaselines) {
            if (baseline == scheme) continue;
            auto it = per_query.find(baseline);
            if (it == per_query.end()) continue;
            PairedSample sample;
            for (const auto& [label, value] : scores) {
                sample.labels.push_back(label);
                sample.a.push_back(value);
                sample.b.push_back(it->second.at(label));
            }
            if (sample.a.size() < 2) continue;
            TTestResult test;
            if (unpaired) {
                test = welch_t_test(sample.a, sample.b);
            } else {
                test = paired_t_test(sample);
            }
            if (test.degenerate) continue;
            const double improvement = mean(sample.a) - mean(sample.b);
            if (improvement > 0.0 && test.p < alpha) {
                mark += marker_for_baseline(baseline);
            }
        }
        markers[scheme] = mark;
    }
    return markers;
}

}  // namespace clarify::stats
