#include "ensembleseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "ensembleseg/core_ops.hpp"

namespace eseg {
namespace {

// Regularized incomplete beta function I_x(a, b) via the Lentz continued
// fraction; standard numerics, accurate to ~1e-12 for the df values used
// here.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return bt * betacf(a, b, x) / a;
    }
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

MetricStat stat_of(const std::vector<double>& values) {
    MetricStat s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / double(values.size()));
    return s;
}

}  // namespace

ConfusionCounts confusion(const BinaryMap& pred, const Mask& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
        throw std::invalid_argument("confusion: prediction and ground truth dimensions disagree");
    }
    ConfusionCounts c;
    const std::size_t n = gt.pixel_count();
    for (std::size_t j = 0; j < n; ++j) {
        const bool p = pred.bits[j] != 0;
        const bool g = gt.labels[j] != 0;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

double iou(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fp + c.fn;
    return denom == 0 ? 1.0 : double(c.tp) / double(denom);
}

double accuracy(const ConfusionCounts& c) {
    const std::int64_t denom = c.total();
    return denom == 0 ? 1.0 : double(c.tp + c.tn) / double(denom);
}

double sensitivity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fn;
    return denom == 0 ? 1.0 : double(c.tp) / double(denom);
}

double specificity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tn + c.fp;
    return denom == 0 ? 1.0 : double(c.tn) / double(denom);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("paired_t_test: need two equally sized series of length >= 2");
    }
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    var /= double(n - 1);

    TTestResult result;
    // Differences whose spread is negligible against their mean are
    // numerically constant (a pure shift); rounding keeps exact shifts from
    // producing a bitwise-zero variance.
    if (var == 0.0 || std::sqrt(var) <= 1e-9 * std::abs(mean)) {
        result.degenerate = true;
        if (mean == 0.0) {
            result.t = 0.0;
            result.p = 1.0;
        } else {
            result.t = mean > 0 ? std::numeric_limits<double>::infinity()
                                : -std::numeric_limits<double>::infinity();
            result.p = 0.0;
        }
        return result;
    }
    const double se = std::sqrt(var / double(n));
    result.t = mean / se;
    const double df = double(n - 1);
    // two-sided p = I_{df/(df+t^2)}(df/2, 1/2)
    result.p = incomplete_beta(df / 2.0, 0.5, df / (df + result.t * result.t));
    result.p = std::clamp(result.p, 0.0, 1.0);
    if (result.p == 0.0) result.p = std::numeric_limits<double>::min();
    return result;
}

MetricsReport evaluate(const Segmenter& model, const std::vector<Sample>& test, double threshold,
                       int foreground_class) {
    std::string missing;
    for (const Sample& s : test) {
        if (!s.mask) missing += missing.empty() ? s.id : (", " + s.id);
    }
    if (!missing.empty()) {
        throw std::invalid_argument("evaluate: samples without ground-truth masks: " + missing);
    }

    MetricsReport report;
    report.sample_count = static_cast<int>(test.size());
    for (const Sample& s : test) {
        const ProbMap probs = model(s.image);
        const BinaryMap pred = binarize(probs, foreground_class, threshold);
        const ConfusionCounts c = confusion(pred, *s.mask);
        report.ids.push_back(s.id);
        report.dice_values.push_back(dice(c));
        report.iou_values.push_back(iou(c));
        report.accuracy_values.push_back(accuracy(c));
        report.sensitivity_values.push_back(sensitivity(c));
        report.specificity_values.push_back(specificity(c));
    }
    report.dice_stat = stat_of(report.dice_values);
    report.iou_stat = stat_of(report.iou_values);
    report.accuracy_stat = stat_of(report.accuracy_values);
    report.sensitivity_stat = stat_of(report.sensitivity_values);
    report.specificity_stat = stat_of(report.specificity_values);
    return report;
}

void report_to_json_file(const std::filesystem::path& path, const MetricsReport& report) {
    nlohmann::json j;
    j["method"] = report.method;
    j["sample_count"] = report.sample_count;
    j["seconds"] = report.seconds;
    auto stat = [](const MetricStat& s) {
        return nlohmann::json{{"mean", s.mean}, {"stddev", s.stddev}};
    };
    j["dice"] = stat(report.dice_stat);
    j["iou"] = stat(report.iou_stat);
    j["accuracy"] = stat(report.accuracy_stat);
    j["sensitivity"] = stat(report.sensitivity_stat);
    j["specificity"] = stat(report.specificity_stat);
    j["per_image"] = nlohmann::json::object();
    for (std::size_t i = 0; i < report.ids.size(); ++i) {
        j["per_image"][report.ids[i]] = {{"dice", report.dice_values[i]},
                                         {"iou", report.iou_values[i]},
                                         {"accuracy", report.accuracy_values[i]},
                                         {"sensitivity", report.sensitivity_values[i]},
                                         {"specificity", report.specificity_values[i]}};
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("failed to open report file " + path.string());
    out << j.dump(2) << "\n";
}

void report_to_csv_file(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("failed to open report file " + path.string());
    out.precision(6);
    out << std::fixed;
    out << "method,DC,IoU,Accuracy,Sensitivity,Specificity,training_time_s\n";
    out << report.method << "," << report.dice_stat.mean << "," << report.iou_stat.mean << ","
        << report.accuracy_stat.mean << "," << report.sensitivity_stat.mean << ","
        << report.specificity_stat.mean << "," << report.seconds << "\n";
}

}  // namespace eseg
