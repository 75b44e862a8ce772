#pragma once
// Segmentation quality metrics and the paired t-test used for method
// comparison. Degenerate-denominator convention: a metric whose denominator
// is zero because both prediction and ground truth are empty evaluates to
// 1.0; overlap metrics with exactly one empty side fall out as 0.

#include <cstdint>
#include <filesystem>
#include <map>

#include "ensembleseg/fusion.hpp"
#include "ensembleseg/types.hpp"

namespace eseg {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(const BinaryMap& pred, const Mask& gt);

double dice(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;  // zero-variance differences
};

// Two-sided paired t-test on a[i] - b[i]. All-zero differences report
// {t = 0, p = 1, degenerate}; a nonzero constant shift reports p = 0 with
// the degenerate flag set.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct MetricStat {
    double mean = 0.0;
    double stddev = 0.0;
};

struct MetricsReport {
    std::string method;
    std::vector<std::string> ids;
    std::vector<double> dice_values, iou_values, accuracy_values, sensitivity_values,
        specificity_values;
    MetricStat dice_stat, iou_stat, accuracy_stat, sensitivity_stat, specificity_stat;
    int sample_count = 0;
    double seconds = 0.0;  // wall-clock attributed to this report (e.g. training time)
};

// Runs the model over every test sample, thresholds the foreground channel
// and scores against the ground-truth masks. Samples without masks raise an
// error listing the offending ids.
MetricsReport evaluate(const Segmenter& model, const std::vector<Sample>& test,
                       double threshold = 0.5, int foreground_class = 1);

void report_to_json_file(const std::filesystem::path& path, const MetricsReport& report);
// One header plus one row: method, DC, IoU, Accuracy, Sensitivity,
// Specificity, training time (s).
void report_to_csv_file(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace eseg
