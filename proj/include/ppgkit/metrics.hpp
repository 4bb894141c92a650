#pragma once

#include <array>
#include <optional>
#include <vector>

namespace ppg {

struct RegressionMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;  // absent when ground truth contains zeros
};

RegressionMetrics regression_metrics(const std::vector<double>& gt, const std::vector<double>& est);

struct MetricSummary {
    double mae_mean = 0.0, mae_std = 0.0;
    double rmse_mean = 0.0, rmse_std = 0.0;
    std::optional<double> mape_mean, mape_std;
    int n_runs = 0;
};

// Mean and sample std (n-1) over repeated runs; MAPE aggregates only when
// defined in every run.
MetricSummary aggregate(const std::vector<RegressionMetrics>& runs);

struct BlandAltman {
    double bias = 0.0;
    double loa_low = 0.0;
    double loa_high = 0.0;
};

// d = est - gt; bias = mean(d); limits = bias -+ 1.96 * sample std(d).
BlandAltman bland_altman(const std::vector<double>& gt, const std::vector<double>& est);

// Clarke error-grid zone counts (A..E). Inputs in mmol/L, converted to
// mg/dL internally; zone rules follow the original 1987 grid with ties
// resolved toward the more favorable zone by evaluation order.
std::array<int, 5> clarke_zones(const std::vector<double>& ref_mmol, const std::vector<double>& est_mmol);

}  // namespace ppg
