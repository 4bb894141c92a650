#include "ppgkit/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ppg {

RegressionMetrics regression_metrics(const std::vector<double>& gt, const std::vector<double>& est) {
    if (gt.empty() || gt.size() != est.size())
        throw std::invalid_argument("regression_metrics: need equal nonempty vectors");
    const std::size_t m = gt.size();
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    bool mape_ok = true;
    for (std::size_t i = 0; i < m; ++i) {
        const double e = est[i] - gt[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (std::abs(gt[i]) > 1e-9)
            pct_sum += std::abs(e) / std::abs(gt[i]);
        else
            mape_ok = false;
    }
    RegressionMetrics r;
    r.mae = abs_sum / m;
    r.rmse = std::sqrt(sq_sum / m);
    if (mape_ok) r.mape = pct_sum / m;
    return r;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    sd = 0.0;
    if (v.size() > 1) {
        for (double x : v) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / (v.size() - 1));
    }
}

}  // namespace

MetricSummary aggregate(const std::vector<RegressionMetrics>& runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
    std::vector<double> mae, rmse, mape;
    bool mape_ok = true;
    for (const auto& r : runs) {
        mae.push_back(r.mae);
        rmse.push_back(r.rmse);
        if (r.mape)
            mape.push_back(*r.mape);
        else
            mape_ok = false;
    }
    MetricSummary s;
    s.n_runs = static_cast<int>(runs.size());
    mean_std(mae, s.mae_mean, s.mae_std);
    mean_std(rmse, s.rmse_mean, s.rmse_std);
    if (mape_ok) {
        double m = 0.0, sd = 0.0;
        mean_std(mape, m, sd);
        s.mape_mean = m;
        s.mape_std = sd;
    }
    return s;
}

BlandAltman bland_altman(const std::vector<double>& gt, const std::vector<double>& est) {
    if (gt.size() < 2 || gt.size() != est.size())
        throw std::invalid_argument("bland_altman: need at least two aligned pairs");
    std::vector<double> d(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) d[i] = est[i] - gt[i];
    double bias = 0.0, sd = 0.0;
    mean_std(d, bias, sd);
    return {bias, bias - 1.96 * sd, bias + 1.96 * sd};
}

std::array<int, 5> clarke_zones(const std::vector<double>& ref_mmol, const std::vector<double>& est_mmol) {
    if (ref_mmol.empty() || ref_mmol.size() != est_mmol.size())
        throw std::invalid_argument("clarke_zones: need equal nonempty vectors");
    std::array<int, 5> zones{0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < ref_mmol.size(); ++i) {
        if (ref_mmol[i] <= 0.0 || est_mmol[i] <= 0.0)
            throw std::invalid_argument("clarke_zones: glucose must be positive");
        const double r = ref_mmol[i] * 18.016;  // to mg/dL
        const double e = est_mmol[i] * 18.016;
        int z;
        if ((r < 70.0 && e < 70.0) || std::abs(e - r) <= 0.2 * r) {
            z = 0;  // A
        } else if ((r <= 70.0 && e >= 180.0) || (r >= 180.0 && e <= 70.0)) {
            z = 4;  // E
        } else if ((r >= 70.0 && r <= 290.0 && e >= r + 110.0) ||
                   (r >= 130.0 && r <= 180.0 && e <= 7.0 / 5.0 * r - 182.0)) {
            z = 2;  // C
        } else if ((r >= 240.0 && e >= 70.0 && e <= 180.0) ||
                   (r <= 175.0 / 3.0 && e >= 70.0 && e <= 180.0) ||
                   (r >= 175.0 / 3.0 && r <= 70.0 && e >= 6.0 / 5.0 * r)) {
            z = 3;  // D
        } else {
            z = 1;  // B
        }
        ++zones[static_cast<std::size_t>(z)];
    }
    return zones;
}

}  // namespace ppg
