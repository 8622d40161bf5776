#include "fedfreeze/metrics.hpp"

#include <cmath>

#include "fedfreeze/errors.hpp"

namespace fedfreeze {

double accuracy_percent(const ConfusionCounts& c) {
    const int64_t denom = c.total();
    if (denom <= 0) throw ConfigError("accuracy undefined on empty counts");
    return 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(denom);
}

ConfusionCounts micro_counts(const std::vector<int>& predictions, const std::vector<int>& labels,
                             int classes) {
    if (predictions.size() != labels.size())
        throw ShapeError("prediction/label count mismatch");
    ConfusionCounts c;
    for (size_t i = 0; i < labels.size(); ++i) {
        for (int cls = 0; cls < classes; ++cls) {
            const bool pred = predictions[i] == cls;
            const bool truth = labels[i] == cls;
            if (pred && truth)
                ++c.tp;
            else if (!pred && !truth)
                ++c.tn;
            else if (pred)
                ++c.fp;
            else
                ++c.fn;
        }
    }
    return c;
}

double top1_accuracy_percent(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || labels.empty())
        throw ShapeError("prediction/label count mismatch or empty");
    size_t hits = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double micro_precision_percent(const ConfusionCounts& c) {
    if (c.tp + c.fp <= 0) throw ConfigError("micro precision undefined without positives");
    return 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

UniformityStats selection_uniformity(const SelectionHistogram& hist, int layer_budget) {
    if (hist.clients <= 0 || hist.units <= 0 || hist.draws() == 0)
        throw ConfigError("selection histogram is empty");
    UniformityStats s;
    s.dof = hist.units - 1;
    const double draws = static_cast<double>(hist.draws());
    const double expected_freq = static_cast<double>(layer_budget) / hist.units;
    const double expected_count = draws * expected_freq;
    for (int u = 0; u < hist.units; ++u) {
        const double observed = static_cast<double>(hist.unit_total(u));
        const double freq = observed / draws;
        s.max_abs_deviation = std::max(s.max_abs_deviation, std::fabs(freq - expected_freq));
        const double d = observed - expected_count;
        s.chi_square += d * d / expected_count;
    }
    return s;
}

namespace {

// regularized lower incomplete gamma P(a, x): series for x < a+1, continued
// fraction otherwise
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw ConfigError("gamma_p domain error");
    if (x == 0.0) return 0.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + a * std::log(x) - gln);
    }
    double b = x + 1.0 - a;
    double c = 1e300;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::fabs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

}  // namespace

double chi_square_cdf(double x, int dof) {
    if (dof <= 0) throw ConfigError("chi-square needs positive dof");
    if (x <= 0.0) return 0.0;
    return gamma_p(0.5 * dof, 0.5 * x);
}

double chi_square_quantile(double p, int dof) {
    if (p <= 0.0 || p >= 1.0) throw ConfigError("quantile probability must be in (0, 1)");
    double lo = 0.0, hi = 1.0;
    while (chi_square_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (chi_square_cdf(mid, dof) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace fedfreeze
