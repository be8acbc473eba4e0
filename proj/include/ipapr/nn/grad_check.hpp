#pragma once

#include "ipapr/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace ipapr::nn {

/// A parameter array to perturb in place and the analytic gradient claimed for
/// it. The perturbed copy may use a wider scalar than the analytic gradient
/// (e.g. long double) to push rounding noise below the tolerance floor.
template <typename Scalar = double>
struct GradProbe {
    std::string group;
    Eigen::Map<Vector<Scalar>> param;
    Eigen::VectorXd analytic;
};

template <typename Param, typename Grad>
auto make_probe(std::string group, Param& param, const Grad& analytic) {
    using Scalar = typename Param::Scalar;
    if (param.size() != analytic.size()) throw ShapeError("grad probe '" + group + "': gradient size mismatch");
    Eigen::VectorXd a(analytic.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = double(analytic.data()[i]);
    return GradProbe<Scalar>{std::move(group), Eigen::Map<Vector<Scalar>>(param.data(), param.size()), std::move(a)};
}

struct GradGroupResult {
    double max_rel_error = 0.0;
    Eigen::Index entries = 0;
    Eigen::Index skipped = 0;
    Eigen::Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool flagged = false;
};

struct GradCheckReport {
    std::map<std::string, GradGroupResult> groups;
    double max_rel_error = 0.0;

    bool passed() const {
        for (const auto& [name, g] : groups)
            if (g.flagged) return false;
        return true;
    }
    std::vector<std::string> flagged_groups() const {
        std::vector<std::string> out;
        for (const auto& [name, g] : groups)
            if (g.flagged) out.push_back(name);
        return out;
    }
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Central differences with step h against the analytic gradients in `probes`.
/// When `same_regime` is given it is called after each perturbed evaluation;
/// returning false marks the entry as skipped (e.g. a discrete selection
/// changed under the perturbation).
template <typename Scalar>
GradCheckReport grad_check(const std::function<Scalar()>& loss, std::vector<GradProbe<Scalar>>& probes, double h,
                           double tolerance, const std::function<bool()>& same_regime = {}) {
    GradCheckReport report;
    for (auto& probe : probes) {
        GradGroupResult& res = report.groups[probe.group];
        for (Eigen::Index i = 0; i < probe.param.size(); ++i) {
            const Scalar saved = probe.param[i];
            probe.param[i] = saved + Scalar(h);
            const Scalar up = loss();
            const bool up_ok = !same_regime || same_regime();
            probe.param[i] = saved - Scalar(h);
            const Scalar down = loss();
            const bool down_ok = !same_regime || same_regime();
            probe.param[i] = saved;
            if (!up_ok || !down_ok) {
                ++res.skipped;
                continue;
            }
            const double numeric = double((up - down) / Scalar(2.0 * h));
            const double err = relative_error(probe.analytic[i], numeric);
            ++res.entries;
            if (err > res.max_rel_error || res.worst_index < 0) {
                res.max_rel_error = std::max(res.max_rel_error, err);
                res.worst_index = i;
                res.worst_analytic = probe.analytic[i];
                res.worst_numeric = numeric;
            }
        }
        res.flagged = res.max_rel_error > tolerance;
        report.max_rel_error = std::max(report.max_rel_error, res.max_rel_error);
    }
    return report;
}

}  // namespace ipapr::nn
