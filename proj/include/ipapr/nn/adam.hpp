#pragma once

#include "ipapr/core.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ipapr::nn {

/// One parameter array viewed as a flat vector, paired with its gradient.
template <typename Scalar>
struct ParamEntry {
    std::string name;
    std::string group;
    Eigen::Map<Vector<Scalar>> value;
    Eigen::Map<const Vector<Scalar>> grad;
};

template <typename Scalar, typename Param, typename Grad>
ParamEntry<Scalar> make_entry(std::string name, std::string group, Param& value, const Grad& grad) {
    if (value.size() != grad.size()) throw ShapeError("parameter '" + name + "' and its gradient differ in size");
    return {std::move(name), std::move(group), Eigen::Map<Vector<Scalar>>(value.data(), value.size()),
            Eigen::Map<const Vector<Scalar>>(grad.data(), grad.size())};
}

struct AdamHyper {
    std::map<std::string, double> lr;  // per group
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
    Vector<Scalar> first;
    Vector<Scalar> second;
};

template <typename Scalar>
struct AdamState {
    std::map<std::string, AdamMoments<Scalar>> moments;  // keyed by parameter name
    std::int64_t step = 0;

    /// Keeps only the listed columns of the moments of `name`, viewed as a
    /// column-major matrix with `rows` rows. Used when points are pruned.
    void select_columns(const std::string& name, Eigen::Index rows, const std::vector<Eigen::Index>& keep) {
        auto it = moments.find(name);
        if (it == moments.end()) return;
        for (Vector<Scalar>* v : {&it->second.first, &it->second.second}) {
            Vector<Scalar> out(rows * Eigen::Index(keep.size()));
            for (std::size_t j = 0; j < keep.size(); ++j)
                out.segment(rows * Eigen::Index(j), rows) = v->segment(rows * keep[j], rows);
            *v = std::move(out);
        }
    }
};

class NonFiniteGradient : public Error {
public:
    NonFiniteGradient(const std::string& group, const std::string& param)
        : Error("non-finite gradient in parameter group '" + group + "' (" + param + ")"), group_(group) {}
    const std::string& group() const { return group_; }

private:
    std::string group_;
};

/// Adam with bias correction. Updates `entries` in place and advances `state`.
/// Nothing is modified when any gradient is non-finite.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::vector<ParamEntry<Scalar>>& entries, const AdamHyper& hyper) {
    for (const auto& e : entries) {
        if (!e.grad.allFinite()) throw NonFiniteGradient(e.group, e.name);
        if (!hyper.lr.count(e.group)) throw Error("adam_step: no learning rate for group '" + e.group + "'");
    }
    state.step += 1;
    const double t = double(state.step);
    const Scalar b1 = Scalar(hyper.beta1), b2 = Scalar(hyper.beta2);
    const Scalar c1 = Scalar(1.0 / (1.0 - std::pow(hyper.beta1, t)));
    const Scalar c2 = Scalar(1.0 / (1.0 - std::pow(hyper.beta2, t)));
    const Scalar eps = Scalar(hyper.eps);
    for (auto& e : entries) {
        auto& mom = state.moments[e.name];
        if (mom.first.size() != e.value.size()) {
            if (mom.first.size() != 0) throw ShapeError("adam_step: moment shape changed for '" + e.name + "'");
            mom.first = Vector<Scalar>::Zero(e.value.size());
            mom.second = Vector<Scalar>::Zero(e.value.size());
        }
        const Scalar lr = Scalar(hyper.lr.at(e.group));
        mom.first = b1 * mom.first + (Scalar(1) - b1) * e.grad;
        mom.second = b2 * mom.second + (Scalar(1) - b2) * e.grad.cwiseAbs2();
        e.value.array() -= lr * (c1 * mom.first.array()) / ((c2 * mom.second.array()).sqrt() + eps);
    }
}

}  // namespace ipapr::nn
