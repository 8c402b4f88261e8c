#pragma once
// Central finite-difference gradient checking against the tape.
//
// Relative error uses |fd - g| / max(|fd|, |g|, 1e-4); the floor keeps
// round-off noise on near-zero gradients from dominating the report while a
// genuinely wrong backward rule (errors on the order of the gradient itself)
// still stands out.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "grm/tensor.hpp"

namespace grm {

struct ParamRef {
    std::string name;
    Tensor tensor;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<std::pair<std::string, double>> per_param;  // (name, max rel err)

    bool pass(double tol) const { return max_rel_err < tol; }
};

// f must rebuild the loss from the current parameter values on every call and
// be deterministic (verified by a double evaluation up front).
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                         const std::vector<ParamRef>& params,
                                         double h = 1e-5) {
    if (h < 1e-7 || h > 1e-3)
        throw std::invalid_argument("finite_diff_check: h must lie in [1e-7, 1e-3]");

    if (ambient_tape())
        throw TapeError("finite_diff_check: must run outside any tape scope");

    const double probe1 = f().item();
    const double probe2 = f().item();
    if (probe1 != probe2)
        throw std::runtime_error("finite_diff_check: f is not deterministic");

    for (const auto& p : params) {
        if (!p.tensor.requires_grad)
            throw std::invalid_argument("finite_diff_check: parameter '" + p.name + "' does not require grad");
        const_cast<Tensor&>(p.tensor).zero_grad();
    }

    // analytic gradients
    Tape tape;
    std::vector<std::vector<double>> analytic;
    {
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
    }
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.tensor.grad);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        std::vector<double>& values = *p.tensor.data;
        double worst = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double g = analytic[pi][i];
            const double denom = std::max({std::abs(fd), std::abs(g), 1e-4});
            worst = std::max(worst, std::abs(fd - g) / denom);
        }
        report.per_param.emplace_back(p.name, worst);
        if (worst >= report.max_rel_err) {
            if (worst > report.max_rel_err || report.worst_param.empty()) report.worst_param = p.name;
            report.max_rel_err = std::max(report.max_rel_err, worst);
        }
    }
    return report;
}

}  // namespace grm
