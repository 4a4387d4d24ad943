#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voldiff/rng.hpp"

namespace voldiff {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t probes = 0;
    int64_t worst_index = -1;
    double worst_analytic = 0.0, worst_numeric = 0.0;

    bool pass(double tol) const { return probes > 0 && max_rel_err < tol; }
};

/// Central-finite-difference check of an analytic gradient. `f` maps a flat
/// input vector to a scalar (callers scalarize tensor outputs, typically via a
/// fixed random projection, and run everything in double). `analytic` is
/// d f / d x at x0, computed once by the backward pass under test.
///
/// Per element: h = h_scale * max(1, |x_i|), fd = (f(x+h)-f(x-h)) / 2h,
/// rel = |a - fd| / max(1, |a|, |fd|). If max_probes > 0 and the input is
/// larger, a random subset of coordinates is probed.
inline GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double> x0, const std::vector<double>& analytic,
                                  double h_scale = 1e-5, int64_t max_probes = -1,
                                  Rng* rng = nullptr) {
    if (analytic.size() != x0.size())
        throw std::invalid_argument("grad_check: gradient length != input length");

    std::vector<size_t> idx;
    if (max_probes > 0 && static_cast<int64_t>(x0.size()) > max_probes) {
        if (!rng) throw std::invalid_argument("grad_check: subsampling requires an rng");
        for (int64_t k = 0; k < max_probes; ++k)
            idx.push_back(static_cast<size_t>(rng->uniform_int(0, static_cast<int64_t>(x0.size()) - 1)));
    } else {
        idx.resize(x0.size());
        for (size_t i = 0; i < x0.size(); ++i) idx[i] = i;
    }

    GradCheckReport rep;
    for (size_t i : idx) {
        const double orig = x0[i];
        const double h = h_scale * std::max(1.0, std::abs(orig));
        x0[i] = orig + h;
        const double fp = f(x0);
        x0[i] = orig - h;
        const double fm = f(x0);
        x0[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        ++rep.probes;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = static_cast<int64_t>(i);
            rep.worst_analytic = a;
            rep.worst_numeric = fd;
        }
    }
    return rep;
}

}  // namespace voldiff
