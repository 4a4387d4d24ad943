#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "voldiff/rng.hpp"
#include "voldiff/tensor.hpp"

namespace voldiff {

/// Named parameters with a stable creation order. The order is load-bearing:
/// checkpoints and Adam moments are keyed by it, which is what makes
/// save/load byte-stable.
template <class S>
struct ParamSetT {
    std::vector<std::string> names;
    std::vector<TensorT<S>> tensors;

    TensorT<S>& add(const std::string& name, std::vector<int64_t> shape) {
        if (index_.count(name)) throw ConfigError("ParamSet: duplicate parameter '" + name + "'");
        index_[name] = names.size();
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        tensors.back().ensure_grad();
        return tensors.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamSet: unknown parameter '" + name + "'");
        return tensors[it->second];
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamSet: unknown parameter '" + name + "'");
        return tensors[it->second];
    }

    size_t size() const { return names.size(); }

    int64_t total_elems() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    void zero_grads() {
        for (auto& t : tensors) t.zero_grad();
    }

private:
    std::unordered_map<std::string, size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (applied to the parameter, not the gradient)
};

template <class S>
struct AdamStateT {
    AdamConfig cfg;
    int64_t step = 0;
    std::vector<std::vector<S>> m, v;  // aligned with ParamSetT::tensors

    void init(const ParamSetT<S>& params, AdamConfig c) {
        cfg = c;
        step = 0;
        m.assign(params.size(), {});
        v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(params.tensors[i].data.size(), S(0));
            v[i].assign(params.tensors[i].data.size(), S(0));
        }
    }
};

/// One Adam update with bias correction and decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// Non-finite gradients abort with the offending parameter's name.
template <class S>
void adam_step(ParamSetT<S>& params, AdamStateT<S>& st) {
    if (st.m.size() != params.size()) throw ConfigError("adam_step: state not initialized for this ParamSet");
    ++st.step;
    const double c1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    for (size_t p = 0; p < params.size(); ++p) {
        TensorT<S>& t = params.tensors[p];
        if (t.grad.size() != t.data.size())
            throw ConfigError("adam_step: gradients missing for '" + params.names[p] + "'");
        for (size_t i = 0; i < t.data.size(); ++i) {
            const double g = t.grad[i];
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in '" + params.names[p] + "'");
            const double mi = st.cfg.beta1 * st.m[p][i] + (1.0 - st.cfg.beta1) * g;
            const double vi = st.cfg.beta2 * st.v[p][i] + (1.0 - st.cfg.beta2) * g * g;
            st.m[p][i] = static_cast<S>(mi);
            st.v[p][i] = static_cast<S>(vi);
            const double m_hat = mi / c1;
            const double v_hat = vi / c2;
            t.data[i] = static_cast<S>(
                t.data[i] - st.cfg.lr * (m_hat / (std::sqrt(v_hat) + st.cfg.eps) +
                                         st.cfg.weight_decay * t.data[i]));
        }
    }
}

/// Kaiming fan-in init: N(0, sqrt(2 / fan_in)). Biases stay zero.
template <class S>
void kaiming_init(TensorT<S>& w, int64_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (S& x : w.data) x = static_cast<S>(stddev * rng.gaussian());
}

}  // namespace voldiff
