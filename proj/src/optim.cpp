#include "pcdc/optim.hpp"

#include <cmath>

namespace pcdc {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (contains(name)) throw Error("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
}

Tensor& ParamStore::find(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw Error("unknown parameter: " + name);
}

const Tensor& ParamStore::find(const std::string& name) const {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw Error("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
    for (auto& [n, t] : entries_)
        if (n == name) return true;
    return false;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (auto& [n, t] : entries_) out.push_back(t);
    return out;
}

void ParamStore::zero_grad() {
    for (auto& [n, t] : entries_) t.zero_grad();
}

int64_t ParamStore::numel() const {
    int64_t n = 0;
    for (auto& [name, t] : entries_) n += t.size();
    return n;
}

Adam::Adam(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(size_t(params_[i].size()), 0.0);
        v_[i].assign(size_t(params_[i].size()), 0.0);
    }
}

void Adam::step() {
    // Validate all gradients before touching any state.
    for (auto& p : params_)
        for (double g : p.grad())
            if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient, step refused");

    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, double(t_));
    double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto g = params_[i].grad();
        auto& value = params_[i].raw();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < value.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace pcdc
