#ifndef PCDC_OPTIM_HPP
#define PCDC_OPTIM_HPP

#include <string>
#include <vector>

#include "pcdc/tensor.hpp"

namespace pcdc {

// Ordered collection of named parameter tensors; the order defines the
// checkpoint layout, so modules must register deterministically.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

    std::vector<Tensor> tensors() const;
    void zero_grad();
    int64_t numel() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// Adaptive-moment gradient descent (decay 0.9/0.999, eps 1e-8) with bias
// correction. Refuses the step if any gradient is non-finite.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr);

    void step();
    void zero_grad();
    int64_t steps() const { return t_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
};

}  // namespace pcdc

#endif
