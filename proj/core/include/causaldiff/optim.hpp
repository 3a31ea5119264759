#pragma once

#include <functional>
#include <string>
#include <vector>

#include "causaldiff/tensor.hpp"

namespace causaldiff {

enum class OptKind { Adam, MomentumSGD };

// First-order optimizer with per-parameter moment buffers. step() validates
// every gradient before touching any parameter, so a NaN gradient leaves the
// model unchanged.
class Optimizer {
public:
    Optimizer(OptKind kind, double lr);

    static Optimizer adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    static Optimizer momentum_sgd(double lr, double momentum = 0.9);

    OptKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    std::uint64_t step_count() const { return step_count_; }

    // Uses each parameter's .grad.
    void step(std::vector<Tensor>& params);
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
    void zero_grad(std::vector<Tensor>& params);

private:
    OptKind kind_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    double momentum_ = 0.9;
    std::uint64_t step_count_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Scales gradients in place so their global l2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

// Max over all checked entries of |analytic - central difference| /
// max(1, |analytic|). `f` must re-evaluate the loss from current parameter
// values. `max_entries_per_param` = 0 checks every entry.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& params, double eps,
                  std::size_t max_entries_per_param = 0);

}  // namespace causaldiff
