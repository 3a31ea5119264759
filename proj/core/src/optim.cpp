#include "causaldiff/optim.hpp"

#include <cmath>

namespace causaldiff {

Optimizer::Optimizer(OptKind kind, double lr) : kind_(kind), lr_(lr) {
    if (!(lr > 0)) throw TensorError("optimizer: learning rate must be positive");
}

Optimizer Optimizer::adam(double lr, double beta1, double beta2, double eps) {
    Optimizer o(OptKind::Adam, lr);
    o.beta1_ = beta1;
    o.beta2_ = beta2;
    o.eps_ = eps;
    return o;
}

Optimizer Optimizer::momentum_sgd(double lr, double momentum) {
    Optimizer o(OptKind::MomentumSGD, lr);
    o.momentum_ = momentum;
    return o;
}

void Optimizer::step(std::vector<Tensor>& params) {
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (auto& p : params) {
        Tensor g = p.grad();
        grads.push_back(g.defined() ? g : Tensor::zeros(p.shape()));
    }
    step(params, grads);
}

void Optimizer::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
        throw TensorError("optimizer: " + std::to_string(grads.size()) + " grads for " +
                          std::to_string(params.size()) + " params");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape())
            throw TensorError("optimizer: grad shape " + shape_str(grads[i].shape()) +
                              " does not match param " + shape_str(params[i].shape()));
        if (!all_finite(grads[i]))
            throw NumericError("optimizer: non-finite gradient for parameter " + std::to_string(i));
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].size(), 0.0);
            if (kind_ == OptKind::Adam) v_[i].assign(params[i].size(), 0.0);
        }
    }
    ++step_count_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].mutable_data();
        const auto& g = grads[i].data();
        if (kind_ == OptKind::Adam) {
            double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
            double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
            for (std::size_t j = 0; j < theta.size(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (1 - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (1 - beta2_) * g[j] * g[j];
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                theta[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        } else {
            for (std::size_t j = 0; j < theta.size(); ++j) {
                m_[i][j] = momentum_ * m_[i][j] + g[j];
                theta[j] -= lr_ * m_[i][j];
            }
        }
    }
}

void Optimizer::zero_grad(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double total = 0;
    for (auto& p : params) {
        Tensor g = p.grad();
        if (!g.defined()) continue;
        for (double x : g.data()) total += x * x;
    }
    total = std::sqrt(total);
    if (total > max_norm && total > 0) {
        double scale = max_norm / total;
        for (auto& p : params) {
            Tensor g = p.grad();
            if (!g.defined()) continue;
            p.node()->grad = mul_const(g.detach(), scale).node_ptr();
        }
    }
    return total;
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& params, double eps,
                  std::size_t max_entries_per_param) {
    if (!(eps > 0) || eps > 1e-3)
        throw TensorError("grad_check: eps must lie in (0, 1e-3]");
    for (auto& p : params) p.zero_grad();
    Tensor loss = f();
    backward(loss);
    if (!all_finite(loss)) throw NumericError("grad_check: non-finite loss");

    double worst = 0;
    for (auto& p : params) {
        Tensor g = p.grad();
        if (!g.defined()) g = Tensor::zeros(p.shape());
        auto& theta = p.mutable_data();
        std::size_t count = theta.size();
        std::size_t stride = 1;
        if (max_entries_per_param > 0 && count > max_entries_per_param)
            stride = count / max_entries_per_param;
        for (std::size_t j = 0; j < count; j += stride) {
            double orig = theta[j];
            double h = eps * std::max(1.0, std::abs(orig));
            theta[j] = orig + h;
            double up = f().item();
            theta[j] = orig - h;
            double dn = f().item();
            theta[j] = orig;
            if (!std::isfinite(up) || !std::isfinite(dn))
                throw NumericError("grad_check: non-finite finite-difference evaluation");
            double fd = (up - dn) / (2 * h);
            double a = g.at(j);
            double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace causaldiff
