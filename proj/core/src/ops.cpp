#include "causaldiff/ops.hpp"

#include <cmath>
#include <cstdlib>

namespace causaldiff {

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

Tensor feature_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    Tensor mean = mean_axis1(x);                       // [m]
    Tensor centered = add_colvec(x, neg(mean));        // [m,n]
    Tensor var = mean_axis1(square(centered));         // [m]
    Tensor inv_std = div(Tensor::full(var.shape(), 1.0), sqrt(add_const(var, eps)));
    Tensor normed = scale_rows(centered, inv_std);
    return add_rowvec(mul_rowvec(normed, gamma), beta);
}

Tensor logsumexp_rows(const Tensor& x) {
    Tensor m = rowmax_detached(x);               // constant shift
    Tensor shifted = add_colvec(x, neg(m));
    return add(log(sum_axis1(exp(shifted))), m);
}

Tensor softmax_rows(const Tensor& x) {
    Tensor m = rowmax_detached(x);
    Tensor e = exp(add_colvec(x, neg(m)));
    return scale_rows(e, div(Tensor::full({x.rows()}, 1.0), sum_axis1(e)));
}

Tensor softmax_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows())
        throw TensorError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          shape_str(logits.shape()));
    Tensor oh = one_hot(labels, logits.cols());
    Tensor picked = sum_axis1(mul(logits, oh));  // logit of the true class, [m]
    return sub(logsumexp_rows(logits), picked);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    return mean_all(softmax_cross_entropy_rows(logits, labels));
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean_all(square(sub(a, b))); }

Tensor sq_norm_rows(const Tensor& x) { return sum_axis1(square(x)); }

Tensor gaussian_log_density_rows(const Tensor& x, const Tensor& mu, const Tensor& logvar) {
    constexpr double kLog2Pi = 1.8378770664093454836;
    Tensor diff = sub(x, mu);
    Tensor quad = div(square(diff), exp(logvar));
    Tensor per_dim = add_const(add(quad, logvar), kLog2Pi);
    return mul_const(sum_axis1(per_dim), -0.5);
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    Tensor dots = sum_axis1(mul(a, b));
    Tensor na = sq_norm_rows(a);
    Tensor nb = sq_norm_rows(b);
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (na.at(i) == 0.0 || nb.at(i) == 0.0)
            throw NumericError("cosine: zero-norm vector at row " + std::to_string(i));
    }
    return div(dots, sqrt(mul(na, nb)));
}

Tensor kl_to_std_normal_rows(const Tensor& mu, const Tensor& logvar) {
    Tensor terms = sub(add(square(mu), exp(logvar)), add_const(logvar, 1.0));
    return mul_const(sum_axis1(terms), 0.5);
}

std::vector<int> argmax_rows(const Tensor& logits) {
    std::size_t m = logits.rows(), n = logits.cols();
    std::vector<int> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        int best = 0;
        for (std::size_t j = 1; j < n; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = static_cast<int>(j);
        out[i] = best;
    }
    return out;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
    std::vector<double> data(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw TensorError("one_hot: label " + std::to_string(labels[i]) + " out of range");
        data[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from({labels.size(), classes}, std::move(data));
}

double l2_norm(const Tensor& t) {
    double s = 0;
    for (double x : t.data()) s += x * x;
    return std::sqrt(s);
}

double linf_norm(const Tensor& t) {
    double m = 0;
    for (double x : t.data()) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace causaldiff
