#include "causaldiff/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <deque>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace causaldiff {

namespace {

thread_local std::uint64_t g_next_id = 1;
thread_local bool g_grad_mode = true;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

[[noreturn]] void fail(const char* op, const std::string& detail) {
    throw TensorError(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
    if (t.rank() != 2) fail(op, "expected rank-2 tensor, got " + shape_str(t.shape()));
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw NumericError(std::string(op) + ": produced non-finite value");
    }
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->id = g_next_id++;
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

// Internal primitives used by vjps (declared up front; defined below).
Tensor broadcast_rows(const Tensor& v, std::size_t m);
Tensor broadcast_cols(const Tensor& c, std::size_t n);
Tensor broadcast_full(const Tensor& s, Shape shape);
Tensor scatter_rows(const Tensor& g, std::vector<std::size_t> idx, std::size_t rows_out);
Tensor pad_cols(const Tensor& g, std::size_t c0, std::size_t total);

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

Node* Tensor::node() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return node_.get();
}

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() != 2) fail("rows", "expected rank-2 tensor, got " + shape_str(s));
    return s[0];
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 2) return s[1];
    if (s.size() == 1) return s[0];
    fail("cols", "expected rank-1/2 tensor, got " + shape_str(s));
}

double Tensor::item() const {
    if (size() != 1) fail("item", "expected scalar, got " + shape_str(shape()));
    return node()->data[0];
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return wrap(new_node(shape, std::vector<double>(shape_size(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    return wrap(new_node(shape, std::vector<double>(shape_size(shape), value), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return wrap(new_node(Shape{}, std::vector<double>{value}, requires_grad));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (data.size() != shape_size(shape))
        fail("from", "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    return wrap(new_node(shape, std::move(data), requires_grad));
}

Tensor& Tensor::set_requires_grad(bool v) {
    if (v && !is_leaf()) fail("set_requires_grad", "only leaf tensors can change requires_grad");
    node()->requires_grad = v;
    return *this;
}

Tensor Tensor::grad() const {
    return node()->grad ? wrap(node()->grad) : Tensor();
}

void Tensor::zero_grad() { node()->grad.reset(); }

Tensor Tensor::detach() const {
    auto n = new_node(node()->shape, node()->data, false);
    return wrap(std::move(n));
}

Tensor Tensor::clone() const { return detach(); }

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

namespace {
class GradModeGuard {
public:
    explicit GradModeGuard(bool on) : prev_(g_grad_mode) { g_grad_mode = on; }
    ~GradModeGuard() { g_grad_mode = prev_; }

private:
    bool prev_;
};
}  // namespace

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<std::vector<Tensor>(const Tensor&)> vjp) {
    check_finite(op, data);
    bool req = false;
    if (g_grad_mode) {
        for (const auto& t : inputs) req = req || t.requires_grad();
    }
    auto n = new_node(std::move(shape), std::move(data), req);
    if (req) {
        n->grad_fn = std::make_unique<GradFn>();
        n->grad_fn->op = op;
        n->grad_fn->inputs = std::move(inputs);
        n->grad_fn->vjp = std::move(vjp);
    }
    return Tensor::wrap(std::move(n));
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <class F>
std::vector<double> map1(const Tensor& a, F f) {
    std::vector<double> out(a.size());
    const auto& x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    return out;
}

template <class F>
std::vector<double> map2(const Tensor& a, const Tensor& b, F f) {
    std::vector<double> out(a.size());
    const auto& x = a.data();
    const auto& y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    return make_op("add", a.shape(), map2(a, b, [](double x, double y) { return x + y; }), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    return make_op("sub", a.shape(), map2(a, b, [](double x, double y) { return x - y; }), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    return make_op("mul", a.shape(), map2(a, b, [](double x, double y) { return x * y; }), {a, b},
                   [a, b](const Tensor& g) { return std::vector<Tensor>{mul(g, b), mul(g, a)}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    return make_op("div", a.shape(), map2(a, b, [](double x, double y) { return x / y; }), {a, b},
                   [a, b](const Tensor& g) {
                       Tensor da = div(g, b);
                       Tensor db = neg(div(mul(g, a), square(b)));
                       return std::vector<Tensor>{da, db};
                   });
}

Tensor neg(const Tensor& a) {
    return make_op("neg", a.shape(), map1(a, [](double x) { return -x; }), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{neg(g)}; });
}

Tensor add_const(const Tensor& a, double c) {
    return make_op("add_const", a.shape(), map1(a, [c](double x) { return x + c; }), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor mul_const(const Tensor& a, double c) {
    return make_op("mul_const", a.shape(), map1(a, [c](double x) { return x * c; }), {a},
                   [c](const Tensor& g) { return std::vector<Tensor>{mul_const(g, c)}; });
}

Tensor exp(const Tensor& a) {
    return make_op("exp", a.shape(), map1(a, [](double x) { return std::exp(x); }), {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{mul(g, exp(a))}; });
}

Tensor log(const Tensor& a) {
    return make_op("log", a.shape(), map1(a, [](double x) { return std::log(x); }), {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{div(g, a)}; });
}

Tensor sqrt(const Tensor& a) {
    return make_op("sqrt", a.shape(), map1(a, [](double x) { return std::sqrt(x); }), {a},
                   [a](const Tensor& g) {
                       return std::vector<Tensor>{div(mul_const(g, 0.5), sqrt(a))};
                   });
}

Tensor tanh(const Tensor& a) {
    return make_op("tanh", a.shape(), map1(a, [](double x) { return std::tanh(x); }), {a},
                   [a](const Tensor& g) {
                       Tensor t = tanh(a);
                       return std::vector<Tensor>{mul(g, sub(Tensor::full(a.shape(), 1.0), square(t)))};
                   });
}

Tensor relu(const Tensor& a) {
    return make_op("relu", a.shape(), map1(a, [](double x) { return x > 0 ? x : 0.0; }), {a},
                   [a](const Tensor& g) {
                       Tensor mask = Tensor::from(a.shape(), map1(a, [](double x) { return x > 0 ? 1.0 : 0.0; }));
                       return std::vector<Tensor>{mul(g, mask)};
                   });
}

Tensor square(const Tensor& a) {
    return make_op("square", a.shape(), map1(a, [](double x) { return x * x; }), {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{mul_const(mul(g, a), 2.0)}; });
}

Tensor sign(const Tensor& a) {
    // Locally constant: no graph edge.
    return Tensor::from(a.shape(), map1(a, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return make_op("clamp", a.shape(), map1(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); }), {a},
                   [a, lo, hi](const Tensor& g) {
                       Tensor mask = Tensor::from(
                           a.shape(), map1(a, [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; }));
                       return std::vector<Tensor>{mul(g, mask)};
                   });
}

// ---- broadcast ---------------------------------------------------------------

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    require_matrix("add_rowvec", x);
    if (v.rank() != 1 || v.cols() != x.cols())
        fail("add_rowvec", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + v.data()[j];
    return make_op("add_rowvec", x.shape(), std::move(out), {x, v},
                   [](const Tensor& g) { return std::vector<Tensor>{g, sum_axis0(g)}; });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    require_matrix("mul_rowvec", x);
    if (v.rank() != 1 || v.cols() != x.cols())
        fail("mul_rowvec", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] * v.data()[j];
    return make_op("mul_rowvec", x.shape(), std::move(out), {x, v},
                   [x, v](const Tensor& g) {
                       return std::vector<Tensor>{mul_rowvec(g, v), sum_axis0(mul(g, x))};
                   });
}

Tensor scale_rows(const Tensor& x, const Tensor& c) {
    require_matrix("scale_rows", x);
    if (c.rank() != 1 || c.cols() != x.rows())
        fail("scale_rows", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] * c.data()[i];
    return make_op("scale_rows", x.shape(), std::move(out), {x, c},
                   [x, c](const Tensor& g) {
                       return std::vector<Tensor>{scale_rows(g, c), sum_axis1(mul(g, x))};
                   });
}

Tensor add_colvec(const Tensor& x, const Tensor& c) {
    require_matrix("add_colvec", x);
    if (c.rank() != 1 || c.cols() != x.rows())
        fail("add_colvec", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(c.shape()));
    std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] + c.data()[i];
    return make_op("add_colvec", x.shape(), std::move(out), {x, c},
                   [](const Tensor& g) { return std::vector<Tensor>{g, sum_axis1(g)}; });
}

Tensor add_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) fail("add_scalar", "expected scalar, got " + shape_str(s.shape()));
    double sv = s.data()[0];
    return make_op("add_scalar", x.shape(), map1(x, [sv](double v) { return v + sv; }), {x, s},
                   [](const Tensor& g) { return std::vector<Tensor>{g, sum_all(g)}; });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) fail("mul_scalar", "expected scalar, got " + shape_str(s.shape()));
    double sv = s.data()[0];
    return make_op("mul_scalar", x.shape(), map1(x, [sv](double v) { return v * sv; }), {x, s},
                   [x, s](const Tensor& g) {
                       return std::vector<Tensor>{mul_scalar(g, s), sum_all(mul(g, x))};
                   });
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    if (a.cols() != b.rows())
        fail("matmul", "inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    {
        ECMap ma(a.data().data(), (Eigen::Index)m, (Eigen::Index)k);
        ECMap mb(b.data().data(), (Eigen::Index)k, (Eigen::Index)n);
        EMap mo(out.data(), (Eigen::Index)m, (Eigen::Index)n);
        mo.noalias() = ma * mb;
    }
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b](const Tensor& g) {
                       Tensor da = matmul(g, transpose(b));
                       Tensor db = matmul(transpose(a), g);
                       return std::vector<Tensor>{da, db};
                   });
}

Tensor transpose(const Tensor& a) {
    require_matrix("transpose", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    return make_op("transpose", {n, m}, std::move(out), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0;
    for (double x : a.data()) s += x;
    return make_op("sum_all", Shape{}, {s}, {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{broadcast_full(g, a.shape())}; });
}

Tensor mean_all(const Tensor& a) {
    return mul_const(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis0(const Tensor& a) {
    require_matrix("sum_axis0", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
    return make_op("sum_axis0", {n}, std::move(out), {a},
                   [m](const Tensor& g) { return std::vector<Tensor>{broadcast_rows(g, m)}; });
}

Tensor sum_axis1(const Tensor& a) {
    require_matrix("sum_axis1", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += a.data()[i * n + j];
    return make_op("sum_axis1", {m}, std::move(out), {a},
                   [n](const Tensor& g) { return std::vector<Tensor>{broadcast_cols(g, n)}; });
}

Tensor mean_axis1(const Tensor& a) {
    return mul_const(sum_axis1(a), 1.0 / static_cast<double>(a.cols()));
}

Tensor rowmax_detached(const Tensor& a) {
    require_matrix("rowmax", a);
    std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = a.data()[i * n];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a.data()[i * n + j]);
        out[i] = mx;
    }
    return Tensor::from({m}, std::move(out));
}

// ---- structure -----------------------------------------------------------------

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix("concat_cols", a);
    require_matrix("concat_cols", b);
    if (a.rows() != b.rows())
        fail("concat_cols", "row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    std::vector<double> out(m * (p + q));
    for (std::size_t i = 0; i < m; ++i) {
        std::memcpy(&out[i * (p + q)], &a.data()[i * p], p * sizeof(double));
        std::memcpy(&out[i * (p + q) + p], &b.data()[i * q], q * sizeof(double));
    }
    return make_op("concat_cols", {m, p + q}, std::move(out), {a, b},
                   [p, q](const Tensor& g) {
                       return std::vector<Tensor>{slice_cols(g, 0, p), slice_cols(g, p, p + q)};
                   });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    require_matrix("slice_cols", a);
    if (c0 >= c1 || c1 > a.cols())
        fail("slice_cols", "bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " +
                               shape_str(a.shape()));
    std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(&out[i * w], &a.data()[i * n + c0], w * sizeof(double));
    return make_op("slice_cols", {m, w}, std::move(out), {a},
                   [c0, n](const Tensor& g) { return std::vector<Tensor>{pad_cols(g, c0, n)}; });
}

Tensor select_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    require_matrix("select_rows", a);
    std::size_t m = a.rows(), n = a.cols();
    for (auto i : idx)
        if (i >= m) fail("select_rows", "index " + std::to_string(i) + " out of range for " + shape_str(a.shape()));
    std::vector<double> out(idx.size() * n);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::memcpy(&out[r * n], &a.data()[idx[r] * n], n * sizeof(double));
    return make_op("select_rows", {idx.size(), n}, std::move(out), {a},
                   [idx, m](const Tensor& g) { return std::vector<Tensor>{scatter_rows(g, idx, m)}; });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_size(shape) != a.size())
        fail("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    Shape old = a.shape();
    return make_op("reshape", shape, a.data(), {a},
                   [old](const Tensor& g) { return std::vector<Tensor>{reshape(g, old)}; });
}

// ---- internal broadcast/scatter primitives -------------------------------------

namespace {

Tensor broadcast_rows(const Tensor& v, std::size_t m) {
    if (v.rank() != 1) fail("broadcast_rows", "expected rank-1, got " + shape_str(v.shape()));
    std::size_t n = v.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(&out[i * n], v.data().data(), n * sizeof(double));
    return make_op("broadcast_rows", {m, n}, std::move(out), {v},
                   [](const Tensor& g) { return std::vector<Tensor>{sum_axis0(g)}; });
}

Tensor broadcast_cols(const Tensor& c, std::size_t n) {
    if (c.rank() != 1) fail("broadcast_cols", "expected rank-1, got " + shape_str(c.shape()));
    std::size_t m = c.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = c.data()[i];
    return make_op("broadcast_cols", {m, n}, std::move(out), {c},
                   [](const Tensor& g) { return std::vector<Tensor>{sum_axis1(g)}; });
}

Tensor broadcast_full(const Tensor& s, Shape shape) {
    if (s.size() != 1) fail("broadcast_full", "expected scalar, got " + shape_str(s.shape()));
    std::vector<double> out(shape_size(shape), s.data()[0]);
    return make_op("broadcast_full", std::move(shape), std::move(out), {s},
                   [](const Tensor& g) { return std::vector<Tensor>{sum_all(g)}; });
}

Tensor scatter_rows(const Tensor& g, std::vector<std::size_t> idx, std::size_t rows_out) {
    require_matrix("scatter_rows", g);
    std::size_t n = g.cols();
    std::vector<double> out(rows_out * n, 0.0);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) out[idx[r] * n + j] += g.data()[r * n + j];
    return make_op("scatter_rows", {rows_out, n}, std::move(out), {g},
                   [idx](const Tensor& gg) { return std::vector<Tensor>{select_rows(gg, idx)}; });
}

Tensor pad_cols(const Tensor& g, std::size_t c0, std::size_t total) {
    require_matrix("pad_cols", g);
    std::size_t m = g.rows(), w = g.cols();
    std::vector<double> out(m * total, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        std::memcpy(&out[i * total + c0], &g.data()[i * w], w * sizeof(double));
    return make_op("pad_cols", {m, total}, std::move(out), {g},
                   [c0, w](const Tensor& gg) {
                       return std::vector<Tensor>{slice_cols(gg, c0, c0 + w)};
                   });
}

}  // namespace

// ---- engine ---------------------------------------------------------------------

namespace {

struct EngineResult {
    std::unordered_map<Node*, Tensor> grads;
};

// Walks the graph below `loss`, runs vjps in descending creation order and
// accumulates per-node gradients. When `targets` is non-null, only subgraphs
// that can reach a target are expanded (partial gradients).
EngineResult run_engine(const Tensor& loss, const std::vector<Tensor>* targets, bool create_graph) {
    if (loss.size() != 1)
        throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    EngineResult res;
    if (!loss.requires_grad()) return res;

    // Reachable requires-grad nodes, collected iteratively.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node()};
    seen.insert(loss.node());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        if (!n->grad_fn) continue;
        for (const auto& in : n->grad_fn->inputs) {
            Node* p = in.node_ptr().get();
            if (p && p->requires_grad && seen.insert(p).second) stack.push_back(p);
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

    // Mark nodes that can reach a target (ascending id: parents first).
    std::unordered_set<Node*> needed;
    if (targets) {
        for (const auto& t : *targets)
            if (t.defined()) needed.insert(t.node_ptr().get());
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (needed.count(n) || !n->grad_fn) continue;
            for (const auto& in : n->grad_fn->inputs) {
                if (needed.count(in.node_ptr().get())) {
                    needed.insert(n);
                    break;
                }
            }
        }
        if (!needed.count(loss.node())) return res;
    }

    GradModeGuard guard(create_graph);
    res.grads[loss.node()] = Tensor::full(loss.shape(), 1.0);

    for (Node* n : order) {
        auto git = res.grads.find(n);
        if (git == res.grads.end() || !n->grad_fn) continue;
        if (targets && !needed.count(n)) continue;
        auto input_grads = n->grad_fn->vjp(git->second);
        const auto& inputs = n->grad_fn->inputs;
        if (input_grads.size() != inputs.size())
            throw TensorError(std::string("backward: vjp arity mismatch in op ") + n->grad_fn->op);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            Node* p = inputs[i].node_ptr().get();
            if (!p || !p->requires_grad || !input_grads[i].defined()) continue;
            // Partial mode: grad flows only toward targets.
            if (targets && !needed.count(p)) continue;
            if (input_grads[i].shape() != p->shape)
                throw TensorError(std::string("backward: vjp shape mismatch in op ") + n->grad_fn->op + " " +
                                  shape_str(input_grads[i].shape()) + " vs " + shape_str(p->shape));
            auto ait = res.grads.find(p);
            if (ait == res.grads.end())
                res.grads.emplace(p, input_grads[i]);
            else
                ait->second = add(ait->second, input_grads[i]);
        }
    }
    return res;
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
    auto res = run_engine(loss, nullptr, create_graph);
    for (auto& [n, g] : res.grads) {
        if (n->grad_fn || !n->requires_grad) continue;
        if (n->grad)
            n->grad = add(Tensor::wrap(n->grad), g).node_ptr();
        else
            n->grad = g.node_ptr();
    }
}

std::vector<Tensor> grad_of(const Tensor& loss, const std::vector<Tensor>& targets, bool create_graph) {
    auto res = run_engine(loss, &targets, create_graph);
    std::vector<Tensor> out;
    out.reserve(targets.size());
    for (const auto& t : targets) {
        auto it = res.grads.find(t.node_ptr().get());
        out.push_back(it != res.grads.end() ? it->second : Tensor::zeros(t.shape()));
    }
    return out;
}

void release_graph(const Tensor& root) {
    if (!root.defined()) return;
    std::deque<std::shared_ptr<Node>> pending{root.node_ptr()};
    std::unordered_set<Node*> seen{root.node_ptr().get()};
    while (!pending.empty()) {
        auto n = pending.front();
        pending.pop_front();
        if (!n->grad_fn) continue;
        for (auto& in : n->grad_fn->inputs) {
            auto p = in.node_ptr();
            if (p && seen.insert(p.get()).second) pending.push_back(p);
        }
        n->grad_fn.reset();
    }
}

bool all_finite(const Tensor& t) {
    for (double x : t.data())
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace causaldiff
