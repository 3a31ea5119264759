#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace causaldiff {

// Shape or argument violations raised by tensor ops. The message always names
// the op and the offending shapes.
class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tensor;
struct Node;

// Reverse op: holds the parent tensors (in order) and a vector-Jacobian
// product. The vjp is written in terms of tensor primitives, so running it
// under grad mode yields a differentiable gradient graph (double backprop).
struct GradFn {
    const char* op = "";
    std::vector<Tensor> inputs;
    std::function<std::vector<Tensor>(const Tensor& grad_out)> vjp;
};

struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::shared_ptr<Node> grad;  // populated by backward() on leaves
    std::unique_ptr<GradFn> grad_fn;

    std::size_t size() const { return data.size(); }
};

// Dense 64-bit tensor participating in a dynamic reverse-mode graph.
// Rank 0 (scalar), 1 (vector) and 2 (matrix, row-major) are supported; that is
// all an MLP-scale model needs. Copies are shallow (shared node).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node()->shape; }
    std::size_t rank() const { return node()->shape.size(); }
    std::size_t size() const { return node()->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return node()->data; }
    std::vector<double>& mutable_data() { return node()->data; }
    double item() const;
    double at(std::size_t i) const { return node()->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node()->data[r * cols() + c]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool v);
    bool is_leaf() const { return !node_ || node_->grad_fn == nullptr; }

    // Gradient populated by backward(); undefined Tensor if never set.
    Tensor grad() const;
    void zero_grad();

    // Leaf view of the same data with no graph history.
    Tensor detach() const;
    // Deep copy (fresh buffer, leaf).
    Tensor clone() const;

    std::shared_ptr<Node> node_ptr() const { return node_; }
    Node* node() const;

    static Tensor wrap(std::shared_ptr<Node> n) { Tensor t; t.node_ = std::move(n); return t; }

private:
    std::shared_ptr<Node> node_;
};

// Thread-local switch: when off, ops do not record grad_fns. Used to cut
// graphs at evaluation boundaries.
bool grad_mode_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Graph construction helper used by every primitive.
Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<std::vector<Tensor>(const Tensor&)> vjp);

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);

Tensor add_const(const Tensor& a, double c);
Tensor mul_const(const Tensor& a, double c);

// Row-vector broadcast over the rows of a matrix: X[m,n] (op) v[n].
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
// Per-row scalar broadcast: row i of X (op) c[i].
Tensor scale_rows(const Tensor& x, const Tensor& c);
Tensor add_colvec(const Tensor& x, const Tensor& c);
// Scalar-tensor broadcast against every element.
Tensor add_scalar(const Tensor& x, const Tensor& s);
Tensor mul_scalar(const Tensor& x, const Tensor& s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// Piecewise-constant; treated as locally constant by the graph.
Tensor sign(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis0(const Tensor& a);  // [m,n] -> [n]
Tensor sum_axis1(const Tensor& a);  // [m,n] -> [m]
Tensor mean_axis1(const Tensor& a);
// Per-row max as a constant (no gradient); used for stable log-sum-exp.
Tensor rowmax_detached(const Tensor& a);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
// Row gather by constant index list; vjp scatters back.
Tensor select_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor reshape(const Tensor& a, const Shape& shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return mul_const(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_const(a, c); }

// ---- engine ----------------------------------------------------------------

// Populates .grad on every reachable leaf with requires_grad. Deterministic:
// two calls on the same graph produce bit-identical gradients.
void backward(const Tensor& loss, bool create_graph = false);

// Gradient of a scalar wrt arbitrary graph nodes (not just leaves). Does not
// touch .grad. With create_graph the returned tensors are differentiable.
std::vector<Tensor> grad_of(const Tensor& loss, const std::vector<Tensor>& targets,
                            bool create_graph = false);

// Breaks parent links iteratively so that deep unrolled graphs do not blow the
// stack through recursive shared_ptr destruction.
void release_graph(const Tensor& root);

bool all_finite(const Tensor& t);

}  // namespace causaldiff
