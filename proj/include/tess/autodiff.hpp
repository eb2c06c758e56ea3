#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tess/error.hpp"

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// Every value is a 2-D matrix; vectors are 1 x n rows and scalars are 1 x 1.
// Ops build a DAG of shared nodes. backward(loss) walks the DAG once in
// reverse topological order and accumulates d(loss)/d(node) into every node
// reachable from a requires_grad leaf.
//
// Retain policy: the graph lives as long as some Var refers to its output.
// Intermediate gradients are reset at the start of each backward() call, so
// calling backward() twice on the same graph is valid and adds the leaf
// gradients twice. Leaf gradients persist until zero_grad().

namespace tess::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
    Matrix value;
    Matrix grad;  // empty until first needed
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    Matrix& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : m_node(std::move(node)) { }

    const Matrix& value() const { return m_node->value; }
    Matrix& mutable_value() { return m_node->value; }
    /// Gradient, or an empty matrix if none has been accumulated.
    const Matrix& grad() const { return m_node->grad; }
    bool requires_grad() const { return m_node->requires_grad; }
    void zero_grad();

    Eigen::Index rows() const { return m_node->value.rows(); }
    Eigen::Index cols() const { return m_node->value.cols(); }
    double scalar() const;

    const std::shared_ptr<Node>& node() const { return m_node; }
    explicit operator bool() const { return static_cast<bool>(m_node); }

private:
    std::shared_ptr<Node> m_node;
};

Var parameter(Matrix value);
Var constant(Matrix value);
Var scalar_constant(double v);

// Shapes: (r x k)(k x c). Errors name the op and both shapes.
Var matmul(const Var& a, const Var& b);
/// Same shape, or b broadcast as a 1 x c row or a 1 x 1 scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product; b may be a 1 x 1 scalar broadcast over a.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var transpose(const Var& a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row-major flatten to 1 x (r*c).
Var flatten(const Var& a);
Var softmax_rows(const Var& a);
/// Per-row normalization with learned gain and bias (both 1 x c).
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Exact (erf) GELU.
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var sum(const Var& a);
/// mean((pred - target)^2) over all elements; target is not differentiated.
Var mse(const Var& pred, const Matrix& target);
/// -[y log p + (1-y) log(1-p)] summed over elements, p clamped to
/// [eps, 1-eps]. Gradient is zero where the clamp is active.
Var binary_cross_entropy(const Var& prob, const Matrix& target, double eps = 1e-7);
/// Inverted dropout with a fixed mask drawn from rng.
Var dropout(const Var& a, double rate, std::mt19937_64& rng);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Reverse pass from a 1 x 1 loss. Throws InvalidArgument on non-scalars.
void backward(const Var& loss);

} // namespace tess::ad
