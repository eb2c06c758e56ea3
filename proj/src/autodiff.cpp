#include "tess/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace tess::ad {

namespace {

std::string shape(const Matrix& m)
{
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b)
{
    throw InvalidArgument(std::string(op) + ": incompatible shapes " + shape(a) + " and "
                          + shape(b));
}

Var make_node(Matrix value, const char* op, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> fn)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    n->is_leaf = false;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return Var(std::move(n));
}

void accumulate(const std::shared_ptr<Node>& p, const Matrix& g)
{
    if (p->requires_grad) p->grad_buffer() += g;
}

} // namespace

Matrix& Node::grad_buffer()
{
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
        grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
}

void Var::zero_grad()
{
    if (m_node->grad.size()) m_node->grad.setZero();
}

double Var::scalar() const
{
    if (value().size() != 1) throw InvalidArgument("scalar(): value is " + shape(value()));
    return value()(0, 0);
}

Var parameter(Matrix value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var constant(Matrix value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

Var matmul(const Var& a, const Var& b)
{
    if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() * b.value(), "matmul", {pa, pb}, [pa, pb](Node& self) {
        if (pa->requires_grad) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
        if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
    });
}

Var add(const Var& a, const Var& b)
{
    auto pa = a.node(), pb = b.node();
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        return make_node(av + bv, "add", {pa, pb}, [pa, pb](Node& self) {
            accumulate(pa, self.grad);
            accumulate(pb, self.grad);
        });
    }
    if (bv.rows() == 1 && bv.cols() == av.cols()) {
        Matrix out = av.rowwise() + bv.row(0);
        return make_node(std::move(out), "add_row", {pa, pb}, [pa, pb](Node& self) {
            accumulate(pa, self.grad);
            if (pb->requires_grad) pb->grad_buffer() += self.grad.colwise().sum();
        });
    }
    if (bv.size() == 1) {
        Matrix out = av.array() + bv(0, 0);
        return make_node(std::move(out), "add_scalar", {pa, pb}, [pa, pb](Node& self) {
            accumulate(pa, self.grad);
            if (pb->requires_grad) pb->grad_buffer()(0, 0) += self.grad.sum();
        });
    }
    shape_error("add", av, bv);
}

Var sub(const Var& a, const Var& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
    auto pa = a.node(), pb = b.node();
    return make_node(a.value() - b.value(), "sub", {pa, pb}, [pa, pb](Node& self) {
        accumulate(pa, self.grad);
        if (pb->requires_grad) pb->grad_buffer() -= self.grad;
    });
}

Var mul(const Var& a, const Var& b)
{
    auto pa = a.node(), pb = b.node();
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        return make_node(av.cwiseProduct(bv), "mul", {pa, pb}, [pa, pb](Node& self) {
            if (pa->requires_grad) pa->grad_buffer() += self.grad.cwiseProduct(pb->value);
            if (pb->requires_grad) pb->grad_buffer() += self.grad.cwiseProduct(pa->value);
        });
    }
    if (bv.size() == 1) {
        return make_node(av * bv(0, 0), "mul_scalar", {pa, pb}, [pa, pb](Node& self) {
            if (pa->requires_grad) pa->grad_buffer() += self.grad * pb->value(0, 0);
            if (pb->requires_grad) pb->grad_buffer()(0, 0) += self.grad.cwiseProduct(pa->value).sum();
        });
    }
    shape_error("mul", av, bv);
}

Var scale(const Var& a, double s)
{
    auto pa = a.node();
    return make_node(a.value() * s, "scale", {pa}, [pa, s](Node& self) {
        accumulate(pa, self.grad * s);
    });
}

Var transpose(const Var& a)
{
    auto pa = a.node();
    return make_node(a.value().transpose(), "transpose", {pa}, [pa](Node& self) {
        accumulate(pa, self.grad.transpose());
    });
}

Var concat_rows(const std::vector<Var>& parts)
{
    detail::require(!parts.empty(), "concat_rows: no inputs");
    const Eigen::Index cols = parts.front().cols();
    Eigen::Index rows = 0;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Var& p : parts) {
        if (p.cols() != cols) shape_error("concat_rows", parts.front().value(), p.value());
        rows += p.rows();
        nodes.push_back(p.node());
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    auto captured = nodes;
    return make_node(std::move(out), "concat_rows", std::move(nodes), [captured](Node& self) {
        Eigen::Index r0 = 0;
        for (const auto& p : captured) {
            if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(r0, p->value.rows());
            r0 += p->value.rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts)
{
    detail::require(!parts.empty(), "concat_cols: no inputs");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Var& p : parts) {
        if (p.rows() != rows) shape_error("concat_cols", parts.front().value(), p.value());
        cols += p.cols();
        nodes.push_back(p.node());
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    auto captured = nodes;
    return make_node(std::move(out), "concat_cols", std::move(nodes), [captured](Node& self) {
        Eigen::Index c0 = 0;
        for (const auto& p : captured) {
            if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(c0, p->value.cols());
            c0 += p->value.cols();
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.rows())
        throw InvalidArgument("slice_rows: rows [" + std::to_string(start) + ", "
                              + std::to_string(start + count) + ") out of " + shape(a.value()));
    auto pa = a.node();
    return make_node(a.value().middleRows(start, count), "slice_rows", {pa},
                     [pa, start, count](Node& self) {
                         if (pa->requires_grad) pa->grad_buffer().middleRows(start, count) += self.grad;
                     });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count)
{
    if (start < 0 || count < 0 || start + count > a.cols())
        throw InvalidArgument("slice_cols: cols [" + std::to_string(start) + ", "
                              + std::to_string(start + count) + ") out of " + shape(a.value()));
    auto pa = a.node();
    return make_node(a.value().middleCols(start, count), "slice_cols", {pa},
                     [pa, start, count](Node& self) {
                         if (pa->requires_grad) pa->grad_buffer().middleCols(start, count) += self.grad;
                     });
}

Var flatten(const Var& a)
{
    auto pa = a.node();
    const Eigen::Index r = a.rows(), c = a.cols();
    Matrix out(1, r * c);
    for (Eigen::Index i = 0; i < r; ++i) out.block(0, i * c, 1, c) = a.value().row(i);
    return make_node(std::move(out), "flatten", {pa}, [pa, r, c](Node& self) {
        if (!pa->requires_grad) return;
        Matrix& g = pa->grad_buffer();
        for (Eigen::Index i = 0; i < r; ++i) g.row(i) += self.grad.block(0, i * c, 1, c);
    });
}

Var softmax_rows(const Var& a)
{
    auto pa = a.node();
    Matrix out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        out.row(i).array() -= out.row(i).maxCoeff();
        out.row(i) = out.row(i).array().exp();
        out.row(i) /= out.row(i).sum();
    }
    return make_node(std::move(out), "softmax_rows", {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        const Matrix& y = self.value;
        const Eigen::VectorXd dots = (self.grad.cwiseProduct(y)).rowwise().sum();
        pa->grad_buffer() += y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
    });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps)
{
    const Eigen::Index n = a.rows(), d = a.cols();
    if (gamma.rows() != 1 || gamma.cols() != d) shape_error("layer_norm(gamma)", a.value(), gamma.value());
    if (beta.rows() != 1 || beta.cols() != d) shape_error("layer_norm(beta)", a.value(), beta.value());
    auto pa = a.node(), pg = gamma.node(), pb = beta.node();

    Matrix xhat(n, d);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = a.value().row(i).mean();
        const double var = (a.value().row(i).array() - mu).square().mean();
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (a.value().row(i).array() - mu) * inv_std[i];
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
    out.rowwise() += beta.value().row(0);

    return make_node(std::move(out), "layer_norm", {pa, pg, pb},
                     [pa, pg, pb, xhat, inv_std, d](Node& self) {
                         const Matrix& g = self.grad;
                         if (pg->requires_grad) pg->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
                         if (pb->requires_grad) pb->grad_buffer() += g.colwise().sum();
                         if (!pa->requires_grad) return;
                         const Matrix gx = (g.array().rowwise() * pg->value.row(0).array()).matrix();
                         Matrix& ga = pa->grad_buffer();
                         for (Eigen::Index i = 0; i < g.rows(); ++i) {
                             const double m1 = gx.row(i).mean();
                             const double m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
                             ga.row(i).array() += inv_std[i]
                                                  * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
                         }
                         (void)d;
                     });
}

Var gelu(const Var& a)
{
    auto pa = a.node();
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    Matrix out = a.value().unaryExpr([inv_sqrt2](double x) {
        return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    });
    return make_node(std::move(out), "gelu", {pa}, [pa, inv_sqrt2](Node& self) {
        if (!pa->requires_grad) return;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const Matrix d = pa->value.unaryExpr([&](double x) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
        pa->grad_buffer() += self.grad.cwiseProduct(d);
    });
}

Var sigmoid(const Var& a)
{
    auto pa = a.node();
    Matrix out = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return make_node(std::move(out), "sigmoid", {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        const Matrix& y = self.value;
        pa->grad_buffer() += self.grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    });
}

Var sum(const Var& a)
{
    auto pa = a.node();
    return make_node(Matrix::Constant(1, 1, a.value().sum()), "sum", {pa}, [pa](Node& self) {
        if (pa->requires_grad) pa->grad_buffer().array() += self.grad(0, 0);
    });
}

Var mse(const Var& pred, const Matrix& target)
{
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        shape_error("mse", pred.value(), target);
    auto pp = pred.node();
    const Matrix diff = pred.value() - target;
    const double n = static_cast<double>(diff.size());
    return make_node(Matrix::Constant(1, 1, diff.squaredNorm() / n), "mse", {pp},
                     [pp, diff, n](Node& self) {
                         if (pp->requires_grad) pp->grad_buffer() += diff * (2.0 * self.grad(0, 0) / n);
                     });
}

Var binary_cross_entropy(const Var& prob, const Matrix& target, double eps)
{
    if (prob.rows() != target.rows() || prob.cols() != target.cols())
        shape_error("binary_cross_entropy", prob.value(), target);
    auto pp = prob.node();
    const Matrix& p = prob.value();
    double loss = 0;
    Matrix dp(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double raw = p(i);
        const double c = std::clamp(raw, eps, 1.0 - eps);
        const double y = target(i);
        loss -= y * std::log(c) + (1.0 - y) * std::log(1.0 - c);
        dp(i) = (raw < eps || raw > 1.0 - eps) ? 0.0 : (-y / c + (1.0 - y) / (1.0 - c));
    }
    return make_node(Matrix::Constant(1, 1, loss), "binary_cross_entropy", {pp},
                     [pp, dp](Node& self) {
                         if (pp->requires_grad) pp->grad_buffer() += dp * self.grad(0, 0);
                     });
}

Var dropout(const Var& a, double rate, std::mt19937_64& rng)
{
    detail::require(rate >= 0 && rate < 1, "dropout: rate must lie in [0,1)");
    if (rate == 0) return a;
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    auto pa = a.node();
    return make_node(a.value().cwiseProduct(mask), "dropout", {pa}, [pa, mask](Node& self) {
        accumulate(pa, self.grad.cwiseProduct(mask));
    });
}

void backward(const Var& loss)
{
    if (!loss) throw InvalidArgument("backward: empty variable");
    if (loss.value().size() != 1)
        throw InvalidArgument("backward: loss must be 1x1, got " + shape(loss.value()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS -> topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    }
    loss.node()->grad_buffer()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

} // namespace tess::ad
