#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gmsl/errors.hpp"

namespace gmsl {

// Plain dense value type used outside tapes (parameters, similarity matrices,
// frozen embeddings). Row-major.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::size_t size() const { return data.size(); }
};

// Tensor shapes are rank 0 (scalar), 1 (vector) or 2 (matrix); no broadcasting
// beyond scalar multiplication. Internally everything is a (rows, cols) block.
struct Shape {
    std::size_t rows = 1;
    std::size_t cols = 1;
    int rank = 2;

    static Shape scalar() { return {1, 1, 0}; }
    static Shape vec(std::size_t n) { return {1, n, 1}; }
    static Shape mat(std::size_t r, std::size_t c) { return {r, c, 2}; }

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape& o) const {
        return rows == o.rows && cols == o.cols && rank == o.rank;
    }
    std::string str() const {
        if (rank == 0) return "()";
        if (rank == 1) return "(" + std::to_string(cols) + ",)";
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }
};

class Tape;

// Lightweight handle into a Tape node. Valid for the lifetime of its tape.
struct Tensor {
    Tape* tape = nullptr;
    int id = -1;
    Shape shape;

    std::size_t rows() const { return shape.rows; }
    std::size_t cols() const { return shape.cols; }
};

using IndexLists = std::vector<std::vector<int>>;

namespace detail {

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Relu,
    ConcatCols,
    ConcatRows,
    SumRows,
    SumAll,
    GatherSum,
    ScalarMul,
    Log,
    Exp,
    RowSoftmax,
    LogRowSoftmax,
    CosineRows,
    StackRows,
};

struct TapeNode {
    Op op = Op::Leaf;
    Shape shape;
    std::vector<int> inputs;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    double scalar = 0.0;                                  // ScalarMul
    std::shared_ptr<const IndexLists> lists;              // GatherSum
    std::vector<double> aux;                              // CosineRows: row norms of A then B
};

}  // namespace detail

class Tape {
public:
    Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad) {
        if (values.size() != shape.size())
            throw ShapeError("leaf: " + std::to_string(values.size()) + " values for shape " +
                             shape.str());
        detail::TapeNode node;
        node.op = detail::Op::Leaf;
        node.shape = shape;
        node.value = std::move(values);
        node.requires_grad = requires_grad;
        return push(std::move(node));
    }

    Tensor constant(Shape shape, std::vector<double> values) {
        return leaf(shape, std::move(values), false);
    }

    Tensor constant(const Matrix& m) {
        return leaf(Shape::mat(m.rows, m.cols), m.data, false);
    }

    Tensor variable(const Matrix& m) {
        return leaf(Shape::mat(m.rows, m.cols), m.data, true);
    }

    Tensor scalar_constant(double v) { return leaf(Shape::scalar(), {v}, false); }

    const std::vector<double>& value(const Tensor& t) const { return node(t).value; }
    const std::vector<double>& grad(const Tensor& t) const { return node(t).grad; }

    double scalar_value(const Tensor& t) const {
        if (t.shape.size() != 1) throw ShapeError("scalar_value on non-scalar tensor");
        return node(t).value[0];
    }

    Matrix matrix_value(const Tensor& t) const {
        Matrix m(t.shape.rows, t.shape.cols);
        m.data = node(t).value;
        return m;
    }

    Matrix matrix_grad(const Tensor& t) const {
        Matrix m(t.shape.rows, t.shape.cols);
        m.data = node(t).grad;
        return m;
    }

    // Reverse sweep in exact reverse append order. Grads of all nodes are
    // reset to zero first, so unreachable tensors report zero gradient.
    void backward(const Tensor& loss) {
        if (nodes_.empty()) throw NonScalarLossError("backward on empty tape");
        if (loss.tape != this) throw ShapeError("backward: tensor from another tape");
        if (loss.shape.size() != 1) throw NonScalarLossError("loss must be a scalar");
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
        for (int i = loss.id; i >= 0; --i) backward_node(i);
    }

    std::size_t node_count() const { return nodes_.size(); }

    // --- op construction (used by the free-function API below) ---------------
    Tensor push(detail::TapeNode node) {
        nodes_.push_back(std::move(node));
        Tensor t;
        t.tape = this;
        t.id = static_cast<int>(nodes_.size()) - 1;
        t.shape = nodes_.back().shape;
        return t;
    }

    detail::TapeNode& node(const Tensor& t) {
        return nodes_[static_cast<std::size_t>(t.id)];
    }
    const detail::TapeNode& node(const Tensor& t) const {
        return nodes_[static_cast<std::size_t>(t.id)];
    }

    bool any_requires_grad(const std::vector<int>& ids) const {
        for (int id : ids)
            if (nodes_[static_cast<std::size_t>(id)].requires_grad) return true;
        return false;
    }

private:
    void backward_node(int idx) {
        using detail::Op;
        detail::TapeNode& n = nodes_[static_cast<std::size_t>(idx)];
        if (!n.requires_grad || n.op == Op::Leaf) return;
        const std::vector<double>& g = n.grad;
        auto in = [&](std::size_t k) -> detail::TapeNode& {
            return nodes_[static_cast<std::size_t>(n.inputs[k])];
        };
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                detail::TapeNode& A = in(0);
                detail::TapeNode& B = in(1);
                const std::size_t m = A.shape.rows, k = A.shape.cols, p = B.shape.cols;
                if (A.requires_grad) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < k; ++j) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < p; ++c)
                                acc += g[i * p + c] * B.value[j * p + c];
                            A.grad[i * k + j] += acc;
                        }
                }
                if (B.requires_grad) {
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < p; ++j) {
                            double acc = 0.0;
                            for (std::size_t r = 0; r < m; ++r)
                                acc += A.value[r * k + i] * g[r * p + j];
                            B.grad[i * p + j] += acc;
                        }
                }
                break;
            }
            case Op::Transpose: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < n.shape.rows; ++i)
                    for (std::size_t j = 0; j < n.shape.cols; ++j)
                        A.grad[j * n.shape.rows + i] += g[i * n.shape.cols + j];
                break;
            }
            case Op::Add: {
                for (int k2 = 0; k2 < 2; ++k2) {
                    detail::TapeNode& A = in(static_cast<std::size_t>(k2));
                    if (!A.requires_grad) continue;
                    for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                if (in(0).requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) in(0).grad[i] += g[i];
                if (in(1).requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) in(1).grad[i] -= g[i];
                break;
            }
            case Op::Mul: {
                detail::TapeNode& A = in(0);
                detail::TapeNode& B = in(1);
                if (A.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * B.value[i];
                if (B.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * A.value[i];
                break;
            }
            case Op::Relu: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (A.value[i] > 0.0) A.grad[i] += g[i];
                break;
            }
            case Op::ConcatCols: {
                detail::TapeNode& A = in(0);
                detail::TapeNode& B = in(1);
                const std::size_t ca = A.shape.cols, cb = B.shape.cols;
                for (std::size_t i = 0; i < n.shape.rows; ++i) {
                    if (A.requires_grad)
                        for (std::size_t j = 0; j < ca; ++j)
                            A.grad[i * ca + j] += g[i * (ca + cb) + j];
                    if (B.requires_grad)
                        for (std::size_t j = 0; j < cb; ++j)
                            B.grad[i * cb + j] += g[i * (ca + cb) + ca + j];
                }
                break;
            }
            case Op::ConcatRows: {
                detail::TapeNode& A = in(0);
                detail::TapeNode& B = in(1);
                if (A.requires_grad)
                    for (std::size_t i = 0; i < A.value.size(); ++i) A.grad[i] += g[i];
                if (B.requires_grad)
                    for (std::size_t i = 0; i < B.value.size(); ++i)
                        B.grad[i] += g[A.value.size() + i];
                break;
            }
            case Op::SumRows: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < A.shape.rows; ++i)
                    for (std::size_t j = 0; j < A.shape.cols; ++j)
                        A.grad[i * A.shape.cols + j] += g[j];
                break;
            }
            case Op::SumAll: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < A.value.size(); ++i) A.grad[i] += g[0];
                break;
            }
            case Op::GatherSum: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                const std::size_t c = A.shape.cols;
                const IndexLists& lists = *n.lists;
                for (std::size_t i = 0; i < lists.size(); ++i)
                    for (int src : lists[i])
                        for (std::size_t j = 0; j < c; ++j)
                            A.grad[static_cast<std::size_t>(src) * c + j] += g[i * c + j];
                break;
            }
            case Op::ScalarMul: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += n.scalar * g[i];
                break;
            }
            case Op::Log: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / A.value[i];
                break;
            }
            case Op::Exp: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.value[i];
                break;
            }
            case Op::RowSoftmax: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                const std::size_t c = n.shape.cols;
                for (std::size_t i = 0; i < n.shape.rows; ++i) {
                    const double* s = n.value.data() + i * c;
                    const double* gr = g.data() + i * c;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += gr[j] * s[j];
                    for (std::size_t j = 0; j < c; ++j)
                        A.grad[i * c + j] += s[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::LogRowSoftmax: {
                detail::TapeNode& A = in(0);
                if (!A.requires_grad) break;
                const std::size_t c = n.shape.cols;
                for (std::size_t i = 0; i < n.shape.rows; ++i) {
                    const double* y = n.value.data() + i * c;
                    const double* gr = g.data() + i * c;
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < c; ++j) gsum += gr[j];
                    for (std::size_t j = 0; j < c; ++j)
                        A.grad[i * c + j] += gr[j] - std::exp(y[j]) * gsum;
                }
                break;
            }
            case Op::CosineRows: {
                detail::TapeNode& A = in(0);
                detail::TapeNode& B = in(1);
                const std::size_t na = A.shape.rows, nb = B.shape.rows, d = A.shape.cols;
                const double* norm_a = n.aux.data();
                const double* norm_b = n.aux.data() + na;
                for (std::size_t i = 0; i < na; ++i) {
                    for (std::size_t j = 0; j < nb; ++j) {
                        double gij = g[i * nb + j];
                        if (gij == 0.0) continue;
                        double cij = n.value[i * nb + j];
                        double inv = 1.0 / (norm_a[i] * norm_b[j]);
                        if (A.requires_grad) {
                            double ia2 = 1.0 / (norm_a[i] * norm_a[i]);
                            for (std::size_t k = 0; k < d; ++k)
                                A.grad[i * d + k] +=
                                    gij * (B.value[j * d + k] * inv - cij * A.value[i * d + k] * ia2);
                        }
                        if (B.requires_grad) {
                            double ib2 = 1.0 / (norm_b[j] * norm_b[j]);
                            for (std::size_t k = 0; k < d; ++k)
                                B.grad[j * d + k] +=
                                    gij * (A.value[i * d + k] * inv - cij * B.value[j * d + k] * ib2);
                        }
                    }
                }
                break;
            }
            case Op::StackRows: {
                const std::size_t c = n.shape.cols;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    detail::TapeNode& A = in(k);
                    if (!A.requires_grad) continue;
                    for (std::size_t j = 0; j < c; ++j) A.grad[j] += g[k * c + j];
                }
                break;
            }
        }
    }

    std::vector<detail::TapeNode> nodes_;
};

namespace detail {

inline Tape& same_tape(const Tensor& a, const Tensor& b) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw ShapeError("operands belong to different tapes");
    return *a.tape;
}

inline TapeNode make_node(Op op, Shape shape, std::vector<int> inputs, const Tape& tape) {
    TapeNode n;
    n.op = op;
    n.shape = shape;
    n.requires_grad = tape.any_requires_grad(inputs);
    n.inputs = std::move(inputs);
    n.value.resize(shape.size());
    return n;
}

}  // namespace detail

// --- primitive ops -------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::same_tape(a, b);
    if (a.shape.cols != b.shape.rows)
        throw ShapeError("matmul: " + a.shape.str() + " x " + b.shape.str());
    auto n = detail::make_node(detail::Op::MatMul, Shape::mat(a.shape.rows, b.shape.cols),
                               {a.id, b.id}, tape);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t m = a.shape.rows, k = a.shape.cols, p = b.shape.cols;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double aij = av[i * k + j];
            if (aij == 0.0) continue;
            for (std::size_t c = 0; c < p; ++c) n.value[i * p + c] += aij * bv[j * p + c];
        }
    return tape.push(std::move(n));
}

inline Tensor transpose(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::Transpose, Shape::mat(a.shape.cols, a.shape.rows),
                               {a.id}, tape);
    const auto& av = tape.value(a);
    for (std::size_t i = 0; i < a.shape.rows; ++i)
        for (std::size_t j = 0; j < a.shape.cols; ++j)
            n.value[j * a.shape.rows + i] = av[i * a.shape.cols + j];
    return tape.push(std::move(n));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::same_tape(a, b);
    if (!(a.shape.rows == b.shape.rows && a.shape.cols == b.shape.cols))
        throw ShapeError("add: " + a.shape.str() + " vs " + b.shape.str());
    auto n = detail::make_node(detail::Op::Add, a.shape, {a.id, b.id}, tape);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] + bv[i];
    return tape.push(std::move(n));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::same_tape(a, b);
    if (!(a.shape.rows == b.shape.rows && a.shape.cols == b.shape.cols))
        throw ShapeError("sub: " + a.shape.str() + " vs " + b.shape.str());
    auto n = detail::make_node(detail::Op::Sub, a.shape, {a.id, b.id}, tape);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] - bv[i];
    return tape.push(std::move(n));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::same_tape(a, b);
    if (!(a.shape.rows == b.shape.rows && a.shape.cols == b.shape.cols))
        throw ShapeError("mul: " + a.shape.str() + " vs " + b.shape.str());
    auto n = detail::make_node(detail::Op::Mul, a.shape, {a.id, b.id}, tape);
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] * bv[i];
    return tape.push(std::move(n));
}

inline Tensor relu(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::Relu, a.shape, {a.id}, tape);
    const auto& av = tape.value(a);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = av[i] > 0.0 ? av[i] : 0.0;
    return tape.push(std::move(n));
}

inline Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    Tape& tape = detail::same_tape(a, b);
    if (axis == 1) {
        if (a.shape.rows != b.shape.rows)
            throw ShapeError("concat axis 1: row mismatch " + a.shape.str() + " vs " +
                             b.shape.str());
        auto n = detail::make_node(detail::Op::ConcatCols,
                                   Shape::mat(a.shape.rows, a.shape.cols + b.shape.cols),
                                   {a.id, b.id}, tape);
        const auto& av = tape.value(a);
        const auto& bv = tape.value(b);
        const std::size_t ca = a.shape.cols, cb = b.shape.cols;
        for (std::size_t i = 0; i < a.shape.rows; ++i) {
            for (std::size_t j = 0; j < ca; ++j) n.value[i * (ca + cb) + j] = av[i * ca + j];
            for (std::size_t j = 0; j < cb; ++j) n.value[i * (ca + cb) + ca + j] = bv[i * cb + j];
        }
        return tape.push(std::move(n));
    }
    if (axis == 0) {
        if (a.shape.cols != b.shape.cols)
            throw ShapeError("concat axis 0: col mismatch " + a.shape.str() + " vs " +
                             b.shape.str());
        auto n = detail::make_node(detail::Op::ConcatRows,
                                   Shape::mat(a.shape.rows + b.shape.rows, a.shape.cols),
                                   {a.id, b.id}, tape);
        const auto& av = tape.value(a);
        const auto& bv = tape.value(b);
        std::copy(av.begin(), av.end(), n.value.begin());
        std::copy(bv.begin(), bv.end(),
                  n.value.begin() + static_cast<std::ptrdiff_t>(av.size()));
        return tape.push(std::move(n));
    }
    throw ShapeError("concat: axis must be 0 or 1");
}

// Collapses the row axis: (n, m) -> vector of m column sums.
inline Tensor sum_rows(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::SumRows, Shape::vec(a.shape.cols), {a.id}, tape);
    const auto& av = tape.value(a);
    for (std::size_t i = 0; i < a.shape.rows; ++i)
        for (std::size_t j = 0; j < a.shape.cols; ++j) n.value[j] += av[i * a.shape.cols + j];
    return tape.push(std::move(n));
}

inline Tensor sum_all(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::SumAll, Shape::scalar(), {a.id}, tape);
    const auto& av = tape.value(a);
    double acc = 0.0;
    for (double v : av) acc += v;
    n.value[0] = acc;
    return tape.push(std::move(n));
}

// Row i of the output is the sum of the rows of `a` named by lists[i]; an
// empty list produces a zero row. This is the message-aggregation primitive.
inline Tensor gather_sum(const Tensor& a, std::shared_ptr<const IndexLists> lists) {
    Tape& tape = *a.tape;
    for (const auto& l : *lists)
        for (int idx : l)
            if (idx < 0 || static_cast<std::size_t>(idx) >= a.shape.rows)
                throw ShapeError("gather_sum: index " + std::to_string(idx) + " out of range");
    auto n = detail::make_node(detail::Op::GatherSum, Shape::mat(lists->size(), a.shape.cols),
                               {a.id}, tape);
    n.lists = lists;
    const auto& av = tape.value(a);
    const std::size_t c = a.shape.cols;
    for (std::size_t i = 0; i < lists->size(); ++i)
        for (int src : (*lists)[i])
            for (std::size_t j = 0; j < c; ++j)
                n.value[i * c + j] += av[static_cast<std::size_t>(src) * c + j];
    return tape.push(std::move(n));
}

inline Tensor gather_sum(const Tensor& a, IndexLists lists) {
    return gather_sum(a, std::make_shared<const IndexLists>(std::move(lists)));
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::ScalarMul, a.shape, {a.id}, tape);
    n.scalar = c;
    const auto& av = tape.value(a);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = c * av[i];
    return tape.push(std::move(n));
}

inline Tensor log(const Tensor& a) {
    Tape& tape = *a.tape;
    const auto& av = tape.value(a);
    for (double v : av)
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
    auto n = detail::make_node(detail::Op::Log, a.shape, {a.id}, tape);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::log(av[i]);
    return tape.push(std::move(n));
}

inline Tensor exp(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::Exp, a.shape, {a.id}, tape);
    const auto& av = tape.value(a);
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] = std::exp(av[i]);
    return tape.push(std::move(n));
}

// Row-wise softmax, stabilized by per-row max subtraction.
inline Tensor row_softmax(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::RowSoftmax, a.shape, {a.id}, tape);
    const auto& av = tape.value(a);
    const std::size_t c = a.shape.cols;
    for (std::size_t i = 0; i < a.shape.rows; ++i) {
        const double* row = av.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(row[j] - mx);
            n.value[i * c + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] /= sum;
    }
    return tape.push(std::move(n));
}

// Fused log-softmax (max subtraction + log-sum-exp); never log(softmax).
inline Tensor log_row_softmax(const Tensor& a) {
    Tape& tape = *a.tape;
    auto n = detail::make_node(detail::Op::LogRowSoftmax, a.shape, {a.id}, tape);
    const auto& av = tape.value(a);
    const std::size_t c = a.shape.cols;
    for (std::size_t i = 0; i < a.shape.rows; ++i) {
        const double* row = av.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < c; ++j) n.value[i * c + j] = row[j] - lse;
    }
    return tape.push(std::move(n));
}

// Pairwise cosine between the rows of a and the rows of b: (na, d) x (nb, d)
// -> (na, nb).
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    Tape& tape = detail::same_tape(a, b);
    if (a.shape.cols != b.shape.cols)
        throw ShapeError("cosine_rows: dim mismatch " + a.shape.str() + " vs " + b.shape.str());
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t na = a.shape.rows, nb = b.shape.rows, d = a.shape.cols;
    std::vector<double> norms(na + nb);
    for (std::size_t i = 0; i < na; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += av[i * d + k] * av[i * d + k];
        norms[i] = std::sqrt(s);
        if (norms[i] == 0.0) throw ZeroNormError("cosine_rows: zero-norm row in first operand");
    }
    for (std::size_t j = 0; j < nb; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += bv[j * d + k] * bv[j * d + k];
        norms[na + j] = std::sqrt(s);
        if (norms[na + j] == 0.0)
            throw ZeroNormError("cosine_rows: zero-norm row in second operand");
    }
    auto n = detail::make_node(detail::Op::CosineRows, Shape::mat(na, nb), {a.id, b.id}, tape);
    n.aux = norms;
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += av[i * d + k] * bv[j * d + k];
            n.value[i * nb + j] = dot / (norms[i] * norms[na + j]);
        }
    return tape.push(std::move(n));
}

// Stacks k same-width vectors (or 1-row matrices) into a (k, m) matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty input");
    Tape& tape = *rows[0].tape;
    const std::size_t m = rows[0].shape.cols;
    std::vector<int> ids;
    for (const Tensor& t : rows) {
        if (t.tape != &tape) throw ShapeError("stack_rows: tensors from different tapes");
        if (t.shape.rows != 1 || t.shape.cols != m)
            throw ShapeError("stack_rows: every row must be a width-" + std::to_string(m) +
                             " vector");
        ids.push_back(t.id);
    }
    auto n = detail::make_node(detail::Op::StackRows, Shape::mat(rows.size(), m), ids, tape);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& v = tape.value(rows[k]);
        std::copy(v.begin(), v.end(), n.value.begin() + static_cast<std::ptrdiff_t>(k * m));
    }
    return tape.push(std::move(n));
}

// --- gradient checking ----------------------------------------------------------

using TensorProgram = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Compares reverse-mode gradients against central finite differences
// (f(x+eps e) - f(x-eps e)) / 2eps elementwise and returns the maximum
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const TensorProgram& f, const std::vector<Matrix>& inputs,
                         double epsilon = 1e-5) {
    if (epsilon < 1e-7 || epsilon > 1e-3)
        throw DomainError("grad_check epsilon must be in [1e-7, 1e-3]");

    auto run = [&](const std::vector<Matrix>& values, bool with_grad)
        -> std::pair<double, std::vector<Matrix>> {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(values.size());
        for (const Matrix& m : values)
            leaves.push_back(tape.leaf(Shape::mat(m.rows, m.cols), m.data, with_grad));
        Tensor loss = f(tape, leaves);
        if (loss.shape.size() != 1) throw NonScalarLossError("grad_check: program not scalar");
        double value = tape.value(loss)[0];
        std::vector<Matrix> grads;
        if (with_grad) {
            tape.backward(loss);
            for (const Tensor& l : leaves) grads.push_back(tape.matrix_grad(l));
        }
        return {value, grads};
    };

    auto [base_value, analytic] = run(inputs, true);
    (void)base_value;

    double max_rel = 0.0;
    std::vector<Matrix> work = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
            const double orig = work[t].data[i];
            work[t].data[i] = orig + epsilon;
            double up = run(work, false).first;
            work[t].data[i] = orig - epsilon;
            double down = run(work, false).first;
            work[t].data[i] = orig;
            double numeric = (up - down) / (2.0 * epsilon);
            double a = analytic[t].data[i];
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace gmsl
