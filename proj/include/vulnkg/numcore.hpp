#pragma once

#include "vulnkg/util.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vulnkg::num {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or Inf.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TapeError : std::logic_error {
    using std::logic_error::logic_error;
};

/// A trainable value with an accumulated gradient of the same shape.
struct Parameter {
    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    std::string name;
    Matrix value;
    Matrix grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been cleared.
class Tensor {
public:
    Tensor() = default;

    const Matrix& value() const;
    /// Gradient from the last backward pass (zeros when none reached it).
    Matrix grad() const;
    bool requires_grad() const;
    std::vector<Index> shape() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Tape& tape() const;
    bool valid() const { return tape_ != nullptr; }
    double item() const;

private:
    friend class Tape;
    Tensor(Tape* t, std::size_t id, std::uint64_t gen) : tape_(t), id_(id), generation_(gen) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
    std::uint64_t generation_ = 0;
};

/// Reverse-mode tape. Single-threaded; run one tape per worker.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Constant or differentiable leaf holding a copy of `value`.
    Tensor input(Matrix value, bool requires_grad = false);
    /// Leaf bound to a parameter; backward accumulates into `p.grad`.
    Tensor param(Parameter& p);

    /// Runs reverse mode from a scalar loss.
    void backward(const Tensor& loss);
    /// Adds `upstream` to the pending gradient of `t` (for chaining tapes).
    void seed(const Tensor& t, const Matrix& upstream);
    /// Propagates all seeded gradients, then discards intermediate grads.
    void backward();

    /// When deferred, parameter gradients stay on the tape until
    /// `flush_parameter_grads` is called (lets workers merge in a fixed order).
    void defer_parameter_grads(bool on) { defer_params_ = on; }
    void flush_parameter_grads();

    void clear();
    std::size_t size() const { return nodes_.size(); }

    // Internal API used by op implementations.
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Matrix grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter* param = nullptr;
        std::function<void(Tape&, const Node&)> backward;

        const Matrix& val() const { return external ? *external : value; }
    };
    Tensor record(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> bw);
    void accumulate(std::size_t id, Matrix g);
    const Node& node(const Tensor& t) const;
    const Node& at(std::size_t id) const { return nodes_[id]; }
    std::size_t id_of(const Tensor& t) const;

private:
    friend class Tensor;
    void propagate();

    std::deque<Node> nodes_;
    std::uint64_t generation_ = 1;
    bool defer_params_ = false;
    std::vector<std::pair<Parameter*, Matrix>> pending_params_;
};

// Elementwise ops. Binary ops require identical shapes.
enum class OpKind { add, sub, mul, relu, sigmoid, scale };

Tensor apply(OpKind kind, const Tensor& a, std::optional<Tensor> b = std::nullopt, double factor = 1.0);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

Tensor matmul(const Tensor& a, const Tensor& b);
/// Adds a 1×n row to every row of an m×n tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
/// Row i of the result is the sum of `values` rows whose id equals i.
Tensor segment_sum(const Tensor& values, std::span<const Index> segment_ids, Index num_segments);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
/// Multiplies row i by the constant weights[i].
Tensor scale_rows(const Tensor& a, std::span<const double> weights);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor row_block(const Tensor& a, Index start, Index count);
Tensor sum(const Tensor& a);
/// Per-row L1 or L2 norm as a column.
Tensor row_norm(const Tensor& a, int p);
/// Per-row standardization (x - mean) / sqrt(var + eps), no affine part. Zero rows stay zero.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
/// log(max(x, floor)) elementwise.
Tensor log_clamped(const Tensor& a, double floor);
/// Picks single elements a(i, 0) for the given rows into a column.
Tensor pick(const Tensor& a, std::span<const Index> rows);

/// Glorot/Xavier uniform initialization.
Matrix glorot_uniform(Index fan_in, Index fan_out, Rng& rng);

/// Central-difference check of the tape gradient of a scalar function.
/// Returns max |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double eps);

/// Same check, taken over every coordinate of every listed parameter.
double grad_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double eps);

}  // namespace vulnkg::num
