#include "vulnkg/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vulnkg::num {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

void require_finite(const char* op, const Matrix& m) {
    if (!m.allFinite()) throw NonFiniteError(std::string(op) + ": non-finite output");
}

Tape& common_tape(const char* op, const Tensor& a, const Tensor& b) {
    if (&a.tape() != &b.tape()) throw TapeError(std::string(op) + ": operands live on different tapes");
    return a.tape();
}

}  // namespace

// ---- Tensor ----

Tape& Tensor::tape() const {
    if (tape_ == nullptr) throw TapeError("tensor is not attached to a tape");
    if (generation_ != tape_->generation_) throw TapeError("tensor refers to a cleared tape");
    return *tape_;
}

const Matrix& Tensor::value() const { return tape().node(*this).val(); }

Matrix Tensor::grad() const {
    const auto& n = tape().node(*this);
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.val().rows(), n.val().cols());
}

bool Tensor::requires_grad() const { return tape().node(*this).requires_grad; }

std::vector<Index> Tensor::shape() const {
    const auto& v = value();
    return {v.rows(), v.cols()};
}

double Tensor::item() const {
    const auto& v = value();
    if (v.size() != 1) throw ShapeError("item(): tensor is not a scalar");
    return v(0, 0);
}

// ---- Tape ----

const Tape::Node& Tape::node(const Tensor& t) const { return nodes_[id_of(t)]; }

std::size_t Tape::id_of(const Tensor& t) const {
    if (t.tape_ != this) throw TapeError("tensor belongs to another tape");
    if (t.generation_ != generation_) throw TapeError("tensor refers to a cleared tape");
    return t.id_;
}

Tensor Tape::input(Matrix value, bool requires_grad) {
    require_finite("input", value);
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1, generation_);
}

Tensor Tape::param(Parameter& p) {
    require_finite(p.name.c_str(), p.value);
    Node n;
    n.external = &p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1, generation_);
}

Tensor Tape::record(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Tensor(this, nodes_.size() - 1, generation_);
}

void Tape::accumulate(std::size_t id, Matrix g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.has_grad) {
        n.grad += g;
    } else {
        n.grad = std::move(g);
        n.has_grad = true;
    }
}

void Tape::seed(const Tensor& t, const Matrix& upstream) {
    const auto id = id_of(t);
    require_same_shape("seed", nodes_[id].val(), upstream);
    accumulate(id, upstream);
}

void Tape::backward(const Tensor& loss) {
    const auto id = id_of(loss);
    const auto& v = nodes_[id].val();
    if (v.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(v));
    if (!nodes_[id].requires_grad) return;
    accumulate(id, Matrix::Ones(1, 1));
    propagate();
}

void Tape::backward() { propagate(); }

void Tape::propagate() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backward) {
            n.backward(*this, n);
            n.grad = Matrix();
            n.has_grad = false;
        } else if (n.param != nullptr) {
            if (defer_params_) {
                pending_params_.emplace_back(n.param, std::move(n.grad));
            } else {
                n.param->grad += n.grad;
            }
            n.grad = Matrix();
            n.has_grad = false;
        }
        // plain leaves keep their accumulated gradient
    }
}

void Tape::flush_parameter_grads() {
    for (auto& [p, g] : pending_params_) p->grad += g;
    pending_params_.clear();
}

void Tape::clear() {
    nodes_.clear();
    pending_params_.clear();
    ++generation_;
}

// ---- elementwise ----

Tensor apply(OpKind kind, const Tensor& a, std::optional<Tensor> b, double factor) {
    switch (kind) {
        case OpKind::add:
        case OpKind::sub:
        case OpKind::mul:
            if (!b) throw ShapeError("binary op requires a second operand");
            break;
        default:
            break;
    }
    switch (kind) {
        case OpKind::add: return add(a, *b);
        case OpKind::sub: return sub(a, *b);
        case OpKind::mul: return mul(a, *b);
        case OpKind::relu: return relu(a);
        case OpKind::sigmoid: return sigmoid(a);
        case OpKind::scale: return scale(a, factor);
    }
    throw std::logic_error("unknown op kind");
}

Tensor add(const Tensor& a, const Tensor& b) {
    auto& t = common_tape("add", a, b);
    require_same_shape("add", a.value(), b.value());
    Matrix out = a.value() + b.value();
    require_finite("add", out);
    const auto ia = t.id_of(a), ib = t.id_of(b);
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tape::Node& self) {
        tp.accumulate(ia, self.grad);
        tp.accumulate(ib, self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    auto& t = common_tape("sub", a, b);
    require_same_shape("sub", a.value(), b.value());
    Matrix out = a.value() - b.value();
    require_finite("sub", out);
    const auto ia = t.id_of(a), ib = t.id_of(b);
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tape::Node& self) {
        tp.accumulate(ia, self.grad);
        tp.accumulate(ib, -self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    auto& t = common_tape("mul", a, b);
    require_same_shape("mul", a.value(), b.value());
    Matrix out = a.value().cwiseProduct(b.value());
    require_finite("mul", out);
    const auto ia = t.id_of(a), ib = t.id_of(b);
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tape::Node& self) {
        const auto& av = tp.at(ia).val();
        const auto& bv = tp.at(ib).val();
        if (tp.at(ia).requires_grad) tp.accumulate(ia, self.grad.cwiseProduct(bv));
        if (tp.at(ib).requires_grad) tp.accumulate(ib, self.grad.cwiseProduct(av));
    });
}

Tensor relu(const Tensor& a) {
    auto& t = a.tape();
    Matrix out = a.value().cwiseMax(0.0);
    const auto ia = t.id_of(a);
    return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, const Tape::Node& self) {
        const auto& av = tp.at(ia).val();
        tp.accumulate(ia, Matrix((av.array() > 0.0).select(self.grad.array(), 0.0)));
    });
}

Tensor sigmoid(const Tensor& a) {
    auto& t = a.tape();
    Matrix out = a.value().unaryExpr([](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    require_finite("sigmoid", out);
    const auto ia = t.id_of(a);
    const auto self_id = t.size();
    return t.record(std::move(out), a.requires_grad(), [ia, self_id](Tape& tp, const Tape::Node& self) {
        const auto& s = tp.at(self_id).val();
        tp.accumulate(ia, self.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
    });
}

Tensor scale(const Tensor& a, double factor) {
    auto& t = a.tape();
    Matrix out = a.value() * factor;
    require_finite("scale", out);
    const auto ia = t.id_of(a);
    return t.record(std::move(out), a.requires_grad(),
                    [ia, factor](Tape& tp, const Tape::Node& self) { tp.accumulate(ia, self.grad * factor); });
}

// ---- structural ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto& t = common_tape("matmul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw ShapeError("matmul: inner extents differ " + shape_str(av) + " x " + shape_str(bv));
    }
    Matrix out = av * bv;
    require_finite("matmul", out);
    const auto ia = t.id_of(a), ib = t.id_of(b);
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& tp, const Tape::Node& self) {
        const auto& an = tp.at(ia);
        const auto& bn = tp.at(ib);
        if (an.requires_grad) tp.accumulate(ia, self.grad * bn.val().transpose());
        if (bn.requires_grad) tp.accumulate(ib, an.val().transpose() * self.grad);
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    auto& t = common_tape("add_row", a, row);
    const auto& av = a.value();
    const auto& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw ShapeError("add_row: expected 1x" + std::to_string(av.cols()) + " row, got " + shape_str(rv));
    }
    Matrix out = av.rowwise() + rv.row(0);
    require_finite("add_row", out);
    const auto ia = t.id_of(a), ir = t.id_of(row);
    return t.record(std::move(out), a.requires_grad() || row.requires_grad(), [ia, ir](Tape& tp, const Tape::Node& self) {
        tp.accumulate(ia, self.grad);
        if (tp.at(ir).requires_grad) tp.accumulate(ir, self.grad.colwise().sum());
    });
}

Tensor segment_sum(const Tensor& values, std::span<const Index> segment_ids, Index num_segments) {
    auto& t = values.tape();
    const auto& v = values.value();
    if (static_cast<Index>(segment_ids.size()) != v.rows()) {
        throw ShapeError("segment_sum: " + std::to_string(segment_ids.size()) + " ids for " + std::to_string(v.rows()) +
                         " rows");
    }
    Matrix out = Matrix::Zero(num_segments, v.cols());
    for (Index i = 0; i < v.rows(); ++i) {
        const auto s = segment_ids[static_cast<std::size_t>(i)];
        if (s < 0 || s >= num_segments) {
            throw std::out_of_range("segment_sum: segment id " + std::to_string(s) + " outside [0, " +
                                    std::to_string(num_segments) + ")");
        }
        out.row(s) += v.row(i);
    }
    require_finite("segment_sum", out);
    const auto iv = t.id_of(values);
    std::vector<Index> ids(segment_ids.begin(), segment_ids.end());
    return t.record(std::move(out), values.requires_grad(), [iv, ids = std::move(ids)](Tape& tp, const Tape::Node& self) {
        Matrix g(static_cast<Index>(ids.size()), self.grad.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) g.row(static_cast<Index>(i)) = self.grad.row(ids[i]);
        tp.accumulate(iv, std::move(g));
    });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
    auto& t = a.tape();
    const auto& av = a.value();
    Matrix out(static_cast<Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows()) {
            throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(av));
        }
        out.row(static_cast<Index>(i)) = av.row(rows[i]);
    }
    const auto ia = t.id_of(a);
    const auto n_rows = av.rows();
    std::vector<Index> idx(rows.begin(), rows.end());
    return t.record(std::move(out), a.requires_grad(),
                    [ia, n_rows, idx = std::move(idx)](Tape& tp, const Tape::Node& self) {
                        Matrix g = Matrix::Zero(n_rows, self.grad.cols());
                        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
                        tp.accumulate(ia, std::move(g));
                    });
}

Tensor scale_rows(const Tensor& a, std::span<const double> weights) {
    auto& t = a.tape();
    const auto& av = a.value();
    if (static_cast<Index>(weights.size()) != av.rows()) throw ShapeError("scale_rows: weight count differs from rows");
    Eigen::Map<const Vector> w(weights.data(), static_cast<Index>(weights.size()));
    Matrix out = w.asDiagonal() * av;
    require_finite("scale_rows", out);
    const auto ia = t.id_of(a);
    Vector wc = w;
    return t.record(std::move(out), a.requires_grad(), [ia, wc = std::move(wc)](Tape& tp, const Tape::Node& self) {
        tp.accumulate(ia, wc.asDiagonal() * self.grad);
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    auto& t = common_tape("concat_cols", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ " + shape_str(av) + " vs " + shape_str(bv));
    Matrix out(av.rows(), av.cols() + bv.cols());
    out << av, bv;
    const auto ia = t.id_of(a), ib = t.id_of(b);
    const auto ca = av.cols(), cb = bv.cols();
    return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                    [ia, ib, ca, cb](Tape& tp, const Tape::Node& self) {
                        if (tp.at(ia).requires_grad) tp.accumulate(ia, self.grad.leftCols(ca));
                        if (tp.at(ib).requires_grad) tp.accumulate(ib, self.grad.rightCols(cb));
                    });
}

Tensor row_block(const Tensor& a, Index start, Index count) {
    auto& t = a.tape();
    const auto& av = a.value();
    if (start < 0 || count < 0 || start + count > av.rows()) throw ShapeError("row_block: range outside " + shape_str(av));
    Matrix out = av.middleRows(start, count);
    const auto ia = t.id_of(a);
    const auto n_rows = av.rows();
    return t.record(std::move(out), a.requires_grad(), [ia, n_rows, start, count](Tape& tp, const Tape::Node& self) {
        Matrix g = Matrix::Zero(n_rows, self.grad.cols());
        g.middleRows(start, count) = self.grad;
        tp.accumulate(ia, std::move(g));
    });
}

Tensor sum(const Tensor& a) {
    auto& t = a.tape();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    require_finite("sum", out);
    const auto ia = t.id_of(a);
    const auto r = a.rows(), c = a.cols();
    return t.record(std::move(out), a.requires_grad(), [ia, r, c](Tape& tp, const Tape::Node& self) {
        tp.accumulate(ia, Matrix::Constant(r, c, self.grad(0, 0)));
    });
}

Tensor row_norm(const Tensor& a, int p) {
    if (p != 1 && p != 2) throw ShapeError("row_norm supports p = 1 or 2");
    auto& t = a.tape();
    Matrix out = p == 1 ? Matrix(a.value().cwiseAbs().rowwise().sum()) : Matrix(a.value().rowwise().norm());
    require_finite("row_norm", out);
    const auto ia = t.id_of(a);
    const auto self_id = t.size();
    return t.record(std::move(out), a.requires_grad(), [ia, self_id, p](Tape& tp, const Tape::Node& self) {
        const auto& av = tp.at(ia).val();
        const auto& n = tp.at(self_id).val();
        Matrix g(av.rows(), av.cols());
        for (Index i = 0; i < av.rows(); ++i) {
            if (p == 1) {
                g.row(i) = self.grad(i, 0) * av.row(i).unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
            } else {
                // subgradient zero at the origin
                g.row(i) = n(i, 0) > 0 ? Matrix(self.grad(i, 0) / n(i, 0) * av.row(i)) : Matrix::Zero(1, av.cols());
            }
        }
        tp.accumulate(ia, std::move(g));
    });
}

Tensor layer_norm(const Tensor& a, double eps) {
    if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
    auto& t = a.tape();
    const auto& av = a.value();
    const auto n = static_cast<double>(av.cols());
    Matrix out(av.rows(), av.cols());
    Vector inv_std(av.rows());
    for (Index i = 0; i < av.rows(); ++i) {
        const double mean = av.row(i).mean();
        const double var = (av.row(i).array() - mean).square().sum() / n;
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        out.row(i) = (av.row(i).array() - mean) * inv_std(i);
    }
    require_finite("layer_norm", out);
    const auto ia = t.id_of(a);
    const auto self_id = t.size();
    return t.record(std::move(out), a.requires_grad(), [ia, self_id, inv_std, n](Tape& tp, const Tape::Node& self) {
        const auto& y = tp.at(self_id).val();
        Matrix g(y.rows(), y.cols());
        for (Index i = 0; i < y.rows(); ++i) {
            const auto dy = self.grad.row(i).array();
            g.row(i) = inv_std(i) * (dy - dy.sum() / n - y.row(i).array() * (dy * y.row(i).array()).sum() / n);
        }
        tp.accumulate(ia, std::move(g));
    });
}

Tensor log_clamped(const Tensor& a, double floor) {
    auto& t = a.tape();
    Matrix out = a.value().unaryExpr([floor](double x) { return std::log(std::max(x, floor)); });
    require_finite("log_clamped", out);
    const auto ia = t.id_of(a);
    return t.record(std::move(out), a.requires_grad(), [ia, floor](Tape& tp, const Tape::Node& self) {
        const auto& av = tp.at(ia).val();
        Matrix g = self.grad.binaryExpr(av, [floor](double up, double x) { return x > floor ? up / x : 0.0; });
        tp.accumulate(ia, std::move(g));
    });
}

Tensor pick(const Tensor& a, std::span<const Index> rows) {
    const auto& av = a.value();
    if (av.cols() != 1) throw ShapeError("pick: expected a column, got " + shape_str(av));
    return gather_rows(a, rows);
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    Matrix analytic;
    {
        Tape tape;
        auto xt = tape.input(x, true);
        auto loss = f(tape, xt);
        tape.backward(loss);
        analytic = xt.grad();
    }
    auto eval = [&](const Matrix& xv) {
        Tape tape;
        auto xt = tape.input(xv, false);
        return f(tape, xt).item();
    };
    double worst = 0.0;
    Matrix probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + eps;
        const double up = eval(probe);
        probe.data()[i] = orig - eps;
        const double down = eval(probe);
        probe.data()[i] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        if (!std::isfinite(numeric)) throw NonFiniteError("grad_check: non-finite central difference");
        const double a = analytic.data()[i];
        worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

double grad_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        auto loss = f(tape);
        tape.backward(loss);
    }
    auto eval = [&] {
        Tape tape;
        return f(tape).item();
    };
    double worst = 0.0;
    for (auto* p : params) {
        for (Index i = 0; i < p->value.size(); ++i) {
            const double orig = p->value.data()[i];
            p->value.data()[i] = orig + eps;
            const double up = eval();
            p->value.data()[i] = orig - eps;
            const double down = eval();
            p->value.data()[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            if (!std::isfinite(numeric)) throw NonFiniteError("grad_check: non-finite central difference");
            const double a = p->grad.data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

Matrix glorot_uniform(Index fan_in, Index fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix m(fan_in, fan_out);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-limit, limit);
    }
    return m;
}

}  // namespace vulnkg::num
