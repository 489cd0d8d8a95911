#pragma once

// Reverse-mode differentiation over dense matrices. A Tape records each
// op's value and a closure that pushes its output gradient to its inputs.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "random.hpp"

namespace cktdiffuse::nn {

using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;  // Adam moments
    Mat v;
};

class Tape;

/// Handle to a tape entry.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    [[nodiscard]] const Mat& value() const;
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
};

class Tape {
public:
    Var constant(Mat value) { return push(std::move(value), false, {}); }

    Var param(Parameter& p) {
        Parameter* pp = &p;
        return push(p.value, true, [this, pp](int self) { pp->grad += entries_[self].grad; });
    }

    /// Records an op. `back(self)` reads entries_[self].grad and accumulates into inputs.
    Var push(Mat value, bool needs_grad, std::function<void(int)> back) {
        entries_.push_back({std::move(value), Mat(), std::move(back), needs_grad});
        return {this, static_cast<int>(entries_.size()) - 1};
    }

    [[nodiscard]] const Mat& value(int id) const { return entries_[static_cast<std::size_t>(id)].value; }
    [[nodiscard]] bool needs_grad(int id) const { return entries_[static_cast<std::size_t>(id)].needs_grad; }

    /// Gradient buffer of an input, allocated on first use.
    Mat& grad(int id) {
        auto& e = entries_[static_cast<std::size_t>(id)];
        if (e.grad.size() == 0) e.grad = Mat::Zero(e.value.rows(), e.value.cols());
        return e.grad;
    }

    void backward(Var loss) {
        if (loss.value().size() != 1) throw std::invalid_argument("backward needs a scalar");
        grad(loss.id).setOnes();
        for (int i = loss.id; i >= 0; --i) {
            auto& e = entries_[static_cast<std::size_t>(i)];
            if (!e.needs_grad || e.grad.size() == 0 || !e.back) continue;
            e.back(i);
        }
    }

    [[nodiscard]] std::size_t size() const { return entries_.size(); }

private:
    friend struct Var;
    struct Entry {
        Mat value;
        Mat grad;
        std::function<void(int)> back;
        bool needs_grad = false;
    };
    std::vector<Entry> entries_;

    friend Mat& out_grad(Tape& t, int id);
};

inline const Mat& Var::value() const { return tape->value(id); }

inline Mat& out_grad(Tape& t, int id) { return t.entries_[static_cast<std::size_t>(id)].grad; }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
    for (const auto& v : vs)
        if (v.tape->needs_grad(v.id)) return true;
    return false;
}

inline void check_same(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// -----------------------------------------------------------------------------
// Ops
// -----------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Tape& t = *a.tape;
    return t.push(a.value() * b.value(), detail::any_grad({a, b}), [&t, a, b](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id).noalias() += g * b.value().transpose();
        if (t.needs_grad(b.id)) t.grad(b.id).noalias() += a.value().transpose() * g;
    });
}

inline Var add(Var a, Var b) {
    detail::check_same(a, b, "add");
    Tape& t = *a.tape;
    return t.push(a.value() + b.value(), detail::any_grad({a, b}), [&t, a, b](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id) += g;
        if (t.needs_grad(b.id)) t.grad(b.id) += g;
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same(a, b, "sub");
    Tape& t = *a.tape;
    return t.push(a.value() - b.value(), detail::any_grad({a, b}), [&t, a, b](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id) += g;
        if (t.needs_grad(b.id)) t.grad(b.id) -= g;
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    detail::check_same(a, b, "mul");
    Tape& t = *a.tape;
    return t.push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}), [&t, a, b](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id) += g.cwiseProduct(b.value());
        if (t.needs_grad(b.id)) t.grad(b.id) += g.cwiseProduct(a.value());
    });
}

inline Var scale(Var a, double s) {
    Tape& t = *a.tape;
    return t.push(a.value() * s, detail::any_grad({a}), [&t, a, s](int self) { t.grad(a.id) += out_grad(t, self) * s; });
}

/// a (r x c) plus a 1 x c row broadcast over rows.
inline Var add_row(Var a, Var row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
    Tape& t = *a.tape;
    Mat out = a.value();
    out.rowwise() += row.value().row(0);
    return t.push(std::move(out), detail::any_grad({a, row}), [&t, a, row](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id) += g;
        if (t.needs_grad(row.id)) t.grad(row.id) += g.colwise().sum();
    });
}

inline Var silu(Var a) {
    Tape& t = *a.tape;
    const Mat sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Mat out = a.value().cwiseProduct(sig);
    return t.push(std::move(out), detail::any_grad({a}), [&t, a, sig](int self) {
        const auto x = a.value().array();
        const auto s = sig.array();
        t.grad(a.id).array() += out_grad(t, self).array() * (s * (1.0 + x * (1.0 - s)));
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    return t.push(a.value().cwiseMax(0.0), detail::any_grad({a}), [&t, a](int self) {
        t.grad(a.id).array() += out_grad(t, self).array() * (a.value().array() > 0.0).cast<double>();
    });
}

inline Var tanh(Var a) {
    Tape& t = *a.tape;
    Mat out = a.value().array().tanh().matrix();
    return t.push(out, detail::any_grad({a}), [&t, a, out](int self) {
        t.grad(a.id).array() += out_grad(t, self).array() * (1.0 - out.array().square());
    });
}

inline Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    return t.push(out, detail::any_grad({a}), [&t, a, out](int self) {
        t.grad(a.id).array() += out_grad(t, self).array() * out.array() * (1.0 - out.array());
    });
}

/// out.row(r) = a.row(idx[r]).
inline Var gather_rows(Var a, std::shared_ptr<const std::vector<int>> idx) {
    Tape& t = *a.tape;
    const Mat& av = a.value();
    Mat out(static_cast<Index>(idx->size()), av.cols());
    for (std::size_t r = 0; r < idx->size(); ++r) out.row(static_cast<Index>(r)) = av.row((*idx)[r]);
    return t.push(std::move(out), detail::any_grad({a}), [&t, a, idx](int self) {
        const Mat& g = out_grad(t, self);
        Mat& ga = t.grad(a.id);
        for (std::size_t r = 0; r < idx->size(); ++r) ga.row((*idx)[r]) += g.row(static_cast<Index>(r));
    });
}

/// out.row(k) = mean of a.row(r) over r with idx[r] == k; empty groups give zero rows.
inline Var segment_mean(Var a, std::shared_ptr<const std::vector<int>> idx, Index groups) {
    if (static_cast<Index>(idx->size()) != a.rows()) throw std::invalid_argument("segment_mean: index size");
    Tape& t = *a.tape;
    const Mat& av = a.value();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(groups);
    for (int k : *idx) inv(k) += 1.0;
    for (Index k = 0; k < groups; ++k) inv(k) = inv(k) > 0 ? 1.0 / inv(k) : 0.0;
    Mat out = Mat::Zero(groups, av.cols());
    for (std::size_t r = 0; r < idx->size(); ++r) out.row((*idx)[r]) += av.row(static_cast<Index>(r));
    out = inv.asDiagonal() * out;
    return t.push(std::move(out), detail::any_grad({a}), [&t, a, idx, inv](int self) {
        const Mat& g = out_grad(t, self);
        Mat& ga = t.grad(a.id);
        for (std::size_t r = 0; r < idx->size(); ++r) {
            const int k = (*idx)[r];
            ga.row(static_cast<Index>(r)) += inv(k) * g.row(k);
        }
    });
}

/// out.col(c) = a.col(perm[c]).
inline Var permute_cols(Var a, std::shared_ptr<const std::vector<int>> perm) {
    Tape& t = *a.tape;
    const Mat& av = a.value();
    Mat out(av.rows(), static_cast<Index>(perm->size()));
    for (std::size_t c = 0; c < perm->size(); ++c) out.col(static_cast<Index>(c)) = av.col((*perm)[c]);
    return t.push(std::move(out), detail::any_grad({a}), [&t, a, perm](int self) {
        const Mat& g = out_grad(t, self);
        Mat& ga = t.grad(a.id);
        for (std::size_t c = 0; c < perm->size(); ++c) ga.col((*perm)[c]) += g.col(static_cast<Index>(c));
    });
}

inline Var concat_cols(Var a, Var b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Tape& t = *a.tape;
    Mat out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Index ca = a.cols(), cb = b.cols();
    return t.push(std::move(out), detail::any_grad({a, b}), [&t, a, b, ca, cb](int self) {
        const Mat& g = out_grad(t, self);
        if (t.needs_grad(a.id)) t.grad(a.id) += g.leftCols(ca);
        if (t.needs_grad(b.id)) t.grad(b.id) += g.rightCols(cb);
    });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return t.push(std::move(out), detail::any_grad({a}), [&t, a](int self) {
        t.grad(a.id).array() += out_grad(t, self)(0, 0);
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// -----------------------------------------------------------------------------
// Losses (scalar means)
// -----------------------------------------------------------------------------

/// Row-wise softmax cross entropy against integer targets.
inline Var cross_entropy(Var logits, std::vector<int> targets) {
    if (static_cast<Index>(targets.size()) != logits.rows()) throw std::invalid_argument("cross_entropy: target count");
    Tape& t = *logits.tape;
    const Mat& z = logits.value();
    Mat p(z.rows(), z.cols());
    double loss = 0.0;
    for (Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        p.row(r) = (z.row(r).array() - m).exp().matrix();
        const double s = p.row(r).sum();
        p.row(r) /= s;
        loss += -(z(r, targets[static_cast<std::size_t>(r)]) - m - std::log(s));
    }
    const double n = static_cast<double>(z.rows());
    Mat out(1, 1);
    out(0, 0) = loss / n;
    return t.push(std::move(out), detail::any_grad({logits}),
                  [&t, logits, p = std::move(p), targets = std::move(targets), n](int self) {
                      const double g = out_grad(t, self)(0, 0) / n;
                      Mat d = p;
                      for (Index r = 0; r < d.rows(); ++r) d(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
                      t.grad(logits.id) += g * d;
                  });
}

/// Mean binary cross entropy with logits against 0/1 targets.
inline Var bce_with_logits(Var logits, Mat targets) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    Tape& t = *logits.tape;
    const auto z = logits.value().array();
    // max(z,0) - z*y + log(1 + exp(-|z|))
    const double loss = (z.max(0.0) - z * targets.array() + (1.0 + (-z.abs()).exp()).log()).sum();
    const double n = static_cast<double>(targets.size());
    Mat out(1, 1);
    out(0, 0) = loss / n;
    return t.push(std::move(out), detail::any_grad({logits}), [&t, logits, targets = std::move(targets), n](int self) {
        const double g = out_grad(t, self)(0, 0) / n;
        const Mat sig = (1.0 + (-logits.value().array()).exp()).inverse().matrix();
        t.grad(logits.id) += g * (sig - targets);
    });
}

/// Mean squared error over entries where mask is 1.
inline Var masked_mse(Var pred, Mat target, Mat mask) {
    if (target.rows() != pred.rows() || target.cols() != pred.cols() || mask.rows() != pred.rows() ||
        mask.cols() != pred.cols())
        throw std::invalid_argument("masked_mse: shape mismatch");
    Tape& t = *pred.tape;
    const double n = std::max(1.0, mask.sum());
    Mat diff = (pred.value() - target).cwiseProduct(mask);
    Mat out(1, 1);
    out(0, 0) = diff.squaredNorm() / n;
    return t.push(std::move(out), detail::any_grad({pred}), [&t, pred, diff = std::move(diff), n](int self) {
        t.grad(pred.id) += (2.0 * out_grad(t, self)(0, 0) / n) * diff;
    });
}

inline Var mse(Var pred, Mat target) {
    Mat mask = Mat::Ones(target.rows(), target.cols());
    return masked_mse(pred, std::move(target), std::move(mask));
}

// -----------------------------------------------------------------------------
// Parameters
// -----------------------------------------------------------------------------

class ParamStore {
public:
    /// Gaussian init with the given std; std 0 gives zeros.
    Parameter& add(std::string name, Index rows, Index cols, Rng& rng, double std_dev) {
        if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
        auto p = std::make_unique<Parameter>();
        p->name = std::move(name);
        p->value = Mat::Zero(rows, cols);
        if (std_dev > 0.0)
            for (Index i = 0; i < p->value.size(); ++i) p->value(i) = std_dev * rng.normal();
        p->grad = Mat::Zero(rows, cols);
        p->m = Mat::Zero(rows, cols);
        p->v = Mat::Zero(rows, cols);
        params_.push_back(std::move(p));
        return *params_.back();
    }

    [[nodiscard]] Parameter* find(std::string_view name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p->grad.setZero();
    }

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
        return n;
    }

    [[nodiscard]] std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
    [[nodiscard]] const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& p : params_) {
            std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
            j[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", std::move(data)}};
        }
        return j;
    }

    /// Loads values; names and shapes must match exactly.
    void load_json(const nlohmann::json& j) {
        if (j.size() != params_.size()) throw std::runtime_error("parameter count mismatch");
        for (auto& p : params_) {
            if (!j.contains(p->name)) throw std::runtime_error("missing parameter " + p->name);
            const auto& e = j.at(p->name);
            if (e.at("rows").get<Index>() != p->value.rows() || e.at("cols").get<Index>() != p->value.cols())
                throw std::runtime_error("shape mismatch for " + p->name);
            const auto data = e.at("data").get<std::vector<double>>();
            if (static_cast<Index>(data.size()) != p->value.size()) throw std::runtime_error("size mismatch for " + p->name);
            std::copy(data.begin(), data.end(), p->value.data());
        }
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    static Linear make(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng, bool zero = false) {
        Linear l;
        l.w = &ps.add(name + ".w", in, out, rng, zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in)));
        l.b = &ps.add(name + ".b", 1, out, rng, 0.0);
        return l;
    }

    Var operator()(Tape& t, Var x) const { return add_row(matmul(x, t.param(*w)), t.param(*b)); }
};

/// Adam with global gradient-norm clipping.
struct Adam {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0;
    long step = 0;

    /// Returns the gradient norm before clipping.
    double update(ParamStore& ps) {
        double sq = 0.0;
        for (const auto& p : ps.all()) sq += p->grad.squaredNorm();
        const double norm = std::sqrt(sq);
        const double k = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (auto& p : ps.all()) {
            const Mat g = p->grad * k;
            p->m = beta1 * p->m + (1.0 - beta1) * g;
            p->v = beta2 * p->v + (1.0 - beta2) * g.cwiseProduct(g);
            p->value.array() -= lr * (p->m.array() / c1) / ((p->v.array() / c2).sqrt() + eps);
        }
        return norm;
    }
};

}  // namespace cktdiffuse::nn
