// Copyright 2026 The GEM Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gem/errors.hpp"

namespace gem::ad {

using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Handle to a value recorded on a Tape.
struct Var {
    uint32_t id = 0;
};

/// Reverse-mode tape over dense matrices. Every op records its output value
/// and a closure that pushes the output gradient back to its inputs. Ops on
/// constants only are recorded without a backward step.
class Tape {
   public:
    Var constant(Matrix value) {
        return push(std::move(value), false, nullptr);
    }
    Var variable(Matrix value) {
        return push(std::move(value), true, nullptr);
    }

    const Matrix &value(Var v) const {
        return nodes_[v.id].value;
    }
    /// Gradient accumulated by backward(); zero-sized if nothing reached v.
    const Matrix &grad(Var v) const {
        return nodes_[v.id].grad;
    }
    bool needs_grad(Var v) const {
        return nodes_[v.id].needs_grad;
    }
    size_t size() const {
        return nodes_.size();
    }

    /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to all inputs.
    void backward(Var out) {
        require(value(out).size() == 1, "backward: output must be a scalar");
        acc(out) = Matrix::Ones(1, 1);
        for (size_t k = out.id + 1; k-- > 0;) {
            auto &n = nodes_[k];
            if (n.back && n.grad.size() != 0) {
                n.back();
            }
        }
    }

    Var matmul(Var a, Var b) {
        const Matrix &x = value(a), &y = value(b);
        require(x.cols() == y.rows(), "matmul: shape mismatch");
        return record(x * y, {a, b}, [this, a, b](const Matrix &g) {
            if (needs_grad(a)) {
                acc(a).noalias() += g * value(b).transpose();
            }
            if (needs_grad(b)) {
                acc(b).noalias() += value(a).transpose() * g;
            }
        });
    }

    /// Adds a 1 x cols row vector to every row of a.
    Var add_row(Var a, Var row) {
        const Matrix &x = value(a), &r = value(row);
        require(r.rows() == 1 && r.cols() == x.cols(), "add_row: shape mismatch");
        Matrix out = x.rowwise() + r.row(0);
        return record(std::move(out), {a, row}, [this, a, row](const Matrix &g) {
            if (needs_grad(a)) {
                acc(a) += g;
            }
            if (needs_grad(row)) {
                acc(row) += g.colwise().sum();
            }
        });
    }

    Var add(Var a, Var b) {
        require(same_shape(a, b), "add: shape mismatch");
        return record(value(a) + value(b), {a, b}, [this, a, b](const Matrix &g) {
            if (needs_grad(a)) {
                acc(a) += g;
            }
            if (needs_grad(b)) {
                acc(b) += g;
            }
        });
    }

    Var mul(Var a, Var b) {
        require(same_shape(a, b), "mul: shape mismatch");
        return record(value(a).cwiseProduct(value(b)), {a, b}, [this, a, b](const Matrix &g) {
            if (needs_grad(a)) {
                acc(a) += g.cwiseProduct(value(b));
            }
            if (needs_grad(b)) {
                acc(b) += g.cwiseProduct(value(a));
            }
        });
    }

    Var exp(Var a) {
        Matrix out = value(a).array().exp().matrix();
        uint32_t self = (uint32_t)nodes_.size();
        return record(std::move(out), {a}, [this, a, self](const Matrix &g) {
            acc(a) += g.cwiseProduct(nodes_[self].value);
        });
    }

    Var leaky_relu(Var a, double slope) {
        Matrix out = value(a).unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
        return record(std::move(out), {a}, [this, a, slope](const Matrix &g) {
            const Matrix &x = value(a);
            acc(a) += g.binaryExpr(x, [slope](double gi, double xi) { return xi > 0 ? gi : slope * gi; });
        });
    }

    Var concat_cols(const std::vector<Var> &parts) {
        require(!parts.empty(), "concat_cols: no inputs");
        Eigen::Index rows = value(parts[0]).rows(), cols = 0;
        for (Var p : parts) {
            require(value(p).rows() == rows, "concat_cols: row mismatch");
            cols += value(p).cols();
        }
        Matrix out(rows, cols);
        Eigen::Index c = 0;
        for (Var p : parts) {
            out.middleCols(c, value(p).cols()) = value(p);
            c += value(p).cols();
        }
        return record(std::move(out), parts, [this, parts](const Matrix &g) {
            Eigen::Index c = 0;
            for (Var p : parts) {
                Eigen::Index w = value(p).cols();
                if (needs_grad(p)) {
                    acc(p) += g.middleCols(c, w);
                }
                c += w;
            }
        });
    }

    /// out.row(k) = a.row(index[k]).
    Var gather_rows(Var a, std::vector<uint32_t> index) {
        const Matrix &x = value(a);
        Matrix out(index.size(), x.cols());
        for (size_t k = 0; k < index.size(); k++) {
            require(index[k] < x.rows(), "gather_rows: index out of range");
            out.row(k) = x.row(index[k]);
        }
        return record(std::move(out), {a}, [this, a, index = std::move(index)](const Matrix &g) {
            Matrix &ga = acc(a);
            for (size_t k = 0; k < index.size(); k++) {
                ga.row(index[k]) += g.row(k);
            }
        });
    }

    /// out.row(index[k]) += a.row(k); out has n_rows rows.
    Var scatter_add_rows(Var a, std::vector<uint32_t> index, Eigen::Index n_rows) {
        const Matrix &x = value(a);
        require((Eigen::Index)index.size() == x.rows(), "scatter_add_rows: index length mismatch");
        Matrix out = Matrix::Zero(n_rows, x.cols());
        for (size_t k = 0; k < index.size(); k++) {
            require(index[k] < n_rows, "scatter_add_rows: index out of range");
            out.row(index[k]) += x.row(k);
        }
        return record(std::move(out), {a}, [this, a, index = std::move(index)](const Matrix &g) {
            Matrix &ga = acc(a);
            for (size_t k = 0; k < index.size(); k++) {
                ga.row(k) += g.row(index[k]);
            }
        });
    }

    /// Row means per segment; segment[k] names the output row of input row k.
    Var segment_mean(Var a, std::vector<uint32_t> segment, Eigen::Index n_segments) {
        const Matrix &x = value(a);
        require((Eigen::Index)segment.size() == x.rows(), "segment_mean: segment length mismatch");
        std::vector<double> count(n_segments, 0);
        Matrix out = Matrix::Zero(n_segments, x.cols());
        for (size_t k = 0; k < segment.size(); k++) {
            require(segment[k] < n_segments, "segment_mean: segment out of range");
            out.row(segment[k]) += x.row(k);
            count[segment[k]]++;
        }
        for (Eigen::Index s = 0; s < n_segments; s++) {
            require(count[s] > 0, "segment_mean: empty segment");
            out.row(s) /= count[s];
        }
        return record(
            std::move(out), {a}, [this, a, segment = std::move(segment), count = std::move(count)](const Matrix &g) {
                Matrix &ga = acc(a);
                for (size_t k = 0; k < segment.size(); k++) {
                    ga.row(k) += g.row(segment[k]) / count[segment[k]];
                }
            });
    }

    /// Constant sparse matrix times a.
    Var sparse_matmul(SparseMatrix s, Var a) {
        require(s.cols() == value(a).rows(), "sparse_matmul: shape mismatch");
        Matrix out = s * value(a);
        return record(std::move(out), {a}, [this, a, s = std::move(s)](const Matrix &g) {
            acc(a).noalias() += s.transpose() * g;
        });
    }

    /// Sum of weights .* (a - target)^2 as a 1x1 value.
    Var weighted_square_error(Var a, Matrix target, Matrix weights) {
        const Matrix &x = value(a);
        require(x.rows() == target.rows() && x.cols() == target.cols(), "square error: target shape mismatch");
        require(x.rows() == weights.rows() && x.cols() == weights.cols(), "square error: weight shape mismatch");
        Matrix out(1, 1);
        out(0, 0) = (weights.array() * (x - target).array().square()).sum();
        return record(
            std::move(out), {a}, [this, a, target = std::move(target), weights = std::move(weights)](const Matrix &g) {
                acc(a).array() += 2 * g(0, 0) * weights.array() * (value(a) - target).array();
            });
    }

   private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool needs_grad = false;
        std::function<void()> back;
    };

    std::vector<Node> nodes_;

    bool same_shape(Var a, Var b) const {
        return value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols();
    }

    Matrix &acc(Var v) {
        auto &n = nodes_[v.id];
        if (n.grad.size() == 0) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

    Var push(Matrix value, bool needs_grad, std::function<void()> back) {
        if (!value.allFinite()) {
            throw NumericalError("non-finite value recorded on tape at node " + std::to_string(nodes_.size()));
        }
        nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(back)});
        return Var{(uint32_t)(nodes_.size() - 1)};
    }

    template <typename Back>
    Var record(Matrix value, const std::vector<Var> &inputs, Back back) {
        bool any = false;
        for (Var v : inputs) {
            any |= needs_grad(v);
        }
        if (!any) {
            return push(std::move(value), false, nullptr);
        }
        uint32_t self = (uint32_t)nodes_.size();
        return push(std::move(value), true, [this, self, back = std::move(back)]() { back(nodes_[self].grad); });
    }
};

}  // namespace gem::ad
