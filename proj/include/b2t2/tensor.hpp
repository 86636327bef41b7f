#pragma once

// Minimal dense float64 tensor library with reverse-mode automatic
// differentiation. Row-major contiguous storage; no broadcasting beyond
// trailing-axis bias addition. Every op builds a node in a dynamic graph;
// backward() runs the tape in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "b2t2/common.hpp"

namespace b2t2 {

class Node;
using Tensor = std::shared_ptr<Node>;

class Node {
public:
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;

    std::vector<Tensor> parents;
    // Propagates this->grad into parents' grads.
    std::function<void(Node&)> backprop;

    std::size_t size() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
    void zero_grad() { grad.assign(value.size(), 0.0); }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline Tensor make_tensor(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("data length does not match shape");
    auto t = std::make_shared<Node>();
    t->shape = std::move(shape);
    t->value = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

inline Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::size_t n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline Tensor scalar(double v) { return make_tensor({1}, {v}); }

inline Tensor param(std::vector<int> shape, std::vector<double> data) {
    return make_tensor(std::move(shape), std::move(data), true);
}

inline bool all_finite(const Node& t) {
    for (double v : t.value)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void check_finite(const Tensor& t, const char* what = "tensor") {
    if (!all_finite(*t)) throw NumericError(std::string("non-finite values in ") + what);
}

namespace detail {

inline Tensor make_op(std::vector<int> shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backprop) {
    auto t = make_tensor(std::move(shape), std::move(value));
    for (const auto& p : parents)
        if (p->requires_grad) t->requires_grad = true;
    if (t->requires_grad) {
        t->parents = std::move(parents);
        t->backprop = std::move(backprop);
    }
    return t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b) {
    if (a->shape != b->shape) throw DimensionError("shape mismatch");
}

inline std::pair<int, int> as_matrix(const Tensor& t) {
    if (t->shape.size() != 2) throw DimensionError("expected a rank-2 tensor");
    return {t->shape[0], t->shape[1]};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return detail::make_op(a->shape, std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) b->grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return detail::make_op(a->shape, std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) b->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return detail::make_op(a->shape, std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
    return detail::make_op(a->shape, std::move(out), {a}, [a, s](Node& n) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i] * s;
    });
}

inline Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
    return detail::make_op(a->shape, std::move(out), {a}, [a](Node& n) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i];
    });
}

// log with a lower clamp on the argument; gradient is 1/clamped(x).
inline Tensor log_clamped(const Tensor& a, double floor_value = 1e-12) {
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::log(std::max(a->value[i], floor_value));
    return detail::make_op(a->shape, std::move(out), {a}, [a, floor_value](Node& n) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i)
            a->grad[i] += n.grad[i] / std::max(a->value[i], floor_value);
    });
}

enum class Activation { gelu, sigmoid, tanh, relu };

inline Tensor elementwise(const Tensor& a, Activation kind) {
    std::vector<double> out(a->size());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a->value[i];
        switch (kind) {
            case Activation::gelu: out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); break;
            case Activation::sigmoid: out[i] = 1.0 / (1.0 + std::exp(-x)); break;
            case Activation::tanh: out[i] = std::tanh(x); break;
            case Activation::relu: out[i] = x > 0.0 ? x : 0.0; break;
        }
    }
    return detail::make_op(a->shape, std::move(out), {a}, [a, kind](Node& n) {
        a->ensure_grad();
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < n.size(); ++i) {
            double x = a->value[i];
            double d = 0.0;
            switch (kind) {
                case Activation::gelu:
                    d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                        x * inv_sqrt2pi * std::exp(-0.5 * x * x);
                    break;
                case Activation::sigmoid: {
                    double y = n.value[i];
                    d = y * (1.0 - y);
                    break;
                }
                case Activation::tanh: {
                    double y = n.value[i];
                    d = 1.0 - y * y;
                    break;
                }
                case Activation::relu: d = x > 0.0 ? 1.0 : 0.0; break;
            }
            a->grad[i] += n.grad[i] * d;
        }
    });
}

inline Tensor sigmoid(const Tensor& a) { return elementwise(a, Activation::sigmoid); }
inline Tensor gelu(const Tensor& a) { return elementwise(a, Activation::gelu); }
inline Tensor relu(const Tensor& a) { return elementwise(a, Activation::relu); }

// ---------------------------------------------------------------------------
// reductions and reshaping

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a->value.begin(), a->value.end(), 0.0);
    return detail::make_op({1}, {s}, {a}, [a](Node& n) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a->size())); }

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a->size()) throw DimensionError("reshape changes element count");
    return detail::make_op(std::move(shape), a->value, {a}, [a](Node& n) {
        a->ensure_grad();
        for (std::size_t i = 0; i < n.size(); ++i) a->grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    auto [r, s] = detail::as_matrix(a);
    auto [s2, t] = detail::as_matrix(b);
    if (s != s2) throw DimensionError("matmul inner dimensions differ");
    std::vector<double> out(static_cast<std::size_t>(r) * t, 0.0);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < s; ++k) {
            double av = a->value[i * s + k];
            if (av == 0.0) continue;
            const double* brow = &b->value[static_cast<std::size_t>(k) * t];
            double* orow = &out[static_cast<std::size_t>(i) * t];
            for (int j = 0; j < t; ++j) orow[j] += av * brow[j];
        }
    return detail::make_op({r, t}, std::move(out), {a, b}, [a, b, r, s, t](Node& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < r; ++i)
                for (int k = 0; k < s; ++k) {
                    double acc = 0.0;
                    const double* grow = &n.grad[static_cast<std::size_t>(i) * t];
                    const double* brow = &b->value[static_cast<std::size_t>(k) * t];
                    for (int j = 0; j < t; ++j) acc += grow[j] * brow[j];
                    a->grad[i * s + k] += acc;
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            // dB = A^T * dC
            for (int i = 0; i < r; ++i) {
                const double* grow = &n.grad[static_cast<std::size_t>(i) * t];
                for (int k = 0; k < s; ++k) {
                    double av = a->value[i * s + k];
                    if (av == 0.0) continue;
                    double* brow = &b->grad[static_cast<std::size_t>(k) * t];
                    for (int j = 0; j < t; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    auto [r, c] = detail::as_matrix(a);
    std::vector<double> out(a->size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j * r + i] = a->value[i * c + j];
    return detail::make_op({c, r}, std::move(out), {a}, [a, r, c](Node& n) {
        a->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) a->grad[i * c + j] += n.grad[j * r + i];
    });
}

// x: n x h, bias: h — the one permitted broadcast.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    auto [n_rows, h] = detail::as_matrix(x);
    if (bias->shape.size() != 1 || bias->shape[0] != h)
        throw DimensionError("bias length does not match trailing axis");
    std::vector<double> out(x->size());
    for (int i = 0; i < n_rows; ++i)
        for (int j = 0; j < h; ++j) out[i * h + j] = x->value[i * h + j] + bias->value[j];
    return detail::make_op(x->shape, std::move(out), {x, bias}, [x, bias, n_rows, h](Node& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::size_t i = 0; i < n.size(); ++i) x->grad[i] += n.grad[i];
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            for (int i = 0; i < n_rows; ++i)
                for (int j = 0; j < h; ++j) bias->grad[j] += n.grad[i * h + j];
        }
    });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    if (a->shape.size() != 1 || b->shape.size() != 1 || a->shape != b->shape)
        throw DimensionError("dot expects two equal-length vectors");
    return sum(mul(a, b));
}

// A: r x c, v: c -> r
inline Tensor matvec(const Tensor& a, const Tensor& v) {
    if (v->shape.size() != 1) throw DimensionError("matvec expects a vector");
    auto col = reshape(v, {v->shape[0], 1});
    return reshape(matmul(a, col), {a->shape[0]});
}

// ---------------------------------------------------------------------------
// row/column selection

inline Tensor select_row(const Tensor& a, int row) {
    auto [r, c] = detail::as_matrix(a);
    if (row < 0 || row >= r) throw DimensionError("row index out of range");
    std::vector<double> out(a->value.begin() + static_cast<std::size_t>(row) * c,
                            a->value.begin() + static_cast<std::size_t>(row + 1) * c);
    return detail::make_op({c}, std::move(out), {a}, [a, row, c](Node& n) {
        a->ensure_grad();
        for (int j = 0; j < c; ++j) a->grad[row * c + j] += n.grad[j];
    });
}

// Gather rows of an embedding table; backward scatter-adds into the table.
inline Tensor embedding_rows(const Tensor& table, const std::vector<int>& indices) {
    auto [rows, c] = detail::as_matrix(table);
    std::vector<double> out;
    out.reserve(indices.size() * static_cast<std::size_t>(c));
    for (int idx : indices) {
        if (idx < 0 || idx >= rows) throw VocabError("embedding index out of range");
        out.insert(out.end(), table->value.begin() + static_cast<std::size_t>(idx) * c,
                   table->value.begin() + static_cast<std::size_t>(idx + 1) * c);
    }
    int n_rows = static_cast<int>(indices.size());
    return detail::make_op({n_rows, c}, std::move(out), {table},
                           [table, indices, c](Node& n) {
                               table->ensure_grad();
                               for (std::size_t i = 0; i < indices.size(); ++i)
                                   for (int j = 0; j < c; ++j)
                                       table->grad[indices[i] * c + j] += n.grad[i * c + j];
                           });
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
    auto [r, c] = detail::as_matrix(a);
    if (start < 0 || len <= 0 || start + len > c) throw DimensionError("bad column slice");
    std::vector<double> out(static_cast<std::size_t>(r) * len);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j) out[i * len + j] = a->value[i * c + start + j];
    return detail::make_op({r, len}, std::move(out), {a}, [a, r, c, start, len](Node& n) {
        a->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j) a->grad[i * c + start + j] += n.grad[i * len + j];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    int r = parts[0]->shape[0];
    int total = 0;
    for (const auto& p : parts) {
        auto [pr, pc] = detail::as_matrix(p);
        if (pr != r) throw DimensionError("concat_cols row mismatch");
        total += pc;
    }
    std::vector<double> out(static_cast<std::size_t>(r) * total);
    int off = 0;
    for (const auto& p : parts) {
        int pc = p->shape[1];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) out[i * total + off + j] = p->value[i * pc + j];
        off += pc;
    }
    return detail::make_op({r, total}, std::move(out), {parts},
                           [parts, r, total](Node& n) {
                               int off = 0;
                               for (const auto& p : parts) {
                                   int pc = p->shape[1];
                                   if (p->requires_grad) {
                                       p->ensure_grad();
                                       for (int i = 0; i < r; ++i)
                                           for (int j = 0; j < pc; ++j)
                                               p->grad[i * pc + j] += n.grad[i * total + off + j];
                                   }
                                   off += pc;
                               }
                           });
}

// Stack rank-1 tensors of equal length into a matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows of nothing");
    int c = rows[0]->shape[0];
    std::vector<Tensor> as_rows;
    as_rows.reserve(rows.size());
    for (const auto& v : rows) {
        if (v->shape.size() != 1 || v->shape[0] != c)
            throw DimensionError("stack_rows length mismatch");
        as_rows.push_back(reshape(v, {1, c}));
    }
    if (as_rows.size() == 1) return as_rows[0];
    // concat along rows via transpose of a column concat
    std::vector<Tensor> cols;
    cols.reserve(as_rows.size());
    for (const auto& r : as_rows) cols.push_back(transpose(r));
    return transpose(concat_cols(cols));
}

// ---------------------------------------------------------------------------
// softmax / layer norm

// Row-wise softmax over the last axis of a rank-1 or rank-2 tensor,
// stabilized by max subtraction.
inline Tensor softmax(const Tensor& a) {
    int rows = 1, c = 0;
    if (a->shape.size() == 1) {
        c = a->shape[0];
    } else if (a->shape.size() == 2) {
        rows = a->shape[0];
        c = a->shape[1];
    } else {
        throw DimensionError("softmax expects rank 1 or 2");
    }
    std::vector<double> out(a->size());
    for (int i = 0; i < rows; ++i) {
        const double* x = &a->value[static_cast<std::size_t>(i) * c];
        double* y = &out[static_cast<std::size_t>(i) * c];
        double mx = *std::max_element(x, x + c);
        double denom = 0.0;
        for (int j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        for (int j = 0; j < c; ++j) y[j] /= denom;
    }
    return detail::make_op(a->shape, std::move(out), {a}, [a, rows, c](Node& n) {
        a->ensure_grad();
        for (int i = 0; i < rows; ++i) {
            const double* y = &n.value[static_cast<std::size_t>(i) * c];
            const double* g = &n.grad[static_cast<std::size_t>(i) * c];
            double gy = 0.0;
            for (int j = 0; j < c; ++j) gy += g[j] * y[j];
            for (int j = 0; j < c; ++j)
                a->grad[static_cast<std::size_t>(i) * c + j] += y[j] * (g[j] - gy);
        }
    });
}

// Per-row normalization of an n x h matrix followed by gamma ⊙ x̂ + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-6) {
    if (eps <= 0.0) throw ContractError("layer_norm eps must be positive");
    auto [rows, h] = detail::as_matrix(x);
    if (gamma->shape != std::vector<int>{h} || beta->shape != std::vector<int>{h})
        throw DimensionError("layer_norm gamma/beta length mismatch");
    std::vector<double> out(x->size());
    auto xhat = std::make_shared<std::vector<double>>(x->size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (int i = 0; i < rows; ++i) {
        const double* row = &x->value[static_cast<std::size_t>(i) * h];
        double m = 0.0;
        for (int j = 0; j < h; ++j) m += row[j];
        m /= h;
        double var = 0.0;
        for (int j = 0; j < h; ++j) var += (row[j] - m) * (row[j] - m);
        var /= h;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < h; ++j) {
            double xh = (row[j] - m) * is;
            (*xhat)[i * h + j] = xh;
            out[i * h + j] = gamma->value[j] * xh + beta->value[j];
        }
    }
    return detail::make_op(
        x->shape, std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, h, xhat, inv_std](Node& n) {
            for (int i = 0; i < rows; ++i) {
                const double* g = &n.grad[static_cast<std::size_t>(i) * h];
                const double* xh = &(*xhat)[static_cast<std::size_t>(i) * h];
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    for (int j = 0; j < h; ++j) gamma->grad[j] += g[j] * xh[j];
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    for (int j = 0; j < h; ++j) beta->grad[j] += g[j];
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int j = 0; j < h; ++j) {
                        double gy = g[j] * gamma->value[j];
                        sum_gy += gy;
                        sum_gyx += gy * xh[j];
                    }
                    double is = (*inv_std)[i];
                    for (int j = 0; j < h; ++j) {
                        double gy = g[j] * gamma->value[j];
                        x->grad[static_cast<std::size_t>(i) * h + j] +=
                            is * (gy - sum_gy / h - xh[j] * sum_gyx / h);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// cross entropy over selected rows

// Sum over (row, target) pairs of -log softmax(logits[row])[target].
inline Tensor cross_entropy_rows(const Tensor& logits,
                                 const std::vector<std::pair<int, int>>& targets) {
    auto [rows, v] = detail::as_matrix(logits);
    double loss = 0.0;
    for (auto [r, t] : targets) {
        if (r < 0 || r >= rows) throw ContractError("cross entropy row out of range");
        if (t < 0 || t >= v) throw VocabError("cross entropy target id out of vocab");
        const double* x = &logits->value[static_cast<std::size_t>(r) * v];
        double mx = *std::max_element(x, x + v);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(x[j] - mx);
        loss += std::log(denom) - (x[t] - mx);
    }
    return detail::make_op({1}, {loss}, {logits}, [logits, targets, v](Node& n) {
        logits->ensure_grad();
        for (auto [r, t] : targets) {
            const double* x = &logits->value[static_cast<std::size_t>(r) * v];
            double mx = *std::max_element(x, x + v);
            double denom = 0.0;
            for (int j = 0; j < v; ++j) denom += std::exp(x[j] - mx);
            double* g = &logits->grad[static_cast<std::size_t>(r) * v];
            for (int j = 0; j < v; ++j) {
                double p = std::exp(x[j] - mx) / denom;
                g[j] += n.grad[0] * (p - (j == t ? 1.0 : 0.0));
            }
        }
    });
}

// ---------------------------------------------------------------------------
// small convolution kernels for the tiny_cnn backbone
// Tensors are laid out [H, W, C]; weights [3, 3, Cin, Cout]; same padding.

inline Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x->shape.size() != 3) throw DimensionError("conv3x3 expects H x W x C input");
    if (w->shape.size() != 4 || w->shape[0] != 3 || w->shape[1] != 3)
        throw DimensionError("conv3x3 expects 3 x 3 x Cin x Cout weights");
    int H = x->shape[0], W = x->shape[1], Cin = x->shape[2], Cout = w->shape[3];
    if (w->shape[2] != Cin) throw DimensionError("conv3x3 channel mismatch");
    if (bias->shape != std::vector<int>{Cout}) throw DimensionError("conv3x3 bias mismatch");
    std::vector<double> out(static_cast<std::size_t>(H) * W * Cout);
    auto at_x = [&](int i, int j, int c) { return x->value[(i * W + j) * Cin + c]; };
    auto at_w = [&](int di, int dj, int ci, int co) {
        return w->value[((di * 3 + dj) * Cin + ci) * Cout + co];
    };
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int co = 0; co < Cout; ++co) {
                double acc = bias->value[co];
                for (int di = 0; di < 3; ++di) {
                    int ii = i + di - 1;
                    if (ii < 0 || ii >= H) continue;
                    for (int dj = 0; dj < 3; ++dj) {
                        int jj = j + dj - 1;
                        if (jj < 0 || jj >= W) continue;
                        for (int ci = 0; ci < Cin; ++ci)
                            acc += at_x(ii, jj, ci) * at_w(di, dj, ci, co);
                    }
                }
                out[(i * W + j) * Cout + co] = acc;
            }
    return detail::make_op(
        {H, W, Cout}, std::move(out), {x, w, bias},
        [x, w, bias, H, W, Cin, Cout](Node& n) {
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    for (int co = 0; co < Cout; ++co) {
                        double g = n.grad[(i * W + j) * Cout + co];
                        if (g == 0.0) continue;
                        if (bias->requires_grad) bias->grad[co] += g;
                        for (int di = 0; di < 3; ++di) {
                            int ii = i + di - 1;
                            if (ii < 0 || ii >= H) continue;
                            for (int dj = 0; dj < 3; ++dj) {
                                int jj = j + dj - 1;
                                if (jj < 0 || jj >= W) continue;
                                for (int ci = 0; ci < Cin; ++ci) {
                                    std::size_t wi = ((di * 3 + dj) * Cin + ci) * Cout + co;
                                    std::size_t xi = (ii * W + jj) * Cin + ci;
                                    if (w->requires_grad) w->grad[wi] += g * x->value[xi];
                                    if (x->requires_grad) x->grad[xi] += g * w->value[wi];
                                }
                            }
                        }
                    }
        });
}

inline Tensor avg_pool2(const Tensor& x) {
    if (x->shape.size() != 3) throw DimensionError("avg_pool2 expects H x W x C input");
    int H = x->shape[0], W = x->shape[1], C = x->shape[2];
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avg_pool2 needs even spatial dims");
    int Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo * C);
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj)
                        acc += x->value[((2 * i + di) * W + 2 * j + dj) * C + c];
                out[(i * Wo + j) * C + c] = acc * 0.25;
            }
    return detail::make_op({Ho, Wo, C}, std::move(out), {x}, [x, H, W, C, Ho, Wo](Node& n) {
        x->ensure_grad();
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                for (int c = 0; c < C; ++c) {
                    double g = n.grad[(i * Wo + j) * C + c] * 0.25;
                    for (int di = 0; di < 2; ++di)
                        for (int dj = 0; dj < 2; ++dj)
                            x->grad[((2 * i + di) * W + 2 * j + dj) * C + c] += g;
                }
    });
}

inline Tensor global_avg_pool(const Tensor& x) {
    if (x->shape.size() != 3) throw DimensionError("global_avg_pool expects H x W x C input");
    int H = x->shape[0], W = x->shape[1], C = x->shape[2];
    double inv = 1.0 / (H * W);
    std::vector<double> out(C, 0.0);
    for (int i = 0; i < H * W; ++i)
        for (int c = 0; c < C; ++c) out[c] += x->value[i * C + c];
    for (int c = 0; c < C; ++c) out[c] *= inv;
    return detail::make_op({C}, std::move(out), {x}, [x, H, W, C, inv](Node& n) {
        x->ensure_grad();
        for (int i = 0; i < H * W; ++i)
            for (int c = 0; c < C; ++c) x->grad[i * C + c] += n.grad[c] * inv;
    });
}

// ---------------------------------------------------------------------------
// backward

inline void backward(const Tensor& loss) {
    if (loss->size() != 1) throw ContractError("backward requires a scalar loss");
    if (!loss->requires_grad) return;

    // reverse topological order by iterative DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* node : order) node->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace b2t2
