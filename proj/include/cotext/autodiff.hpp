#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation eagerly: values are computed when the op is
// called, and backward() replays the recorded pullbacks in reverse order.
// Leaves created with input() alias caller-owned matrices (model parameters)
// and receive gradients in tape-owned buffers.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "cotext/error.hpp"
#include "cotext/rng.hpp"

namespace cotext::ad {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool operator==(const Matrix&) const = default;
};

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

struct Var {
    std::size_t index = 0;
};

class Tape {
public:
    /// With record_gradients = false, input() leaves are treated as constants
    /// and no pullbacks are stored (inference).
    explicit Tape(bool record_gradients = true) : record_(record_gradients) { nodes_.reserve(512); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix m) { return push(std::move(m), nullptr, false); }

    /// Differentiable leaf aliasing `external`, which must outlive the tape.
    Var input(const Matrix& external) { return push(Matrix{}, &external, record_); }

    const Matrix& value(Var v) const {
        const Node& n = nodes_[v.index];
        return n.external ? *n.external : n.own;
    }

    /// Gradient accumulated for v by the last backward(); empty if none reached it.
    const Matrix& grad(Var v) const { return nodes_[v.index].grad; }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var root) {
        const Matrix& r = value(root);
        if (r.rows != 1 || r.cols != 1) throw Error(ErrorCode::shape_mismatch, "backward needs a scalar root");
        grad_ref(root).data[0] += 1.0;
        for (std::size_t i = root.index + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward();
        }
    }

    Var matmul(Var a, Var b) {
        const Matrix& A = value(a);
        const Matrix& B = value(b);
        require(A.cols == B.rows, "matmul");
        Matrix C(A.rows, B.cols);
        gemm_nn(A.data.data(), B.data.data(), C.data.data(), A.rows, A.cols, B.cols);
        Var c = push(std::move(C), nullptr, needs(a) || needs(b));
        on_backward(c, [this, a, b, c] {
            const Matrix& G = nodes_[c.index].grad;
            const Matrix& A = value(a);
            const Matrix& B = value(b);
            if (needs(a)) gemm_nt(G.data.data(), B.data.data(), grad_ref(a).data.data(), G.rows, G.cols, B.rows);
            if (needs(b)) gemm_tn(A.data.data(), G.data.data(), grad_ref(b).data.data(), A.rows, A.cols, G.cols);
        });
        return c;
    }

    /// a * b^T
    Var matmul_bt(Var a, Var b) {
        const Matrix& A = value(a);
        const Matrix& B = value(b);
        require(A.cols == B.cols, "matmul_bt");
        Matrix C(A.rows, B.rows);
        gemm_nt(A.data.data(), B.data.data(), C.data.data(), A.rows, A.cols, B.rows);
        Var c = push(std::move(C), nullptr, needs(a) || needs(b));
        on_backward(c, [this, a, b, c] {
            const Matrix& G = nodes_[c.index].grad;
            const Matrix& A = value(a);
            const Matrix& B = value(b);
            if (needs(a)) gemm_nn(G.data.data(), B.data.data(), grad_ref(a).data.data(), G.rows, G.cols, B.cols);
            if (needs(b)) gemm_tn(G.data.data(), A.data.data(), grad_ref(b).data.data(), G.rows, G.cols, A.cols);
        });
        return c;
    }

    Var add(Var a, Var b) {
        const Matrix& A = value(a);
        const Matrix& B = value(b);
        require(A.rows == B.rows && A.cols == B.cols, "add");
        Matrix C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
        Var c = push(std::move(C), nullptr, needs(a) || needs(b));
        on_backward(c, [this, a, b, c] {
            const Matrix& G = nodes_[c.index].grad;
            for (Var v : {a, b}) {
                if (!needs(v)) continue;
                Matrix& gv = grad_ref(v);
                for (std::size_t i = 0; i < G.size(); ++i) gv.data[i] += G.data[i];
            }
        });
        return c;
    }

    Var scale(Var a, double s) {
        Matrix C = value(a);
        for (double& x : C.data) x *= s;
        Var c = push(std::move(C), nullptr, needs(a));
        on_backward(c, [this, a, c, s] {
            const Matrix& G = nodes_[c.index].grad;
            Matrix& ga = grad_ref(a);
            for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += s * G.data[i];
        });
        return c;
    }

    /// Elementwise product.
    Var mul(Var a, Var b) {
        const Matrix& A = value(a);
        const Matrix& B = value(b);
        require(A.rows == B.rows && A.cols == B.cols, "mul");
        Matrix C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
        Var c = push(std::move(C), nullptr, needs(a) || needs(b));
        on_backward(c, [this, a, b, c] {
            const Matrix& G = nodes_[c.index].grad;
            const Matrix& A = value(a);
            const Matrix& B = value(b);
            if (needs(a)) {
                Matrix& ga = grad_ref(a);
                for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i] * B.data[i];
            }
            if (needs(b)) {
                Matrix& gb = grad_ref(b);
                for (std::size_t i = 0; i < G.size(); ++i) gb.data[i] += G.data[i] * A.data[i];
            }
        });
        return c;
    }

    /// Sum of all entries, as a 1x1 matrix.
    Var sum(Var a) {
        const Matrix& A = value(a);
        double s = 0.0;
        for (double x : A.data) s += x;
        Var c = push(Matrix(1, 1, s), nullptr, needs(a));
        on_backward(c, [this, a, c] {
            const double g = nodes_[c.index].grad.data[0];
            Matrix& ga = grad_ref(a);
            for (double& x : ga.data) x += g;
        });
        return c;
    }

    /// tanh-approximated GELU.
    Var gelu(Var a) {
        static constexpr double k = 0.7978845608028654; // sqrt(2/pi)
        const Matrix& A = value(a);
        Matrix C(A.rows, A.cols);
        for (std::size_t i = 0; i < A.size(); ++i) {
            const double x = A.data[i];
            C.data[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
        }
        Var c = push(std::move(C), nullptr, needs(a));
        on_backward(c, [this, a, c] {
            const Matrix& G = nodes_[c.index].grad;
            const Matrix& A = value(a);
            Matrix& ga = grad_ref(a);
            for (std::size_t i = 0; i < A.size(); ++i) {
                const double x = A.data[i];
                const double t = std::tanh(k * (x + 0.044715 * x * x * x));
                const double dt = (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * x * x);
                ga.data[i] += G.data[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
            }
        });
        return c;
    }

    /// Row-wise RMS normalization scaled by gain[1, cols].
    Var rms_norm(Var x, Var gain, double eps = 1e-6) {
        const Matrix& X = value(x);
        const Matrix& Gn = value(gain);
        require(Gn.rows == 1 && Gn.cols == X.cols, "rms_norm");
        Matrix Y(X.rows, X.cols);
        std::vector<double> inv(X.rows);
        for (std::size_t r = 0; r < X.rows; ++r) {
            double ms = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) ms += X(r, j) * X(r, j);
            inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(X.cols) + eps);
            for (std::size_t j = 0; j < X.cols; ++j) Y(r, j) = X(r, j) * inv[r] * Gn.data[j];
        }
        Var y = push(std::move(Y), nullptr, needs(x) || needs(gain));
        on_backward(y, [this, x, gain, y, inv = std::move(inv)] {
            const Matrix& G = nodes_[y.index].grad;
            const Matrix& X = value(x);
            const Matrix& Gn = value(gain);
            const auto n = static_cast<double>(X.cols);
            for (std::size_t r = 0; r < X.rows; ++r) {
                if (needs(gain)) {
                    Matrix& gg = grad_ref(gain);
                    for (std::size_t j = 0; j < X.cols; ++j) gg.data[j] += G(r, j) * X(r, j) * inv[r];
                }
                if (needs(x)) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < X.cols; ++j) dot += G(r, j) * Gn.data[j] * X(r, j) * inv[r];
                    Matrix& gx = grad_ref(x);
                    for (std::size_t j = 0; j < X.cols; ++j) {
                        const double xhat = X(r, j) * inv[r];
                        gx(r, j) += inv[r] * (G(r, j) * Gn.data[j] - xhat * dot / n);
                    }
                }
            }
        });
        return y;
    }

    /// Row softmax over entries where allowed(r, c) is nonzero; other entries are exactly 0.
    Var softmax_rows(Var x, std::span<const std::uint8_t> allowed) {
        const Matrix& X = value(x);
        require(allowed.size() == X.size(), "softmax_rows mask");
        Matrix P(X.rows, X.cols);
        for (std::size_t r = 0; r < X.rows; ++r) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < X.cols; ++j) {
                if (allowed[r * X.cols + j]) mx = std::max(mx, X(r, j));
            }
            if (mx == -INFINITY) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) {
                if (allowed[r * X.cols + j]) {
                    P(r, j) = std::exp(X(r, j) - mx);
                    s += P(r, j);
                }
            }
            for (std::size_t j = 0; j < X.cols; ++j) P(r, j) /= s;
        }
        Var p = push(std::move(P), nullptr, needs(x));
        on_backward(p, [this, x, p] {
            const Matrix& G = nodes_[p.index].grad;
            const Matrix& P = value(p);
            Matrix& gx = grad_ref(x);
            for (std::size_t r = 0; r < P.rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < P.cols; ++j) dot += P(r, j) * G(r, j);
                for (std::size_t j = 0; j < P.cols; ++j) gx(r, j) += P(r, j) * (G(r, j) - dot);
            }
        });
        return p;
    }

    /// Rows of table[V, d] selected by ids.
    Var gather_rows(Var table, std::span<const int> ids) {
        const Matrix& T = value(table);
        Matrix C(ids.size(), T.cols);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto id = static_cast<std::size_t>(ids[i]);
            if (ids[i] < 0 || id >= T.rows) throw Error(ErrorCode::id_out_of_range, "gather_rows id");
            std::copy_n(T.row(id), T.cols, C.row(i));
        }
        Var c = push(std::move(C), nullptr, needs(table));
        on_backward(c, [this, table, c, ids = std::vector<int>(ids.begin(), ids.end())] {
            const Matrix& G = nodes_[c.index].grad;
            Matrix& gt = grad_ref(table);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = gt.row(static_cast<std::size_t>(ids[i]));
                const double* src = G.row(i);
                for (std::size_t j = 0; j < G.cols; ++j) dst[j] += src[j];
            }
        });
        return c;
    }

    /// out(i, j) = table(bucket[i * cols + j], column) for a [rows, cols] result.
    Var gather_bias(Var table, std::span<const int> buckets, std::size_t column, std::size_t rows, std::size_t cols) {
        const Matrix& T = value(table);
        require(buckets.size() == rows * cols && column < T.cols, "gather_bias");
        Matrix C(rows, cols);
        for (std::size_t i = 0; i < buckets.size(); ++i) C.data[i] = T(static_cast<std::size_t>(buckets[i]), column);
        Var c = push(std::move(C), nullptr, needs(table));
        on_backward(c, [this, table, c, column, b = std::vector<int>(buckets.begin(), buckets.end())] {
            const Matrix& G = nodes_[c.index].grad;
            Matrix& gt = grad_ref(table);
            for (std::size_t i = 0; i < b.size(); ++i) gt(static_cast<std::size_t>(b[i]), column) += G.data[i];
        });
        return c;
    }

    Var slice_cols(Var x, std::size_t start, std::size_t count) {
        const Matrix& X = value(x);
        require(start + count <= X.cols, "slice_cols");
        Matrix C(X.rows, count);
        for (std::size_t r = 0; r < X.rows; ++r) std::copy_n(X.row(r) + start, count, C.row(r));
        Var c = push(std::move(C), nullptr, needs(x));
        on_backward(c, [this, x, c, start, count] {
            const Matrix& G = nodes_[c.index].grad;
            Matrix& gx = grad_ref(x);
            for (std::size_t r = 0; r < G.rows; ++r) {
                for (std::size_t j = 0; j < count; ++j) gx(r, start + j) += G(r, j);
            }
        });
        return c;
    }

    Var concat_cols(std::span<const Var> parts) {
        require(!parts.empty(), "concat_cols");
        const std::size_t rows = value(parts[0]).rows;
        std::size_t cols = 0;
        bool any = false;
        for (Var v : parts) {
            require(value(v).rows == rows, "concat_cols rows");
            cols += value(v).cols;
            any = any || needs(v);
        }
        Matrix C(rows, cols);
        std::size_t off = 0;
        for (Var v : parts) {
            const Matrix& P = value(v);
            for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.row(r), P.cols, C.row(r) + off);
            off += P.cols;
        }
        Var c = push(std::move(C), nullptr, any);
        on_backward(c, [this, c, ps = std::vector<Var>(parts.begin(), parts.end())] {
            const Matrix& G = nodes_[c.index].grad;
            std::size_t off = 0;
            for (Var v : ps) {
                const std::size_t w = value(v).cols;
                if (needs(v)) {
                    Matrix& gv = grad_ref(v);
                    for (std::size_t r = 0; r < G.rows; ++r) {
                        for (std::size_t j = 0; j < w; ++j) gv(r, j) += G(r, off + j);
                    }
                }
                off += w;
            }
        });
        return c;
    }

    /// Inverted dropout; identity when rate is 0.
    Var dropout(Var x, double rate, Rng& rng) {
        if (rate <= 0.0) return x;
        const Matrix& X = value(x);
        Matrix keep(X.rows, X.cols);
        const double s = 1.0 / (1.0 - rate);
        for (double& k : keep.data) k = rng.uniform() >= rate ? s : 0.0;
        return mul(x, constant(std::move(keep)));
    }

    /// Sum over rows with weight 1 of -log softmax(logits[r])[target[r]], as 1x1.
    Var cross_entropy_sum(Var logits, std::span<const int> targets, std::span<const std::uint8_t> weights) {
        const Matrix& L = value(logits);
        require(targets.size() == L.rows && weights.size() == L.rows, "cross_entropy_sum");
        Matrix P(L.rows, L.cols);
        double total = 0.0;
        for (std::size_t r = 0; r < L.rows; ++r) {
            if (!weights[r]) continue;
            const double* lr = L.row(r);
            const double mx = *std::max_element(lr, lr + L.cols);
            double s = 0.0;
            for (std::size_t j = 0; j < L.cols; ++j) {
                P(r, j) = std::exp(lr[j] - mx);
                s += P(r, j);
            }
            for (std::size_t j = 0; j < L.cols; ++j) P(r, j) /= s;
            const auto t = static_cast<std::size_t>(targets[r]);
            if (targets[r] < 0 || t >= L.cols) throw Error(ErrorCode::id_out_of_range, "cross-entropy target");
            total += -(lr[t] - mx - std::log(s));
        }
        Var c = push(Matrix(1, 1, total), nullptr, needs(logits));
        on_backward(c, [this, logits, c, P = std::move(P), t = std::vector<int>(targets.begin(), targets.end()),
                        w = std::vector<std::uint8_t>(weights.begin(), weights.end())] {
            const double g = nodes_[c.index].grad.data[0];
            Matrix& gl = grad_ref(logits);
            for (std::size_t r = 0; r < P.rows; ++r) {
                if (!w[r]) continue;
                for (std::size_t j = 0; j < P.cols; ++j) gl(r, j) += g * P(r, j);
                gl(r, static_cast<std::size_t>(t[r])) -= g;
            }
        });
        return c;
    }

private:
    struct Node {
        Matrix own;
        const Matrix* external = nullptr;
        Matrix grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var push(Matrix m, const Matrix* external, bool requires_grad) {
        nodes_.push_back(Node{std::move(m), external, Matrix{}, requires_grad, {}});
        return Var{nodes_.size() - 1};
    }

    void on_backward(Var v, std::function<void()> fn) {
        if (nodes_[v.index].requires_grad) nodes_[v.index].backward = std::move(fn);
    }

    bool needs(Var v) const { return nodes_[v.index].requires_grad; }

    Matrix& grad_ref(Var v) {
        Node& n = nodes_[v.index];
        if (n.grad.empty()) {
            const Matrix& val = n.external ? *n.external : n.own;
            n.grad = Matrix(val.rows, val.cols);
        }
        return n.grad;
    }

    static void require(bool ok, const char* what) {
        if (!ok) throw Error(ErrorCode::shape_mismatch, what);
    }

    std::vector<Node> nodes_;
    bool record_ = true;
};

} // namespace cotext::ad
