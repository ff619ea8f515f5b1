#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "reimts/tensor.hpp"

namespace reimts::ad {

/// Reverse-mode autodiff on an append-only tape. Nodes hold dense double
/// tensors; creation order is a valid topological order, so backward() is a
/// single reverse sweep. Everything is single-threaded and deterministic.
class Tape;

struct Var {
    Tape* tape = nullptr;
    long idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Tensor& val() const;
    const std::vector<long>& shape() const { return val().shape(); }
};

class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward; // null for leaves
    };

    Var leaf(Tensor value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, nullptr});
        return Var{this, static_cast<long>(nodes_.size()) - 1};
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Node& node(long i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Node& node(long i) const { return nodes_[static_cast<std::size_t>(i)]; }
    long size() const { return static_cast<long>(nodes_.size()); }

    const Tensor& value(Var v) const { return node(v.idx).value; }
    Tensor& grad(Var v) { return node(v.idx).grad; }

    bool requires_grad(Var v) const { return node(v.idx).requires_grad; }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. `loss` must
    /// be a scalar node on this tape.
    void backward(Var loss) {
        if (loss.tape != this) throw std::logic_error("backward: var from another tape");
        if (node(loss.idx).value.numel() != 1)
            throw std::logic_error("backward: loss must be scalar");
        for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
        node(loss.idx).grad[0] = 1.0;
        for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = node(i);
            if (n.requires_grad && n.backward) n.backward(*this);
        }
    }

    void clear() { nodes_.clear(); }

    /// Creates a node and, when gradients are required, wires a backward
    /// function that knows the node's own index.
    template <typename Wire>
    Var make_op(Tensor value, bool requires_grad, Wire&& wire) {
        Var v = leaf(std::move(value), requires_grad);
        if (requires_grad) node(v.idx).backward = wire(v.idx);
        return v;
    }

private:
    std::vector<Node> nodes_;
};

inline const Tensor& Var::val() const { return tape->value(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr)
        throw std::logic_error("ad: vars from different tapes");
    return *a.tape;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string("ad: shape mismatch in ") + op + ": " +
                                    a.shape_str() + " vs " + b.shape_str());
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_same_shape(a.val(), b.val(), "add");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (long i = 0; i < out.numel(); ++i) out[i] += bv[i];
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    long ai = a.idx, bi = b.idx;
    return t.make_op(std::move(out), rg, [ai, bi](long self) {
        return [ai, bi, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            if (tp.node(ai).requires_grad) {
                Tensor& ga = tp.node(ai).grad;
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (tp.node(bi).requires_grad) {
                Tensor& gb = tp.node(bi).grad;
                for (long i = 0; i < g.numel(); ++i) gb[i] += g[i];
            }
        };
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_same_shape(a.val(), b.val(), "sub");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (long i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    long ai = a.idx, bi = b.idx;
    return t.make_op(std::move(out), rg, [ai, bi](long self) {
        return [ai, bi, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            if (tp.node(ai).requires_grad) {
                Tensor& ga = tp.node(ai).grad;
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (tp.node(bi).requires_grad) {
                Tensor& gb = tp.node(bi).grad;
                for (long i = 0; i < g.numel(); ++i) gb[i] -= g[i];
            }
        };
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::check_same_shape(a.val(), b.val(), "mul");
    Tensor out = a.val();
    const Tensor& bv = b.val();
    for (long i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    long ai = a.idx, bi = b.idx;
    return t.make_op(std::move(out), rg, [ai, bi](long self) {
        return [ai, bi, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& av = tp.node(ai).value;
            const Tensor& bv2 = tp.node(bi).value;
            if (tp.node(ai).requires_grad) {
                Tensor& ga = tp.node(ai).grad;
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (tp.node(bi).requires_grad) {
                Tensor& gb = tp.node(bi).grad;
                for (long i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
            }
        };
    });
}

inline Var scale(Var a, double s) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out[i] *= s;
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai, s](long self) {
        return [ai, s, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
        };
    });
}

inline Var relu(Var a) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai](long self) {
        return [ai, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& av = tp.node(ai).value;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < g.numel(); ++i)
                if (av[i] > 0.0) ga[i] += g[i];
        };
    });
}

inline Var tanh_op(Var a) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai](long self) {
        return [ai, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& ov = tp.node(self).value;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - ov[i] * ov[i]);
        };
    });
}

inline Var sigmoid(Var a) {
    Tape& t = *a.tape;
    Tensor out = a.val();
    for (long i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai](long self) {
        return [ai, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& ov = tp.node(self).value;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i] * ov[i] * (1.0 - ov[i]);
        };
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// (m x k) @ (k x n) -> (m x n). Plain triple loop; operand sizes in this
/// library stay small enough that this is never the bottleneck.
inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    long m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k)
        throw std::invalid_argument("ad: matmul inner dims " + av.shape_str() + " vs " +
                                    bv.shape_str());
    Tensor out({m, n});
    for (long i = 0; i < m; ++i)
        for (long p = 0; p < k; ++p) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (long j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    long ai = a.idx, bi = b.idx;
    return t.make_op(std::move(out), rg, [ai, bi, m, k, n](long self) {
        return [ai, bi, m, k, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& av2 = tp.node(ai).value;
            const Tensor& bv2 = tp.node(bi).value;
            if (tp.node(ai).requires_grad) { // dA = G @ B^T
                Tensor& ga = tp.node(ai).grad;
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < n; ++j) {
                        double gij = g[i * n + j];
                        if (gij == 0.0) continue;
                        for (long p = 0; p < k; ++p) ga[i * k + p] += gij * bv2[p * n + j];
                    }
            }
            if (tp.node(bi).requires_grad) { // dB = A^T @ G
                Tensor& gb = tp.node(bi).grad;
                for (long i = 0; i < m; ++i)
                    for (long p = 0; p < k; ++p) {
                        double aip = av2[i * k + p];
                        if (aip == 0.0) continue;
                        for (long j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
            }
        };
    });
}

inline Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = a.val();
    long m = av.rows(), n = av.cols();
    Tensor out({n, m});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai, m, n](long self) {
        return [ai, m, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        };
    });
}

/// Adds a 1 x n bias row to every row of an m x n matrix.
inline Var add_rowvec(Var a, Var bias) {
    Tape& t = detail::same_tape(a, bias);
    const Tensor& av = a.val();
    const Tensor& bv = bias.val();
    long m = av.rows(), n = av.cols();
    if (bv.numel() != n)
        throw std::invalid_argument("ad: add_rowvec bias size " + bv.shape_str() +
                                    " for matrix " + av.shape_str());
    Tensor out = av;
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) out[i * n + j] += bv[j];
    bool rg = t.requires_grad(a) || t.requires_grad(bias);
    long ai = a.idx, bi = bias.idx;
    return t.make_op(std::move(out), rg, [ai, bi, m, n](long self) {
        return [ai, bi, m, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            if (tp.node(ai).requires_grad) {
                Tensor& ga = tp.node(ai).grad;
                for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
            }
            if (tp.node(bi).requires_grad) {
                Tensor& gb = tp.node(bi).grad;
                for (long i = 0; i < m; ++i)
                    for (long j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Var a, std::vector<long> shape) {
    Tape& t = *a.tape;
    Tensor out = a.val().reshaped(std::move(shape));
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai](long self) {
        return [ai, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < g.numel(); ++i) ga[i] += g[i];
        };
    });
}

/// Concatenates 2-D vars along columns; all inputs share the row count.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("ad: concat_cols of nothing");
    Tape& t = *parts[0].tape;
    long m = parts[0].val().rows();
    long total = 0;
    for (const Var& p : parts) {
        if (p.val().rows() != m)
            throw std::invalid_argument("ad: concat_cols row mismatch");
        total += p.val().cols();
    }
    Tensor out({m, total});
    bool rg = false;
    std::vector<long> idxs;
    std::vector<long> widths;
    long off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.val();
        long n = pv.cols();
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) out[i * total + off + j] = pv[i * n + j];
        rg = rg || t.requires_grad(p);
        idxs.push_back(p.idx);
        widths.push_back(n);
        off += n;
    }
    return t.make_op(std::move(out), rg, [idxs, widths, m, total](long self) {
        return [idxs, widths, m, total, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            long off2 = 0;
            for (std::size_t p = 0; p < idxs.size(); ++p) {
                long n = widths[p];
                if (tp.node(idxs[p]).requires_grad) {
                    Tensor& gp = tp.node(idxs[p]).grad;
                    for (long i = 0; i < m; ++i)
                        for (long j = 0; j < n; ++j) gp[i * n + j] += g[i * total + off2 + j];
                }
                off2 += n;
            }
        };
    });
}

/// Row gather on a 2-D var: out[r, :] = a[index[r], :], with index -1
/// producing an all-zero row. Backward scatter-adds, so this is the one
/// primitive behind representation transport, slicing and padding.
inline Var gather_rows(Var a, std::vector<long> index) {
    Tape& t = *a.tape;
    const Tensor& av = a.val();
    long n = av.cols();
    long r = static_cast<long>(index.size());
    Tensor out({r, n});
    for (long i = 0; i < r; ++i) {
        long s = index[static_cast<std::size_t>(i)];
        if (s < 0) continue;
        if (s >= av.rows()) throw std::out_of_range("ad: gather_rows index");
        for (long j = 0; j < n; ++j) out[i * n + j] = av[s * n + j];
    }
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai, index = std::move(index), n](long self) {
        return [ai, index, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < static_cast<long>(index.size()); ++i) {
                long s = index[static_cast<std::size_t>(i)];
                if (s < 0) continue;
                for (long j = 0; j < n; ++j) ga[s * n + j] += g[i * n + j];
            }
        };
    });
}

/// Stacks 2-D vars along rows.
inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("ad: concat_rows of nothing");
    Tape& t = *parts[0].tape;
    long n = parts[0].val().cols();
    long total = 0;
    for (const Var& p : parts) {
        if (p.val().cols() != n) throw std::invalid_argument("ad: concat_rows col mismatch");
        total += p.val().rows();
    }
    Tensor out({total, n});
    bool rg = false;
    std::vector<long> idxs, heights;
    long off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = p.val();
        for (long i = 0; i < pv.numel(); ++i) out[off * n + i] = pv[i];
        rg = rg || t.requires_grad(p);
        idxs.push_back(p.idx);
        heights.push_back(pv.rows());
        off += pv.rows();
    }
    return t.make_op(std::move(out), rg, [idxs, heights, n](long self) {
        return [idxs, heights, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            long off2 = 0;
            for (std::size_t p = 0; p < idxs.size(); ++p) {
                long h = heights[p];
                if (tp.node(idxs[p]).requires_grad) {
                    Tensor& gp = tp.node(idxs[p]).grad;
                    for (long i = 0; i < h * n; ++i) gp[i] += g[off2 * n + i];
                }
                off2 += h;
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Reductions and nonlinear blocks
// ---------------------------------------------------------------------------

inline Var sum_all(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = a.val();
    double s = 0.0;
    for (long i = 0; i < av.numel(); ++i) s += av[i];
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(Tensor::scalar(s), rg, [ai](long self) {
        return [ai, self](Tape& tp) {
            double g = tp.node(self).grad[0];
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < ga.numel(); ++i) ga[i] += g;
        };
    });
}

/// Row-wise softmax on a 2-D var (stable: shifts by the row max).
inline Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = a.val();
    long m = av.rows(), n = av.cols();
    Tensor out({m, n});
    for (long i = 0; i < m; ++i) {
        double mx = av[i * n];
        for (long j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
        double z = 0.0;
        for (long j = 0; j < n; ++j) {
            double e = std::exp(av[i * n + j] - mx);
            out[i * n + j] = e;
            z += e;
        }
        for (long j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    bool rg = t.requires_grad(a);
    long ai = a.idx;
    return t.make_op(std::move(out), rg, [ai, m, n](long self) {
        return [ai, m, n, self](Tape& tp) {
            const Tensor& g = tp.node(self).grad;
            const Tensor& y = tp.node(self).value;
            Tensor& ga = tp.node(ai).grad;
            for (long i = 0; i < m; ++i) {
                double dot = 0.0;
                for (long j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                for (long j = 0; j < n; ++j)
                    ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
            }
        };
    });
}

// ---------------------------------------------------------------------------
// Convenience composites
// ---------------------------------------------------------------------------

/// x @ W + b for x: m x in, W: in x out, b: 1 x out.
inline Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

inline Var elementwise_mul_const(Var a, const Tensor& c) {
    return mul(a, a.tape->constant(c));
}

} // namespace reimts::ad
