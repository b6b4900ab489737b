#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fsl/tensor.hpp"

namespace fsl {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Primitives record a backward closure in execution
// order; backward() replays them once, in reverse. A tape covers one
// episode and is discarded afterwards.
class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = true) {
        check_finite(value, "leaf");
        return push(std::move(value), requires_grad);
    }
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const { return slots_[check(v)].value; }

    // Zero tensor if the var never received gradient.
    Tensor grad(Var v) const {
        const Slot& s = slots_[check(v)];
        return s.has_grad ? s.grad : Tensor::zeros(s.value.shape);
    }

    bool requires_grad(Var v) const { return slots_[check(v)].requires_grad; }

    std::size_t num_nodes() const { return nodes_.size(); }

    void backward(Var loss) {
        const Slot& ls = slots_[check(loss)];
        if (ls.value.numel() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(ls.value.shape));
        accumulate(loss, Tensor(ls.value.shape, {1.0}));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            (*it)(*this);
        nodes_.clear();
    }

    // ---- elementwise binary ----

    Var add(Var a, Var b) { return ew_binary(a, b, "add", [](double x, double y) { return x + y; },
                                             [](double, double, double g) { return std::pair{g, g}; }); }
    Var sub(Var a, Var b) { return ew_binary(a, b, "sub", [](double x, double y) { return x - y; },
                                             [](double, double, double g) { return std::pair{g, -g}; }); }
    Var mul(Var a, Var b) { return ew_binary(a, b, "mul", [](double x, double y) { return x * y; },
                                             [](double x, double y, double g) { return std::pair{g * y, g * x}; }); }
    Var div(Var a, Var b) {
        return ew_binary(a, b, "div", [](double x, double y) { return x / y; },
                         [](double x, double y, double g) { return std::pair{g / y, -g * x / (y * y)}; });
    }

    // ---- elementwise unary ----

    Var relu(Var a) {
        // subgradient at 0 is 0
        return ew_unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    }
    Var tanh(Var a) {
        return ew_unary(a, "tanh", [](double x) { return std::tanh(x); },
                        [](double, double y) { return 1.0 - y * y; });
    }
    Var sigmoid(Var a) {
        return ew_unary(a, "sigmoid", [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                                     : std::exp(x) / (1.0 + std::exp(x)); },
                        [](double, double y) { return y * (1.0 - y); });
    }
    Var exp(Var a) {
        return ew_unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    }
    Var log(Var a) {
        return ew_unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    }
    Var square(Var a) {
        return ew_unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
    }
    Var scale(Var a, double k) {
        return ew_unary(a, "scale", [k](double x) { return k * x; }, [k](double, double) { return k; });
    }
    Var add_const(Var a, double k) {
        return ew_unary(a, "add_const", [k](double x) { return x + k; }, [](double, double) { return 1.0; });
    }
    Var neg(Var a) { return scale(a, -1.0); }

    Var stop_gradient(Var a) {
        // identity on values, blocks gradient flow
        return push(value(a), false);
    }

    Var reshape(Var a, Shape s) {
        const Tensor& av = value(a);
        if (shape_numel(s) != av.numel())
            throw ConfigError("reshape: numel mismatch " + shape_str(av.shape) + " -> " + shape_str(s));
        Tensor out(std::move(s), av.data);
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o](Tape& t) {
                Tensor g(t.slots_[a.id].value.shape, t.out_grad(o).data);
                t.accumulate(a, std::move(g));
            });
        return o;
    }

    // ---- reductions ----

    Var sum_all(Var a) {
        const Tensor& av = value(a);
        double s = 0.0;
        for (double v : av.data)
            s += v;
        Var o = push(Tensor::scalar(s), requires_grad(a));
        if (requires_grad(a))
            record([a, o](Tape& t) {
                const double g = t.out_grad(o).data[0];
                Tensor ga(t.slots_[a.id].value.shape);
                for (auto& v : ga.data)
                    v = g;
                t.accumulate(a, std::move(ga));
            });
        return o;
    }
    Var mean_all(Var a) {
        const auto n = value(a).numel();
        if (n == 0)
            throw ContractError("mean_all on empty tensor");
        return scale(sum_all(a), 1.0 / static_cast<double>(n));
    }

    // axis 0: reduce over rows -> [cols]; axis 1: reduce over cols -> [rows]
    Var sum_axis(Var a, int axis) {
        const Tensor& av = value(a);
        require_matrix(av, "sum_axis");
        const int R = av.shape[0], C = av.shape[1];
        Tensor out(axis == 0 ? Shape{C} : Shape{R});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                out.data[axis == 0 ? c : r] += av.at(r, c);
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, R, C, axis](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor ga({R, C});
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c)
                        ga.at(r, c) = g.data[axis == 0 ? c : r];
                t.accumulate(a, std::move(ga));
            });
        return o;
    }
    Var mean_axis(Var a, int axis) {
        const Tensor& av = value(a);
        require_matrix(av, "mean_axis");
        const int n = axis == 0 ? av.shape[0] : av.shape[1];
        if (n == 0)
            throw ContractError("mean_axis over empty extent");
        return scale(sum_axis(a, axis), 1.0 / n);
    }

    Var max_axis(Var a, int axis) { return extremum_axis(a, axis, true); }
    Var min_axis(Var a, int axis) { return extremum_axis(a, axis, false); }

    // ---- structure ----

    Var concat_vec(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.shape.size() != 1 || bv.shape.size() != 1)
            throw ContractError("concat_vec expects 1-d tensors");
        const int na = av.shape[0], nb = bv.shape[0];
        Tensor out({na + nb});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + na);
        Var o = push(std::move(out), requires_grad(a) || requires_grad(b));
        if (requires_grad(o))
            record([a, b, o, na, nb](Tape& t) {
                const Tensor& g = t.out_grad(o);
                if (t.requires_grad(a))
                    t.accumulate(a, Tensor({na}, {g.data.begin(), g.data.begin() + na}));
                if (t.requires_grad(b))
                    t.accumulate(b, Tensor({nb}, {g.data.begin() + na, g.data.end()}));
            });
        return o;
    }

    Var concat_rows(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        require_matrix(av, "concat_rows");
        require_matrix(bv, "concat_rows");
        if (av.shape[1] != bv.shape[1])
            throw ConfigError("concat_rows: column mismatch");
        const int ra = av.shape[0], rb = bv.shape[0], C = av.shape[1];
        Tensor out({ra + rb, C});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
        Var o = push(std::move(out), requires_grad(a) || requires_grad(b));
        if (requires_grad(o))
            record([a, b, o, ra, rb, C](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const std::size_t na = static_cast<std::size_t>(ra) * C;
                if (t.requires_grad(a))
                    t.accumulate(a, Tensor({ra, C}, {g.data.begin(), g.data.begin() + na}));
                if (t.requires_grad(b))
                    t.accumulate(b, Tensor({rb, C}, {g.data.begin() + na, g.data.end()}));
            });
        return o;
    }

    Var slice_col(Var a, int col) {
        const Tensor& av = value(a);
        require_matrix(av, "slice_col");
        const int R = av.shape[0], C = av.shape[1];
        if (col < 0 || col >= C)
            throw ContractError("slice_col out of range");
        Tensor out({R});
        for (int r = 0; r < R; ++r)
            out.data[r] = av.at(r, col);
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, R, C, col](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor ga({R, C});
                for (int r = 0; r < R; ++r)
                    ga.at(r, col) = g.data[r];
                t.accumulate(a, std::move(ga));
            });
        return o;
    }

    Var pick_per_row(Var a, const std::vector<int>& idx) {
        const Tensor& av = value(a);
        require_matrix(av, "pick_per_row");
        const int R = av.shape[0], C = av.shape[1];
        if (static_cast<int>(idx.size()) != R)
            throw ContractError("pick_per_row: index count != rows");
        Tensor out({R});
        for (int r = 0; r < R; ++r) {
            if (idx[r] < 0 || idx[r] >= C)
                throw ContractError("pick_per_row: index out of range");
            out.data[r] = av.at(r, idx[r]);
        }
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, R, C, idx](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor ga({R, C});
                for (int r = 0; r < R; ++r)
                    ga.at(r, idx[r]) = g.data[r];
                t.accumulate(a, std::move(ga));
            });
        return o;
    }

    // tile a row vector v[C] into [rows x C]
    Var broadcast_rows(Var v, int rows) {
        const Tensor& vv = value(v);
        if (vv.shape.size() != 1)
            throw ContractError("broadcast_rows expects a 1-d tensor");
        const int C = vv.shape[0];
        Tensor out({rows, C});
        for (int r = 0; r < rows; ++r)
            std::copy(vv.data.begin(), vv.data.end(), out.data.begin() + static_cast<std::size_t>(r) * C);
        Var o = push(std::move(out), requires_grad(v));
        if (requires_grad(v))
            record([v, o, rows, C](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor gv({C});
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < C; ++c)
                        gv.data[c] += g.at(r, c);
                t.accumulate(v, std::move(gv));
            });
        return o;
    }

    // out[r,c] = m[r,c] + v[c]
    Var add_rowvec(Var m, Var v) {
        const Tensor& mv = value(m);
        return add(m, broadcast_rows(v, mv.shape.size() == 2 ? mv.shape[0] : 1));
    }

    // out[r,c] = m[r,c] * v[c]
    Var scale_columns(Var m, Var v) {
        const Tensor& mv = value(m);
        const Tensor& vv = value(v);
        require_matrix(mv, "scale_columns");
        if (vv.shape.size() != 1 || vv.shape[0] != mv.shape[1])
            throw ContractError("scale_columns: vector length != columns");
        return mul(m, broadcast_rows(v, mv.shape[0]));
    }

    // out[r,c] = m[r,c] / v[r]
    Var divide_rows(Var m, Var v) {
        const Tensor& mv = value(m);
        const Tensor& vv = value(v);
        require_matrix(mv, "divide_rows");
        if (vv.shape.size() != 1 || vv.shape[0] != mv.shape[0])
            throw ContractError("divide_rows: vector length != rows");
        const int R = mv.shape[0], C = mv.shape[1];
        Tensor out({R, C});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                out.at(r, c) = mv.at(r, c) / vv.data[r];
        check_finite(out, "divide_rows");
        Var o = push(std::move(out), requires_grad(m) || requires_grad(v));
        if (requires_grad(o))
            record([m, v, o, R, C](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& mval = t.slots_[m.id].value;
                const Tensor& vval = t.slots_[v.id].value;
                if (t.requires_grad(m)) {
                    Tensor gm({R, C});
                    for (int r = 0; r < R; ++r)
                        for (int c = 0; c < C; ++c)
                            gm.at(r, c) = g.at(r, c) / vval.data[r];
                    t.accumulate(m, std::move(gm));
                }
                if (t.requires_grad(v)) {
                    Tensor gv({R});
                    for (int r = 0; r < R; ++r) {
                        double s = 0.0;
                        for (int c = 0; c < C; ++c)
                            s += g.at(r, c) * mval.at(r, c);
                        gv.data[r] = -s / (vval.data[r] * vval.data[r]);
                    }
                    t.accumulate(v, std::move(gv));
                }
            });
        return o;
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        require_matrix(av, "matmul");
        require_matrix(bv, "matmul");
        if (av.shape[1] != bv.shape[0])
            throw ConfigError("matmul: inner extents differ, " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
        const int M = av.shape[0], K = av.shape[1], N = bv.shape[1];
        Tensor out({M, N});
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
                const double aik = av.at(i, k);
                if (aik == 0.0)
                    continue;
                for (int j = 0; j < N; ++j)
                    out.at(i, j) += aik * bv.at(k, j);
            }
        check_finite(out, "matmul");
        Var o = push(std::move(out), requires_grad(a) || requires_grad(b));
        if (requires_grad(o))
            record([a, b, o, M, K, N](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& av2 = t.slots_[a.id].value;
                const Tensor& bv2 = t.slots_[b.id].value;
                if (t.requires_grad(a)) {
                    Tensor ga({M, K});  // g @ b^T
                    for (int i = 0; i < M; ++i)
                        for (int j = 0; j < N; ++j) {
                            const double gij = g.at(i, j);
                            if (gij == 0.0)
                                continue;
                            for (int k = 0; k < K; ++k)
                                ga.at(i, k) += gij * bv2.at(k, j);
                        }
                    t.accumulate(a, std::move(ga));
                }
                if (t.requires_grad(b)) {
                    Tensor gb({K, N});  // a^T @ g
                    for (int i = 0; i < M; ++i)
                        for (int k = 0; k < K; ++k) {
                            const double aik = av2.at(i, k);
                            if (aik == 0.0)
                                continue;
                            for (int j = 0; j < N; ++j)
                                gb.at(k, j) += aik * g.at(i, j);
                        }
                    t.accumulate(b, std::move(gb));
                }
            });
        return o;
    }

    Var transpose(Var a) {
        const Tensor& av = value(a);
        require_matrix(av, "transpose");
        const int R = av.shape[0], C = av.shape[1];
        Tensor out({C, R});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c)
                out.at(c, r) = av.at(r, c);
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, R, C](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor ga({R, C});
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < C; ++c)
                        ga.at(r, c) = g.at(c, r);
                t.accumulate(a, std::move(ga));
            });
        return o;
    }

    Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

    // squared Euclidean distances: out[i,j] = ||a_i - b_j||^2
    Var pairwise_sqdist(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        require_matrix(av, "pairwise_sqdist");
        require_matrix(bv, "pairwise_sqdist");
        if (av.shape[1] != bv.shape[1])
            throw ConfigError("pairwise_sqdist: feature dims differ");
        const int M = av.shape[0], N = bv.shape[0], D = av.shape[1];
        Tensor out({M, N});
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
                double s = 0.0;
                for (int d = 0; d < D; ++d) {
                    const double diff = av.at(i, d) - bv.at(j, d);
                    s += diff * diff;
                }
                out.at(i, j) = s;
            }
        check_finite(out, "pairwise_sqdist");
        Var o = push(std::move(out), requires_grad(a) || requires_grad(b));
        if (requires_grad(o))
            record([a, b, o, M, N, D](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& av2 = t.slots_[a.id].value;
                const Tensor& bv2 = t.slots_[b.id].value;
                Tensor ga({M, D});
                Tensor gb({N, D});
                for (int i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) {
                        const double gij = g.at(i, j);
                        if (gij == 0.0)
                            continue;
                        for (int d = 0; d < D; ++d) {
                            const double diff = av2.at(i, d) - bv2.at(j, d);
                            ga.at(i, d) += 2.0 * gij * diff;
                            gb.at(j, d) -= 2.0 * gij * diff;
                        }
                    }
                if (t.requires_grad(a))
                    t.accumulate(a, std::move(ga));
                if (t.requires_grad(b))
                    t.accumulate(b, std::move(gb));
            });
        return o;
    }

    // rows normalize: out[r,c] = m[r,c] - logsumexp(m[r,:])
    Var log_softmax_rows(Var m) {
        const Tensor& mv = value(m);
        require_matrix(mv, "log_softmax_rows");
        const int R = mv.shape[0], C = mv.shape[1];
        if (C == 0)
            throw ContractError("log_softmax_rows: zero columns");
        Tensor out({R, C});
        for (int r = 0; r < R; ++r) {
            double mx = -1e300;
            for (int c = 0; c < C; ++c)
                mx = std::max(mx, mv.at(r, c));
            double s = 0.0;
            for (int c = 0; c < C; ++c)
                s += std::exp(mv.at(r, c) - mx);
            const double lse = mx + std::log(s);
            for (int c = 0; c < C; ++c)
                out.at(r, c) = mv.at(r, c) - lse;
        }
        check_finite(out, "log_softmax_rows");
        Var o = push(std::move(out), requires_grad(m));
        if (requires_grad(m))
            record([m, o, R, C](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& ov = t.slots_[o.id].value;
                Tensor gm({R, C});
                for (int r = 0; r < R; ++r) {
                    double gs = 0.0;
                    for (int c = 0; c < C; ++c)
                        gs += g.at(r, c);
                    for (int c = 0; c < C; ++c)
                        gm.at(r, c) = g.at(r, c) - std::exp(ov.at(r, c)) * gs;
                }
                t.accumulate(m, std::move(gm));
            });
        return o;
    }

    Var softmax_rows(Var m) { return exp(log_softmax_rows(m)); }

    // ---- convolution block (NCHW, 3x3 kernel, stride 1, zero padding 1) ----

    Var conv2d(Var x, Var w, Var b) {
        const Tensor& xv = value(x);
        const Tensor& wv = value(w);
        const Tensor& bv = value(b);
        if (xv.shape.size() != 4 || wv.shape.size() != 4)
            throw ConfigError("conv2d expects 4-d input and weight");
        const int B = xv.shape[0], Cin = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
        const int Cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
        if (wv.shape[1] != Cin || kh != 3 || kw != 3)
            throw ConfigError("conv2d: weight must be [Cout x Cin x 3 x 3] matching input channels");
        if (bv.shape.size() != 1 || bv.shape[0] != Cout)
            throw ConfigError("conv2d: bias must be [Cout]");
        auto xi = [&](const Tensor& t, int n, int c, int h, int w2) {
            return t.data[((static_cast<std::size_t>(n) * Cin + c) * H + h) * W + w2];
        };
        Tensor out({B, Cout, H, W});
        auto oi = [&](Tensor& t, int n, int c, int h, int w2) -> double& {
            return t.data[((static_cast<std::size_t>(n) * Cout + c) * H + h) * W + w2];
        };
        auto wi = [&](const Tensor& t, int co, int ci, int u, int v) {
            return t.data[((static_cast<std::size_t>(co) * Cin + ci) * 3 + u) * 3 + v];
        };
        for (int n = 0; n < B; ++n)
            for (int co = 0; co < Cout; ++co)
                for (int h = 0; h < H; ++h)
                    for (int w2 = 0; w2 < W; ++w2) {
                        double s = bv.data[co];
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int u = 0; u < 3; ++u) {
                                const int hh = h + u - 1;
                                if (hh < 0 || hh >= H)
                                    continue;
                                for (int v = 0; v < 3; ++v) {
                                    const int ww = w2 + v - 1;
                                    if (ww < 0 || ww >= W)
                                        continue;
                                    s += xi(xv, n, ci, hh, ww) * wi(wv, co, ci, u, v);
                                }
                            }
                        oi(out, n, co, h, w2) = s;
                    }
        check_finite(out, "conv2d");
        Var o = push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b));
        if (requires_grad(o))
            record([x, w, b, o, B, Cin, Cout, H, W](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& xv2 = t.slots_[x.id].value;
                const Tensor& wv2 = t.slots_[w.id].value;
                auto gx4 = [&](const Tensor& tt, int n, int c, int h, int w2) {
                    return tt.data[((static_cast<std::size_t>(n) * Cout + c) * H + h) * W + w2];
                };
                auto x4 = [&](const Tensor& tt, int n, int c, int h, int w2) {
                    return tt.data[((static_cast<std::size_t>(n) * Cin + c) * H + h) * W + w2];
                };
                Tensor gx({B, Cin, H, W});
                Tensor gw({Cout, Cin, 3, 3});
                Tensor gb({Cout});
                for (int n = 0; n < B; ++n)
                    for (int co = 0; co < Cout; ++co)
                        for (int h = 0; h < H; ++h)
                            for (int w2 = 0; w2 < W; ++w2) {
                                const double gg = gx4(g, n, co, h, w2);
                                if (gg == 0.0)
                                    continue;
                                gb.data[co] += gg;
                                for (int ci = 0; ci < Cin; ++ci)
                                    for (int u = 0; u < 3; ++u) {
                                        const int hh = h + u - 1;
                                        if (hh < 0 || hh >= H)
                                            continue;
                                        for (int v = 0; v < 3; ++v) {
                                            const int ww = w2 + v - 1;
                                            if (ww < 0 || ww >= W)
                                                continue;
                                            const std::size_t widx =
                                                ((static_cast<std::size_t>(co) * Cin + ci) * 3 + u) * 3 + v;
                                            gw.data[widx] += gg * x4(xv2, n, ci, hh, ww);
                                            gx.data[((static_cast<std::size_t>(n) * Cin + ci) * H + hh) * W + ww] +=
                                                gg * wv2.data[widx];
                                        }
                                    }
                            }
                if (t.requires_grad(x))
                    t.accumulate(x, std::move(gx));
                if (t.requires_grad(w))
                    t.accumulate(w, std::move(gw));
                if (t.requires_grad(b))
                    t.accumulate(b, std::move(gb));
            });
        return o;
    }

    Var maxpool2(Var x) {
        const Tensor& xv = value(x);
        if (xv.shape.size() != 4)
            throw ConfigError("maxpool2 expects a 4-d input");
        const int B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
        const int Ho = H / 2, Wo = W / 2;
        if (Ho == 0 || Wo == 0)
            throw ConfigError("maxpool2: spatial extent too small");
        Tensor out({B, C, Ho, Wo});
        std::vector<std::size_t> arg(out.data.size());
        for (int n = 0; n < B; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < Ho; ++h)
                    for (int w2 = 0; w2 < Wo; ++w2) {
                        double best = -1e300;
                        std::size_t bi = 0;
                        for (int u = 0; u < 2; ++u)
                            for (int v = 0; v < 2; ++v) {
                                const std::size_t idx =
                                    ((static_cast<std::size_t>(n) * C + c) * H + 2 * h + u) * W + 2 * w2 + v;
                                if (xv.data[idx] > best) {
                                    best = xv.data[idx];
                                    bi = idx;
                                }
                            }
                        const std::size_t oidx = ((static_cast<std::size_t>(n) * C + c) * Ho + h) * Wo + w2;
                        out.data[oidx] = best;
                        arg[oidx] = bi;
                    }
        Var o = push(std::move(out), requires_grad(x));
        if (requires_grad(x))
            record([x, o, arg, B, C, H, W](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor gx({B, C, H, W});
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    gx.data[arg[i]] += g.data[i];
                t.accumulate(x, std::move(gx));
            });
        return o;
    }

private:
    struct Slot {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
    };

    std::vector<Slot> slots_;
    std::vector<std::function<void(Tape&)>> nodes_;

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(slots_.size()))
            throw ContractError("invalid Var handle");
        return v.id;
    }

    static void check_finite(const Tensor& t, const char* op) {
        if (!t.all_finite())
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }

    Var push(Tensor value, bool requires_grad) {
        slots_.push_back(Slot{std::move(value), Tensor{}, requires_grad, false});
        return Var{static_cast<int>(slots_.size()) - 1};
    }

    void record(std::function<void(Tape&)> back) { nodes_.push_back(std::move(back)); }

    const Tensor& out_grad(Var v) {
        Slot& s = slots_[check(v)];
        if (!s.has_grad) {
            s.grad = Tensor::zeros(s.value.shape);
            s.has_grad = true;
        }
        return s.grad;
    }

    void accumulate(Var v, Tensor g) {
        Slot& s = slots_[check(v)];
        if (!s.has_grad) {
            s.grad = std::move(g);
            s.has_grad = true;
        } else {
            for (std::size_t i = 0; i < g.data.size(); ++i)
                s.grad.data[i] += g.data[i];
        }
    }

    template <typename F, typename B>
    Var ew_unary(Var a, const char* name, F f, B df) {
        const Tensor& av = value(a);
        Tensor out(av.shape);
        for (std::size_t i = 0; i < av.data.size(); ++i)
            out.data[i] = f(av.data[i]);
        check_finite(out, name);
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, df](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& av2 = t.slots_[a.id].value;
                const Tensor& ov = t.slots_[o.id].value;
                Tensor ga(av2.shape);
                for (std::size_t i = 0; i < ga.data.size(); ++i)
                    ga.data[i] = g.data[i] * df(av2.data[i], ov.data[i]);
                t.accumulate(a, std::move(ga));
            });
        return o;
    }

    template <typename F, typename B>
    Var ew_binary(Var a, Var b, const char* name, F f, B df) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!same_shape(av, bv))
            throw ConfigError(std::string(name) + ": shape mismatch " + shape_str(av.shape) + " vs " +
                              shape_str(bv.shape));
        Tensor out(av.shape);
        for (std::size_t i = 0; i < av.data.size(); ++i)
            out.data[i] = f(av.data[i], bv.data[i]);
        check_finite(out, name);
        Var o = push(std::move(out), requires_grad(a) || requires_grad(b));
        if (requires_grad(o))
            record([a, b, o, df](Tape& t) {
                const Tensor& g = t.out_grad(o);
                const Tensor& av2 = t.slots_[a.id].value;
                const Tensor& bv2 = t.slots_[b.id].value;
                Tensor ga(av2.shape);
                Tensor gb(bv2.shape);
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    auto [da, db] = df(av2.data[i], bv2.data[i], g.data[i]);
                    ga.data[i] = da;
                    gb.data[i] = db;
                }
                if (t.requires_grad(a))
                    t.accumulate(a, std::move(ga));
                if (t.requires_grad(b))
                    t.accumulate(b, std::move(gb));
            });
        return o;
    }

    Var extremum_axis(Var a, int axis, bool take_max) {
        const Tensor& av = value(a);
        require_matrix(av, take_max ? "max_axis" : "min_axis");
        const int R = av.shape[0], C = av.shape[1];
        const int n_out = axis == 0 ? C : R;
        const int n_red = axis == 0 ? R : C;
        if (n_red == 0)
            throw ContractError("extremum over empty extent");
        Tensor out({n_out});
        std::vector<int> arg(static_cast<std::size_t>(n_out));
        for (int i = 0; i < n_out; ++i) {
            double best = take_max ? -1e300 : 1e300;
            int bi = 0;
            for (int k = 0; k < n_red; ++k) {
                const double v = axis == 0 ? av.at(k, i) : av.at(i, k);
                if (take_max ? (v > best) : (v < best)) {
                    best = v;
                    bi = k;
                }
            }
            out.data[i] = best;
            arg[static_cast<std::size_t>(i)] = bi;
        }
        Var o = push(std::move(out), requires_grad(a));
        if (requires_grad(a))
            record([a, o, arg, R, C, axis](Tape& t) {
                const Tensor& g = t.out_grad(o);
                Tensor ga({R, C});
                for (std::size_t i = 0; i < arg.size(); ++i) {
                    const int k = arg[i];
                    if (axis == 0)
                        ga.at(k, static_cast<int>(i)) = g.data[i];
                    else
                        ga.at(static_cast<int>(i), k) = g.data[i];
                }
                t.accumulate(a, std::move(ga));
            });
        return o;
    }
};

// ---- gradient checking -------------------------------------------------

// f builds a scalar loss on the given tape from leaves created for each
// parameter tensor (in order). Returns max over all coordinates of
// |analytic - central_difference| / max(1, |analytic|, |numeric|).
inline double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                         const std::vector<Tensor>& params, double eps = 1e-5) {
    if (eps < 1e-7 || eps > 1e-3)
        throw ContractError("grad_check: eps out of range");
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params)
        leaves.push_back(tape.leaf(p, true));
    Var loss = f(tape, leaves);
    if (tape.value(loss).numel() != 1)
        throw ContractError("grad_check: f must return a scalar");
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Var v : leaves)
        analytic.push_back(tape.grad(v));

    auto eval = [&](const std::vector<Tensor>& p) {
        Tape t;
        std::vector<Var> ls;
        ls.reserve(p.size());
        for (const auto& x : p)
            ls.push_back(t.leaf(x, false));
        const Tensor& out = t.value(f(t, ls));
        if (!out.all_finite())
            throw NumericError("grad_check: non-finite loss at perturbed point");
        return out.data[0];
    };

    double max_err = 0.0;
    std::vector<Tensor> work = params;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t i = 0; i < params[pi].data.size(); ++i) {
            const double orig = work[pi].data[i];
            work[pi].data[i] = orig + eps;
            const double fp = eval(work);
            work[pi].data[i] = orig - eps;
            const double fm = eval(work);
            work[pi].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi].data[i];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace fsl
