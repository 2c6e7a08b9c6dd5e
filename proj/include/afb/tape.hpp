#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "afb/error.hpp"
#include "afb/graph.hpp"
#include "afb/matrix.hpp"

namespace afb {

/// Batch statistics of one batch-norm application, kept so the training loop
/// can fold them into the running statistics after the step.
struct BnBatch {
    std::vector<double> mean;
    std::vector<double> var;  ///< biased (population) variance
};

/// Reverse-mode tape over matrix-valued nodes.
///
/// Build a computation forward through the member ops (each returns a node id),
/// then call backward(loss_id) once; gradients of every reachable node
/// accumulate additively, so value reuse (shared weights, residuals) just
/// works. Graph and hierarchy arguments are captured by pointer and must
/// outlive the tape. One tape per forward pass; tapes are not reusable.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int leaf(Matrix v) {
        nodes_.push_back({std::move(v), {}, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    /// Leaf for a parameter tensor, memoized by address: pushing the same
    /// tensor twice (recurrent weights) yields the same node, so its gradient
    /// accumulates across every use.
    int param(const Matrix& tensor) {
        const auto it = param_ids_.find(&tensor);
        if (it != param_ids_.end())
            return it->second;
        const int id = leaf(tensor);
        param_ids_.emplace(&tensor, id);
        return id;
    }

    /// Gradient of the loss w.r.t. a parameter tensor pushed via param().
    /// Zero matrix when the parameter never influenced the loss.
    Matrix grad_for(const Matrix& tensor) const {
        const auto it = param_ids_.find(&tensor);
        if (it == param_ids_.end())
            throw ArgumentError("Tape::grad_for: tensor was never pushed via param()");
        const auto& g = nodes_[it->second].grad;
        return g.size() > 0 ? g : Matrix::zeros(tensor.rows, tensor.cols);
    }

    const Matrix& value(int id) const { return nodes_.at(id).value; }
    const Matrix& grad(int id) const { return nodes_.at(id).grad; }

    /// y = x W^T + b (b broadcast over rows). W is (out x in), b is (1 x out).
    int affine(int x, int w, int b) {
        const Matrix& xv = nodes_[x].value;
        const Matrix& wv = nodes_[w].value;
        const Matrix& bv = nodes_[b].value;
        if (xv.cols != wv.cols)
            throw ShapeError("affine: input width does not match weight fan-in");
        if (bv.rows != 1 || bv.cols != wv.rows)
            throw ShapeError("affine: bias must be 1 x fan-out");
        Matrix y = matmul_nt(xv, wv);
        for (int i = 0; i < y.rows; ++i)
            for (int j = 0; j < y.cols; ++j)
                y.at(i, j) += bv.at(0, j);
        return push(std::move(y), [x, w, b](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            t.ensure_grad(x) += matmul_nn(g, t.nodes_[w].value);
            t.ensure_grad(w) += matmul_tn(g, t.nodes_[x].value);
            Matrix& gb = t.ensure_grad(b);
            for (int i = 0; i < g.rows; ++i)
                for (int j = 0; j < g.cols; ++j)
                    gb.at(0, j) += g.at(i, j);
        });
    }

    /// y = x W^T, no bias.
    int linear_nobias(int x, int w) {
        const Matrix& xv = nodes_[x].value;
        const Matrix& wv = nodes_[w].value;
        if (xv.cols != wv.cols)
            throw ShapeError("linear_nobias: input width does not match weight fan-in");
        Matrix y = matmul_nt(xv, wv);
        return push(std::move(y), [x, w](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            t.ensure_grad(x) += matmul_nn(g, t.nodes_[w].value);
            t.ensure_grad(w) += matmul_tn(g, t.nodes_[x].value);
        });
    }

    int relu(int x) {
        Matrix y = nodes_[x].value;
        for (double v : y.a)
            min_abs_relu_in_ = std::min(min_abs_relu_in_, std::abs(v));
        for (double& v : y.a)
            v = v > 0.0 ? v : 0.0;
        return push(std::move(y), [x](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& xv = t.nodes_[x].value;
            Matrix& gx = t.ensure_grad(x);
            for (std::size_t i = 0; i < g.a.size(); ++i)
                gx.a[i] += xv.a[i] > 0.0 ? g.a[i] : 0.0;
        });
    }

    int add(int a, int b) {
        const Matrix& av = nodes_[a].value;
        const Matrix& bv = nodes_[b].value;
        if (!av.same_shape(bv))
            throw ShapeError("add: shape mismatch");
        Matrix y = av;
        y += bv;
        return push(std::move(y), [a, b](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            t.ensure_grad(a) += g;
            t.ensure_grad(b) += g;
        });
    }

    int concat_cols(int a, int b) {
        const Matrix& av = nodes_[a].value;
        const Matrix& bv = nodes_[b].value;
        if (av.rows != bv.rows)
            throw ShapeError("concat_cols: row counts differ");
        Matrix y(av.rows, av.cols + bv.cols);
        for (int i = 0; i < av.rows; ++i) {
            double* yr = y.row(i);
            const double* ar = av.row(i);
            const double* br = bv.row(i);
            for (int j = 0; j < av.cols; ++j)
                yr[j] = ar[j];
            for (int j = 0; j < bv.cols; ++j)
                yr[av.cols + j] = br[j];
        }
        return push(std::move(y), [a, b](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& ga = t.ensure_grad(a);
            Matrix& gb = t.ensure_grad(b);
            for (int i = 0; i < g.rows; ++i) {
                const double* gr = g.row(i);
                double* gar = ga.row(i);
                double* gbr = gb.row(i);
                for (int j = 0; j < ga.cols; ++j)
                    gar[j] += gr[j];
                for (int j = 0; j < gb.cols; ++j)
                    gbr[j] += gr[ga.cols + j];
            }
        });
    }

    /// Batch norm in training mode: per-column batch statistics (biased
    /// variance). gamma/beta are (1 x C). When `out_stats` is given, the batch
    /// mean/variance are appended for a later running-stats commit; the forward
    /// itself never mutates optimizer or model state.
    int batchnorm_train(int x, int gamma, int beta, double eps,
                        std::vector<BnBatch>* out_stats = nullptr) {
        const Matrix& xv = nodes_[x].value;
        const Matrix& gv = nodes_[gamma].value;
        const Matrix& bv = nodes_[beta].value;
        if (gv.rows != 1 || bv.rows != 1 || gv.cols != xv.cols || bv.cols != xv.cols)
            throw ShapeError("batchnorm_train: gamma/beta must be 1 x C");
        if (xv.rows < 1)
            throw ShapeError("batchnorm_train: empty batch");
        const int n = xv.rows, c = xv.cols;
        std::vector<double> mean(c, 0.0), var(c, 0.0), inv(c);
        for (int i = 0; i < n; ++i) {
            const double* r = xv.row(i);
            for (int j = 0; j < c; ++j)
                mean[j] += r[j];
        }
        for (int j = 0; j < c; ++j)
            mean[j] /= n;
        for (int i = 0; i < n; ++i) {
            const double* r = xv.row(i);
            for (int j = 0; j < c; ++j) {
                const double d = r[j] - mean[j];
                var[j] += d * d;
            }
        }
        for (int j = 0; j < c; ++j) {
            var[j] /= n;
            inv[j] = 1.0 / std::sqrt(var[j] + eps);
        }
        if (out_stats)
            out_stats->push_back({mean, var});

        // xhat is needed by the backward pass; store it in the closure.
        auto xhat = std::make_shared<Matrix>(n, c);
        Matrix y(n, c);
        for (int i = 0; i < n; ++i) {
            const double* r = xv.row(i);
            double* hr = xhat->row(i);
            double* yr = y.row(i);
            for (int j = 0; j < c; ++j) {
                hr[j] = (r[j] - mean[j]) * inv[j];
                yr[j] = gv.at(0, j) * hr[j] + bv.at(0, j);
            }
        }
        return push(std::move(y), [x, gamma, beta, xhat, inv](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& gv = t.nodes_[gamma].value;
            const int n = g.rows, c = g.cols;
            std::vector<double> gsum(c, 0.0), gdot(c, 0.0);
            for (int i = 0; i < n; ++i) {
                const double* gr = g.row(i);
                const double* hr = xhat->row(i);
                for (int j = 0; j < c; ++j) {
                    gsum[j] += gr[j];
                    gdot[j] += gr[j] * hr[j];
                }
            }
            Matrix& ggamma = t.ensure_grad(gamma);
            Matrix& gbeta = t.ensure_grad(beta);
            for (int j = 0; j < c; ++j) {
                ggamma.at(0, j) += gdot[j];
                gbeta.at(0, j) += gsum[j];
            }
            Matrix& gx = t.ensure_grad(x);
            for (int i = 0; i < n; ++i) {
                const double* gr = g.row(i);
                const double* hr = xhat->row(i);
                double* gxr = gx.row(i);
                for (int j = 0; j < c; ++j)
                    gxr[j] += gv.at(0, j) * inv[j] *
                              (gr[j] - gsum[j] / n - hr[j] * gdot[j] / n);
            }
        });
    }

    /// Batch norm in eval mode: a fixed affine map using running statistics;
    /// output is independent of batch composition.
    int batchnorm_eval(int x, int gamma, int beta, const std::vector<double>& run_mean,
                       const std::vector<double>& run_var, double eps) {
        const Matrix& xv = nodes_[x].value;
        const Matrix& gv = nodes_[gamma].value;
        const Matrix& bv = nodes_[beta].value;
        const int c = xv.cols;
        if (gv.cols != c || bv.cols != c || static_cast<int>(run_mean.size()) != c ||
            static_cast<int>(run_var.size()) != c)
            throw ShapeError("batchnorm_eval: channel counts disagree");
        auto inv = std::make_shared<std::vector<double>>(c);
        for (int j = 0; j < c; ++j)
            (*inv)[j] = 1.0 / std::sqrt(run_var[j] + eps);
        auto mean = std::make_shared<std::vector<double>>(run_mean);
        Matrix y(xv.rows, c);
        for (int i = 0; i < xv.rows; ++i) {
            const double* r = xv.row(i);
            double* yr = y.row(i);
            for (int j = 0; j < c; ++j)
                yr[j] = gv.at(0, j) * (r[j] - (*mean)[j]) * (*inv)[j] + bv.at(0, j);
        }
        return push(std::move(y), [x, gamma, beta, mean, inv](Tape& t, int self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& xv = t.nodes_[x].value;
            const Matrix& gv = t.nodes_[gamma].value;
            Matrix& gx = t.ensure_grad(x);
            Matrix& ggamma = t.ensure_grad(gamma);
            Matrix& gbeta = t.ensure_grad(beta);
            for (int i = 0; i < g.rows; ++i) {
                const double* gr = g.row(i);
                const double* xr = xv.row(i);
                double* gxr = gx.row(i);
                for (int j = 0; j < g.cols; ++j) {
                    gxr[j] += gr[j] * gv.at(0, j) * (*inv)[j];
                    ggamma.at(0, j) += gr[j] * (xr[j] - (*mean)[j]) * (*inv)[j];
                    gbeta.at(0, j) += gr[j];
                }
            }
        });
    }

    /// out_i = mean of x_j over in-neighbors j of i (edges j -> i).
    /// Nodes without in-neighbors get a zero row.
    int mean_aggregate(int x, const RadiusGraph& g) {
        const Matrix& xv = nodes_[x].value;
        if (static_cast<std::size_t>(xv.rows) != g.size())
            throw ShapeError("mean_aggregate: feature rows do not match graph size");
        auto deg = std::make_shared<std::vector<double>>(degrees(g));
        Matrix y(xv.rows, xv.cols);
        for (const auto& e : g.edges) {
            const double w = 1.0 / (*deg)[e[1]];
            const double* src = xv.row(e[0]);
            double* dst = y.row(e[1]);
            for (int j = 0; j < xv.cols; ++j)
                dst[j] += w * src[j];
        }
        const RadiusGraph* gp = &g;
        return push(std::move(y), [x, gp, deg](Tape& t, int self) {
            const Matrix& gout = t.nodes_[self].grad;
            Matrix& gx = t.ensure_grad(x);
            for (const auto& e : gp->edges) {
                const double w = 1.0 / (*deg)[e[1]];
                const double* gr = gout.row(e[1]);
                double* gs = gx.row(e[0]);
                for (int j = 0; j < gout.cols; ++j)
                    gs[j] += w * gr[j];
            }
        });
    }

    /// Edge-conditioned convolution with a residual term:
    ///   out_i = h_i + (1/|N_i|) sum_{j in N_i} K_e h_j
    /// where K_e is row e of `kernel_out` reshaped row-major to (C x C).
    /// Isolated nodes keep h_i unchanged.
    int kernel_combine(int h, int kernel_out, const RadiusGraph& g) {
        const Matrix& hv = nodes_[h].value;
        const Matrix& kv = nodes_[kernel_out].value;
        const int c = hv.cols;
        if (static_cast<std::size_t>(hv.rows) != g.size())
            throw ShapeError("kernel_combine: feature rows do not match graph size");
        if (kv.rows != static_cast<int>(g.edges.size()) || kv.cols != c * c)
            throw ShapeError("kernel_combine: kernel_out must be (edges x C*C)");
        auto deg = std::make_shared<std::vector<double>>(degrees(g));
        Matrix y = hv;
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const auto [j, i] = std::pair(g.edges[e][0], g.edges[e][1]);
            const double w = 1.0 / (*deg)[i];
            const double* ke = kv.row(static_cast<int>(e));
            const double* src = hv.row(j);
            double* dst = y.row(i);
            for (int r = 0; r < c; ++r) {
                double acc = 0.0;
                for (int q = 0; q < c; ++q)
                    acc += ke[r * c + q] * src[q];
                dst[r] += w * acc;
            }
        }
        const RadiusGraph* gp = &g;
        return push(std::move(y), [h, kernel_out, gp, deg, c](Tape& t, int self) {
            const Matrix& gout = t.nodes_[self].grad;
            const Matrix& hv = t.nodes_[h].value;
            const Matrix& kv = t.nodes_[kernel_out].value;
            Matrix& gh = t.ensure_grad(h);
            Matrix& gk = t.ensure_grad(kernel_out);
            gh += gout;
            for (std::size_t e = 0; e < gp->edges.size(); ++e) {
                const auto [j, i] = std::pair(gp->edges[e][0], gp->edges[e][1]);
                const double w = 1.0 / (*deg)[i];
                const double* gr = gout.row(i);
                const double* src = hv.row(j);
                const double* ke = kv.row(static_cast<int>(e));
                double* gke = gk.row(static_cast<int>(e));
                double* gsrc = gh.row(j);
                for (int r = 0; r < c; ++r) {
                    const double gi = w * gr[r];
                    if (gi == 0.0)
                        continue;
                    for (int q = 0; q < c; ++q) {
                        gke[r * c + q] += gi * src[q];
                        gsrc[q] += gi * ke[r * c + q];
                    }
                }
            }
        });
    }

    /// Per-edge attribute block for edge-conditioned kernels. For edge j -> i:
    ///   (dx, dy, du_x, du_y, dp, sdf_i, sdf_j, inlet)
    /// where d* are i-minus-j differences; positions, sdf and inlet come from
    /// the static normalized inputs (columns x, y, inlet, sdf), du/dp from the
    /// decoded state `dec` (columns u_x, u_y, p, nu_t). Gradients flow into
    /// `dec` only; the static block is constant.
    int gather_edge_attrs(int dec, const Matrix& x_static, const RadiusGraph& g) {
        const Matrix& dv = nodes_[dec].value;
        if (static_cast<std::size_t>(dv.rows) != g.size() ||
            static_cast<std::size_t>(x_static.rows) != g.size())
            throw ShapeError("gather_edge_attrs: row counts do not match graph size");
        if (dv.cols < 3 || x_static.cols != 4)
            throw ShapeError("gather_edge_attrs: need decoded (>=3 ch) and static (4 ch)");
        Matrix y(static_cast<int>(g.edges.size()), 8);
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            const auto [j, i] = std::pair(g.edges[e][0], g.edges[e][1]);
            double* r = y.row(static_cast<int>(e));
            r[0] = x_static.at(i, 0) - x_static.at(j, 0);
            r[1] = x_static.at(i, 1) - x_static.at(j, 1);
            r[2] = dv.at(i, 0) - dv.at(j, 0);
            r[3] = dv.at(i, 1) - dv.at(j, 1);
            r[4] = dv.at(i, 2) - dv.at(j, 2);
            r[5] = x_static.at(i, 3);
            r[6] = x_static.at(j, 3);
            r[7] = x_static.at(i, 2);
        }
        const RadiusGraph* gp = &g;
        return push(std::move(y), [dec, gp](Tape& t, int self) {
            const Matrix& gout = t.nodes_[self].grad;
            Matrix& gd = t.ensure_grad(dec);
            for (std::size_t e = 0; e < gp->edges.size(); ++e) {
                const auto [j, i] = std::pair(gp->edges[e][0], gp->edges[e][1]);
                const double* gr = gout.row(static_cast<int>(e));
                for (int ch = 0; ch < 3; ++ch) {
                    gd.at(i, ch) += gr[2 + ch];
                    gd.at(j, ch) -= gr[2 + ch];
                }
            }
        });
    }

    /// Fine -> coarse mean pooling along hierarchy level k (scale k to k+1).
    int pool_mean(int x, const ScaleHierarchy& hy, std::size_t level) {
        check_level(hy, level);
        const Matrix& xv = nodes_[x].value;
        const auto& kids = hy.children[level];
        if (static_cast<std::size_t>(xv.rows) != hy.scales[level].nodes.size())
            throw ShapeError("pool_mean: rows do not match fine scale size");
        Matrix y(static_cast<int>(kids.size()), xv.cols);
        for (std::size_t p = 0; p < kids.size(); ++p) {
            double* yr = y.row(static_cast<int>(p));
            for (std::uint32_t child : kids[p]) {
                const double* xr = xv.row(static_cast<int>(child));
                for (int j = 0; j < xv.cols; ++j)
                    yr[j] += xr[j];
            }
            const double w = 1.0 / static_cast<double>(kids[p].size());
            for (int j = 0; j < xv.cols; ++j)
                yr[j] *= w;
        }
        const ScaleHierarchy* hp = &hy;
        return push(std::move(y), [x, hp, level](Tape& t, int self) {
            const Matrix& gout = t.nodes_[self].grad;
            Matrix& gx = t.ensure_grad(x);
            const auto& kids = hp->children[level];
            for (std::size_t p = 0; p < kids.size(); ++p) {
                const double w = 1.0 / static_cast<double>(kids[p].size());
                const double* gr = gout.row(static_cast<int>(p));
                for (std::uint32_t child : kids[p]) {
                    double* gxr = gx.row(static_cast<int>(child));
                    for (int j = 0; j < gout.cols; ++j)
                        gxr[j] += w * gr[j];
                }
            }
        });
    }

    /// Coarse -> fine copy along hierarchy level k: each fine node takes its
    /// parent's row.
    int unpool_nearest(int x, const ScaleHierarchy& hy, std::size_t level) {
        check_level(hy, level);
        const Matrix& xv = nodes_[x].value;
        const auto& parent = hy.parent[level];
        if (static_cast<std::size_t>(xv.rows) != hy.scales[level + 1].nodes.size())
            throw ShapeError("unpool_nearest: rows do not match coarse scale size");
        Matrix y(static_cast<int>(parent.size()), xv.cols);
        for (std::size_t i = 0; i < parent.size(); ++i) {
            const double* xr = xv.row(static_cast<int>(parent[i]));
            double* yr = y.row(static_cast<int>(i));
            for (int j = 0; j < xv.cols; ++j)
                yr[j] = xr[j];
        }
        const ScaleHierarchy* hp = &hy;
        return push(std::move(y), [x, hp, level](Tape& t, int self) {
            const Matrix& gout = t.nodes_[self].grad;
            Matrix& gx = t.ensure_grad(x);
            const auto& parent = hp->parent[level];
            for (std::size_t i = 0; i < parent.size(); ++i) {
                const double* gr = gout.row(static_cast<int>(i));
                double* gxr = gx.row(static_cast<int>(parent[i]));
                for (int j = 0; j < gout.cols; ++j)
                    gxr[j] += gr[j];
            }
        });
    }

    /// Composite squared-error objective over a node split:
    ///   L = mean_{volume} |pred - target|^2 + lambda * mean_{surface} |...|^2
    /// Surface mean is defined as 0 when no surface node is present; at least
    /// one volume node is required. Writes the two partial terms to lv / ls.
    int masked_sq_loss(int pred, const Matrix& target, const std::vector<std::uint8_t>& surf,
                       double lambda, double* lv = nullptr, double* ls = nullptr) {
        const Matrix& pv = nodes_[pred].value;
        if (!pv.same_shape(target))
            throw ShapeError("masked_sq_loss: prediction and target shapes differ");
        if (surf.size() != static_cast<std::size_t>(pv.rows))
            throw ShapeError("masked_sq_loss: mask length does not match rows");
        long long nv = 0, ns = 0;
        for (std::uint8_t m : surf)
            (m ? ns : nv)++;
        if (nv == 0)
            throw ArgumentError("masked_sq_loss: at least one volume node required");
        double sv = 0.0, ss = 0.0;
        for (int i = 0; i < pv.rows; ++i) {
            const double* pr = pv.row(i);
            const double* tr = target.row(i);
            double d2 = 0.0;
            for (int j = 0; j < pv.cols; ++j) {
                const double d = pr[j] - tr[j];
                d2 += d * d;
            }
            (surf[i] ? ss : sv) += d2;
        }
        const double loss_v = sv / static_cast<double>(nv);
        const double loss_s = ns > 0 ? ss / static_cast<double>(ns) : 0.0;
        if (lv)
            *lv = loss_v;
        if (ls)
            *ls = loss_s;
        Matrix y(1, 1);
        y.at(0, 0) = loss_v + lambda * loss_s;

        auto tgt = std::make_shared<Matrix>(target);
        auto mask = std::make_shared<std::vector<std::uint8_t>>(surf);
        return push(std::move(y), [pred, tgt, mask, lambda, nv, ns](Tape& t, int self) {
            const double gl = t.nodes_[self].grad.at(0, 0);
            const Matrix& pv = t.nodes_[pred].value;
            Matrix& gp = t.ensure_grad(pred);
            for (int i = 0; i < pv.rows; ++i) {
                const double scale =
                    (*mask)[i] ? (ns > 0 ? gl * lambda * 2.0 / static_cast<double>(ns) : 0.0)
                               : gl * 2.0 / static_cast<double>(nv);
                const double* pr = pv.row(i);
                const double* tr = tgt->row(i);
                double* gr = gp.row(i);
                for (int j = 0; j < pv.cols; ++j)
                    gr[j] += scale * (pr[j] - tr[j]);
            }
        });
    }

    /// Run reverse accumulation from a scalar node. May be called once per tape.
    void backward(int loss_id) {
        const Matrix& lv = nodes_.at(loss_id).value;
        if (lv.rows != 1 || lv.cols != 1)
            throw ShapeError("backward: loss node must be 1 x 1");
        if (ran_backward_)
            throw ArgumentError("backward: tape already differentiated");
        ran_backward_ = true;
        ensure_grad(loss_id).at(0, 0) = 1.0;
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id)
            if (nodes_[id].grad.size() > 0 && nodes_[id].backward)
                nodes_[id].backward(*this, id);
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// Smallest |input| seen by any relu() on this tape; +inf when no relu ran.
    /// Gradient-verification setups assert this margin to stay off the kink.
    double min_abs_relu_input() const { return min_abs_relu_in_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&, int)> backward;
    };

    static std::vector<double> degrees(const RadiusGraph& g) {
        std::vector<double> deg(g.size(), 0.0);
        for (const auto& e : g.edges)
            deg[e[1]] += 1.0;
        return deg;
    }

    static void check_level(const ScaleHierarchy& hy, std::size_t level) {
        if (level + 1 >= hy.scales.size())
            throw ArgumentError("hierarchy level out of range");
    }

    int push(Matrix value, std::function<void(Tape&, int)> bw) {
        nodes_.push_back({std::move(value), {}, std::move(bw)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Matrix& ensure_grad(int id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0)
            n.grad = Matrix::zeros(n.value.rows, n.value.cols);
        return n.grad;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Matrix*, int> param_ids_;
    bool ran_backward_ = false;
    double min_abs_relu_in_ = std::numeric_limits<double>::infinity();
};

} // namespace afb
