#include "vmus/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "vmus/error.hpp"
#include "vmus/kernels.hpp"

namespace vmus::ops {

namespace {

void require_same_graph(Var a, Var b) {
    if (a.graph != b.graph) throw InvalidArgument("ops: variables belong to different graphs");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = *a.graph;
    Tensor out = kernels::matmul(a.value(), b.value());
    return g.record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* da = g.grad_buffer(ia)) kernels::gemm_acc(*da, dy, false, g.value(ib), true);
        if (Tensor* db = g.grad_buffer(ib)) kernels::gemm_acc(*db, g.value(ia), true, dy, false);
    });
}

Var matmul_nt(Var a, Var b) {
    require_same_graph(a, b);
    Graph& g = *a.graph;
    Tensor out = kernels::matmul_nt(a.value(), b.value());
    return g.record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* da = g.grad_buffer(ia)) kernels::gemm_acc(*da, dy, false, g.value(ib), false);
        if (Tensor* db = g.grad_buffer(ib)) kernels::gemm_acc(*db, dy, true, g.value(ia), false);
    });
}

Var add(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    kernels::add_inplace(out, b.value());
    return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* da = g.grad_buffer(ia)) kernels::add_inplace(*da, dy);
        if (Tensor* db = g.grad_buffer(ib)) kernels::add_inplace(*db, dy);
    });
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias);
    Tensor out = kernels::add_bias(x.value(), bias.value());
    return x.graph->record(std::move(out), {x, bias}, [ix = x.id, ib = bias.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* dx = g.grad_buffer(ix)) kernels::add_inplace(*dx, dy);
        if (Tensor* db = g.grad_buffer(ib)) {
            const std::size_t n = dy.cols();
            for (std::size_t r = 0; r < dy.rows(); ++r) {
                for (std::size_t c = 0; c < n; ++c) (*db)[c] += dy(r, c);
            }
        }
    });
}

Var mul(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* da = g.grad_buffer(ia)) {
            const Tensor& bv = g.value(ib);
            for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
        }
        if (Tensor* db = g.grad_buffer(ib)) {
            const Tensor& av = g.value(ia);
            for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
        }
    });
}

Var scale(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.values()) v *= s;
    return x.graph->record(std::move(out), {x}, [ix = x.id, s](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        if (Tensor* dx = g.grad_buffer(ix)) {
            for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += s * dy[i];
        }
    });
}

Var softmax_rows(Var x) {
    Tensor out = kernels::softmax_rows(x.value());
    return x.graph->record(std::move(out), {x}, [ix = x.id](Graph& g, std::size_t self) {
        Tensor* dx = g.grad_buffer(ix);
        if (!dx) return;
        const Tensor& dy = g.grad(self);
        const Tensor& y = g.value(self);
        const std::size_t n = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += dy(r, c) * y(r, c);
            for (std::size_t c = 0; c < n; ++c) (*dx)(r, c) += y(r, c) * (dy(r, c) - dot);
        }
    });
}

Var causal_mask(Var scores) {
    const Tensor& s = scores.value();
    if (s.rows() != s.cols()) throw InvalidArgument("causal_mask expects a square score matrix");
    Tensor out = s;
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = r + 1; c < out.cols(); ++c) out(r, c) = neg_inf;
    }
    return scores.graph->record(std::move(out), {scores}, [is = scores.id](Graph& g, std::size_t self) {
        Tensor* ds = g.grad_buffer(is);
        if (!ds) return;
        const Tensor& dy = g.grad(self);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
            for (std::size_t c = 0; c <= r; ++c) (*ds)(r, c) += dy(r, c);
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    require_same_graph(x, gain);
    require_same_graph(x, bias);
    auto cache = std::make_shared<kernels::LayerNormCache>();
    Tensor out = kernels::layer_norm(x.value(), gain.value(), bias.value(), eps, cache.get());
    return x.graph->record(
        std::move(out), {x, gain, bias},
        [ix = x.id, ig = gain.id, ib = bias.id, cache](Graph& g, std::size_t self) {
            const Tensor& dy = g.grad(self);
            const Tensor& xh = cache->normalized;
            const Tensor& gv = g.value(ig);
            const std::size_t rows = dy.rows();
            const std::size_t n = dy.cols();
            if (Tensor* dg = g.grad_buffer(ig)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) (*dg)[c] += dy(r, c) * xh(r, c);
            }
            if (Tensor* db = g.grad_buffer(ib)) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < n; ++c) (*db)[c] += dy(r, c);
            }
            if (Tensor* dx = g.grad_buffer(ix)) {
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        const double dxh = dy(r, c) * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh(r, c);
                    }
                    mean_dxh *= inv_n;
                    mean_dxh_xh *= inv_n;
                    const double inv_std = cache->inv_std[r];
                    for (std::size_t c = 0; c < n; ++c) {
                        const double dxh = dy(r, c) * gv[c];
                        (*dx)(r, c) += inv_std * (dxh - mean_dxh - xh(r, c) * mean_dxh_xh);
                    }
                }
            }
        });
}

Var gelu(Var x) {
    Tensor out = kernels::gelu(x.value());
    return x.graph->record(std::move(out), {x}, [ix = x.id](Graph& g, std::size_t self) {
        Tensor* dx = g.grad_buffer(ix);
        if (!dx) return;
        const Tensor& dy = g.grad(self);
        const Tensor& xv = g.value(ix);
        kernels::gelu_backward(xv, dy, *dx);
    });
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& t = table.value();
    const std::size_t rows = t.rows();
    const std::size_t n = t.cols();
    Tensor out = Tensor::matrix(ids.size(), n);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
            throw InvalidArgument("embedding id " + std::to_string(ids[i]) + " out of range [0, " +
                                  std::to_string(rows) + ")");
        }
        const auto src = t.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<int> id_copy(ids.begin(), ids.end());
    return table.graph->record(std::move(out), {table}, [it = table.id, id_copy](Graph& g, std::size_t self) {
        Tensor* dt = g.grad_buffer(it);
        if (!dt) return;
        const Tensor& dy = g.grad(self);
        const std::size_t n = dy.cols();
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
            auto dst = dt->row(static_cast<std::size_t>(id_copy[i]));
            for (std::size_t c = 0; c < n; ++c) dst[c] += dy(i, c);
        }
    });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& l = logits.value();
    const std::size_t rows = l.rows();
    const std::size_t n = l.cols();
    if (targets.size() != rows) throw InvalidArgument("cross_entropy: target count does not match logit rows");
    auto probs = std::make_shared<Tensor>(kernels::softmax_rows(l));
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= n) {
            throw InvalidArgument("cross_entropy target " + std::to_string(t) + " out of range");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : l.row(r)) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : l.row(r)) s += std::exp(v - mx);
        loss += mx + std::log(s) - l(r, static_cast<std::size_t>(t));
    }
    loss /= static_cast<double>(rows);
    std::vector<int> tcopy(targets.begin(), targets.end());
    return logits.graph->record(Tensor::matrix(1, 1, std::vector<double>{loss}), {logits},
                                [il = logits.id, probs, tcopy](Graph& g, std::size_t self) {
                                    Tensor* dl = g.grad_buffer(il);
                                    if (!dl) return;
                                    const double dy = g.grad(self)[0] / static_cast<double>(tcopy.size());
                                    const std::size_t n = probs->cols();
                                    for (std::size_t r = 0; r < tcopy.size(); ++r) {
                                        for (std::size_t c = 0; c < n; ++c) (*dl)(r, c) += dy * (*probs)(r, c);
                                        (*dl)(r, static_cast<std::size_t>(tcopy[r])) -= dy;
                                    }
                                });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    const std::size_t rows = parts.front().value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        require_same_graph(parts.front(), p);
        if (p.value().rows() != rows) throw InvalidArgument("concat_cols: row count mismatch");
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Tensor out = Tensor::matrix(rows, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + off);
        off += v.cols();
    }
    std::vector<std::size_t> ids;
    for (const Var& p : parts) ids.push_back(p.id);
    return parts.front().graph->record(std::move(out), parts, [ids, widths](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (Tensor* dp = g.grad_buffer(ids[k])) {
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) (*dp)(r, c) += dy(r, off + c);
            }
            off += widths[k];
        }
    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t width) {
    const Tensor& v = x.value();
    if (begin + width > v.cols()) throw InvalidArgument("slice_cols out of range");
    Tensor out = Tensor::matrix(v.rows(), width);
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < width; ++c) out(r, c) = v(r, begin + c);
    return x.graph->record(std::move(out), {x}, [ix = x.id, begin, width](Graph& g, std::size_t self) {
        Tensor* dx = g.grad_buffer(ix);
        if (!dx) return;
        const Tensor& dy = g.grad(self);
        for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < width; ++c) (*dx)(r, begin + c) += dy(r, c);
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return x.graph->record(Tensor::matrix(1, 1, std::vector<double>{s}), {x}, [ix = x.id](Graph& g, std::size_t self) {
        Tensor* dx = g.grad_buffer(ix);
        if (!dx) return;
        const double dy = g.grad(self)[0];
        for (double& v : dx->values()) v += dy;
    });
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    return scale(sum(x), 1.0 / n);
}

Var variance(Var x) {
    const Tensor& v = x.value();
    const double n = static_cast<double>(v.size());
    double mu = 0.0;
    for (double e : v.values()) mu += e;
    mu /= n;
    double var = 0.0;
    for (double e : v.values()) var += (e - mu) * (e - mu);
    var /= n;
    return x.graph->record(Tensor::matrix(1, 1, std::vector<double>{var}), {x},
                           [ix = x.id, mu, n](Graph& g, std::size_t self) {
                               Tensor* dx = g.grad_buffer(ix);
                               if (!dx) return;
                               const double dy = g.grad(self)[0];
                               const Tensor& xv = g.value(ix);
                               for (std::size_t i = 0; i < xv.size(); ++i) (*dx)[i] += dy * 2.0 * (xv[i] - mu) / n;
                           });
}

Var cosine_rows(Var a, Var b) {
    require_same_graph(a, b);
    require_same_shape(a.value(), b.value(), "cosine_rows");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t rows = av.rows();
    Tensor out = Tensor::matrix(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) out(r, 0) = kernels::cosine(av.row(r), bv.row(r));
    return a.graph->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
        const Tensor& dy = g.grad(self);
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        const Tensor& cv = g.value(self);
        Tensor* da = g.grad_buffer(ia);
        Tensor* db = g.grad_buffer(ib);
        const std::size_t n = av.cols();
        for (std::size_t r = 0; r < av.rows(); ++r) {
            double na2 = 0.0, nb2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                na2 += av(r, c) * av(r, c);
                nb2 += bv(r, c) * bv(r, c);
            }
            const double inv_ab = 1.0 / std::sqrt(na2 * nb2);
            const double cs = cv(r, 0);
            for (std::size_t c = 0; c < n; ++c) {
                if (da) (*da)(r, c) += dy(r, 0) * (bv(r, c) * inv_ab - cs * av(r, c) / na2);
                if (db) (*db)(r, c) += dy(r, 0) * (av(r, c) * inv_ab - cs * bv(r, c) / nb2);
            }
        }
    });
}

}  // namespace vmus::ops
