#include "atx/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace atx::ad {

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

void backward(const Var& root) {
    if (root->val.numel() != 1) throw InputError("backward() root must be scalar");
    // Iterative post-order DFS, then reverse for the sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad_alloc) n->backprop(*n);
    }
}

static Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->parents = std::move(parents);
    bool rg = false;
    for (auto& p : n->parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) n->backprop = std::move(backprop);
    return n;
}

static void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw InputError(std::string(op) + ": shape mismatch " +
                         Tensor::shape_str(a->val.shape()) + " vs " +
                         Tensor::shape_str(b->val.shape()));
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] + b->val[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *n.parents[k];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] - b->val[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * b->val[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pb.val[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pa.val[i];
        }
    });
}

Var affine(const Var& x, double a, double b) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x->val[i] + b;
    return make_op(std::move(out), {x}, [a](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += a * n.grad[i];
    });
}

Var square(const Var& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->val[i] * x->val[i];
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * n.parents[0]->val[i] * n.grad[i];
    });
}

Var relu(const Var& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->val[i] > 0 ? x->val[i] : 0.0;
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (n.parents[0]->val[i] > 0) g[i] += n.grad[i];
    });
}

Var leaky_relu(const Var& x, double slope) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = x->val[i] > 0 ? x->val[i] : slope * x->val[i];
    return make_op(std::move(out), {x}, [slope](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] += (n.parents[0]->val[i] > 0 ? 1.0 : slope) * n.grad[i];
    });
}

Var tanh_op(const Var& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->val[i]);
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += (1.0 - n.val[i] * n.val[i]) * n.grad[i];
    });
}

Var sigmoid_op(const Var& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = x->val[i];
        out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.val[i] * (1.0 - n.val[i]) * n.grad[i];
    });
}

Var softplus(const Var& x) {
    Tensor out(x->val.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = x->val[i];
        out[i] = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double v = n.parents[0]->val[i];
            double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            g[i] += sig * n.grad[i];
        }
    });
}

Var sum_all(const Var& x) {
    double s = 0;
    for (int64_t i = 0; i < x->val.numel(); ++i) s += x->val[i];
    return make_op(Tensor({1}, {s}), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    });
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0 / double(x->val.numel())); }

Var mask_mul(const Var& mask, const Var& x) {
    const Tensor& m = mask->val;
    const Tensor& v = x->val;
    if (m.ndim() != 4 || v.ndim() != 4 || m.shape(0) != v.shape(0) || m.shape(1) != 1 ||
        m.shape(2) != v.shape(2) || m.shape(3) != v.shape(3))
        throw InputError("mask_mul: mask must be (N,1,H,W) matching x spatially");
    int64_t N = v.shape(0), C = v.shape(1), HW = v.shape(2) * v.shape(3);
    Tensor out(v.shape());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i)
                out[(n * C + c) * HW + i] = m[n * HW + i] * v[(n * C + c) * HW + i];
    return make_op(std::move(out), {mask, x}, [N, C, HW](Node& nd) {
        Node& pm = *nd.parents[0];
        Node& px = *nd.parents[1];
        if (pm.requires_grad) {
            Tensor& g = pm.ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i)
                        g[n * HW + i] += nd.grad[(n * C + c) * HW + i] * px.val[(n * C + c) * HW + i];
        }
        if (px.requires_grad) {
            Tensor& g = px.ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i)
                        g[(n * C + c) * HW + i] += nd.grad[(n * C + c) * HW + i] * pm.val[n * HW + i];
        }
    });
}

// ---- convolution plumbing ----

namespace {

struct ConvGeom {
    int64_t C, H, W;       // image dims
    int kh, kw, sh, sw, ph, pw, dh, dw;
    int64_t Ho, Wo;        // column grid dims
};

void im2col(const double* im, const ConvGeom& g, double* col) {
    // col is (C*kh*kw, Ho*Wo)
    for (int64_t c = 0; c < g.C; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.Ho * g.Wo;
                for (int64_t oh = 0; oh < g.Ho; ++oh) {
                    int64_t ih = oh * g.sh - g.ph + int64_t(ki) * g.dh;
                    if (ih < 0 || ih >= g.H) {
                        std::fill(row + oh * g.Wo, row + (oh + 1) * g.Wo, 0.0);
                        continue;
                    }
                    const double* src = im + (c * g.H + ih) * g.W;
                    for (int64_t ow = 0; ow < g.Wo; ++ow) {
                        int64_t iw = ow * g.sw - g.pw + int64_t(kj) * g.dw;
                        row[oh * g.Wo + ow] = (iw >= 0 && iw < g.W) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* col, const ConvGeom& g, double* im) {
    for (int64_t c = 0; c < g.C; ++c) {
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.Ho * g.Wo;
                for (int64_t oh = 0; oh < g.Ho; ++oh) {
                    int64_t ih = oh * g.sh - g.ph + int64_t(ki) * g.dh;
                    if (ih < 0 || ih >= g.H) continue;
                    double* dst = im + (c * g.H + ih) * g.W;
                    for (int64_t ow = 0; ow < g.Wo; ++ow) {
                        int64_t iw = ow * g.sw - g.pw + int64_t(kj) * g.dw;
                        if (iw >= 0 && iw < g.W) dst[iw] += row[oh * g.Wo + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation) {
    const Tensor& xv = x->val;
    const Tensor& wv = w->val;
    if (xv.ndim() != 4 || wv.ndim() != 4) throw InputError("conv2d expects 4-D tensors");
    if (xv.shape(1) != wv.shape(1))
        throw ConfigError("conv2d: input channels " + std::to_string(xv.shape(1)) +
                          " do not match weight " + std::to_string(wv.shape(1)));
    int64_t N = xv.shape(0), Cin = xv.shape(1), H = xv.shape(2), W = xv.shape(3);
    int64_t Cout = wv.shape(0);
    int kh = int(wv.shape(2)), kw = int(wv.shape(3));
    int64_t Ho = conv_out_dim(H, kh, stride, pad, dilation);
    int64_t Wo = conv_out_dim(W, kw, stride, pad, dilation);
    if (Ho <= 0 || Wo <= 0) throw InputError("conv2d: output dims collapse to zero");
    ConvGeom geom{Cin, H, W, kh, kw, stride, stride, pad, pad, dilation, dilation, Ho, Wo};
    int64_t K = Cin * kh * kw, P = Ho * Wo;

    Tensor out({N, Cout, Ho, Wo});
    std::vector<double> cols(size_t(K * P));
    for (int64_t n = 0; n < N; ++n) {
        im2col(xv.data() + n * Cin * H * W, geom, cols.data());
        gemm(false, false, Cout, P, K, 1.0, wv.data(), K, cols.data(), P, 0.0,
             out.data() + n * Cout * P, P);
        if (b) {
            double* o = out.data() + n * Cout * P;
            for (int64_t c = 0; c < Cout; ++c)
                for (int64_t i = 0; i < P; ++i) o[c * P + i] += b->val[c];
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents), [geom, N, Cin, Cout, H, W, K, P](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node* pb = nd.parents.size() > 2 ? nd.parents[2].get() : nullptr;
        std::vector<double> cols(size_t(K * P));
        for (int64_t n = 0; n < N; ++n) {
            const double* dy = nd.grad.data() + n * Cout * P;
            if (pw.requires_grad) {
                im2col(px.val.data() + n * Cin * H * W, geom, cols.data());
                gemm(false, true, Cout, K, P, 1.0, dy, P, cols.data(), P, 1.0,
                     pw.ensure_grad().data(), K);
            }
            if (pb && pb->requires_grad) {
                Tensor& gb = pb->ensure_grad();
                for (int64_t c = 0; c < Cout; ++c)
                    for (int64_t i = 0; i < P; ++i) gb[c] += dy[c * P + i];
            }
            if (px.requires_grad) {
                gemm(true, false, K, P, Cout, 1.0, pw.val.data(), K, dy, P, 0.0, cols.data(), P);
                col2im_accum(cols.data(), geom, px.ensure_grad().data() + n * Cin * H * W);
            }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int out_pad) {
    const Tensor& xv = x->val;
    const Tensor& wv = w->val;  // (Cin, Cout, kh, kw)
    if (xv.ndim() != 4 || wv.ndim() != 4) throw InputError("conv_transpose2d expects 4-D tensors");
    if (xv.shape(1) != wv.shape(0))
        throw ConfigError("conv_transpose2d: channel mismatch");
    int64_t N = xv.shape(0), Cin = xv.shape(1), Hi = xv.shape(2), Wi = xv.shape(3);
    int64_t Cout = wv.shape(1);
    int kh = int(wv.shape(2)), kw = int(wv.shape(3));
    int64_t Ho = (Hi - 1) * stride - 2 * pad + kh + out_pad;
    int64_t Wo = (Wi - 1) * stride - 2 * pad + kw + out_pad;
    if (Ho <= 0 || Wo <= 0) throw InputError("conv_transpose2d: output dims collapse to zero");
    // col2im geometry: output image is (Cout,Ho,Wo), column grid is the input grid.
    ConvGeom geom{Cout, Ho, Wo, kh, kw, stride, stride, pad, pad, 1, 1, Hi, Wi};
    int64_t K = Cout * kh * kw, P = Hi * Wi;

    Tensor out({N, Cout, Ho, Wo});
    std::vector<double> cols(size_t(K * P));
    for (int64_t n = 0; n < N; ++n) {
        // cols = W^T (K, Cin) * x_n (Cin, P)
        gemm(true, false, K, P, Cin, 1.0, wv.data(), K, xv.data() + n * Cin * P, P, 0.0,
             cols.data(), P);
        col2im_accum(cols.data(), geom, out.data() + n * Cout * Ho * Wo);
        if (b) {
            double* o = out.data() + n * Cout * Ho * Wo;
            for (int64_t c = 0; c < Cout; ++c)
                for (int64_t i = 0; i < Ho * Wo; ++i) o[c * Ho * Wo + i] += b->val[c];
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_op(std::move(out), std::move(parents),
                   [geom, N, Cin, Cout, Ho, Wo, K, P](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node* pb = nd.parents.size() > 2 ? nd.parents[2].get() : nullptr;
        std::vector<double> cols(size_t(K * P));
        for (int64_t n = 0; n < N; ++n) {
            const double* dy = nd.grad.data() + n * Cout * Ho * Wo;
            im2col(dy, geom, cols.data());
            if (px.requires_grad)
                gemm(false, false, Cin, P, K, 1.0, pw.val.data(), K, cols.data(), P, 1.0,
                     px.ensure_grad().data() + n * Cin * P, P);
            if (pw.requires_grad)
                gemm(false, true, Cin, K, P, 1.0, px.val.data() + n * Cin * P, P, cols.data(), P,
                     1.0, pw.ensure_grad().data(), K);
            if (pb && pb->requires_grad) {
                Tensor& gb = pb->ensure_grad();
                for (int64_t c = 0; c < Cout; ++c)
                    for (int64_t i = 0; i < Ho * Wo; ++i) gb[c] += dy[c * Ho * Wo + i];
            }
        }
    });
}

Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum, double eps) {
    const Tensor& xv = x->val;
    if (xv.ndim() != 4) throw InputError("batch_norm2d expects 4-D input");
    int64_t N = xv.shape(0), C = xv.shape(1), HW = xv.shape(2) * xv.shape(3);
    if (gamma->val.numel() != C || beta->val.numel() != C ||
        running_mean.numel() != C || running_var.numel() != C)
        throw ConfigError("batch_norm2d: parameter size mismatch");
    int64_t M = N * HW;

    Tensor out(xv.shape());
    auto mean = std::make_shared<Tensor>(std::vector<int64_t>{C});
    auto ivar = std::make_shared<Tensor>(std::vector<int64_t>{C});
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            double s = 0;
            for (int64_t n = 0; n < N; ++n) {
                const double* p = xv.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) s += p[i];
            }
            double mu = s / double(M);
            double v = 0;
            for (int64_t n = 0; n < N; ++n) {
                const double* p = xv.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) v += (p[i] - mu) * (p[i] - mu);
            }
            v /= double(M);
            (*mean)[c] = mu;
            (*ivar)[c] = 1.0 / std::sqrt(v + eps);
            double unbiased = M > 1 ? v * double(M) / double(M - 1) : v;
            running_mean[c] = (1 - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (1 - momentum) * running_var[c] + momentum * unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            (*mean)[c] = running_mean[c];
            (*ivar)[c] = 1.0 / std::sqrt(running_var[c] + eps);
        }
    }
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double* p = xv.data() + (n * C + c) * HW;
            double* o = out.data() + (n * C + c) * HW;
            double g = gamma->val[c], bta = beta->val[c], mu = (*mean)[c], iv = (*ivar)[c];
            for (int64_t i = 0; i < HW; ++i) o[i] = g * (p[i] - mu) * iv + bta;
        }

    return make_op(std::move(out), {x, gamma, beta},
                   [N, C, HW, M, mean, ivar, training](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pbt = *nd.parents[2];
        for (int64_t c = 0; c < C; ++c) {
            double mu = (*mean)[c], iv = (*ivar)[c], g = pg.val[c];
            double sum_dy = 0, sum_dy_xhat = 0;
            for (int64_t n = 0; n < N; ++n) {
                const double* dy = nd.grad.data() + (n * C + c) * HW;
                const double* xp = px.val.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * (xp[i] - mu) * iv;
                }
            }
            if (pg.requires_grad) pg.ensure_grad()[c] += sum_dy_xhat;
            if (pbt.requires_grad) pbt.ensure_grad()[c] += sum_dy;
            if (px.requires_grad) {
                Tensor& gx = px.ensure_grad();
                for (int64_t n = 0; n < N; ++n) {
                    const double* dy = nd.grad.data() + (n * C + c) * HW;
                    const double* xp = px.val.data() + (n * C + c) * HW;
                    double* go = gx.data() + (n * C + c) * HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        double xhat = (xp[i] - mu) * iv;
                        if (training)
                            go[i] += g * iv *
                                     (dy[i] - sum_dy / double(M) - xhat * sum_dy_xhat / double(M));
                        else
                            go[i] += g * iv * dy[i];
                    }
                }
            }
        }
    });
}

Var max_pool2d(const Var& x, int k, int stride) {
    const Tensor& xv = x->val;
    if (xv.ndim() != 4) throw InputError("max_pool2d expects 4-D input");
    int64_t N = xv.shape(0), C = xv.shape(1), H = xv.shape(2), W = xv.shape(3);
    int64_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
    Tensor out({N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<int64_t>>(size_t(N * C * Ho * Wo));
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = xv.data() + nc * H * W;
        double* dst = out.data() + nc * Ho * Wo;
        int64_t* am = argmax->data() + nc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double best = -1e300;
                int64_t bi = -1;
                for (int di = 0; di < k; ++di)
                    for (int dj = 0; dj < k; ++dj) {
                        int64_t idx = (oh * stride + di) * W + ow * stride + dj;
                        if (src[idx] > best) {
                            best = src[idx];
                            bi = idx;
                        }
                    }
                dst[oh * Wo + ow] = best;
                am[oh * Wo + ow] = bi;
            }
    }
    return make_op(std::move(out), {x}, [N, C, H, W, Ho, Wo, argmax](Node& nd) {
        Tensor& gx = nd.parents[0]->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const double* dy = nd.grad.data() + nc * Ho * Wo;
            const int64_t* am = argmax->data() + nc * Ho * Wo;
            double* go = gx.data() + nc * H * W;
            for (int64_t i = 0; i < Ho * Wo; ++i) go[am[i]] += dy[i];
        }
    });
}

Var reshape(const Var& x, std::vector<int64_t> shape) {
    Tensor out = x->val.reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

Var softmax_xent(const Var& logits, const std::vector<int>& labels) {
    const Tensor& lv = logits->val;
    if (lv.ndim() != 2) throw InputError("softmax_xent expects (N,K) logits");
    int64_t N = lv.shape(0), K = lv.shape(1);
    if (int64_t(labels.size()) != N) throw InputError("softmax_xent: label count mismatch");
    auto probs = std::make_shared<Tensor>(lv.shape());
    double nll = 0;
    for (int64_t n = 0; n < N; ++n) {
        const double* row = lv.data() + n * K;
        double mx = *std::max_element(row, row + K);
        double z = 0;
        for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        double logz = mx + std::log(z);
        for (int64_t k = 0; k < K; ++k) (*probs)[n * K + k] = std::exp(row[k] - logz);
        int lab = labels[n];
        if (lab < 0 || lab >= K) throw InputError("softmax_xent: label out of range");
        nll += logz - row[lab];
    }
    auto labs = std::make_shared<std::vector<int>>(labels);
    return make_op(Tensor({1}, {nll / double(N)}), {logits}, [N, K, probs, labs](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        double s = nd.grad[0] / double(N);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < K; ++k)
                g[n * K + k] += s * ((*probs)[n * K + k] - ((*labs)[n] == int(k) ? 1.0 : 0.0));
    });
}

}  // namespace atx::ad
