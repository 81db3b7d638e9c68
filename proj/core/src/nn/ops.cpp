// SPDX-License-Identifier: Apache-2.0
#include "matforge/nn/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>

#include "matforge/common.hpp"

namespace matforge::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

struct Nhwc {
    int n, h, w, c;
    std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }
};

Nhwc nhwc(const Tensor& t, const char* op)
{
    if (t.rank() != 4)
        throw StructuralError(std::string(op) + ": expected [N, H, W, C], got " + t.shape_string());
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

/// Gathers k x k neighbourhoods into rows of a [N*H*W, k*k*C] matrix.
std::shared_ptr<MatRM> im2col(const Tensor& x, const Nhwc& s, int k)
{
    const int pad = k / 2;
    auto cols = std::make_shared<MatRM>(MatRM::Zero(static_cast<Eigen::Index>(s.pixels()), k * k * s.c));
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x0 = 0; x0 < s.w; ++x0) {
                double* row = cols->data() + ((static_cast<std::size_t>(n) * s.h + y) * s.w + x0) * k * k * s.c;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= s.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = x0 + kx - pad;
                        if (sx < 0 || sx >= s.w)
                            continue;
                        const double* src = x.data() + ((static_cast<std::size_t>(n) * s.h + sy) * s.w + sx) * s.c;
                        std::copy(src, src + s.c, row + (ky * k + kx) * s.c);
                    }
                }
            }
    return cols;
}

void col2im_add(const MatRM& dcols, const Nhwc& s, int k, Tensor& dx)
{
    const int pad = k / 2;
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x0 = 0; x0 < s.w; ++x0) {
                const double* row = dcols.data() + ((static_cast<std::size_t>(n) * s.h + y) * s.w + x0) * k * k * s.c;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= s.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = x0 + kx - pad;
                        if (sx < 0 || sx >= s.w)
                            continue;
                        double* dst = dx.data() + ((static_cast<std::size_t>(n) * s.h + sy) * s.w + sx) * s.c;
                        const double* src = row + (ky * k + kx) * s.c;
                        for (int c = 0; c < s.c; ++c)
                            dst[c] += src[c];
                    }
                }
            }
}

/// Plain convolution product without bias, returning the [pixels, Cout] result
/// and the column matrix needed for the backward pass (null for k == 1).
struct ConvProduct {
    MatRM out;
    std::shared_ptr<MatRM> cols;
};

ConvProduct conv_product(const Tensor& x, const Nhwc& s, int k, const CMapRM& wmat)
{
    ConvProduct p;
    if (k == 1) {
        CMapRM X(x.data(), static_cast<Eigen::Index>(s.pixels()), s.c);
        p.out.noalias() = X * wmat;
    } else {
        p.cols = im2col(x, s, k);
        p.out.noalias() = (*p.cols) * wmat;
    }
    return p;
}

/// Accumulates dW and dX for out = conv(x, W).
void conv_backward(const MatRM& dy, const Var& x, const Nhwc& s, int k, const std::shared_ptr<MatRM>& cols,
                   const CMapRM& wmat, MapRM* dw)
{
    if (dw) {
        if (k == 1) {
            CMapRM X(x->value.data(), static_cast<Eigen::Index>(s.pixels()), s.c);
            dw->noalias() += X.transpose() * dy;
        } else {
            dw->noalias() += cols->transpose() * dy;
        }
    }
    if (x->requires_grad) {
        Tensor& dx = x->grad_buffer();
        if (k == 1) {
            MapRM DX(dx.data(), static_cast<Eigen::Index>(s.pixels()), s.c);
            DX.noalias() += dy * wmat.transpose();
        } else {
            MatRM dcols = dy * wmat.transpose();
            col2im_add(dcols, s, k, dx);
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b)
{
    const Nhwc s = nhwc(x->value, "conv2d");
    const Tensor& wt = w->value;
    if (wt.rank() != 4 || wt.dim(0) != wt.dim(1) || wt.dim(0) % 2 == 0 || wt.dim(2) != s.c)
        throw StructuralError("conv2d: weight " + wt.shape_string() + " incompatible with input " +
                              x->value.shape_string());
    const int k = wt.dim(0);
    const int co = wt.dim(3);
    if (b->value.numel() != static_cast<std::size_t>(co))
        throw StructuralError("conv2d: bias size mismatch");

    CMapRM wmat(wt.data(), k * k * s.c, co);
    ConvProduct prod = conv_product(x->value, s, k, wmat);
    Tensor out({s.n, s.h, s.w, co});
    MapRM O(out.data(), static_cast<Eigen::Index>(s.pixels()), co);
    O = prod.out;
    O.rowwise() += CVecMap(b->value.data(), co).transpose();

    auto cols = prod.cols;
    return make_node(std::move(out), {x, w, b}, [x, w, b, s, k, co, cols](Node& self) {
        CMapRM dy(self.grad.data(), static_cast<Eigen::Index>(s.pixels()), co);
        CMapRM wm(w->value.data(), k * k * s.c, co);
        MatRM dyc = dy;
        if (w->requires_grad) {
            MapRM dw(w->grad_buffer().data(), k * k * s.c, co);
            conv_backward(dyc, x, s, k, cols, wm, &dw);
        } else {
            conv_backward(dyc, x, s, k, cols, wm, nullptr);
        }
        if (b->requires_grad) {
            VecMap db(b->grad_buffer().data(), co);
            db += dyc.colwise().sum().transpose();
        }
    });
}

Var input_head_conv(const Var& latent, const Var& cond, const Var& w, const Var& b)
{
    const Nhwc sy = nhwc(latent->value, "input_head_conv");
    const Tensor& wt = w->value;
    const int cc = cond ? nhwc(cond->value, "input_head_conv").c : 0;
    if (cond && (cond->value.dim(0) != sy.n || cond->value.dim(1) != sy.h || cond->value.dim(2) != sy.w))
        throw StructuralError("input_head_conv: condition resolution does not match the latent");
    if (wt.rank() != 4 || wt.dim(0) != 3 || wt.dim(1) != 3 || wt.dim(2) != sy.c + cc)
        throw StructuralError("input_head_conv: weight " + wt.shape_string() + " does not take " +
                              std::to_string(sy.c) + " latent + " + std::to_string(cc) + " condition channels");
    const int k = 3;
    const int cin = sy.c + cc;
    const int co = wt.dim(3);

    // Split the kernel by input channel: [k*k, cin, co] -> latent / condition parts.
    auto split = [&](int first, int count) {
        MatRM part(k * k * count, co);
        for (int tap = 0; tap < k * k; ++tap)
            for (int c = 0; c < count; ++c)
                for (int o = 0; o < co; ++o)
                    part(tap * count + c, o) = wt[(static_cast<std::size_t>(tap) * cin + first + c) * co + o];
        return part;
    };
    auto w_lat = std::make_shared<MatRM>(split(0, sy.c));
    CMapRM wl(w_lat->data(), w_lat->rows(), co);
    ConvProduct lat = conv_product(latent->value, sy, k, wl);

    Tensor out({sy.n, sy.h, sy.w, co});
    MapRM O(out.data(), static_cast<Eigen::Index>(sy.pixels()), co);
    O = lat.out;
    O.rowwise() += CVecMap(b->value.data(), co).transpose();

    std::shared_ptr<MatRM> w_cond;
    std::shared_ptr<MatRM> cond_cols;
    Nhwc sc{};
    if (cond) {
        sc = nhwc(cond->value, "input_head_conv");
        w_cond = std::make_shared<MatRM>(split(sy.c, cc));
        CMapRM wc(w_cond->data(), w_cond->rows(), co);
        ConvProduct cp = conv_product(cond->value, sc, k, wc);
        O += cp.out;
        cond_cols = cp.cols;
    }

    auto lat_cols = lat.cols;
    return make_node(std::move(out), {latent, cond, w, b},
                     [latent, cond, w, b, sy, sc, cc, cin, co, k, w_lat, w_cond, lat_cols, cond_cols](Node& self) {
                         MatRM dy = CMapRM(self.grad.data(), static_cast<Eigen::Index>(sy.pixels()), co);
                         MatRM dwl = MatRM::Zero(k * k * sy.c, co);
                         MapRM dwl_map(dwl.data(), dwl.rows(), co);
                         CMapRM wl(w_lat->data(), w_lat->rows(), co);
                         conv_backward(dy, latent, sy, k, lat_cols, wl, w->requires_grad ? &dwl_map : nullptr);
                         MatRM dwc;
                         if (cond) {
                             dwc = MatRM::Zero(k * k * cc, co);
                             MapRM dwc_map(dwc.data(), dwc.rows(), co);
                             CMapRM wc(w_cond->data(), w_cond->rows(), co);
                             conv_backward(dy, cond, sc, k, cond_cols, wc, w->requires_grad ? &dwc_map : nullptr);
                         }
                         if (w->requires_grad) {
                             Tensor& dw = w->grad_buffer();
                             for (int tap = 0; tap < k * k; ++tap)
                                 for (int o = 0; o < co; ++o) {
                                     for (int c = 0; c < sy.c; ++c)
                                         dw[(static_cast<std::size_t>(tap) * cin + c) * co + o] +=
                                             dwl(tap * sy.c + c, o);
                                     for (int c = 0; c < cc; ++c)
                                         dw[(static_cast<std::size_t>(tap) * cin + sy.c + c) * co + o] +=
                                             dwc(tap * cc + c, o);
                                 }
                         }
                         if (b->requires_grad) {
                             VecMap db(b->grad_buffer().data(), co);
                             db += dy.colwise().sum().transpose();
                         }
                     });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b)
{
    const Nhwc s = nhwc(x->value, "depthwise_conv2d");
    const Tensor& wt = w->value;
    if (wt.rank() != 3 || wt.dim(0) != wt.dim(1) || wt.dim(0) % 2 == 0 || wt.dim(2) != s.c)
        throw StructuralError("depthwise_conv2d: weight " + wt.shape_string() + " incompatible with input " +
                              x->value.shape_string());
    const int k = wt.dim(0);
    const int pad = k / 2;
    const int C = s.c;
    Tensor out({s.n, s.h, s.w, C});
    const double* in = x->value.data();
    const double* wd = wt.data();
    const double* bd = b->value.data();
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y) {
            double* orow = out.data() + (static_cast<std::size_t>(n) * s.h + y) * s.w * C;
            for (int x0 = 0; x0 < s.w; ++x0)
                for (int c = 0; c < C; ++c)
                    orow[x0 * C + c] = bd[c];
            for (int ky = 0; ky < k; ++ky) {
                const int sy = y + ky - pad;
                if (sy < 0 || sy >= s.h)
                    continue;
                const double* irow = in + (static_cast<std::size_t>(n) * s.h + sy) * s.w * C;
                for (int kx = 0; kx < k; ++kx) {
                    const double* wk = wd + (ky * k + kx) * C;
                    const int xlo = std::max(0, pad - kx);
                    const int xhi = std::min(s.w, s.w + pad - kx);
                    for (int x0 = xlo; x0 < xhi; ++x0) {
                        const double* ip = irow + (x0 + kx - pad) * C;
                        double* op = orow + x0 * C;
                        for (int c = 0; c < C; ++c)
                            op[c] += ip[c] * wk[c];
                    }
                }
            }
        }
    return make_node(std::move(out), {x, w, b}, [x, w, b, s, k, pad, C](Node& self) {
        const double* dy = self.grad.data();
        const double* in = x->value.data();
        const double* wd = w->value.data();
        double* dx = x->requires_grad ? x->grad_buffer().data() : nullptr;
        double* dw = w->requires_grad ? w->grad_buffer().data() : nullptr;
        for (int n = 0; n < s.n; ++n)
            for (int y = 0; y < s.h; ++y) {
                const double* grow = dy + (static_cast<std::size_t>(n) * s.h + y) * s.w * C;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= s.h)
                        continue;
                    const std::size_t irow = (static_cast<std::size_t>(n) * s.h + sy) * s.w * C;
                    for (int kx = 0; kx < k; ++kx) {
                        const double* wk = wd + (ky * k + kx) * C;
                        double* dwk = dw ? dw + (ky * k + kx) * C : nullptr;
                        const int xlo = std::max(0, pad - kx);
                        const int xhi = std::min(s.w, s.w + pad - kx);
                        for (int x0 = xlo; x0 < xhi; ++x0) {
                            const double* gp = grow + x0 * C;
                            const std::size_t off = irow + static_cast<std::size_t>(x0 + kx - pad) * C;
                            if (dx) {
                                double* dp = dx + off;
                                for (int c = 0; c < C; ++c)
                                    dp[c] += gp[c] * wk[c];
                            }
                            if (dwk) {
                                const double* ip = in + off;
                                for (int c = 0; c < C; ++c)
                                    dwk[c] += gp[c] * ip[c];
                            }
                        }
                    }
                }
            }
        if (b->requires_grad) {
            double* db = b->grad_buffer().data();
            for (std::size_t p = 0; p < s.pixels(); ++p)
                for (int c = 0; c < C; ++c)
                    db[c] += dy[p * C + c];
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps)
{
    const Nhwc s = nhwc(x->value, "group_norm");
    if (groups <= 0 || s.c % groups != 0)
        throw StructuralError("group_norm: " + std::to_string(s.c) + " channels not divisible by " +
                              std::to_string(groups) + " groups");
    const int C = s.c;
    const int cpg = C / groups;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    const double count = static_cast<double>(hw * cpg);

    auto xhat = std::make_shared<Tensor>(std::vector<int>{s.n, s.h, s.w, C});
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n) * groups);
    Tensor out({s.n, s.h, s.w, C});
    const double* in = x->value.data();
    const double* g = gamma->value.data();
    const double* be = beta->value.data();
    std::vector<double> mean(groups), var(groups);
    for (int n = 0; n < s.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * hw * C;
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (std::size_t p = 0; p < hw; ++p)
            for (int c = 0; c < C; ++c)
                mean[c / cpg] += in[base + p * C + c];
        for (double& m : mean)
            m /= count;
        for (std::size_t p = 0; p < hw; ++p)
            for (int c = 0; c < C; ++c) {
                const double d = in[base + p * C + c] - mean[c / cpg];
                var[c / cpg] += d * d;
            }
        for (int gi = 0; gi < groups; ++gi)
            (*inv_std)[n * groups + gi] = 1.0 / std::sqrt(var[gi] / count + eps);
        for (std::size_t p = 0; p < hw; ++p)
            for (int c = 0; c < C; ++c) {
                const std::size_t i = base + p * C + c;
                const double xh = (in[i] - mean[c / cpg]) * (*inv_std)[n * groups + c / cpg];
                (*xhat)[i] = xh;
                out[i] = g[c] * xh + be[c];
            }
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, s, groups, cpg, hw, count, xhat, inv_std, C](Node& self) {
                         const double* dy = self.grad.data();
                         const double* g = gamma->value.data();
                         if (gamma->requires_grad || beta->requires_grad) {
                             double* dg = gamma->requires_grad ? gamma->grad_buffer().data() : nullptr;
                             double* db = beta->requires_grad ? beta->grad_buffer().data() : nullptr;
                             for (std::size_t i = 0; i < self.grad.numel(); ++i) {
                                 const int c = static_cast<int>(i % C);
                                 if (dg)
                                     dg[c] += dy[i] * (*xhat)[i];
                                 if (db)
                                     db[c] += dy[i];
                             }
                         }
                         if (!x->requires_grad)
                             return;
                         double* dx = x->grad_buffer().data();
                         std::vector<double> sum_d(groups), sum_dx(groups);
                         for (int n = 0; n < s.n; ++n) {
                             const std::size_t base = static_cast<std::size_t>(n) * hw * C;
                             std::fill(sum_d.begin(), sum_d.end(), 0.0);
                             std::fill(sum_dx.begin(), sum_dx.end(), 0.0);
                             for (std::size_t p = 0; p < hw; ++p)
                                 for (int c = 0; c < C; ++c) {
                                     const std::size_t i = base + p * C + c;
                                     const double dxh = dy[i] * g[c];
                                     sum_d[c / cpg] += dxh;
                                     sum_dx[c / cpg] += dxh * (*xhat)[i];
                                 }
                             for (std::size_t p = 0; p < hw; ++p)
                                 for (int c = 0; c < C; ++c) {
                                     const std::size_t i = base + p * C + c;
                                     const int gi = c / cpg;
                                     const double dxh = dy[i] * g[c];
                                     dx[i] += (*inv_std)[n * groups + gi] *
                                              (dxh - sum_d[gi] / count - (*xhat)[i] * sum_dx[gi] / count);
                                 }
                         }
                     });
}

Var gelu(const Var& x)
{
    Tensor out(x->value.shape());
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = x->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    return make_node(std::move(out), {x}, [x, inv_sqrt2](Node& self) {
        Tensor& dx = x->grad_buffer();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * kPi);
        for (std::size_t i = 0; i < dx.numel(); ++i) {
            const double v = x->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Var silu(const Var& x)
{
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = x->value[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    return make_node(std::move(out), {x}, [x](Node& self) {
        Tensor& dx = x->grad_buffer();
        for (std::size_t i = 0; i < dx.numel(); ++i) {
            const double v = x->value[i];
            const double sg = 1.0 / (1.0 + std::exp(-v));
            dx[i] += self.grad[i] * sg * (1.0 + v * (1.0 - sg));
        }
    });
}

Var add(const Var& a, const Var& b)
{
    if (!a->value.same_shape(b->value))
        throw StructuralError("add: shape mismatch " + a->value.shape_string() + " vs " + b->value.shape_string());
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        for (const Var& p : {a, b})
            if (p->requires_grad) {
                Tensor& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.numel(); ++i)
                    g[i] += self.grad[i];
            }
    });
}

Var add_channel_bias(const Var& x, const Var& bias)
{
    const Nhwc s = nhwc(x->value, "add_channel_bias");
    if (bias->value.rank() != 2 || bias->value.dim(0) != s.n || bias->value.dim(1) != s.c)
        throw StructuralError("add_channel_bias: bias " + bias->value.shape_string() + " does not match " +
                              x->value.shape_string());
    Tensor out = x->value;
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (int c = 0; c < s.c; ++c)
                out[(n * hw + p) * s.c + c] += bias->value[static_cast<std::size_t>(n) * s.c + c];
    return make_node(std::move(out), {x, bias}, [x, bias, s, hw](Node& self) {
        if (x->requires_grad) {
            Tensor& dx = x->grad_buffer();
            for (std::size_t i = 0; i < dx.numel(); ++i)
                dx[i] += self.grad[i];
        }
        if (bias->requires_grad) {
            Tensor& db = bias->grad_buffer();
            for (int n = 0; n < s.n; ++n)
                for (std::size_t p = 0; p < hw; ++p)
                    for (int c = 0; c < s.c; ++c)
                        db[static_cast<std::size_t>(n) * s.c + c] += self.grad[(n * hw + p) * s.c + c];
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b)
{
    const Tensor& xt = x->value;
    const Tensor& wt = w->value;
    if (xt.rank() != 2 || wt.rank() != 2 || wt.dim(0) != xt.dim(1) || b->value.numel() != static_cast<std::size_t>(wt.dim(1)))
        throw StructuralError("linear: incompatible shapes " + xt.shape_string() + " x " + wt.shape_string());
    const int n = xt.dim(0), d = xt.dim(1), e = wt.dim(1);
    Tensor out({n, e});
    MapRM O(out.data(), n, e);
    O.noalias() = CMapRM(xt.data(), n, d) * CMapRM(wt.data(), d, e);
    O.rowwise() += CVecMap(b->value.data(), e).transpose();
    return make_node(std::move(out), {x, w, b}, [x, w, b, n, d, e](Node& self) {
        CMapRM dy(self.grad.data(), n, e);
        if (w->requires_grad) {
            MapRM dw(w->grad_buffer().data(), d, e);
            dw.noalias() += CMapRM(x->value.data(), n, d).transpose() * dy;
        }
        if (b->requires_grad) {
            VecMap db(b->grad_buffer().data(), e);
            db += dy.colwise().sum().transpose();
        }
        if (x->requires_grad) {
            MapRM dx(x->grad_buffer().data(), n, d);
            dx.noalias() += dy * CMapRM(w->value.data(), d, e).transpose();
        }
    });
}

Var concat_channels(const Var& a, const Var& b)
{
    const Nhwc sa = nhwc(a->value, "concat_channels");
    const Nhwc sb = nhwc(b->value, "concat_channels");
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw StructuralError("concat_channels: spatial shape mismatch");
    const int C = sa.c + sb.c;
    Tensor out({sa.n, sa.h, sa.w, C});
    for (std::size_t p = 0; p < sa.pixels(); ++p) {
        std::copy_n(a->value.data() + p * sa.c, sa.c, out.data() + p * C);
        std::copy_n(b->value.data() + p * sb.c, sb.c, out.data() + p * C + sa.c);
    }
    return make_node(std::move(out), {a, b}, [a, b, sa, sb, C](Node& self) {
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (std::size_t p = 0; p < sa.pixels(); ++p)
                for (int c = 0; c < sa.c; ++c)
                    g[p * sa.c + c] += self.grad[p * C + c];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buffer();
            for (std::size_t p = 0; p < sb.pixels(); ++p)
                for (int c = 0; c < sb.c; ++c)
                    g[p * sb.c + c] += self.grad[p * C + sa.c + c];
        }
    });
}

Var avg_pool2(const Var& x)
{
    const Nhwc s = nhwc(x->value, "avg_pool2");
    if (s.h % 2 || s.w % 2)
        throw StructuralError("avg_pool2: odd spatial size " + x->value.shape_string());
    const int ho = s.h / 2, wo = s.w / 2, C = s.c;
    Tensor out({s.n, ho, wo, C});
    auto in_at = [&](int n, int y, int xx) {
        return x->value.data() + ((static_cast<std::size_t>(n) * s.h + y) * s.w + xx) * C;
    };
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                double* o = out.data() + ((static_cast<std::size_t>(n) * ho + y) * wo + xx) * C;
                const double *p00 = in_at(n, 2 * y, 2 * xx), *p01 = in_at(n, 2 * y, 2 * xx + 1),
                             *p10 = in_at(n, 2 * y + 1, 2 * xx), *p11 = in_at(n, 2 * y + 1, 2 * xx + 1);
                for (int c = 0; c < C; ++c)
                    o[c] = 0.25 * (p00[c] + p01[c] + p10[c] + p11[c]);
            }
    return make_node(std::move(out), {x}, [x, s, ho, wo, C](Node& self) {
        Tensor& dx = x->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    const double* g = self.grad.data() + ((static_cast<std::size_t>(n) * ho + y / 2) * wo + xx / 2) * C;
                    double* d = dx.data() + ((static_cast<std::size_t>(n) * s.h + y) * s.w + xx) * C;
                    for (int c = 0; c < C; ++c)
                        d[c] += 0.25 * g[c];
                }
    });
}

Var upsample_nearest2(const Var& x)
{
    const Nhwc s = nhwc(x->value, "upsample_nearest2");
    const int ho = s.h * 2, wo = s.w * 2, C = s.c;
    Tensor out({s.n, ho, wo, C});
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx)
                std::copy_n(x->value.data() + ((static_cast<std::size_t>(n) * s.h + y / 2) * s.w + xx / 2) * C, C,
                            out.data() + ((static_cast<std::size_t>(n) * ho + y) * wo + xx) * C);
    return make_node(std::move(out), {x}, [x, s, ho, wo, C](Node& self) {
        Tensor& dx = x->grad_buffer();
        for (int n = 0; n < s.n; ++n)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx) {
                    const double* g = self.grad.data() + ((static_cast<std::size_t>(n) * ho + y) * wo + xx) * C;
                    double* d = dx.data() + ((static_cast<std::size_t>(n) * s.h + y / 2) * s.w + xx / 2) * C;
                    for (int c = 0; c < C; ++c)
                        d[c] += g[c];
                }
    });
}

Var self_attention(const Var& qkv, int heads)
{
    const Nhwc s = nhwc(qkv->value, "self_attention");
    if (s.c % 3 != 0 || (s.c / 3) % heads != 0)
        throw StructuralError("self_attention: channel count " + std::to_string(s.c) + " incompatible with " +
                              std::to_string(heads) + " heads");
    const int C = s.c / 3;
    const int d = C / heads;
    const int L = s.h * s.w;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Softmax probabilities per (sample, head) are kept for the backward pass.
    auto probs = std::make_shared<std::vector<MatRM>>(static_cast<std::size_t>(s.n) * heads);
    Tensor out({s.n, s.h, s.w, C});
    for (int n = 0; n < s.n; ++n) {
        Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> all(qkv->value.data() + static_cast<std::size_t>(n) * L * 3 * C,
                                                              L, 3 * C, Eigen::OuterStride<>(3 * C));
        for (int h = 0; h < heads; ++h) {
            const MatRM q = all.middleCols(h * d, d);
            const MatRM k = all.middleCols(C + h * d, d);
            const MatRM v = all.middleCols(2 * C + h * d, d);
            MatRM sc = (q * k.transpose()) * scale;
            for (int i = 0; i < L; ++i) {
                const double m = sc.row(i).maxCoeff();
                sc.row(i) = (sc.row(i).array() - m).exp();
                sc.row(i) /= sc.row(i).sum();
            }
            Eigen::Map<MatRM, 0, Eigen::OuterStride<>> o(out.data() + static_cast<std::size_t>(n) * L * C + h * d, L, d,
                                                         Eigen::OuterStride<>(C));
            o.noalias() = sc * v;
            (*probs)[static_cast<std::size_t>(n) * heads + h] = std::move(sc);
        }
    }
    return make_node(std::move(out), {qkv}, [qkv, s, C, d, L, heads, scale, probs](Node& self) {
        Tensor& dqkv = qkv->grad_buffer();
        for (int n = 0; n < s.n; ++n) {
            Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> all(
                qkv->value.data() + static_cast<std::size_t>(n) * L * 3 * C, L, 3 * C, Eigen::OuterStride<>(3 * C));
            Eigen::Map<MatRM, 0, Eigen::OuterStride<>> dall(dqkv.data() + static_cast<std::size_t>(n) * L * 3 * C, L,
                                                            3 * C, Eigen::OuterStride<>(3 * C));
            for (int h = 0; h < heads; ++h) {
                const MatRM& p = (*probs)[static_cast<std::size_t>(n) * heads + h];
                const MatRM q = all.middleCols(h * d, d);
                const MatRM k = all.middleCols(C + h * d, d);
                const MatRM v = all.middleCols(2 * C + h * d, d);
                Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> dout(
                    self.grad.data() + static_cast<std::size_t>(n) * L * C + h * d, L, d, Eigen::OuterStride<>(C));
                const MatRM dv = p.transpose() * dout;
                const MatRM dp = dout * v.transpose();
                MatRM ds(L, L);
                for (int i = 0; i < L; ++i) {
                    const double row_dot = p.row(i).dot(dp.row(i));
                    ds.row(i) = p.row(i).array() * (dp.row(i).array() - row_dot);
                }
                ds *= scale;
                dall.middleCols(h * d, d) += ds * k;
                dall.middleCols(C + h * d, d) += ds.transpose() * q;
                dall.middleCols(2 * C + h * d, d) += dv;
            }
        }
    });
}

Var mse_loss(const Var& pred, const Tensor& target)
{
    if (!pred->value.same_shape(target))
        throw StructuralError("mse_loss: shape mismatch " + pred->value.shape_string() + " vs " +
                              target.shape_string());
    const std::size_t count = target.numel();
    double sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double dlt = pred->value[i] - target[i];
        sum += dlt * dlt;
    }
    Tensor out({1}, count ? sum / static_cast<double>(count) : 0.0);
    auto tgt = std::make_shared<Tensor>(target);
    return make_node(std::move(out), {pred}, [pred, tgt, count](Node& self) {
        Tensor& g = pred->grad_buffer();
        const double scale = 2.0 * self.grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i)
            g[i] += scale * (pred->value[i] - (*tgt)[i]);
    });
}

} // namespace matforge::nn
