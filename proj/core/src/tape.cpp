#include "clfno/tape.hpp"

#include <cmath>
#include <complex>
#include <cstring>

#include "clfno/fft.hpp"

namespace clfno {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape == b.shape, "shape_mismatch",
            std::string(op) + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

} // namespace

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, const Node&)> backfn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backfn = std::move(backfn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) {
        n.grad = Tensor(n.value.shape);
    }
    return n.grad;
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::param(ParamStore& store, const std::string& name) {
    auto& names = bound_[&store];
    auto it = names.find(name);
    if (it != names.end()) {
        return Var{it->second};
    }
    const ParamEntry& e = store.at(name);
    Var v = push(e.value, e.trainable, nullptr);
    nodes_[v.id].store = &store;
    nodes_[v.id].pname = name;
    names.emplace(name, v.id);
    if (std::find(stores_.begin(), stores_.end(), &store) == stores_.end()) {
        stores_.push_back(&store);
    }
    return v;
}

// ---- elementwise ---------------------------------------------------------

Var Tape::add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += tb.data[i];
    }
    bool rg = needs(a) || needs(b);
    int ia = a.id, ib = b.id;
    return push(std::move(out), rg, [ia, ib](Tape& t, const Node& n) {
        if (t.nodes_[ia].requires_grad) {
            Tensor& ga = t.grad_buf(ia);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                ga.data[i] += n.grad.data[i];
            }
        }
        if (t.nodes_[ib].requires_grad) {
            Tensor& gb = t.grad_buf(ib);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                gb.data[i] += n.grad.data[i];
            }
        }
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] -= tb.data[i];
    }
    bool rg = needs(a) || needs(b);
    int ia = a.id, ib = b.id;
    return push(std::move(out), rg, [ia, ib](Tape& t, const Node& n) {
        if (t.nodes_[ia].requires_grad) {
            Tensor& ga = t.grad_buf(ia);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                ga.data[i] += n.grad.data[i];
            }
        }
        if (t.nodes_[ib].requires_grad) {
            Tensor& gb = t.grad_buf(ib);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                gb.data[i] -= n.grad.data[i];
            }
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] *= tb.data[i];
    }
    bool rg = needs(a) || needs(b);
    int ia = a.id, ib = b.id;
    return push(std::move(out), rg, [ia, ib](Tape& t, const Node& n) {
        const Tensor& va = t.nodes_[ia].value;
        const Tensor& vb = t.nodes_[ib].value;
        if (t.nodes_[ia].requires_grad) {
            Tensor& ga = t.grad_buf(ia);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                ga.data[i] += n.grad.data[i] * vb.data[i];
            }
        }
        if (t.nodes_[ib].requires_grad) {
            Tensor& gb = t.grad_buf(ib);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                gb.data[i] += n.grad.data[i] * va.data[i];
            }
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) {
        v *= c;
    }
    int ia = a.id;
    return push(std::move(out), needs(a), [ia, c](Tape& t, const Node& n) {
        if (!t.nodes_[ia].requires_grad) {
            return;
        }
        Tensor& ga = t.grad_buf(ia);
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            ga.data[i] += c * n.grad.data[i];
        }
    });
}

Var Tape::scale_var(Var a, Var s) {
    const Tensor& ts = val(s);
    require(ts.numel() == 1, "bad_shape", "scale_var: scale must be a single value");
    double c = ts.data[0];
    Tensor out = val(a);
    for (double& v : out.data) {
        v *= c;
    }
    bool rg = needs(a) || needs(s);
    int ia = a.id, is = s.id;
    return push(std::move(out), rg, [ia, is, c](Tape& t, const Node& n) {
        const Tensor& va = t.nodes_[ia].value;
        if (t.nodes_[ia].requires_grad) {
            Tensor& ga = t.grad_buf(ia);
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                ga.data[i] += c * n.grad.data[i];
            }
        }
        if (t.nodes_[is].requires_grad) {
            double acc = 0.0;
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                acc += n.grad.data[i] * va.data[i];
            }
            t.grad_buf(is).data[0] += acc;
        }
    });
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require(ta.shape.size() == 2 && tb.shape.size() == 2 && ta.shape[1] == tb.shape[0],
            "shape_mismatch",
            "matmul: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    int m = ta.shape[0], k = ta.shape[1], n2 = tb.shape[1];
    Tensor out({m, n2});
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double av = ta.data[static_cast<size_t>(i) * k + kk];
            for (int j = 0; j < n2; ++j) {
                out.data[static_cast<size_t>(i) * n2 + j] +=
                    av * tb.data[static_cast<size_t>(kk) * n2 + j];
            }
        }
    }
    bool rg = needs(a) || needs(b);
    int ia = a.id, ib = b.id;
    return push(std::move(out), rg, [ia, ib, m, k, n2](Tape& t, const Node& n) {
        const Tensor& va = t.nodes_[ia].value;
        const Tensor& vb = t.nodes_[ib].value;
        if (t.nodes_[ia].requires_grad) {
            Tensor& ga = t.grad_buf(ia);
            for (int i = 0; i < m; ++i) {
                for (int kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (int j = 0; j < n2; ++j) {
                        acc += n.grad.data[static_cast<size_t>(i) * n2 + j] *
                               vb.data[static_cast<size_t>(kk) * n2 + j];
                    }
                    ga.data[static_cast<size_t>(i) * k + kk] += acc;
                }
            }
        }
        if (t.nodes_[ib].requires_grad) {
            Tensor& gb = t.grad_buf(ib);
            for (int kk = 0; kk < k; ++kk) {
                for (int i = 0; i < m; ++i) {
                    double av = va.data[static_cast<size_t>(i) * k + kk];
                    for (int j = 0; j < n2; ++j) {
                        gb.data[static_cast<size_t>(kk) * n2 + j] +=
                            av * n.grad.data[static_cast<size_t>(i) * n2 + j];
                    }
                }
            }
        }
    });
}

Var Tape::channel_linear(Var x, Var w, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    require(tx.shape.size() == 3, "shape_mismatch",
            "channel_linear: input must be (C,H,W), got " + shape_str(tx.shape));
    require(tw.shape.size() == 2 && tw.shape[1] == tx.shape[0], "shape_mismatch",
            "channel_linear: weight " + shape_str(tw.shape) + " does not match input channels " +
                std::to_string(tx.shape[0]));
    int cin = tx.shape[0], h = tx.shape[1], wd = tx.shape[2];
    int cout = tw.shape[0];
    int64_t p = static_cast<int64_t>(h) * wd;
    bool has_bias = b.valid();
    if (has_bias) {
        const Tensor& tb = val(b);
        require(tb.shape.size() == 1 && tb.shape[0] == cout, "shape_mismatch",
                "channel_linear: bias shape " + shape_str(tb.shape));
    }

    Tensor out({cout, h, wd});
    for (int co = 0; co < cout; ++co) {
        double* yrow = out.data.data() + static_cast<size_t>(co) * p;
        if (has_bias) {
            double bv = val(b).data[co];
            for (int64_t i = 0; i < p; ++i) {
                yrow[i] = bv;
            }
        }
        for (int ci = 0; ci < cin; ++ci) {
            double wv = tw.data[static_cast<size_t>(co) * cin + ci];
            const double* xrow = tx.data.data() + static_cast<size_t>(ci) * p;
            for (int64_t i = 0; i < p; ++i) {
                yrow[i] += wv * xrow[i];
            }
        }
    }

    bool rg = needs(x) || needs(w) || (has_bias && needs(b));
    int ix = x.id, iw = w.id, ib = has_bias ? b.id : -1;
    return push(std::move(out), rg, [ix, iw, ib, cin, cout, p](Tape& t, const Node& n) {
        const Tensor& vx = t.nodes_[ix].value;
        const Tensor& vw = t.nodes_[iw].value;
        if (t.nodes_[ix].requires_grad) {
            Tensor& gx = t.grad_buf(ix);
            for (int ci = 0; ci < cin; ++ci) {
                double* grow = gx.data.data() + static_cast<size_t>(ci) * p;
                for (int co = 0; co < cout; ++co) {
                    double wv = vw.data[static_cast<size_t>(co) * cin + ci];
                    const double* gy = n.grad.data.data() + static_cast<size_t>(co) * p;
                    for (int64_t i = 0; i < p; ++i) {
                        grow[i] += wv * gy[i];
                    }
                }
            }
        }
        if (t.nodes_[iw].requires_grad) {
            Tensor& gw = t.grad_buf(iw);
            for (int co = 0; co < cout; ++co) {
                const double* gy = n.grad.data.data() + static_cast<size_t>(co) * p;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xrow = vx.data.data() + static_cast<size_t>(ci) * p;
                    double acc = 0.0;
                    for (int64_t i = 0; i < p; ++i) {
                        acc += gy[i] * xrow[i];
                    }
                    gw.data[static_cast<size_t>(co) * cin + ci] += acc;
                }
            }
        }
        if (ib >= 0 && t.nodes_[ib].requires_grad) {
            Tensor& gb = t.grad_buf(ib);
            for (int co = 0; co < cout; ++co) {
                const double* gy = n.grad.data.data() + static_cast<size_t>(co) * p;
                double acc = 0.0;
                for (int64_t i = 0; i < p; ++i) {
                    acc += gy[i];
                }
                gb.data[co] += acc;
            }
        }
    });
}

Var Tape::gelu(Var x) {
    const Tensor& tx = val(x);
    Tensor out = tx;
    for (double& v : out.data) {
        v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    int ix = x.id;
    return push(std::move(out), needs(x), [ix](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        const Tensor& vx = t.nodes_[ix].value;
        Tensor& gx = t.grad_buf(ix);
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            double v = vx.data[i];
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx.data[i] += n.grad.data[i] * (cdf + v * pdf);
        }
    });
}

Var Tape::binarize_ste(Var x, double threshold) {
    const Tensor& tx = val(x);
    Tensor out = tx;
    for (double& v : out.data) {
        v = (v >= threshold) ? 1.0 : 0.0;
    }
    int ix = x.id;
    // straight-through estimator: backward acts as identity
    return push(std::move(out), needs(x), [ix](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        Tensor& gx = t.grad_buf(ix);
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            gx.data[i] += n.grad.data[i];
        }
    });
}

// ---- spectral --------------------------------------------------------------

Var Tape::fft2(Var x) {
    const Tensor& tx = val(x);
    require(tx.shape.size() == 3, "shape_mismatch",
            "fft2: input must be (C,H,W), got " + shape_str(tx.shape));
    require(tx.all_finite(), "non_finite", "fft2: non-finite input");
    int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    int64_t plane = static_cast<int64_t>(h) * w;

    Tensor out({c, h, w, 2});
    std::vector<std::complex<double>> buf(plane);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = tx.data.data() + static_cast<size_t>(ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
            buf[i] = {src[i], 0.0};
        }
        fft::transform_2d(buf.data(), h, w, false);
        double* dst = out.data.data() + static_cast<size_t>(ch) * plane * 2;
        for (int64_t i = 0; i < plane; ++i) {
            dst[2 * i] = buf[i].real();
            dst[2 * i + 1] = buf[i].imag();
        }
    }

    int ix = x.id;
    return push(std::move(out), needs(x), [ix, c, h, w, plane](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        // adjoint of the real->complex DFT: apply the forward transform to
        // the conjugated output gradient and keep the real part
        Tensor& gx = t.grad_buf(ix);
        std::vector<std::complex<double>> buf(plane);
        for (int ch = 0; ch < c; ++ch) {
            const double* g = n.grad.data.data() + static_cast<size_t>(ch) * plane * 2;
            for (int64_t i = 0; i < plane; ++i) {
                buf[i] = {g[2 * i], -g[2 * i + 1]};
            }
            fft::transform_2d(buf.data(), h, w, false);
            double* dst = gx.data.data() + static_cast<size_t>(ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                dst[i] += buf[i].real();
            }
        }
    });
}

Var Tape::ifft2_real(Var x) {
    const Tensor& tx = val(x);
    require(tx.shape.size() == 4 && tx.shape[3] == 2, "shape_mismatch",
            "ifft2_real: input must be (C,H,W,2), got " + shape_str(tx.shape));
    int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    int64_t plane = static_cast<int64_t>(h) * w;
    double norm = 1.0 / static_cast<double>(plane);

    Tensor out({c, h, w});
    std::vector<std::complex<double>> buf(plane);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = tx.data.data() + static_cast<size_t>(ch) * plane * 2;
        for (int64_t i = 0; i < plane; ++i) {
            buf[i] = {src[2 * i], src[2 * i + 1]};
        }
        fft::transform_2d(buf.data(), h, w, true);
        double* dst = out.data.data() + static_cast<size_t>(ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
            dst[i] = buf[i].real() * norm;
        }
    }

    int ix = x.id;
    return push(std::move(out), needs(x), [ix, c, h, w, plane, norm](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        Tensor& gx = t.grad_buf(ix);
        std::vector<std::complex<double>> buf(plane);
        for (int ch = 0; ch < c; ++ch) {
            const double* g = n.grad.data.data() + static_cast<size_t>(ch) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                buf[i] = {g[i], 0.0};
            }
            fft::transform_2d(buf.data(), h, w, false);
            double* dst = gx.data.data() + static_cast<size_t>(ch) * plane * 2;
            for (int64_t i = 0; i < plane; ++i) {
                dst[2 * i] += buf[i].real() * norm;
                dst[2 * i + 1] += buf[i].imag() * norm;
            }
        }
    });
}

Var Tape::spectral_mul(Var x, Var r, int modes_h, int modes_w) {
    const Tensor& tx = val(x);
    const Tensor& tr = val(r);
    require(tx.shape.size() == 4 && tx.shape[3] == 2, "shape_mismatch",
            "spectral_mul: spectrum must be (Cin,H,W,2), got " + shape_str(tx.shape));
    int cin = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
    require(modes_h >= 1 && modes_w >= 1 && 2 * modes_h <= h && 2 * modes_w <= w,
            "mode_overflow",
            "spectral_mul: 2*modes (" + std::to_string(2 * modes_h) + "," +
                std::to_string(2 * modes_w) + ") exceeds grid (" + std::to_string(h) + "," +
                std::to_string(w) + ")");
    require(tr.shape.size() == 5 && tr.shape[1] == cin && tr.shape[2] == 2 * modes_h &&
                tr.shape[3] == 2 * modes_w && tr.shape[4] == 2,
            "shape_mismatch", "spectral_mul: weight shape " + shape_str(tr.shape));
    int cout = tr.shape[0];
    int mh2 = 2 * modes_h, mw2 = 2 * modes_w;
    int64_t plane = static_cast<int64_t>(h) * w;

    auto spec_row = [h, modes_h](int a) { return a < modes_h ? a : h - 2 * modes_h + a; };
    auto spec_col = [w, modes_w](int b) { return b < modes_w ? b : w - 2 * modes_w + b; };

    Tensor out({cout, h, w, 2});
    for (int a = 0; a < mh2; ++a) {
        int hi = spec_row(a);
        for (int b = 0; b < mw2; ++b) {
            int wi = spec_col(b);
            int64_t pos = static_cast<int64_t>(hi) * w + wi;
            for (int co = 0; co < cout; ++co) {
                double acc_re = 0.0, acc_im = 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    size_t ri = ((((static_cast<size_t>(co) * cin + ci) * mh2 + a) * mw2) + b) * 2;
                    double rr = tr.data[ri], rim = tr.data[ri + 1];
                    size_t xi = (static_cast<size_t>(ci) * plane + pos) * 2;
                    double xr = tx.data[xi], xim = tx.data[xi + 1];
                    acc_re += rr * xr - rim * xim;
                    acc_im += rr * xim + rim * xr;
                }
                size_t yi = (static_cast<size_t>(co) * plane + pos) * 2;
                out.data[yi] = acc_re;
                out.data[yi + 1] = acc_im;
            }
        }
    }

    bool rg = needs(x) || needs(r);
    int ix = x.id, ir = r.id;
    return push(std::move(out), rg,
                [ix, ir, cin, cout, h, w, mh2, mw2, plane, spec_row, spec_col](Tape& t,
                                                                               const Node& n) {
        const Tensor& vx = t.nodes_[ix].value;
        const Tensor& vr = t.nodes_[ir].value;
        bool need_x = t.nodes_[ix].requires_grad;
        bool need_r = t.nodes_[ir].requires_grad;
        Tensor* gx = need_x ? &t.grad_buf(ix) : nullptr;
        Tensor* gr = need_r ? &t.grad_buf(ir) : nullptr;
        for (int a = 0; a < mh2; ++a) {
            int hi = spec_row(a);
            for (int b = 0; b < mw2; ++b) {
                int wi = spec_col(b);
                int64_t pos = static_cast<int64_t>(hi) * w + wi;
                for (int co = 0; co < cout; ++co) {
                    size_t yi = (static_cast<size_t>(co) * plane + pos) * 2;
                    double gre = n.grad.data[yi], gim = n.grad.data[yi + 1];
                    if (gre == 0.0 && gim == 0.0) {
                        continue;
                    }
                    for (int ci = 0; ci < cin; ++ci) {
                        size_t ri =
                            ((((static_cast<size_t>(co) * cin + ci) * mh2 + a) * mw2) + b) * 2;
                        size_t xi = (static_cast<size_t>(ci) * plane + pos) * 2;
                        if (need_x) {
                            double rr = vr.data[ri], rim = vr.data[ri + 1];
                            gx->data[xi] += gre * rr + gim * rim;
                            gx->data[xi + 1] += -gre * rim + gim * rr;
                        }
                        if (need_r) {
                            double xr = vx.data[xi], xim = vx.data[xi + 1];
                            gr->data[ri] += gre * xr + gim * xim;
                            gr->data[ri + 1] += -gre * xim + gim * xr;
                        }
                    }
                }
            }
        }
    });
}

// ---- grids -----------------------------------------------------------------

namespace {

// axis = 1 (height) or 2 (width); spacing is 1/(n-1) along that axis
template <int Axis>
void fd_forward(const Tensor& x, Tensor& out) {
    int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    int n = (Axis == 1) ? h : w;
    if (n < 2) {
        return; // derivative of a single-point axis is zero
    }
    double inv_h = static_cast<double>(n - 1);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                int k = (Axis == 1) ? i : j;
                size_t base = (static_cast<size_t>(ch) * h + i) * w + j;
                size_t stride = (Axis == 1) ? static_cast<size_t>(w) : 1;
                double v;
                if (k == 0) {
                    v = (x.data[base + stride] - x.data[base]) * inv_h;
                } else if (k == n - 1) {
                    v = (x.data[base] - x.data[base - stride]) * inv_h;
                } else {
                    v = (x.data[base + stride] - x.data[base - stride]) * 0.5 * inv_h;
                }
                out.data[base] = v;
            }
        }
    }
}

template <int Axis>
void fd_backward(const Tensor& g, Tensor& gx) {
    int c = g.shape[0], h = g.shape[1], w = g.shape[2];
    int n = (Axis == 1) ? h : w;
    if (n < 2) {
        return;
    }
    double inv_h = static_cast<double>(n - 1);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                int k = (Axis == 1) ? i : j;
                size_t base = (static_cast<size_t>(ch) * h + i) * w + j;
                size_t stride = (Axis == 1) ? static_cast<size_t>(w) : 1;
                double gv = g.data[base];
                if (gv == 0.0) {
                    continue;
                }
                if (k == 0) {
                    gx.data[base + stride] += gv * inv_h;
                    gx.data[base] -= gv * inv_h;
                } else if (k == n - 1) {
                    gx.data[base] += gv * inv_h;
                    gx.data[base - stride] -= gv * inv_h;
                } else {
                    gx.data[base + stride] += gv * 0.5 * inv_h;
                    gx.data[base - stride] -= gv * 0.5 * inv_h;
                }
            }
        }
    }
}

} // namespace

Var Tape::grad_h(Var x) {
    const Tensor& tx = val(x);
    require(tx.shape.size() == 3, "shape_mismatch",
            "grad_h: input must be (C,H,W), got " + shape_str(tx.shape));
    Tensor out(tx.shape);
    fd_forward<1>(tx, out);
    int ix = x.id;
    return push(std::move(out), needs(x), [ix](Tape& t, const Node& n) {
        if (t.nodes_[ix].requires_grad) {
            fd_backward<1>(n.grad, t.grad_buf(ix));
        }
    });
}

Var Tape::grad_w(Var x) {
    const Tensor& tx = val(x);
    require(tx.shape.size() == 3, "shape_mismatch",
            "grad_w: input must be (C,H,W), got " + shape_str(tx.shape));
    Tensor out(tx.shape);
    fd_forward<2>(tx, out);
    int ix = x.id;
    return push(std::move(out), needs(x), [ix](Tape& t, const Node& n) {
        if (t.nodes_[ix].requires_grad) {
            fd_backward<2>(n.grad, t.grad_buf(ix));
        }
    });
}

// ---- reductions --------------------------------------------------------------

Var Tape::sum(Var x) {
    const Tensor& tx = val(x);
    double acc = 0.0;
    for (double v : tx.data) {
        acc += v;
    }
    int ix = x.id;
    return push(Tensor::scalar(acc), needs(x), [ix](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        Tensor& gx = t.grad_buf(ix);
        double g = n.grad.data[0];
        for (double& v : gx.data) {
            v += g;
        }
    });
}

Var Tape::mean(Var x) {
    const Tensor& tx = val(x);
    require(tx.numel() > 0, "bad_shape", "mean of empty tensor");
    double acc = 0.0;
    for (double v : tx.data) {
        acc += v;
    }
    double inv = 1.0 / static_cast<double>(tx.numel());
    int ix = x.id;
    return push(Tensor::scalar(acc * inv), needs(x), [ix, inv](Tape& t, const Node& n) {
        if (!t.nodes_[ix].requires_grad) {
            return;
        }
        Tensor& gx = t.grad_buf(ix);
        double g = n.grad.data[0] * inv;
        for (double& v : gx.data) {
            v += g;
        }
    });
}

// ---- engine --------------------------------------------------------------------

void Tape::backward(Var loss) {
    require(loss.valid() && loss.id < static_cast<int32_t>(nodes_.size()), "bad_var",
            "backward: invalid loss handle");
    require(!consumed_, "tape_consumed", "backward: tape already consumed");
    require(nodes_[loss.id].value.numel() == 1, "not_scalar",
            "backward: loss must be a scalar");
    consumed_ = true;

    grad_buf(loss.id).data[0] = 1.0;
    for (int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.data.empty() || !n.backfn) {
            continue;
        }
        n.backfn(*this, n);
    }

    for (ParamStore* store : stores_) {
        store->zero_grads();
    }
    for (auto& [store, names] : bound_) {
        for (auto& [name, id] : names) {
            Node& n = nodes_[id];
            ParamEntry& e = n.store->at(name);
            if (e.trainable && n.requires_grad && !n.grad.data.empty()) {
                e.grad = n.grad;
            }
        }
    }
}

Tensor Tape::grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.data.empty()) {
        return Tensor(n.value.shape);
    }
    return n.grad;
}

void Tape::reset() {
    nodes_.clear();
    bound_.clear();
    stores_.clear();
    consumed_ = false;
}

} // namespace clfno
