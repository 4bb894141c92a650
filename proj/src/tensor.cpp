#include "ppgkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ppgkit/errors.hpp"
#include "ppgkit/kernels.hpp"

namespace ppg {

namespace {

constexpr double kLnEps = 1e-5;  // layernorm variance floor

long shape_size(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<int> shape,
                                      std::vector<std::shared_ptr<TensorNode>> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(shape_size(n->shape));
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void axpy(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

int last_dim(const Tensor& t) { return t.shape().back(); }

long lead_rows(const Tensor& t) { return t.size() / last_dim(t); }

double draw_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = make_node(std::move(shape), {});
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_size(shape) != static_cast<long>(data.size()))
        throw std::invalid_argument("Tensor::from: data does not match shape");
    auto n = make_node(std::move(shape), {});
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

double Tensor::item() const {
    if (!node_ || node_->size() != 1)
        throw std::invalid_argument("Tensor::item: not a scalar");
    return node_->value[0];
}

void Tensor::set_requires_grad(bool b) {
    if (!node_->parents.empty())
        throw std::invalid_argument("set_requires_grad: only leaf tensors");
    node_->requires_grad = b;
    if (!b) node_->grad.clear();
}

Tensor Tensor::detached_copy() const {
    auto n = make_node(node_->shape, {});
    n->value = node_->value;
    return Tensor(n);
}

void backward(const Tensor& out) {
    if (!out.defined() || out.size() != 1)
        throw std::invalid_argument("backward: output must be a scalar");
    if (!out.requires_grad())
        throw std::invalid_argument("backward: output is detached from any trainable leaf");

    // Iterative postorder; parents visited before their node lands in topo.
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(out.node().get(), 0);
    seen.insert(out.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    out.node()->grad.assign(1, 1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    for (long i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] + b.data()[i];
    n->backprop = [](TensorNode& self) {
        for (int p = 0; p < 2; ++p) {
            auto& par = self.parents[p];
            if (!par->requires_grad) continue;
            par->ensure_grad();
            axpy(par->grad, self.grad);
        }
    };
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    for (long i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] - b.data()[i];
    n->backprop = [](TensorNode& self) {
        if (self.parents[0]->requires_grad) {
            self.parents[0]->ensure_grad();
            axpy(self.parents[0]->grad, self.grad);
        }
        if (self.parents[1]->requires_grad) {
            auto& g = self.parents[1]->grad;
            self.parents[1]->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    };
    return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto n = make_node(a.shape(), {a.node(), b.node()});
    for (long i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] * b.data()[i];
    n->backprop = [](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    };
    return Tensor(n);
}

Tensor scale(const Tensor& a, double c) {
    auto n = make_node(a.shape(), {a.node()});
    for (long i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] * c;
    n->backprop = [c](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
    };
    return Tensor(n);
}

// ---- matmul family ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: need (m,k) x (k,n)");
    const int m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    auto n = make_node({m, n2}, {a.node(), b.node()});
    kern::matmul_nn(a.data().data(), b.data().data(), n->value.data(), m, k, n2);
    n->backprop = [m, k, n2](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(m) * k);
            kern::matmul_nt(self.grad.data(), pb->value.data(), tmp.data(), m, n2, k);
            pa->ensure_grad();
            axpy(pa->grad, tmp);
        }
        if (pb->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(k) * n2);
            kern::matmul_tn(pa->value.data(), self.grad.data(), tmp.data(), m, k, n2);
            pb->ensure_grad();
            axpy(pb->grad, tmp);
        }
    };
    return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.ndim() != 2 || b.ndim() != 1 || b.dim(0) != w.dim(0))
        throw std::invalid_argument("linear: w must be (Fout,Fin), b (Fout)");
    if (last_dim(x) != w.dim(1)) throw std::invalid_argument("linear: input feature mismatch");
    const int fin = w.dim(1), fout = w.dim(0);
    const long rows = lead_rows(x);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = fout;
    auto n = make_node(std::move(out_shape), {x.node(), w.node(), b.node()});
    kern::matmul_nt(x.data().data(), w.data().data(), n->value.data(),
                    static_cast<int>(rows), fin, fout);
    for (long r = 0; r < rows; ++r)
        for (int j = 0; j < fout; ++j) n->value[r * fout + j] += b.data()[j];
    n->backprop = [rows, fin, fout](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (px->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(rows) * fin);
            kern::matmul_nn(self.grad.data(), pw->value.data(), tmp.data(),
                            static_cast<int>(rows), fout, fin);
            px->ensure_grad();
            axpy(px->grad, tmp);
        }
        if (pw->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(fout) * fin);
            kern::matmul_tn(self.grad.data(), px->value.data(), tmp.data(),
                            static_cast<int>(rows), fout, fin);
            pw->ensure_grad();
            axpy(pw->grad, tmp);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (int j = 0; j < fout; ++j) pb->grad[j] += self.grad[r * fout + j];
        }
    };
    return Tensor(n);
}

Tensor linear_nb(const Tensor& x, const Tensor& w) {
    if (w.ndim() != 2) throw std::invalid_argument("linear_nb: w must be (Fout,Fin)");
    if (last_dim(x) != w.dim(1)) throw std::invalid_argument("linear_nb: input feature mismatch");
    const int fin = w.dim(1), fout = w.dim(0);
    const long rows = lead_rows(x);
    std::vector<int> out_shape = x.shape();
    out_shape.back() = fout;
    auto n = make_node(std::move(out_shape), {x.node(), w.node()});
    kern::matmul_nt(x.data().data(), w.data().data(), n->value.data(),
                    static_cast<int>(rows), fin, fout);
    n->backprop = [rows, fin, fout](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        if (px->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(rows) * fin);
            kern::matmul_nn(self.grad.data(), pw->value.data(), tmp.data(),
                            static_cast<int>(rows), fout, fin);
            px->ensure_grad();
            axpy(px->grad, tmp);
        }
        if (pw->requires_grad) {
            std::vector<double> tmp(static_cast<size_t>(fout) * fin);
            kern::matmul_tn(self.grad.data(), px->value.data(), tmp.data(),
                            static_cast<int>(rows), fout, fin);
            pw->ensure_grad();
            axpy(pw->grad, tmp);
        }
    };
    return Tensor(n);
}

Tensor bmm_nn(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw std::invalid_argument("bmm_nn: need (G,m,k) x (G,k,n)");
    const int g = a.dim(0), m = a.dim(1), k = a.dim(2), n2 = b.dim(2);
    auto n = make_node({g, m, n2}, {a.node(), b.node()});
    for (int i = 0; i < g; ++i)
        kern::matmul_nn(a.data().data() + static_cast<long>(i) * m * k,
                        b.data().data() + static_cast<long>(i) * k * n2,
                        n->value.data() + static_cast<long>(i) * m * n2, m, k, n2);
    n->backprop = [g, m, k, n2](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            std::vector<double> tmp(static_cast<size_t>(m) * k);
            for (int i = 0; i < g; ++i) {
                kern::matmul_nt(self.grad.data() + static_cast<long>(i) * m * n2,
                                pb->value.data() + static_cast<long>(i) * k * n2, tmp.data(),
                                m, n2, k);
                for (long j = 0; j < static_cast<long>(m) * k; ++j)
                    pa->grad[static_cast<long>(i) * m * k + j] += tmp[j];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            std::vector<double> tmp(static_cast<size_t>(k) * n2);
            for (int i = 0; i < g; ++i) {
                kern::matmul_tn(pa->value.data() + static_cast<long>(i) * m * k,
                                self.grad.data() + static_cast<long>(i) * m * n2, tmp.data(),
                                m, k, n2);
                for (long j = 0; j < static_cast<long>(k) * n2; ++j)
                    pb->grad[static_cast<long>(i) * k * n2 + j] += tmp[j];
            }
        }
    };
    return Tensor(n);
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw std::invalid_argument("bmm_nt: need (G,m,k) x (G,n,k)");
    const int g = a.dim(0), m = a.dim(1), k = a.dim(2), n2 = b.dim(1);
    auto n = make_node({g, m, n2}, {a.node(), b.node()});
    for (int i = 0; i < g; ++i)
        kern::matmul_nt(a.data().data() + static_cast<long>(i) * m * k,
                        b.data().data() + static_cast<long>(i) * n2 * k,
                        n->value.data() + static_cast<long>(i) * m * n2, m, k, n2);
    n->backprop = [g, m, k, n2](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            std::vector<double> tmp(static_cast<size_t>(m) * k);
            for (int i = 0; i < g; ++i) {
                kern::matmul_nn(self.grad.data() + static_cast<long>(i) * m * n2,
                                pb->value.data() + static_cast<long>(i) * n2 * k, tmp.data(),
                                m, n2, k);
                for (long j = 0; j < static_cast<long>(m) * k; ++j)
                    pa->grad[static_cast<long>(i) * m * k + j] += tmp[j];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            std::vector<double> tmp(static_cast<size_t>(n2) * k);
            for (int i = 0; i < g; ++i) {
                kern::matmul_tn(self.grad.data() + static_cast<long>(i) * m * n2,
                                pa->value.data() + static_cast<long>(i) * m * k, tmp.data(),
                                m, n2, k);
                for (long j = 0; j < static_cast<long>(n2) * k; ++j)
                    pb->grad[static_cast<long>(i) * n2 * k + j] += tmp[j];
            }
        }
    };
    return Tensor(n);
}

// ---- shape and reduction ------------------------------------------------

Tensor relu(const Tensor& a) {
    auto n = make_node(a.shape(), {a.node()});
    for (long i = 0; i < a.size(); ++i) n->value[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    n->backprop = [](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
    };
    return Tensor(n);
}

Tensor softmax_lastdim(const Tensor& a) {
    const int c = last_dim(a);
    const long rows = lead_rows(a);
    auto n = make_node(a.shape(), {a.node()});
    for (long r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * c;
        double* y = n->value.data() + r * c;
        double mx = x[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int i = 0; i < c; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        for (int i = 0; i < c; ++i) y[i] /= s;
    }
    n->backprop = [c, rows](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * c;
            const double* dy = self.grad.data() + r * c;
            double dot = 0.0;
            for (int i = 0; i < c; ++i) dot += dy[i] * y[i];
            for (int i = 0; i < c; ++i) p->grad[r * c + i] += y[i] * (dy[i] - dot);
        }
    };
    return Tensor(n);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    auto n = make_node(std::move(shape), {a.node()});
    n->value = a.data();
    n->backprop = [](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        axpy(p->grad, self.grad);
    };
    return Tensor(n);
}

Tensor transpose_last2(const Tensor& a) {
    if (a.ndim() < 2) throw std::invalid_argument("transpose_last2: rank must be >= 2");
    const int m = a.dim(a.ndim() - 2), n2 = a.dim(a.ndim() - 1);
    const long lead = a.size() / (static_cast<long>(m) * n2);
    std::vector<int> shape = a.shape();
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    auto n = make_node(std::move(shape), {a.node()});
    const long block = static_cast<long>(m) * n2;
    for (long b = 0; b < lead; ++b)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n2; ++j)
                n->value[b * block + static_cast<long>(j) * m + i] =
                    a.data()[b * block + static_cast<long>(i) * n2 + j];
    n->backprop = [lead, m, n2, block](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (long b = 0; b < lead; ++b)
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n2; ++j)
                    p->grad[b * block + static_cast<long>(i) * n2 + j] +=
                        self.grad[b * block + static_cast<long>(j) * m + i];
    };
    return Tensor(n);
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
    if (a.ndim() != b.ndim()) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i + 1 < a.ndim(); ++i)
        if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat: leading dims differ");
    const int fa = last_dim(a), fb = last_dim(b);
    const long rows = lead_rows(a);
    std::vector<int> shape = a.shape();
    shape.back() = fa + fb;
    auto n = make_node(std::move(shape), {a.node(), b.node()});
    for (long r = 0; r < rows; ++r) {
        std::copy_n(a.data().data() + r * fa, fa, n->value.data() + r * (fa + fb));
        std::copy_n(b.data().data() + r * fb, fb, n->value.data() + r * (fa + fb) + fa);
    }
    n->backprop = [fa, fb, rows](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (int i = 0; i < fa; ++i)
                    pa->grad[r * fa + i] += self.grad[r * (fa + fb) + i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (int i = 0; i < fb; ++i)
                    pb->grad[r * fb + i] += self.grad[r * (fa + fb) + fa + i];
        }
    };
    return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
    auto n = make_node({1}, {a.node()});
    double s = 0.0;
    for (double v : a.data()) s += v;
    const long cnt = a.size();
    n->value[0] = s / static_cast<double>(cnt);
    n->backprop = [cnt](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(cnt);
        for (auto& v : p->grad) v += g;
    };
    return Tensor(n);
}

Tensor sum_all(const Tensor& a) {
    auto n = make_node({1}, {a.node()});
    double s = 0.0;
    for (double v : a.data()) s += v;
    n->value[0] = s;
    n->backprop = [](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (auto& v : p->grad) v += self.grad[0];
    };
    return Tensor(n);
}

Tensor mean_lastdim(const Tensor& a) {
    if (a.ndim() < 2) throw std::invalid_argument("mean_lastdim: rank must be >= 2");
    const int l = last_dim(a);
    const long rows = lead_rows(a);
    std::vector<int> shape(a.shape().begin(), a.shape().end() - 1);
    auto n = make_node(std::move(shape), {a.node()});
    for (long r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int i = 0; i < l; ++i) s += a.data()[r * l + i];
        n->value[r] = s / l;
    }
    n->backprop = [l, rows](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (long r = 0; r < rows; ++r) {
            const double g = self.grad[r] / l;
            for (int i = 0; i < l; ++i) p->grad[r * l + i] += g;
        }
    };
    return Tensor(n);
}

// ---- convolution --------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad_left,
              int pad_right) {
    if (x.ndim() != 3 || w.ndim() != 3 || b.ndim() != 1)
        throw std::invalid_argument("conv1d: x (B,Cin,L), w (Cout,Cin,K), b (Cout)");
    if (x.dim(1) != w.dim(1) || w.dim(0) != b.dim(0))
        throw std::invalid_argument("conv1d: channel mismatch");
    if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
    const int nb = x.dim(0), cin = x.dim(1), len = x.dim(2);
    const int cout = w.dim(0), k = w.dim(2);
    const int lout = (len + pad_left + pad_right - k) / stride + 1;
    if (lout < 1) throw std::invalid_argument("conv1d: kernel wider than padded input");
    auto n = make_node({nb, cout, lout}, {x.node(), w.node(), b.node()});
    kern::conv1d_fwd(x.data().data(), w.data().data(), b.data().data(), n->value.data(), nb,
                     cin, len, cout, k, stride, pad_left, pad_right);
    n->backprop = [nb, cin, len, cout, k, stride, pad_left, pad_right, lout](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        if (px->requires_grad) {
            px->ensure_grad();
            kern::conv1d_bwd_x(self.grad.data(), pw->value.data(), px->grad.data(), nb, cin,
                               len, cout, k, stride, pad_left, pad_right);
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            kern::conv1d_bwd_w(self.grad.data(), px->value.data(), pw->grad.data(), nb, cin,
                               len, cout, k, stride, pad_left, pad_right);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kern::conv1d_bwd_b(self.grad.data(), pb->grad.data(), nb, cout, lout);
        }
    };
    return Tensor(n);
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    const int k = w.dim(2);
    const int pl = (k - 1) / 2;
    return conv1d(x, w, b, stride, pl, k - 1 - pl);
}

Tensor conv1d_causal(const Tensor& x, const Tensor& w, const Tensor& b, bool left) {
    const int k = w.dim(2);
    return left ? conv1d(x, w, b, 1, k - 1, 0) : conv1d(x, w, b, 1, 0, k - 1);
}

// ---- stochastic / normalization ----------------------------------------

Tensor dropout(const Tensor& x, double rate, const FwdCtx& ctx) {
    if (!(rate >= 0.0) || !(rate < 1.0))
        throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    if (ctx.mode == Mode::eval || rate == 0.0) return x;
    if (!ctx.rng) throw std::invalid_argument("dropout: train mode needs an rng");
    auto n = make_node(x.shape(), {x.node()});
    auto mask = std::make_shared<std::vector<double>>(x.size());
    const double keep = 1.0 - rate;
    for (long i = 0; i < x.size(); ++i) {
        (*mask)[i] = draw_uniform(*ctx.rng) >= rate ? 1.0 / keep : 0.0;
        n->value[i] = x.data()[i] * (*mask)[i];
    }
    n->backprop = [mask](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            p->grad[i] += self.grad[i] * (*mask)[i];
    };
    return Tensor(n);
}

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const int c = last_dim(x);
    if (gamma.size() != c || beta.size() != c)
        throw std::invalid_argument("layernorm: affine params must match last dim");
    const long rows = lead_rows(x);
    auto n = make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (long r = 0; r < rows; ++r) {
        const double* xr = x.data().data() + r * c;
        double mu = 0.0;
        for (int i = 0; i < c; ++i) mu += xr[i];
        mu /= c;
        double var = 0.0;
        for (int i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        (*inv_std)[r] = inv;
        for (int i = 0; i < c; ++i) {
            const double xh = (xr[i] - mu) * inv;
            (*xhat)[r * c + i] = xh;
            n->value[r * c + i] = gamma.data()[i] * xh + beta.data()[i];
        }
    }
    n->backprop = [c, rows, xhat, inv_std](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pbta = self.parents[2];
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i)
                    pg->grad[i] += self.grad[r * c + i] * (*xhat)[r * c + i];
        }
        if (pbta->requires_grad) {
            pbta->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i) pbta->grad[i] += self.grad[r * c + i];
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (long r = 0; r < rows; ++r) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int i = 0; i < c; ++i) {
                    const double dxh = self.grad[r * c + i] * pg->value[i];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * (*xhat)[r * c + i];
                }
                mean_dxh /= c;
                mean_dxh_xh /= c;
                for (int i = 0; i < c; ++i) {
                    const double dxh = self.grad[r * c + i] * pg->value[i];
                    px->grad[r * c + i] += (*inv_std)[r] *
                        (dxh - mean_dxh - (*xhat)[r * c + i] * mean_dxh_xh);
                }
            }
        }
    };
    return Tensor(n);
}

BnState make_bn_state(int channels) {
    BnState st;
    st.running_mean = Tensor::zeros({channels});
    st.running_var = Tensor::from({channels}, std::vector<double>(channels, 1.0));
    return st;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnState& state,
                 const FwdCtx& ctx) {
    if (x.ndim() != 2 && x.ndim() != 3)
        throw std::invalid_argument("batchnorm: x must be (B,F) or (B,C,L)");
    const int c = x.dim(1);
    if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c)
        throw std::invalid_argument("batchnorm: channel mismatch");
    const int bsz = x.dim(0);
    const int len = x.ndim() == 3 ? x.dim(2) : 1;
    const long per_c = static_cast<long>(bsz) * len;
    constexpr double eps = 1e-5;

    auto idx = [c, len](int b, int ch, int t) {
        return (static_cast<long>(b) * c + ch) * len + t;
    };

    auto mean_v = std::make_shared<std::vector<double>>(c);
    auto inv_std = std::make_shared<std::vector<double>>(c);
    if (ctx.mode == Mode::train) {
        for (int ch = 0; ch < c; ++ch) {
            double mu = 0.0;
            for (int b = 0; b < bsz; ++b)
                for (int t = 0; t < len; ++t) mu += x.data()[idx(b, ch, t)];
            mu /= static_cast<double>(per_c);
            double var = 0.0;
            for (int b = 0; b < bsz; ++b)
                for (int t = 0; t < len; ++t) {
                    const double d = x.data()[idx(b, ch, t)] - mu;
                    var += d * d;
                }
            var /= static_cast<double>(per_c);
            (*mean_v)[ch] = mu;
            (*inv_std)[ch] = 1.0 / std::sqrt(var + eps);
            auto& rm = state.running_mean.data()[ch];
            auto& rv = state.running_var.data()[ch];
            rm = (1.0 - state.momentum) * rm + state.momentum * mu;
            rv = (1.0 - state.momentum) * rv + state.momentum * var;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean_v)[ch] = state.running_mean.data()[ch];
            (*inv_std)[ch] = 1.0 / std::sqrt(state.running_var.data()[ch] + eps);
        }
    }

    auto n = make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    for (int b = 0; b < bsz; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int t = 0; t < len; ++t) {
                const long i = idx(b, ch, t);
                const double xh = (x.data()[i] - (*mean_v)[ch]) * (*inv_std)[ch];
                (*xhat)[i] = xh;
                n->value[i] = gamma.data()[ch] * xh + beta.data()[ch];
            }

    const bool batch_stats = ctx.mode == Mode::train;
    n->backprop = [c, bsz, len, per_c, xhat, inv_std, batch_stats, idx](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (pg->requires_grad) {
            pg->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (int t = 0; t < len; ++t)
                        pg->grad[ch] += self.grad[idx(b, ch, t)] * (*xhat)[idx(b, ch, t)];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int ch = 0; ch < c; ++ch)
                    for (int t = 0; t < len; ++t) pb->grad[ch] += self.grad[idx(b, ch, t)];
        }
        if (px->requires_grad) {
            px->ensure_grad();
            if (batch_stats) {
                for (int ch = 0; ch < c; ++ch) {
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int b = 0; b < bsz; ++b)
                        for (int t = 0; t < len; ++t) {
                            const double dxh = self.grad[idx(b, ch, t)] * pg->value[ch];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * (*xhat)[idx(b, ch, t)];
                        }
                    mean_dxh /= static_cast<double>(per_c);
                    mean_dxh_xh /= static_cast<double>(per_c);
                    for (int b = 0; b < bsz; ++b)
                        for (int t = 0; t < len; ++t) {
                            const long i = idx(b, ch, t);
                            const double dxh = self.grad[i] * pg->value[ch];
                            px->grad[i] += (*inv_std)[ch] *
                                (dxh - mean_dxh - (*xhat)[i] * mean_dxh_xh);
                        }
                }
            } else {
                for (int b = 0; b < bsz; ++b)
                    for (int ch = 0; ch < c; ++ch)
                        for (int t = 0; t < len; ++t) {
                            const long i = idx(b, ch, t);
                            px->grad[i] += self.grad[i] * pg->value[ch] * (*inv_std)[ch];
                        }
            }
        }
    };
    return Tensor(n);
}

// ---- broadcasts ---------------------------------------------------------

Tensor add_broadcast_rows(const Tensor& x, const Tensor& v) {
    if (v.ndim() != 2 || x.ndim() < 2)
        throw std::invalid_argument("add_broadcast_rows: x (...,P,E), v (P,E)");
    const int p = x.dim(x.ndim() - 2), e = last_dim(x);
    if (v.dim(0) != p || v.dim(1) != e)
        throw std::invalid_argument("add_broadcast_rows: trailing dims mismatch");
    const long lead = x.size() / (static_cast<long>(p) * e);
    auto n = make_node(x.shape(), {x.node(), v.node()});
    const long block = static_cast<long>(p) * e;
    for (long b = 0; b < lead; ++b)
        for (long i = 0; i < block; ++i)
            n->value[b * block + i] = x.data()[b * block + i] + v.data()[i];
    n->backprop = [lead, block](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pv = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            axpy(px->grad, self.grad);
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (long b = 0; b < lead; ++b)
                for (long i = 0; i < block; ++i) pv->grad[i] += self.grad[b * block + i];
        }
    };
    return Tensor(n);
}

Tensor add_broadcast_over_rows(const Tensor& f, const Tensor& w) {
    if (f.ndim() != 3 || w.ndim() != 2 || f.dim(0) != w.dim(0) || f.dim(2) != w.dim(1))
        throw std::invalid_argument("add_broadcast_over_rows: f (B,K,L), w (B,L)");
    const int bsz = f.dim(0), k = f.dim(1), l = f.dim(2);
    auto n = make_node(f.shape(), {f.node(), w.node()});
    for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < l; ++j)
                n->value[(static_cast<long>(b) * k + i) * l + j] =
                    f.data()[(static_cast<long>(b) * k + i) * l + j] +
                    w.data()[static_cast<long>(b) * l + j];
    n->backprop = [bsz, k, l](TensorNode& self) {
        auto& pf = self.parents[0];
        auto& pw = self.parents[1];
        if (pf->requires_grad) {
            pf->ensure_grad();
            axpy(pf->grad, self.grad);
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < l; ++j)
                        pw->grad[static_cast<long>(b) * l + j] +=
                            self.grad[(static_cast<long>(b) * k + i) * l + j];
        }
    };
    return Tensor(n);
}

Tensor outer_rows(const Tensor& x, const Tensor& u) {
    if (x.ndim() != 2 || u.ndim() != 1)
        throw std::invalid_argument("outer_rows: x (B,K), u (L)");
    const int bsz = x.dim(0), k = x.dim(1), l = u.dim(0);
    auto n = make_node({bsz, k, l}, {x.node(), u.node()});
    for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < l; ++j)
                n->value[(static_cast<long>(b) * k + i) * l + j] =
                    x.data()[static_cast<long>(b) * k + i] * u.data()[j];
    n->backprop = [bsz, k, l](TensorNode& self) {
        auto& px = self.parents[0];
        auto& pu = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int i = 0; i < k; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < l; ++j)
                        acc += self.grad[(static_cast<long>(b) * k + i) * l + j] *
                               pu->value[j];
                    px->grad[static_cast<long>(b) * k + i] += acc;
                }
        }
        if (pu->requires_grad) {
            pu->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < l; ++j)
                        pu->grad[j] += self.grad[(static_cast<long>(b) * k + i) * l + j] *
                                       px->value[static_cast<long>(b) * k + i];
        }
    };
    return Tensor(n);
}

Tensor split_heads(const Tensor& x, int heads) {
    if (x.ndim() != 3 || x.dim(2) % heads != 0)
        throw std::invalid_argument("split_heads: (B,P,E) with E divisible by heads");
    const int b = x.dim(0), p = x.dim(1), e = x.dim(2), dh = e / heads;
    auto n = make_node({b * heads, p, dh}, {x.node()});
    for (int bi = 0; bi < b; ++bi)
        for (int h = 0; h < heads; ++h)
            for (int pi = 0; pi < p; ++pi)
                for (int d = 0; d < dh; ++d)
                    n->value[((static_cast<long>(bi) * heads + h) * p + pi) * dh + d] =
                        x.data()[(static_cast<long>(bi) * p + pi) * e + h * dh + d];
    n->backprop = [b, p, e, dh, heads](TensorNode& self) {
        auto& px = self.parents[0];
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int bi = 0; bi < b; ++bi)
            for (int h = 0; h < heads; ++h)
                for (int pi = 0; pi < p; ++pi)
                    for (int d = 0; d < dh; ++d)
                        px->grad[(static_cast<long>(bi) * p + pi) * e + h * dh + d] +=
                            self.grad[((static_cast<long>(bi) * heads + h) * p + pi) * dh + d];
    };
    return Tensor(n);
}

Tensor merge_heads(const Tensor& x, int heads) {
    if (x.ndim() != 3 || x.dim(0) % heads != 0)
        throw std::invalid_argument("merge_heads: (B*H,P,dh)");
    const int b = x.dim(0) / heads, p = x.dim(1), dh = x.dim(2), e = dh * heads;
    auto n = make_node({b, p, e}, {x.node()});
    for (int bi = 0; bi < b; ++bi)
        for (int h = 0; h < heads; ++h)
            for (int pi = 0; pi < p; ++pi)
                for (int d = 0; d < dh; ++d)
                    n->value[(static_cast<long>(bi) * p + pi) * e + h * dh + d] =
                        x.data()[((static_cast<long>(bi) * heads + h) * p + pi) * dh + d];
    n->backprop = [b, p, e, dh, heads](TensorNode& self) {
        auto& px = self.parents[0];
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int bi = 0; bi < b; ++bi)
            for (int h = 0; h < heads; ++h)
                for (int pi = 0; pi < p; ++pi)
                    for (int d = 0; d < dh; ++d)
                        px->grad[((static_cast<long>(bi) * heads + h) * p + pi) * dh + d] +=
                            self.grad[(static_cast<long>(bi) * p + pi) * e + h * dh + d];
    };
    return Tensor(n);
}

// ---- losses -------------------------------------------------------------

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l1_loss");
    auto n = make_node({1}, {a.node(), b.node()});
    double s = 0.0;
    for (long i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    const long cnt = a.size();
    n->value[0] = s / static_cast<double>(cnt);
    n->backprop = [cnt](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const double g = self.grad[0] / static_cast<double>(cnt);
        for (long i = 0; i < static_cast<long>(pa->value.size()); ++i) {
            const double d = pa->value[i] - pb->value[i];
            const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (pa->requires_grad) {
                pa->ensure_grad();
                pa->grad[i] += g * sgn;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[i] -= g * sgn;
            }
        }
    };
    return Tensor(n);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be (B,C)");
    const int bsz = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != bsz)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: label out of range");
    auto n = make_node({1}, {logits.node()});
    auto probs = std::make_shared<std::vector<double>>(logits.data());
    double loss = 0.0;
    for (int b = 0; b < bsz; ++b) {
        double* row = probs->data() + static_cast<long>(b) * c;
        double mx = row[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double s = 0.0;
        for (int i = 0; i < c; ++i) {
            row[i] = std::exp(row[i] - mx);
            s += row[i];
        }
        for (int i = 0; i < c; ++i) row[i] /= s;
        loss -= std::log(std::max(row[labels[b]], 1e-300));
    }
    n->value[0] = loss / bsz;
    auto lbl = std::make_shared<std::vector<int>>(labels);
    n->backprop = [probs, lbl, bsz, c](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0] / bsz;
        for (int b = 0; b < bsz; ++b)
            for (int i = 0; i < c; ++i) {
                const double onehot = i == (*lbl)[b] ? 1.0 : 0.0;
                p->grad[static_cast<long>(b) * c + i] +=
                    g * ((*probs)[static_cast<long>(b) * c + i] - onehot);
            }
    };
    return Tensor(n);
}

// ---- token assembly -----------------------------------------------------

Tensor assemble_tokens(const Tensor& vis, const Tensor& mask_token,
                       const std::vector<int>& visible_pos, int total) {
    if (vis.ndim() != 3 || mask_token.ndim() != 1 || vis.dim(2) != mask_token.dim(0))
        throw std::invalid_argument("assemble_tokens: vis (B,Pv,E), mask_token (E)");
    const int bsz = vis.dim(0), pv = vis.dim(1), e = vis.dim(2);
    if (static_cast<int>(visible_pos.size()) != pv)
        throw std::invalid_argument("assemble_tokens: position count mismatch");
    for (size_t i = 0; i < visible_pos.size(); ++i) {
        if (visible_pos[i] < 0 || visible_pos[i] >= total)
            throw std::invalid_argument("assemble_tokens: position out of range");
        if (i > 0 && visible_pos[i] <= visible_pos[i - 1])
            throw std::invalid_argument("assemble_tokens: positions must be ascending");
    }
    auto n = make_node({bsz, total, e}, {vis.node(), mask_token.node()});
    std::vector<int> slot(total, -1);
    for (int r = 0; r < pv; ++r) slot[visible_pos[r]] = r;
    for (int b = 0; b < bsz; ++b)
        for (int p = 0; p < total; ++p)
            for (int i = 0; i < e; ++i)
                n->value[(static_cast<long>(b) * total + p) * e + i] =
                    slot[p] >= 0
                        ? vis.data()[(static_cast<long>(b) * pv + slot[p]) * e + i]
                        : mask_token.data()[i];
    auto slots = std::make_shared<std::vector<int>>(std::move(slot));
    n->backprop = [slots, bsz, pv, e, total](TensorNode& self) {
        auto& pvis = self.parents[0];
        auto& pm = self.parents[1];
        if (pvis->requires_grad) {
            pvis->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int p = 0; p < total; ++p) {
                    const int r = (*slots)[p];
                    if (r < 0) continue;
                    for (int i = 0; i < e; ++i)
                        pvis->grad[(static_cast<long>(b) * pv + r) * e + i] +=
                            self.grad[(static_cast<long>(b) * total + p) * e + i];
                }
        }
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (int b = 0; b < bsz; ++b)
                for (int p = 0; p < total; ++p) {
                    if ((*slots)[p] >= 0) continue;
                    for (int i = 0; i < e; ++i)
                        pm->grad[i] += self.grad[(static_cast<long>(b) * total + p) * e + i];
                }
        }
    };
    return Tensor(n);
}

Tensor patches_to_grid(const Tensor& pixels, int prows, int pcols, int ph, int pw) {
    if (pixels.ndim() != 3 || pixels.dim(1) != prows * pcols ||
        pixels.dim(2) != ph * pw)
        throw std::invalid_argument("patches_to_grid: pixels (B, prows*pcols, ph*pw)");
    const int bsz = pixels.dim(0);
    const int rows = prows * ph, cols = pcols * pw;
    auto n = make_node({bsz, rows, cols}, {pixels.node()});
    for (int b = 0; b < bsz; ++b)
        for (int pr = 0; pr < prows; ++pr)
            for (int pc = 0; pc < pcols; ++pc) {
                const long patch = static_cast<long>(b) * prows * pcols + pr * pcols + pc;
                for (int i = 0; i < ph; ++i)
                    for (int j = 0; j < pw; ++j)
                        n->value[(static_cast<long>(b) * rows + pr * ph + i) * cols +
                                 pc * pw + j] =
                            pixels.data()[patch * ph * pw + i * pw + j];
            }
    n->backprop = [bsz, prows, pcols, ph, pw, rows, cols](TensorNode& self) {
        auto& p = self.parents[0];
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int b = 0; b < bsz; ++b)
            for (int pr = 0; pr < prows; ++pr)
                for (int pc = 0; pc < pcols; ++pc) {
                    const long patch = static_cast<long>(b) * prows * pcols + pr * pcols + pc;
                    for (int i = 0; i < ph; ++i)
                        for (int j = 0; j < pw; ++j)
                            p->grad[patch * ph * pw + i * pw + j] +=
                                self.grad[(static_cast<long>(b) * rows + pr * ph + i) * cols +
                                          pc * pw + j];
                }
    };
    return Tensor(n);
}

// ---- gradcheck ----------------------------------------------------------

double gradcheck(const std::function<Tensor()>& fn, const std::vector<Tensor>& leaves,
                 double h) {
    if (!(h > 0.0)) throw std::invalid_argument("gradcheck: h must be positive");
    for (const auto& l : leaves)
        if (!l.requires_grad())
            throw std::invalid_argument("gradcheck: every leaf must require gradients");

    std::vector<Tensor> mut = leaves;
    for (auto& l : mut) l.clear_grad();
    Tensor out = fn();
    backward(out);
    std::vector<std::vector<double>> g_ad;
    g_ad.reserve(mut.size());
    for (auto& l : mut)
        g_ad.push_back(l.has_grad() ? l.grad() : std::vector<double>(l.size(), 0.0));

    auto eval = [&fn]() {
        const double v = fn().item();
        if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
        return v;
    };

    double worst = 0.0;
    for (size_t li = 0; li < mut.size(); ++li) {
        auto& vals = mut[li].data();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = eval();
            vals[i] = orig - h;
            const double fm = eval();
            vals[i] = orig;
            const double g_fd = (fp - fm) / (2.0 * h);
            const double err = std::abs(g_ad[li][i] - g_fd) / std::max(1.0, std::abs(g_fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

double gradcheck(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                 double h) {
    return gradcheck([&fn, &point]() { return fn(point); }, {point}, h);
}

}  // namespace ppg
