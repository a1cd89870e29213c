#include "mmadapt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmadapt {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

std::shared_ptr<TensorNode> make_node(const Shape& shape) {
    for (int d : shape)
        if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->value.assign(size_t(numel(shape)), 0.0);
    return n;
}

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current().recording()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

void record_op(std::initializer_list<const Tensor*> inputs, const Tensor& out,
               std::function<void()> bw) {
    TapeEntry e;
    for (const Tensor* t : inputs) e.inputs.push_back(t->node());
    e.output = out.node();
    e.backward = std::move(bw);
    Tape::current().record(std::move(e));
}

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto n = make_node(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, Real v, bool requires_grad) {
    auto n = make_node(shape);
    n->requires_grad = requires_grad;
    for (auto& x : n->value) x = v;
    return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<Real> data, bool requires_grad) {
    if (int64_t(data.size()) != numel(shape))
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto n = make_node(shape);
    n->requires_grad = requires_grad;
    n->value = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(Real v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Tensor Tensor::xavier(int rows, int cols, Rng& rng, bool requires_grad) {
    Tensor t = zeros({rows, cols}, requires_grad);
    Real limit = std::sqrt(6.0 / (rows + cols));
    for (auto& v : t.value()) v = rng.uniform(-limit, limit);
    return t;
}

Real Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

Tape& Tape::current() {
    static thread_local Tape tape;
    return tape;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (backward_done_) throw std::runtime_error("backward: tape already traversed; clear() first");
    if (!loss.requires_grad()) throw std::runtime_error("backward: loss was not produced on the tape");
    backward_done_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not reachable from loss
        it->backward();
    }
}

void Tape::clear() {
    entries_.clear();
    backward_done_ = false;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

AttnMask AttnMask::causal(int n) {
    AttnMask m;
    m.rows = m.cols = n;
    m.allow.assign(size_t(n) * size_t(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m.allow[size_t(i) * n + j] = 1;
    return m;
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        record_op({&a, &b}, out, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        record_op({&a, &b}, out, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) shape_error("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        record_op({&a, &b}, out, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, Real c) {
    Tensor out = Tensor::zeros(a.shape());
    for (int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * c;
    if (grad_enabled({&a})) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record_op({&a}, out, [an, on, c] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.cols() != v.dim(0)) shape_error("add_rowvec", x, v);
    const int L = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < D; ++j) out.value()[size_t(i) * D + j] = x.value()[size_t(i) * D + j] + v.value()[j];
    if (grad_enabled({&x, &v})) {
        out.set_requires_grad(true);
        auto xn = x.node(), vn = v.node(), on = out.node();
        record_op({&x, &v}, out, [xn, vn, on, L, D] {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < L; ++i)
                    for (int j = 0; j < D; ++j) vn->grad[j] += on->grad[size_t(i) * D + j];
            }
        });
    }
    return out;
}

// --- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_error("matmul", a, b);
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const Real* A = a.value().data();
    const Real* B = b.value().data();
    Real* C = out.value().data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const Real aip = A[size_t(i) * k + p];
            const Real* Bp = B + size_t(p) * n;
            Real* Ci = C + size_t(i) * n;
            for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), on = out.node();
        record_op({&a, &b}, out, [an, bn, on, m, k, n] {
            const Real* G = on->grad.data();
            if (an->requires_grad) {  // dA = G * B^T
                an->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        Real s = 0.0;
                        const Real* Gi = G + size_t(i) * n;
                        const Real* Bp = bn->value.data() + size_t(p) * n;
                        for (int j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        an->grad[size_t(i) * k + p] += s;
                    }
            }
            if (bn->requires_grad) {  // dB = A^T * G
                bn->ensure_grad();
                for (int i = 0; i < m; ++i) {
                    const Real* Gi = G + size_t(i) * n;
                    const Real* Ai = an->value.data() + size_t(i) * k;
                    for (int p = 0; p < k; ++p) {
                        Real* Bg = bn->grad.data() + size_t(p) * n;
                        const Real aip = Ai[p];
                        for (int j = 0; j < n; ++j) Bg[j] += aip * Gi[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: need rank-2, got " + shape_str(a.shape()));
    const int m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.value()[size_t(j) * m + i] = a.value()[size_t(i) * n + j];
    if (grad_enabled({&a})) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record_op({&a}, out, [an, on, m, n] {
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) an->grad[size_t(i) * n + j] += on->grad[size_t(j) * m + i];
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                                    " changes element count");
    Tensor out = Tensor::from(shape, a.value());
    if (grad_enabled({&a})) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record_op({&a}, out, [an, on] {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor col_slice(const Tensor& x, int c0, int width) {
    if (x.rank() != 2 || c0 < 0 || width <= 0 || c0 + width > x.cols())
        throw std::invalid_argument("col_slice: [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + width) + ") out of " + shape_str(x.shape()));
    const int L = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros({L, width});
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < width; ++j) out.value()[size_t(i) * width + j] = x.value()[size_t(i) * D + c0 + j];
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        record_op({&x}, out, [xn, on, L, D, c0, width] {
            xn->ensure_grad();
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < width; ++j)
                    xn->grad[size_t(i) * D + c0 + j] += on->grad[size_t(i) * width + j];
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int L = parts[0].rows();
    int D = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != L) shape_error("concat_cols", parts[0], p);
        D += p.cols();
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({L, D});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.cols();
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < w; ++j) out.value()[size_t(i) * D + off + j] = p.value()[size_t(i) * w + j];
        off += w;
    }
    if (Tape::current().recording() && needs_grad) {
        out.set_requires_grad(true);
        TapeEntry e;
        for (const auto& p : parts) e.inputs.push_back(p.node());
        e.output = out.node();
        auto on = out.node();
        auto inputs = e.inputs;
        e.backward = [inputs, on, L, D] {
            int off2 = 0;
            for (const auto& pn : inputs) {
                const int w = pn->shape[1];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int i = 0; i < L; ++i)
                        for (int j = 0; j < w; ++j)
                            pn->grad[size_t(i) * w + j] += on->grad[size_t(i) * D + off2 + j];
                }
                off2 += w;
            }
        };
        Tape::current().record(std::move(e));
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const int D = parts[0].cols();
    int L = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != D) shape_error("concat_rows", parts[0], p);
        L += p.rows();
        needs_grad = needs_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({L, D});
    int off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(), out.value().begin() + size_t(off) * D);
        off += p.rows();
    }
    if (Tape::current().recording() && needs_grad) {
        out.set_requires_grad(true);
        TapeEntry e;
        for (const auto& p : parts) e.inputs.push_back(p.node());
        e.output = out.node();
        auto on = out.node();
        auto inputs = e.inputs;
        e.backward = [inputs, on, D] {
            int off2 = 0;
            for (const auto& pn : inputs) {
                const int r = pn->shape[0];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int64_t i = 0; i < int64_t(r) * D; ++i)
                        pn->grad[size_t(i)] += on->grad[size_t(off2) * D + size_t(i)];
                }
                off2 += r;
            }
        };
        Tape::current().record(std::move(e));
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& indices) {
    if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank-2");
    const int V = table.rows(), D = table.cols();
    for (int ix : indices)
        if (ix < 0 || ix >= V)
            throw std::invalid_argument("gather_rows: index " + std::to_string(ix) + " out of " +
                                        std::to_string(V));
    const int L = int(indices.size());
    Tensor out = Tensor::zeros({L, D});
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < D; ++j) out.value()[size_t(i) * D + j] = table.value()[size_t(indices[i]) * D + j];
    if (grad_enabled({&table})) {
        out.set_requires_grad(true);
        auto tn = table.node(), on = out.node();
        record_op({&table}, out, [tn, on, indices, L, D] {
            tn->ensure_grad();
            for (int i = 0; i < L; ++i)
                for (int j = 0; j < D; ++j) tn->grad[size_t(indices[i]) * D + j] += on->grad[size_t(i) * D + j];
        });
    }
    return out;
}

// --- nonlinearities --------------------------------------------------------

namespace {

// Softmax over contiguous segments of length `seg` repeated `reps` times with
// stride `stride` between consecutive elements of a segment.
void softmax_strided(const std::vector<Real>& in, std::vector<Real>& out, int n_seg, int seg,
                     int64_t base_stride, int64_t elem_stride, const std::vector<int64_t>& bases) {
    (void)n_seg;
    (void)base_stride;
    for (int64_t b : bases) {
        Real mx = in[size_t(b)];
        for (int i = 1; i < seg; ++i) mx = std::max(mx, in[size_t(b + i * elem_stride)]);
        Real z = 0.0;
        for (int i = 0; i < seg; ++i) {
            Real e = std::exp(in[size_t(b + i * elem_stride)] - mx);
            out[size_t(b + i * elem_stride)] = e;
            z += e;
        }
        for (int i = 0; i < seg; ++i) out[size_t(b + i * elem_stride)] /= z;
    }
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " invalid for " +
                                    shape_str(x.shape()));
    int seg;
    int64_t elem_stride;
    std::vector<int64_t> bases;
    if (x.rank() == 1) {
        seg = x.dim(0);
        elem_stride = 1;
        bases = {0};
    } else if (x.rank() == 2) {
        const int L = x.rows(), D = x.cols();
        if (axis == 1) {
            seg = D;
            elem_stride = 1;
            for (int i = 0; i < L; ++i) bases.push_back(int64_t(i) * D);
        } else {
            seg = L;
            elem_stride = D;
            for (int j = 0; j < D; ++j) bases.push_back(j);
        }
    } else {
        throw std::invalid_argument("softmax: rank > 2 unsupported, got " + shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros(x.shape());
    softmax_strided(x.value(), out.value(), 0, seg, 0, elem_stride, bases);
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        record_op({&x}, out, [xn, on, seg, elem_stride, bases] {
            xn->ensure_grad();
            for (int64_t b : bases) {
                Real dot = 0.0;
                for (int i = 0; i < seg; ++i) {
                    size_t ix = size_t(b + i * elem_stride);
                    dot += on->grad[ix] * on->value[ix];
                }
                for (int i = 0; i < seg; ++i) {
                    size_t ix = size_t(b + i * elem_stride);
                    xn->grad[ix] += on->value[ix] * (on->grad[ix] - dot);
                }
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x, const AttnMask* mask) {
    if (mask == nullptr) return softmax(x, 1);
    if (x.rank() != 2 || mask->rows != x.rows() || mask->cols != x.cols())
        throw std::invalid_argument("softmax_rows: mask " + std::to_string(mask->rows) + "x" +
                                    std::to_string(mask->cols) + " does not fit " + shape_str(x.shape()));
    const int L = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < L; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        int allowed = 0;
        for (int j = 0; j < D; ++j)
            if (mask->allow[size_t(i) * D + j]) {
                mx = std::max(mx, x.value()[size_t(i) * D + j]);
                ++allowed;
            }
        if (allowed == 0)
            throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " fully masked");
        Real z = 0.0;
        for (int j = 0; j < D; ++j) {
            size_t ix = size_t(i) * D + j;
            if (mask->allow[ix]) {
                out.value()[ix] = std::exp(x.value()[ix] - mx);
                z += out.value()[ix];
            }
        }
        for (int j = 0; j < D; ++j) out.value()[size_t(i) * D + j] /= z;
    }
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        const AttnMask m = *mask;
        record_op({&x}, out, [xn, on, m, L, D] {
            xn->ensure_grad();
            for (int i = 0; i < L; ++i) {
                Real dot = 0.0;
                for (int j = 0; j < D; ++j) {
                    size_t ix = size_t(i) * D + j;
                    dot += on->grad[ix] * on->value[ix];
                }
                for (int j = 0; j < D; ++j) {
                    size_t ix = size_t(i) * D + j;
                    if (m.allow[ix]) xn->grad[ix] += on->value[ix] * (on->grad[ix] - dot);
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        Real v = x.value()[i];
        out.value()[i] = v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    }
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        record_op({&x}, out, [xn, on] {
            xn->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) {
                Real v = xn->value[i];
                Real cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                Real pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                xn->grad[i] += on->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    constexpr Real kEps = 1e-5;
    if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.cols() ||
        bias.dim(0) != x.cols())
        throw std::invalid_argument("layernorm: gain/bias must match last dim of " + shape_str(x.shape()));
    const int L = x.rows(), D = x.cols();
    Tensor out = Tensor::zeros(x.shape());
    std::vector<Real> xhat(size_t(L) * D);
    std::vector<Real> inv_std(size_t(L), 0.0);
    for (int i = 0; i < L; ++i) {
        Real mean = 0.0;
        for (int j = 0; j < D; ++j) mean += x.value()[size_t(i) * D + j];
        mean /= D;
        Real var = 0.0;
        for (int j = 0; j < D; ++j) {
            Real d = x.value()[size_t(i) * D + j] - mean;
            var += d * d;
        }
        var /= D;
        Real inv = 1.0 / std::sqrt(var + kEps);
        inv_std[size_t(i)] = inv;
        for (int j = 0; j < D; ++j) {
            size_t ix = size_t(i) * D + j;
            xhat[ix] = (x.value()[ix] - mean) * inv;
            out.value()[ix] = xhat[ix] * gain.value()[j] + bias.value()[j];
        }
    }
    if (grad_enabled({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        record_op({&x, &gain, &bias}, out, [xn, gn, bn, on, xhat, inv_std, L, D] {
            for (int i = 0; i < L; ++i) {
                Real mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < D; ++j) {
                    size_t ix = size_t(i) * D + j;
                    Real dxhat = on->grad[ix] * gn->value[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat[ix];
                }
                mean_dxhat /= D;
                mean_dxhat_xhat /= D;
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (int j = 0; j < D; ++j) {
                        size_t ix = size_t(i) * D + j;
                        Real dxhat = on->grad[ix] * gn->value[j];
                        xn->grad[ix] += inv_std[size_t(i)] * (dxhat - mean_dxhat - xhat[ix] * mean_dxhat_xhat);
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int j = 0; j < D; ++j) {
                        size_t ix = size_t(i) * D + j;
                        gn->grad[j] += on->grad[ix] * xhat[ix];
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int j = 0; j < D; ++j) bn->grad[j] += on->grad[size_t(i) * D + j];
                }
            }
        });
    }
    return out;
}

int conv1d_out_len(int in_len, int kernel, int stride, int padding) {
    if (kernel < 1 || stride < 1 || padding < 0 || in_len + 2 * padding < kernel)
        throw std::invalid_argument("conv1d: invalid geometry L=" + std::to_string(in_len) +
                                    " k=" + std::to_string(kernel) + " s=" + std::to_string(stride) +
                                    " p=" + std::to_string(padding));
    return (in_len + 2 * padding - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weights, int stride, int padding) {
    if (x.rank() != 2 || weights.rank() != 2 || weights.cols() != x.cols())
        shape_error("conv1d", x, weights);
    const int L = x.rows(), D = x.cols(), k = weights.rows();
    const int Lp = conv1d_out_len(L, k, stride, padding);
    Tensor out = Tensor::zeros({Lp, D});
    for (int t = 0; t < Lp; ++t)
        for (int j = 0; j < k; ++j) {
            int i = t * stride + j - padding;
            if (i < 0 || i >= L) continue;  // zero padding
            for (int d = 0; d < D; ++d)
                out.value()[size_t(t) * D + d] += weights.value()[size_t(j) * D + d] * x.value()[size_t(i) * D + d];
        }
    if (grad_enabled({&x, &weights})) {
        out.set_requires_grad(true);
        auto xn = x.node(), wn = weights.node(), on = out.node();
        record_op({&x, &weights}, out, [xn, wn, on, L, D, k, Lp, stride, padding] {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            for (int t = 0; t < Lp; ++t)
                for (int j = 0; j < k; ++j) {
                    int i = t * stride + j - padding;
                    if (i < 0 || i >= L) continue;
                    for (int d = 0; d < D; ++d) {
                        Real g = on->grad[size_t(t) * D + d];
                        if (xn->requires_grad) xn->grad[size_t(i) * D + d] += wn->value[size_t(j) * D + d] * g;
                        if (wn->requires_grad) wn->grad[size_t(j) * D + d] += xn->value[size_t(i) * D + d] * g;
                    }
                }
        });
    }
    return out;
}

// --- reductions and loss ---------------------------------------------------

Tensor sum(const Tensor& x) {
    Real s = 0.0;
    for (Real v : x.value()) s += v;
    Tensor out = Tensor::scalar(s);
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        record_op({&x}, out, [xn, on] {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += on->grad[0];
        });
    }
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
    if (logits.rank() != 2 || int(targets.size()) != logits.rows())
        throw std::invalid_argument("cross_entropy_rows: " + std::to_string(targets.size()) +
                                    " targets for logits " + shape_str(logits.shape()));
    const int T = logits.rows(), V = logits.cols();
    int n_active = 0;
    std::vector<Real> probs(size_t(T) * V);
    Real loss = 0.0;
    for (int t = 0; t < T; ++t) {
        if (targets[t] == ignore_index) continue;
        if (targets[t] < 0 || targets[t] >= V)
            throw std::invalid_argument("cross_entropy_rows: target " + std::to_string(targets[t]) +
                                        " out of vocab " + std::to_string(V));
        Real mx = logits.value()[size_t(t) * V];
        for (int v = 1; v < V; ++v) mx = std::max(mx, logits.value()[size_t(t) * V + v]);
        Real z = 0.0;
        for (int v = 0; v < V; ++v) {
            Real e = std::exp(logits.value()[size_t(t) * V + v] - mx);
            probs[size_t(t) * V + v] = e;
            z += e;
        }
        for (int v = 0; v < V; ++v) probs[size_t(t) * V + v] /= z;
        loss -= std::log(probs[size_t(t) * V + targets[t]]);
        ++n_active;
    }
    if (n_active == 0) throw std::invalid_argument("cross_entropy_rows: no non-ignored targets");
    loss /= n_active;
    Tensor out = Tensor::scalar(loss);
    if (grad_enabled({&logits})) {
        out.set_requires_grad(true);
        auto ln = logits.node(), on = out.node();
        record_op({&logits}, out, [ln, on, probs, targets, ignore_index, T, V, n_active] {
            ln->ensure_grad();
            Real g = on->grad[0] / n_active;
            for (int t = 0; t < T; ++t) {
                if (targets[t] == ignore_index) continue;
                for (int v = 0; v < V; ++v) ln->grad[size_t(t) * V + v] += g * probs[size_t(t) * V + v];
                ln->grad[size_t(t) * V + targets[t]] -= g;
            }
        });
    }
    return out;
}

}  // namespace mmadapt
