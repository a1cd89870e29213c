#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmadapt/rng.hpp"

namespace mmadapt {

using Real = double;
using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;

    int64_t size() const { return int64_t(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantics handle to a shared node. Values are immutable once an op has
// consumed the tensor; grad is the only mutable slot.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Real v, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<Real> data, bool requires_grad = false);
    static Tensor scalar(Real v, bool requires_grad = false);
    // Xavier-uniform fan-in/fan-out init for a [rows x cols] projection.
    static Tensor xavier(int rows, int cols, Rng& rng, bool requires_grad = true);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return node_->size(); }
    int rank() const { return int(node_->shape.size()); }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    int rows() const { return node_->shape.at(0); }
    int cols() const { return node_->shape.at(1); }

    std::vector<Real>& value() { return node_->value; }
    const std::vector<Real>& value() const { return node_->value; }
    std::vector<Real>& grad() { return node_->grad; }
    const std::vector<Real>& grad() const { return node_->grad; }

    Real& at(int i, int j) { return node_->value[size_t(i) * size_t(cols()) + size_t(j)]; }
    Real at(int i, int j) const { return node_->value[size_t(i) * size_t(cols()) + size_t(j)]; }
    Real item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    void zero_grad() { node_->grad.clear(); }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

struct TapeEntry {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    std::function<void()> backward;
};

// Records ops in execution order (topological by construction); backward walks
// the list once in reverse. A second backward without clear() is rejected.
class Tape {
public:
    static Tape& current();

    bool recording() const { return recording_; }
    void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
    size_t size() const { return entries_.size(); }

    void backward(const Tensor& loss);
    void clear();

private:
    friend struct NoGradGuard;
    std::vector<TapeEntry> entries_;
    bool recording_ = true;
    bool backward_done_ = false;
};

struct NoGradGuard {
    NoGradGuard() : prev_(Tape::current().recording_) { Tape::current().recording_ = false; }
    ~NoGradGuard() { Tape::current().recording_ = prev_; }
    bool prev_;
};

// Boolean attention mask, row-major [rows x cols]; nonzero = attend.
struct AttnMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allow;

    static AttnMask causal(int n);
};

// --- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real c);
// Broadcasts a length-D vector over every row of [L x D].
Tensor add_rowvec(const Tensor& x, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);

Tensor col_slice(const Tensor& x, int c0, int width);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& table, const std::vector<int>& indices);

Tensor softmax(const Tensor& x, int axis);
// Row softmax with optional mask; a fully masked row is an error.
Tensor softmax_rows(const Tensor& x, const AttnMask* mask);
Tensor gelu(const Tensor& x);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);
// Depthwise 1-D convolution over rows of [L x D]; weights [k x D], zero padding.
Tensor conv1d(const Tensor& x, const Tensor& weights, int stride, int padding);
int conv1d_out_len(int in_len, int kernel, int stride, int padding);

Tensor sum(const Tensor& x);
// Token-level cross entropy, mean over positions whose target != ignore_index.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets, int ignore_index);

void backward(const Tensor& loss);

}  // namespace mmadapt
