#pragma once

#include <functional>
#include <memory>

#include "atx/tensor.hpp"

namespace atx::ad {

// Define-by-run reverse-mode graph. Nodes own their value; gradients are
// allocated on demand during backward().
struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor(val.shape());
            grad_alloc = true;
        }
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// Seeds root with grad 1 and runs reverse topological sweep. Root must be scalar.
void backward(const Var& root);

// Elementwise, same shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// a*x + b, elementwise scalar affine.
Var affine(const Var& x, double a, double b);
inline Var scale(const Var& x, double a) { return affine(x, a, 0.0); }
Var square(const Var& x);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh_op(const Var& x);
Var sigmoid_op(const Var& x);
// log(1 + exp(x)), evaluated stably.
Var softplus(const Var& x);

Var sum_all(const Var& x);
Var mean_all(const Var& x);

// mask (N,1,H,W) broadcast-multiplied over channels of x (N,C,H,W).
Var mask_mul(const Var& mask, const Var& x);

// weight (Cout, Cin, kh, kw), bias (Cout) or nullptr.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation = 1);
// weight (Cin, Cout, kh, kw); out spatial = (in-1)*stride - 2*pad + kh + out_pad.
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int out_pad);

// Running stats are updated in place when training; eval mode reads them only.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                 Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

Var max_pool2d(const Var& x, int k = 2, int stride = 2);

Var reshape(const Var& x, std::vector<int64_t> shape);

// logits (N,K); mean negative log-likelihood over the batch.
Var softmax_xent(const Var& logits, const std::vector<int>& labels);

inline int64_t conv_out_dim(int64_t in, int k, int stride, int pad, int dilation) {
    return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

}  // namespace atx::ad
