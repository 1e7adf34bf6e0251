// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "volsurf/errors.hpp"
#include "volsurf/matrix.hpp"

namespace volsurf::ad {

/// One node of the dynamically built reverse-mode graph.
struct Node {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t id = 0;

    std::size_t numel() const { return val.size(); }
};

/// Captured attention distributions (decoder cross-attention export).
struct AttentionTrace {
    struct Entry {
        std::string label;
        int batch = 0, heads = 0, n_queries = 0, n_keys = 0;
        std::vector<double> probs; // [batch, heads, n_queries, n_keys]
    };
    std::vector<Entry> entries;
};

/// Value-semantics handle to a graph node. Graph building and backward are
/// single-threaded; kernels inside ops may parallelize elementwise.
class Tensor {
  public:
    Tensor() = default;

    static Tensor constant(std::vector<int> shape, std::vector<double> values);
    static Tensor param(std::vector<int> shape, std::vector<double> values);
    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor scalar_const(double v) { return constant({1}, {v}); }

    bool defined() const { return static_cast<bool>(n_); }
    const std::vector<int>& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->numel(); }
    bool requires_grad() const { return n_->requires_grad; }

    std::vector<double>& values() { return n_->val; }
    const std::vector<double>& values() const { return n_->val; }
    std::vector<double>& grad() { return n_->grad; }
    const std::vector<double>& grad() const { return n_->grad; }

    double scalar_value() const;

    /// Reverse pass from this scalar node. Zeroes the grads of every
    /// reachable differentiable node first, then accumulates.
    void backward() const;

    std::shared_ptr<Node> node() const { return n_; }

  private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;

    friend Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn);
};

/// Creates a non-leaf node; exposed for modules that define their own ops.
Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn);

// ---- shape ops ----
Tensor reshape(const Tensor& t, std::vector<int> shape);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
/// [R, C] -> [B, R, C], gradient summed over the batch copies.
Tensor repeat_batch(const Tensor& t, int batch);

// ---- arithmetic ----
Tensor add(const Tensor& a, const Tensor& b); // same shape
Tensor sum_all(const Tensor& t);              // -> scalar
/// coeffs[0]*terms[0] + ... for scalar terms.
Tensor scaled_sum(const std::vector<Tensor>& terms, const std::vector<double>& coeffs);

// ---- activations ----
Tensor relu(const Tensor& t);
Tensor gelu(const Tensor& t); // exact x * Phi(x)
Tensor elu(const Tensor& t, double alpha = 1.0);

// ---- normalization / softmax ----
/// Softmax over the last dimension. An optional mask (length = last dim,
/// shared across rows) excludes positions: they get weight exactly zero and
/// the remainder renormalizes.
Tensor softmax_lastdim(const Tensor& t, const std::vector<std::uint8_t>* mask = nullptr);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- dense / conv / attention ----
/// x: [..., in] flattened to rows; w: [out, in]; b: [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// x: [B, Cin, H, W]; w: [Cout, Cin, 3, 3]; b: [Cout]; same padding.
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);

/// Multi-head scaled dot-product attention over already-projected q, k, v of
/// shape [B, T, D] with D split into `heads` contiguous blocks. key_allowed
/// (B x Tk bytes, 1 = attend) removes keys from the softmax: excluded keys
/// receive weight exactly zero. Optionally records the probabilities.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::vector<std::uint8_t>* key_allowed = nullptr,
                 AttentionTrace* trace = nullptr, const std::string& trace_label = "");

// ---- losses ----
/// Mean over batch of per-sample MSE restricted to loss_mask == 1 entries.
/// pred: [B, R, C]. Throws NoMissingPointsError if a sample has none.
Tensor masked_mse(const Tensor& pred, const std::vector<Matrix>& targets,
                  const std::vector<MaskMatrix>& loss_masks);

} // namespace volsurf::ad
