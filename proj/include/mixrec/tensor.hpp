#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mixrec/errors.hpp"

namespace mixrec {

#ifdef MIXREC_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor. Gradient storage lives on the tensor itself and
/// is accumulated additively by GradTape::backward.
class Tensor {
public:
    std::vector<std::size_t> shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // sized like data iff requires_grad
    bool requires_grad = false;

    Tensor(std::vector<std::size_t> shape_, bool requires_grad_);
    Tensor(std::vector<std::size_t> shape_, std::vector<Real> values, bool requires_grad_);

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }

    // 2-d accessors; throw on rank mismatch
    std::size_t rows() const;
    std::size_t cols() const;
    Real& at(std::size_t i, std::size_t j);
    Real at(std::size_t i, std::size_t j) const;

    void zero_grad();
    void fill(Real v) { std::fill(data.begin(), data.end(), v); }

    // identity of the tape that produced this tensor; null for leaves
    const void* creator = nullptr;

    static std::string shape_str(const std::vector<std::size_t>& s);
};

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<Real> values,
                      bool requires_grad = false);
TensorPtr make_scalar(Real v, bool requires_grad = false);

/// Records executed primitives in order; backward replays them in exact
/// reverse execution order, accumulating gradients across fan-out.
/// A tape and its tensors belong to one worker at a time; independent tapes
/// may run in parallel. Rebuilt per forward pass.
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    /// While recording is off, outputs do not require grad and nothing is
    /// taped (inference mode).
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    // ---- primitives ----
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr transpose(const TensorPtr& x);
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr scale(const TensorPtr& x, Real s);
    /// bias has length rows(x); added to every column
    TensorPtr add_col_broadcast(const TensorPtr& x, const TensorPtr& bias);
    /// bias has length cols(x); added to every row
    TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& bias);
    /// normalizes over the last axis with population variance
    TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                         Real eps = kLayerNormEps);
    /// exact erf-based x * Phi(x)
    TensorPtr gelu(const TensorPtr& x);
    TensorPtr softplus(const TensorPtr& x);
    /// inverted dropout; identity when !training or p == 0; throws on p >= 1
    TensorPtr dropout(const TensorPtr& x, Real p, bool training, std::mt19937_64& rng);
    /// row gather; backward scatter-adds into the table
    TensorPtr embedding_lookup(const TensorPtr& table, std::span<const std::int64_t> indices);
    /// mean of the first `valid` rows; valid == 0 yields the zero vector
    TensorPtr mean_pool(const TensorPtr& x, std::size_t valid);
    /// per-row dot product of two m x n tensors -> length-m vector
    TensorPtr rowwise_dot(const TensorPtr& a, const TensorPtr& b);
    /// stacks k tensors of equal numel into a k x numel matrix
    TensorPtr stack_rows(std::span<const TensorPtr> parts);
    /// copies row `row` of a 2-d tensor, reshaped to out_shape
    TensorPtr slice_row(const TensorPtr& x, std::size_t row, std::vector<std::size_t> out_shape);
    /// concatenates 2-d tensors with equal row counts along the column axis
    TensorPtr concat_cols(std::span<const TensorPtr> parts);
    /// copies columns [start, start+count) of a 2-d tensor
    TensorPtr slice_cols(const TensorPtr& x, std::size_t start, std::size_t count);
    TensorPtr sum(const TensorPtr& x);

    /// Gradient of a scalar loss w.r.t. every gradient-requiring tensor the
    /// tape touched. Gradients accumulate into Tensor::grad.
    void backward(const TensorPtr& loss);

    static constexpr Real kLayerNormEps = static_cast<Real>(1e-12);

private:
    TensorPtr make_output(std::vector<std::size_t> shape, bool needs_grad);
    void push(std::function<void()> fn);

    std::vector<std::function<void()>> records_;
    bool recording_ = true;
};

inline constexpr Real kInvSqrt2 = static_cast<Real>(0.70710678118654752440);

inline Real gelu_scalar(Real x) {
    // x * Phi(x); keep this expression in sync with the gradient in tensor.cpp
    return static_cast<Real>(0.5) * x * (static_cast<Real>(1) + std::erf(x * kInvSqrt2));
}

inline Real sigmoid_scalar(Real x) {
    if (x >= 0) {
        return 1 / (1 + std::exp(-x));
    }
    const Real e = std::exp(x);
    return e / (1 + e);
}

inline Real softplus_scalar(Real x) {
    // log(1 + e^x) without overflow at large |x|
    return std::max<Real>(x, 0) + std::log1p(std::exp(-std::abs(x)));
}

/// Central-difference gradient check. Perturbs each sampled coordinate of
/// every parameter in place, re-evaluating `loss_fn`, and compares against
/// the analytic gradient already stored in Tensor::grad. Returns the max
/// relative error over all checked coordinates; magnitudes below `floor`
/// are compared on the absolute scale tol*floor, where finite-difference
/// roundoff would otherwise dominate.
double finite_diff_max_rel_error(std::span<const TensorPtr> params,
                                 const std::function<Real()>& loss_fn, Real h,
                                 std::size_t max_coords_per_param = 0,
                                 std::uint64_t sample_seed = 0, double floor = 1e-4);

}  // namespace mixrec
