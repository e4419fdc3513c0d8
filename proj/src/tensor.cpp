#include "mixrec/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mixrec {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

constexpr Real kInvSqrt2Pi = static_cast<Real>(0.39894228040143267794);  // 1/sqrt(2*pi)

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, bool requires_grad_)
    : shape(std::move(shape_)),
      data(shape_numel(shape), 0),
      requires_grad(requires_grad_) {
    if (requires_grad) grad.assign(data.size(), 0);
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<Real> values, bool requires_grad_)
    : shape(std::move(shape_)), data(std::move(values)), requires_grad(requires_grad_) {
    if (data.size() != shape_numel(shape)) {
        throw ShapeError("tensor data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    if (requires_grad) grad.assign(data.size(), 0);
}

std::size_t Tensor::rows() const {
    if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-d: " + shape_str(shape));
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-d: " + shape_str(shape));
    return shape[1];
}

Real& Tensor::at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
Real Tensor::at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

void Tensor::zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), 0);
}

std::string Tensor::shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<Real> values,
                      bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr make_scalar(Real v, bool requires_grad) {
    return make_tensor({1}, {v}, requires_grad);
}

TensorPtr GradTape::make_output(std::vector<std::size_t> shape, bool needs_grad) {
    auto out = make_tensor(std::move(shape), recording_ && needs_grad);
    out->creator = this;
    return out;
}

void GradTape::push(std::function<void()> fn) { records_.push_back(std::move(fn)); }

void GradTape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ShapeError("backward: loss must be scalar, got " + Tensor::shape_str(loss->shape));
    }
    if (loss->creator != this) {
        throw std::logic_error("backward: loss tensor was not produced on this tape");
    }
    if (loss->requires_grad) loss->grad[0] = 1;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

TensorPtr GradTape::matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->cols() != b->rows()) {
        throw ShapeError("matmul: incompatible shapes " + Tensor::shape_str(a->shape) + " and " +
                         Tensor::shape_str(b->shape));
    }
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    auto out = make_output({m, n}, a->requires_grad || b->requires_grad);
    const Real* ad = a->data.data();
    const Real* bd = b->data.data();
    Real* od = out->data.data();
    // i-p-j order: per (i,j) the accumulation over p is in increasing p,
    // matching a naive triple loop bit for bit
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const Real aip = ad[i * k + p];
            const Real* brow = bd + p * n;
            Real* orow = od + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    if (out->requires_grad) {
        push([a, b, out, m, k, n] {
            const Real* go = out->grad.data();
            if (a->requires_grad) {
                Real* ga = a->grad.data();
                const Real* bd2 = b->data.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        Real acc = 0;
                        const Real* grow = go + i * n;
                        const Real* brow = bd2 + p * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                    }
            }
            if (b->requires_grad) {
                Real* gb = b->grad.data();
                const Real* ad2 = a->data.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const Real aip = ad2[i * k + p];
                        const Real* grow = go + i * n;
                        Real* gbrow = gb + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                    }
            }
        });
    }
    return out;
}

TensorPtr GradTape::transpose(const TensorPtr& x) {
    const std::size_t m = x->rows(), n = x->cols();
    auto out = make_output({n, m}, x->requires_grad);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = x->data[i * n + j];
    if (out->requires_grad) {
        push([x, out, m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) x->grad[i * n + j] += out->grad[j * m + i];
        });
    }
    return out;
}

TensorPtr GradTape::add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError("add: shape mismatch " + Tensor::shape_str(a->shape) + " vs " +
                         Tensor::shape_str(b->shape));
    }
    auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (out->requires_grad) {
        push([a, b, out, n] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr GradTape::mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError("mul: shape mismatch " + Tensor::shape_str(a->shape) + " vs " +
                         Tensor::shape_str(b->shape));
    }
    auto out = make_output(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    if (out->requires_grad) {
        push([a, b, out, n] {
            if (a->requires_grad)
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
            if (b->requires_grad)
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
        });
    }
    return out;
}

TensorPtr GradTape::scale(const TensorPtr& x, Real s) {
    auto out = make_output(x->shape, x->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = x->data[i] * s;
    if (out->requires_grad) {
        push([x, out, s, n] {
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * s;
        });
    }
    return out;
}

TensorPtr GradTape::add_col_broadcast(const TensorPtr& x, const TensorPtr& bias) {
    const std::size_t m = x->rows(), n = x->cols();
    if (bias->ndim() != 1 || bias->numel() != m) {
        throw ShapeError("add_col_broadcast: bias " + Tensor::shape_str(bias->shape) +
                         " does not match rows of " + Tensor::shape_str(x->shape));
    }
    auto out = make_output(x->shape, x->requires_grad || bias->requires_grad);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + bias->data[i];
    if (out->requires_grad) {
        push([x, bias, out, m, n] {
            if (x->requires_grad)
                for (std::size_t i = 0; i < m * n; ++i) x->grad[i] += out->grad[i];
            if (bias->requires_grad)
                for (std::size_t i = 0; i < m; ++i) {
                    Real acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += out->grad[i * n + j];
                    bias->grad[i] += acc;
                }
        });
    }
    return out;
}

TensorPtr GradTape::add_row_broadcast(const TensorPtr& x, const TensorPtr& bias) {
    const std::size_t m = x->rows(), n = x->cols();
    if (bias->ndim() != 1 || bias->numel() != n) {
        throw ShapeError("add_row_broadcast: bias " + Tensor::shape_str(bias->shape) +
                         " does not match cols of " + Tensor::shape_str(x->shape));
    }
    auto out = make_output(x->shape, x->requires_grad || bias->requires_grad);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + bias->data[j];
    if (out->requires_grad) {
        push([x, bias, out, m, n] {
            if (x->requires_grad)
                for (std::size_t i = 0; i < m * n; ++i) x->grad[i] += out->grad[i];
            if (bias->requires_grad)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bias->grad[j] += out->grad[i * n + j];
        });
    }
    return out;
}

TensorPtr GradTape::layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                               Real eps) {
    if (x->ndim() == 0 || x->shape.empty()) throw ShapeError("layer_norm: scalar input");
    const std::size_t c = x->shape.back();
    if (gain->numel() != c || bias->numel() != c) {
        throw ShapeError("layer_norm: gain/bias length must equal last axis " + std::to_string(c));
    }
    if (eps < 0) throw ConfigError("layer_norm: eps must be >= 0");
    const std::size_t slices = x->numel() / c;
    auto out = make_output(x->shape, x->requires_grad || gain->requires_grad || bias->requires_grad);

    // cache per-slice statistics for backward
    auto mean = std::make_shared<std::vector<Real>>(slices);
    auto inv_std = std::make_shared<std::vector<Real>>(slices);
    for (std::size_t s = 0; s < slices; ++s) {
        const Real* xs = x->data.data() + s * c;
        Real m = 0;
        for (std::size_t j = 0; j < c; ++j) m += xs[j];
        m /= static_cast<Real>(c);
        Real var = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const Real d = xs[j] - m;
            var += d * d;
        }
        var /= static_cast<Real>(c);
        const Real inv = 1 / std::sqrt(var + eps);
        (*mean)[s] = m;
        (*inv_std)[s] = inv;
        Real* os = out->data.data() + s * c;
        for (std::size_t j = 0; j < c; ++j) {
            const Real norm = (xs[j] - m) * inv;
            os[j] = gain->data[j] * norm + bias->data[j];
        }
    }
    if (out->requires_grad) {
        push([x, gain, bias, out, mean, inv_std, slices, c] {
            for (std::size_t s = 0; s < slices; ++s) {
                const Real* xs = x->data.data() + s * c;
                const Real* go = out->grad.data() + s * c;
                const Real m = (*mean)[s];
                const Real inv = (*inv_std)[s];
                // dnorm = go * gain; dx = inv*(dnorm - mean(dnorm) - norm*mean(dnorm*norm))
                Real sum_dn = 0, sum_dn_norm = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    const Real norm = (xs[j] - m) * inv;
                    const Real dn = go[j] * gain->data[j];
                    sum_dn += dn;
                    sum_dn_norm += dn * norm;
                }
                const Real mean_dn = sum_dn / static_cast<Real>(c);
                const Real mean_dn_norm = sum_dn_norm / static_cast<Real>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const Real norm = (xs[j] - m) * inv;
                    if (x->requires_grad)
                        x->grad[s * c + j] += inv * (go[j] * gain->data[j] - mean_dn - norm * mean_dn_norm);
                    if (gain->requires_grad) gain->grad[j] += go[j] * norm;
                    if (bias->requires_grad) bias->grad[j] += go[j];
                }
            }
        });
    }
    return out;
}

TensorPtr GradTape::gelu(const TensorPtr& x) {
    auto out = make_output(x->shape, x->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = gelu_scalar(x->data[i]);
    if (out->requires_grad) {
        push([x, out, n] {
            for (std::size_t i = 0; i < n; ++i) {
                const Real v = x->data[i];
                const Real cdf = static_cast<Real>(0.5) * (1 + std::erf(v * kInvSqrt2));
                const Real pdf = kInvSqrt2Pi * std::exp(static_cast<Real>(-0.5) * v * v);
                x->grad[i] += out->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

TensorPtr GradTape::softplus(const TensorPtr& x) {
    auto out = make_output(x->shape, x->requires_grad);
    const std::size_t n = out->numel();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = softplus_scalar(x->data[i]);
    if (out->requires_grad) {
        push([x, out, n] {
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * sigmoid_scalar(x->data[i]);
        });
    }
    return out;
}

TensorPtr GradTape::dropout(const TensorPtr& x, Real p, bool training, std::mt19937_64& rng) {
    if (p < 0 || p >= 1) {
        throw ConfigError("dropout: p must be in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0) {
        // exact identity, bit for bit
        auto out = make_output(x->shape, x->requires_grad);
        out->data = x->data;
        if (out->requires_grad) {
            const std::size_t n = out->numel();
            push([x, out, n] {
                for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
            });
        }
        return out;
    }
    auto out = make_output(x->shape, x->requires_grad);
    const std::size_t n = out->numel();
    const Real keep_scale = 1 / (1 - p);
    auto mask = std::make_shared<std::vector<Real>>(n);  // 0 or 1/(1-p), replayed in backward
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const Real m = unit(rng) < p ? 0 : keep_scale;
        (*mask)[i] = m;
        out->data[i] = x->data[i] * m;
    }
    if (out->requires_grad) {
        push([x, out, mask, n] {
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i] * (*mask)[i];
        });
    }
    return out;
}

TensorPtr GradTape::embedding_lookup(const TensorPtr& table, std::span<const std::int64_t> indices) {
    const std::size_t v = table->rows(), c = table->cols();
    for (std::int64_t idx : indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= v) {
            throw IndexError("embedding_lookup: index " + std::to_string(idx) +
                             " out of range [0, " + std::to_string(v) + ")");
        }
    }
    auto idx_copy = std::make_shared<std::vector<std::int64_t>>(indices.begin(), indices.end());
    auto out = make_output({indices.size(), c}, table->requires_grad);
    for (std::size_t i = 0; i < idx_copy->size(); ++i) {
        const Real* row = table->data.data() + static_cast<std::size_t>((*idx_copy)[i]) * c;
        std::copy(row, row + c, out->data.data() + i * c);
    }
    if (out->requires_grad) {
        push([table, out, idx_copy, c] {
            for (std::size_t i = 0; i < idx_copy->size(); ++i) {
                Real* grow = table->grad.data() + static_cast<std::size_t>((*idx_copy)[i]) * c;
                const Real* go = out->grad.data() + i * c;
                for (std::size_t j = 0; j < c; ++j) grow[j] += go[j];
            }
        });
    }
    return out;
}

TensorPtr GradTape::mean_pool(const TensorPtr& x, std::size_t valid) {
    const std::size_t n = x->rows(), c = x->cols();
    if (valid > n) {
        throw ShapeError("mean_pool: valid " + std::to_string(valid) + " exceeds rows " +
                         std::to_string(n));
    }
    auto out = make_output({c}, x->requires_grad && valid > 0);
    if (valid == 0) return out;  // degenerate: no tokens -> zero vector
    const Real inv = 1 / static_cast<Real>(valid);
    for (std::size_t i = 0; i < valid; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j] += x->data[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out->data[j] *= inv;
    if (out->requires_grad) {
        push([x, out, valid, c, inv] {
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[j] * inv;
        });
    }
    return out;
}

TensorPtr GradTape::rowwise_dot(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape || a->ndim() != 2) {
        throw ShapeError("rowwise_dot: need equal 2-d shapes, got " + Tensor::shape_str(a->shape) +
                         " vs " + Tensor::shape_str(b->shape));
    }
    const std::size_t m = a->rows(), n = a->cols();
    auto out = make_output({m}, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < m; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += a->data[i * n + j] * b->data[i * n + j];
        out->data[i] = acc;
    }
    if (out->requires_grad) {
        push([a, b, out, m, n] {
            for (std::size_t i = 0; i < m; ++i) {
                const Real g = out->grad[i];
                if (a->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += g * b->data[i * n + j];
                if (b->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) b->grad[i * n + j] += g * a->data[i * n + j];
            }
        });
    }
    return out;
}

TensorPtr GradTape::stack_rows(std::span<const TensorPtr> parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no inputs");
    const std::size_t n = parts.front()->numel();
    bool needs = false;
    for (const auto& p : parts) {
        if (p->numel() != n) {
            throw ShapeError("stack_rows: numel mismatch, " + std::to_string(p->numel()) + " vs " +
                             std::to_string(n));
        }
        needs = needs || p->requires_grad;
    }
    auto out = make_output({parts.size(), n}, needs);
    for (std::size_t i = 0; i < parts.size(); ++i)
        std::copy(parts[i]->data.begin(), parts[i]->data.end(), out->data.begin() + i * n);
    if (out->requires_grad) {
        std::vector<TensorPtr> held(parts.begin(), parts.end());
        push([held = std::move(held), out, n] {
            for (std::size_t i = 0; i < held.size(); ++i) {
                if (!held[i]->requires_grad) continue;
                const Real* go = out->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) held[i]->grad[j] += go[j];
            }
        });
    }
    return out;
}

TensorPtr GradTape::slice_row(const TensorPtr& x, std::size_t row, std::vector<std::size_t> out_shape) {
    const std::size_t m = x->rows(), n = x->cols();
    if (row >= m) throw IndexError("slice_row: row " + std::to_string(row) + " out of range");
    if (shape_numel(out_shape) != n) {
        throw ShapeError("slice_row: out shape " + Tensor::shape_str(out_shape) +
                         " does not hold " + std::to_string(n) + " elements");
    }
    auto out = make_output(std::move(out_shape), x->requires_grad);
    std::copy(x->data.begin() + row * n, x->data.begin() + (row + 1) * n, out->data.begin());
    if (out->requires_grad) {
        push([x, out, row, n] {
            for (std::size_t j = 0; j < n; ++j) x->grad[row * n + j] += out->grad[j];
        });
    }
    return out;
}

TensorPtr GradTape::concat_cols(std::span<const TensorPtr> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts.front()->rows();
    std::size_t total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p->rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + std::to_string(p->rows()) + " vs " +
                             std::to_string(m));
        }
        total += p->cols();
        needs = needs || p->requires_grad;
    }
    auto out = make_output({m, total}, needs);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p->cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy(p->data.begin() + i * c, p->data.begin() + (i + 1) * c,
                      out->data.begin() + i * total + offset);
        offset += c;
    }
    if (out->requires_grad) {
        std::vector<TensorPtr> held(parts.begin(), parts.end());
        push([held = std::move(held), out, m, total] {
            std::size_t off = 0;
            for (const auto& p : held) {
                const std::size_t c = p->cols();
                if (p->requires_grad) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            p->grad[i * c + j] += out->grad[i * total + off + j];
                }
                off += c;
            }
        });
    }
    return out;
}

TensorPtr GradTape::slice_cols(const TensorPtr& x, std::size_t start, std::size_t count) {
    const std::size_t m = x->rows(), n = x->cols();
    if (start + count > n) {
        throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + std::to_string(n) +
                         " columns");
    }
    auto out = make_output({m, count}, x->requires_grad);
    for (std::size_t i = 0; i < m; ++i)
        std::copy(x->data.begin() + i * n + start, x->data.begin() + i * n + start + count,
                  out->data.begin() + i * count);
    if (out->requires_grad) {
        push([x, out, start, count, m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j)
                    x->grad[i * n + start + j] += out->grad[i * count + j];
        });
    }
    return out;
}

TensorPtr GradTape::sum(const TensorPtr& x) {
    auto out = make_output({1}, x->requires_grad);
    Real acc = 0;
    for (Real v : x->data) acc += v;
    out->data[0] = acc;
    if (out->requires_grad) {
        const std::size_t n = x->numel();
        push([x, out, n] {
            const Real g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------

double finite_diff_max_rel_error(std::span<const TensorPtr> params,
                                 const std::function<Real()>& loss_fn, Real h,
                                 std::size_t max_coords_per_param, std::uint64_t sample_seed,
                                 double floor) {
    if (h <= 0) throw ConfigError("finite_diff: h must be positive");
    std::mt19937_64 rng(sample_seed);
    double worst = 0;
    for (const auto& p : params) {
        const std::size_t n = p->numel();
        std::vector<std::size_t> coords;
        if (max_coords_per_param == 0 || n <= max_coords_per_param) {
            coords.resize(n);
            std::iota(coords.begin(), coords.end(), std::size_t{0});
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t i = 0; i < max_coords_per_param; ++i) coords.push_back(pick(rng));
        }
        for (std::size_t i : coords) {
            const Real saved = p->data[i];
            p->data[i] = saved + h;
            const double up = loss_fn();
            p->data[i] = saved - h;
            const double down = loss_fn();
            p->data[i] = saved;
            const double numeric = (up - down) / (2.0 * static_cast<double>(h));
            const double analytic = p->requires_grad ? static_cast<double>(p->grad[i]) : 0.0;
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace mixrec
