#ifndef SCVAE_TENSOR_HPP
#define SCVAE_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scvae/errors.hpp"

namespace scvae {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(Dtype dt) { return dt == Dtype::F32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

std::string shape_str(const std::vector<std::int64_t>& shape);

namespace detail {

struct TensorImpl {
    std::vector<std::int64_t> shape;
    Dtype dtype = Dtype::F32;
    std::vector<std::byte> data;
    std::vector<std::byte> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

}  // namespace detail

// Dense row-major n-dimensional array, f32 or f64, with an optional gradient
// buffer of the same shape. Copying a Tensor copies the handle, not the data;
// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::int64_t> shape, Dtype dtype);

    static Tensor zeros(std::vector<std::int64_t> shape, Dtype dtype);
    static Tensor full(std::vector<std::int64_t> shape, double value, Dtype dtype);
    static Tensor scalar(double value, Dtype dtype);
    static Tensor from_values(std::vector<std::int64_t> shape, const std::vector<double>& values, Dtype dtype);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return impl_->shape; }
    std::int64_t numel() const { return impl_->numel(); }
    std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::size_t rank() const { return impl_->shape.size(); }
    Dtype dtype() const { return impl_->dtype; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    template <typename T>
    std::span<T> data() {
        return {reinterpret_cast<T*>(impl_->data.data()), static_cast<std::size_t>(numel())};
    }
    template <typename T>
    std::span<const T> data() const {
        return {reinterpret_cast<const T*>(impl_->data.data()), static_cast<std::size_t>(numel())};
    }

    // Dtype-agnostic element access (tests, init, serialization glue).
    double at(std::int64_t flat) const;
    void set(std::int64_t flat, double v);
    double at(std::initializer_list<std::int64_t> idx) const;
    void set(std::initializer_list<std::int64_t> idx, double v);
    double item() const;  // scalar tensors only

    bool has_grad() const { return !impl_->grad.empty(); }
    void ensure_grad();  // allocate zero gradient buffer if absent
    void zero_grad();    // zero the buffer (keeps allocation)
    template <typename T>
    std::span<T> grad_data() {
        return {reinterpret_cast<T*>(impl_->grad.data()), static_cast<std::size_t>(numel())};
    }
    template <typename T>
    std::span<const T> grad_data() const {
        return {reinterpret_cast<const T*>(impl_->grad.data()), static_cast<std::size_t>(numel())};
    }
    double grad_at(std::int64_t flat) const;
    Tensor grad_clone() const;  // gradient as a fresh tensor (zeros if unset)

    Tensor clone() const;
    Tensor astype(Dtype dt) const;
    void copy_from(const Tensor& src);  // same shape+dtype, copies data bytes

    std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

bool same_shape(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Reverse-mode tape. Ops append one node per recorded operation; backward()
// seeds d(loss)/d(loss) = 1 and replays the nodes once, in reverse order.
// Nodes whose output never received a gradient are skipped, so a tape may
// hold several independent subgraphs.
class Tape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Gradients accumulate into requires_grad tensors; call zero_grad on the
    // leaves (or use fresh tensors) between independent backward passes.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace scvae

#endif
