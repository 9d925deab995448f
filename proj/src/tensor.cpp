#include "scvae/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace scvae {

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape, Dtype dtype) {
    for (auto d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    }
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->dtype = dtype;
    impl_->data.assign(static_cast<std::size_t>(impl_->numel()) * dtype_size(dtype), std::byte{0});
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, Dtype dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, Dtype dtype) {
    Tensor t(std::move(shape), dtype);
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) t.set(i, value);
    return t;
}

Tensor Tensor::scalar(double value, Dtype dtype) { return full({}, value, dtype); }

Tensor Tensor::from_values(std::vector<std::int64_t> shape, const std::vector<double>& values, Dtype dtype) {
    Tensor t(std::move(shape), dtype);
    if (t.numel() != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("value count " + std::to_string(values.size()) + " does not fill shape " +
                             shape_str(t.shape()));
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, values[static_cast<std::size_t>(i)]);
    return t;
}

double Tensor::at(std::int64_t flat) const {
    if (impl_->dtype == Dtype::F32) return static_cast<double>(data<float>()[static_cast<std::size_t>(flat)]);
    return data<double>()[static_cast<std::size_t>(flat)];
}

void Tensor::set(std::int64_t flat, double v) {
    if (impl_->dtype == Dtype::F32) {
        data<float>()[static_cast<std::size_t>(flat)] = static_cast<float>(v);
    } else {
        data<double>()[static_cast<std::size_t>(flat)] = v;
    }
}

std::int64_t Tensor::flat_index(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != impl_->shape.size()) {
        throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor shape " + shape_str(impl_->shape));
    }
    std::int64_t flat = 0;
    std::size_t i = 0;
    for (auto v : idx) {
        flat = flat * impl_->shape[i] + v;
        ++i;
    }
    return flat;
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const { return at(flat_index(idx)); }
void Tensor::set(std::initializer_list<std::int64_t> idx, double v) { set(flat_index(idx), v); }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return at(0);
}

void Tensor::ensure_grad() {
    if (impl_->grad.empty()) {
        impl_->grad.assign(static_cast<std::size_t>(numel()) * dtype_size(impl_->dtype), std::byte{0});
    }
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::memset(impl_->grad.data(), 0, impl_->grad.size());
}

double Tensor::grad_at(std::int64_t flat) const {
    if (!has_grad()) return 0.0;
    if (impl_->dtype == Dtype::F32) return static_cast<double>(grad_data<float>()[static_cast<std::size_t>(flat)]);
    return grad_data<double>()[static_cast<std::size_t>(flat)];
}

Tensor Tensor::grad_clone() const {
    Tensor g(shape(), dtype());
    if (has_grad()) std::memcpy(g.impl()->data.data(), impl_->grad.data(), impl_->grad.size());
    return g;
}

Tensor Tensor::clone() const {
    Tensor t(shape(), dtype());
    std::memcpy(t.impl()->data.data(), impl_->data.data(), impl_->data.size());
    return t;
}

Tensor Tensor::astype(Dtype dt) const {
    if (dt == dtype()) return clone();
    Tensor t(shape(), dt);
    for (std::int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
    return t;
}

void Tensor::copy_from(const Tensor& src) {
    if (!same_shape(*this, src) || src.dtype() != dtype()) {
        throw DimensionError("copy_from mismatch: " + shape_str(shape()) + " vs " + shape_str(src.shape()));
    }
    std::memcpy(impl_->data.data(), src.impl()->data.data(), impl_->data.size());
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool all_finite(const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t.at(i))) return false;
    }
    return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b) || a.dtype() != b.dtype()) return false;
    return std::memcmp(a.impl()->data.data(), b.impl()->data.data(), a.impl()->data.size()) == 0;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw DimensionError("backward expects a scalar loss, got " + shape_str(loss.shape()));
    }
    if (nodes_.empty()) throw DomainError("backward on an empty tape");
    Tensor l = loss;
    l.ensure_grad();
    if (l.dtype() == Dtype::F32) {
        l.grad_data<float>()[0] += 1.0f;
    } else {
        l.grad_data<double>()[0] += 1.0;
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace scvae
