#include "scvae/optim.hpp"

#include <cmath>

namespace scvae {

void Adam::register_param(const std::string& name, const Tensor& param, bool clamp_nonneg) {
    Slot s;
    s.name = name;
    s.param = param;
    s.m = Tensor::zeros(param.shape(), param.dtype());
    s.v = Tensor::zeros(param.shape(), param.dtype());
    s.clamp_nonneg = clamp_nonneg;
    slots_.push_back(std::move(s));
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        auto run = [&](auto tag) {
            using T = decltype(tag);
            const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
            const T one_m_b1 = static_cast<T>(1.0 - cfg_.beta1), one_m_b2 = static_cast<T>(1.0 - cfg_.beta2);
            const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
            const T lr = static_cast<T>(cfg_.lr), eps = static_cast<T>(cfg_.eps);
            const std::int64_t n = s.param.numel();
            auto p = s.param.data<T>();
            auto m = s.m.data<T>();
            auto v = s.v.data<T>();
            const bool has_g = s.param.has_grad();
            auto g = has_g ? s.param.grad_data<T>() : std::span<T>{};
            for (std::int64_t i = 0; i < n; ++i) {
                const T gi = has_g ? g[static_cast<std::size_t>(i)] : T(0);
                if (!std::isfinite(static_cast<double>(gi))) {
                    throw NumericError("non-finite gradient for parameter " + s.name + " at index " +
                                       std::to_string(i));
                }
                m[static_cast<std::size_t>(i)] = b1 * m[static_cast<std::size_t>(i)] + one_m_b1 * gi;
                v[static_cast<std::size_t>(i)] = b2 * v[static_cast<std::size_t>(i)] + one_m_b2 * gi * gi;
                const T mhat = m[static_cast<std::size_t>(i)] * inv_bc1;
                const T vhat = v[static_cast<std::size_t>(i)] * inv_bc2;
                T next = p[static_cast<std::size_t>(i)] - lr * mhat / (std::sqrt(vhat) + eps);
                if (s.clamp_nonneg && next < T(0)) next = T(0);
                p[static_cast<std::size_t>(i)] = next;
            }
        };
        if (s.param.dtype() == Dtype::F32) {
            run(float{});
        } else {
            run(double{});
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

void Adam::for_each_state(const std::function<void(const std::string&, Tensor&)>& fn) {
    for (Slot& s : slots_) {
        fn("adam." + s.name + ".m", s.m);
        fn("adam." + s.name + ".v", s.v);
    }
}

}  // namespace scvae
