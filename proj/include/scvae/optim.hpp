#ifndef SCVAE_OPTIM_HPP
#define SCVAE_OPTIM_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Parameters registered with clamp_nonneg are
// projected back to >= 0 after each update.
class Adam {
public:
    explicit Adam(AdamConfig config) : cfg_(config) {
        if (cfg_.lr <= 0.0) throw ConfigError("adam: learning rate must be > 0");
    }

    void register_param(const std::string& name, const Tensor& param, bool clamp_nonneg = false);

    // One update from each parameter's accumulated gradient (absent gradient
    // buffers count as zero). Throws NumericError naming the parameter on a
    // non-finite gradient.
    void step();

    void zero_grad();

    std::int64_t steps_taken() const { return t_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

    // Optimizer state as named tensors ("adam.<param>.m" / ".v"), for
    // checkpointing.
    void for_each_state(const std::function<void(const std::string&, Tensor&)>& fn);

private:
    struct Slot {
        std::string name;
        Tensor param;
        Tensor m;
        Tensor v;
        bool clamp_nonneg = false;
    };
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace scvae

#endif
