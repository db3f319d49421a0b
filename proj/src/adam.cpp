#include "cl4ctr/adam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cl4ctr {

namespace {

void check_config(const AdamConfig& cfg) {
    if (cfg.lr < 0.0) throw std::invalid_argument("adam: learning rate must be >= 0");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
        throw std::invalid_argument("adam: betas must lie in [0, 1)");
    }
    if (cfg.eps <= 0.0) throw std::invalid_argument("adam: eps must be > 0");
}

}  // namespace

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg) {
    check_config(cfg);
    if (state.step == 0 && state.m.size() == 0) {
        state.m = Tensor(param.shape());
        state.v = Tensor(param.shape());
    }
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v)) {
        throw std::invalid_argument("adam_step: shape mismatch between param " +
                                    shape_str(param.shape()) + ", grad " +
                                    shape_str(grad.shape()) + ", and state");
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

RowAdamState::RowAdamState(const Shape& shape) : m(shape), v(shape) {
    if (shape.size() != 2) {
        throw std::invalid_argument("RowAdamState: table must be 2-D, got " + shape_str(shape));
    }
    steps.assign(shape[0], 0);
}

void adam_step_rows(Tensor& param, const Tensor& grad, const std::vector<std::uint32_t>& rows,
                    RowAdamState& state, const AdamConfig& cfg) {
    check_config(cfg);
    if (param.rank() != 2) {
        throw std::invalid_argument("adam_step_rows: param must be 2-D");
    }
    if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v) ||
        state.steps.size() != param.dim(0)) {
        throw std::invalid_argument("adam_step_rows: shape mismatch between param " +
                                    shape_str(param.shape()) + ", grad " +
                                    shape_str(grad.shape()) + ", and state");
    }
    std::vector<std::uint32_t> distinct(rows);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::size_t cols = param.dim(1);
    for (std::uint32_t r : distinct) {
        if (r >= param.dim(0)) {
            throw std::invalid_argument("adam_step_rows: row " + std::to_string(r) +
                                        " out of range");
        }
        state.steps[r] += 1;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps[r]));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps[r]));
        std::size_t base = static_cast<std::size_t>(r) * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            std::size_t i = base + c;
            double g = grad[i];
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            double mhat = state.m[i] / bc1;
            double vhat = state.v[i] / bc2;
            param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace cl4ctr
