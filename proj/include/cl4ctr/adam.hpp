#pragma once

#include <cstdint>
#include <vector>

#include "cl4ctr/tensor.hpp"

namespace cl4ctr {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moment buffers for one parameter tensor.
struct AdamState {
    Tensor m;
    Tensor v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(const Shape& shape) : m(shape), v(shape) {}
};

// Standard bias-corrected Adam update, in place. lr = 0 leaves the
// parameters untouched (the step count still advances).
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

// Moment buffers for a 2-D table updated row by row. Each row keeps its own
// step count so bias correction matches how often that row was actually seen.
struct RowAdamState {
    Tensor m;
    Tensor v;
    std::vector<std::uint64_t> steps;

    RowAdamState() = default;
    explicit RowAdamState(const Shape& shape);
};

// Adam update restricted to the listed rows of a 2-D parameter table.
// `rows` may contain duplicates; each distinct row is stepped once.
// Rows outside the list keep their values, moments, and step counts.
void adam_step_rows(Tensor& param, const Tensor& grad, const std::vector<std::uint32_t>& rows,
                    RowAdamState& state, const AdamConfig& cfg);

}  // namespace cl4ctr
