#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "cl4ctr/tensor.hpp"

namespace cl4ctr {

using NodeId = std::uint32_t;
using Bindings = std::unordered_map<NodeId, Tensor>;

enum class OpKind : std::uint8_t {
    kInput,
    kParam,
    kConst,
    kAdd,
    kSub,
    kMul,
    kMaskMul,       // gradient flows through the first operand only
    kMulBcast,      // (B, rest...) * (rest...), second operand broadcast over axis 0
    kScale,         // x * constant
    kAddBias,       // x + bias, bias broadcast over the last axis
    kAddScalar,     // x + s, s a scalar node broadcast everywhere
    kMatMul,        // (n,k) x (k,m)
    kBatchMatMul,   // (b,n,k) x (b,k,m)
    kPermute,
    kReshape,
    kRelu,
    kSigmoid,
    kSoftmaxLast,
    kSquare,
    kSqrt,
    kSumAll,
    kMeanAll,
    kSumAxis,
    kConcatLast,
    kGather,        // row select from a 2-D table; adjoint scatter-adds
    kDropout,       // train-mode inverted dropout, identity in eval mode
    kL2NormalizeRows,
    kLayerNormLast,
    kBceWithLogits, // mean binary cross entropy, computed from logits
};

struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Shape shape;
    double attr = 0.0;                  // scale factor / dropout rate
    int axis = -1;                      // kSumAxis
    std::vector<int> perm;              // kPermute
    std::vector<std::uint32_t> indices; // kGather

    Tensor value;
    Tensor adjoint;
    Tensor aux;                         // dropout mask, cached row norms, ...
    bool has_value = false;
    bool has_adjoint = false;
};

// Reverse-mode expression DAG over dense tensors. Nodes are appended in
// topological order; evaluate() runs the forward pass over bound leaves,
// backward() fills adjoints. Single-threaded per instance.
class ComputeGraph {
public:
    NodeId input(Shape shape);
    NodeId param(Shape shape);
    NodeId constant(Tensor value);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId mask_mul(NodeId x, NodeId mask);
    NodeId mul_bcast(NodeId x, NodeId y);
    NodeId scale(NodeId x, double c);
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId add_scalar(NodeId x, NodeId s);
    NodeId matmul(NodeId a, NodeId b);
    NodeId bmm(NodeId a, NodeId b);
    NodeId permute(NodeId x, std::vector<int> perm);
    NodeId transpose_last2(NodeId x);
    NodeId reshape(NodeId x, Shape shape);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId softmax_last(NodeId x);
    NodeId square(NodeId x);
    NodeId sqrt(NodeId x);
    NodeId sum_all(NodeId x);
    NodeId mean_all(NodeId x);
    NodeId sum_axis(NodeId x, int axis);
    NodeId concat_last(NodeId a, NodeId b);
    NodeId gather(NodeId table, std::vector<std::uint32_t> rows);
    NodeId dropout(NodeId x, double rate);
    NodeId l2_normalize_rows(NodeId x);
    NodeId layer_norm_last(NodeId x);
    NodeId bce_with_logits(NodeId logits, NodeId labels);

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }
    void set_dropout_seed(std::uint64_t seed) { dropout_seed_ = seed; }

    // Forward pass. Bindings must cover every input and param node; shapes
    // are checked against the declared leaf shapes.
    void evaluate(const Bindings& bindings);

    // Reverse pass from a scalar loss node. Requires a prior evaluate().
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const;
    const Tensor& adjoint(NodeId id) const;
    bool has_adjoint(NodeId id) const { return nodes_[id].has_adjoint; }

    const std::vector<NodeId>& params() const { return params_; }
    std::unordered_map<NodeId, Tensor> param_adjoints() const;

    const Shape& shape_of(NodeId id) const { return nodes_[id].shape; }
    std::size_t node_count() const { return nodes_.size(); }

    // Max over entries of |analytic - central difference| / max(1, |analytic|)
    // for d loss / d param, with the given bindings. The central difference
    // re-runs the forward pass with perturbed bindings.
    double finite_difference_check(const Bindings& bindings, NodeId loss,
                                   NodeId param, double eps);

private:
    NodeId push(Node node);
    NodeId unary(OpKind op, NodeId x);
    NodeId binary_same_shape(OpKind op, NodeId a, NodeId b);
    void forward_node(NodeId id);
    void backward_node(NodeId id);
    void accumulate(NodeId id, const Tensor& g);
    Tensor& adjoint_slot(NodeId id);
    void check_id(NodeId id) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> params_;
    std::vector<NodeId> leaves_;
    bool training_ = false;
    std::uint64_t dropout_seed_ = 0;
    bool evaluated_ = false;
};

}  // namespace cl4ctr
