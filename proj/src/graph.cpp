#include "cl4ctr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cl4ctr/rng.hpp"

namespace cl4ctr {

namespace {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::kInput: return "input";
        case OpKind::kParam: return "param";
        case OpKind::kConst: return "const";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kMaskMul: return "mask_mul";
        case OpKind::kMulBcast: return "mul_bcast";
        case OpKind::kScale: return "scale";
        case OpKind::kAddBias: return "add_bias";
        case OpKind::kAddScalar: return "add_scalar";
        case OpKind::kMatMul: return "matmul";
        case OpKind::kBatchMatMul: return "bmm";
        case OpKind::kPermute: return "permute";
        case OpKind::kReshape: return "reshape";
        case OpKind::kRelu: return "relu";
        case OpKind::kSigmoid: return "sigmoid";
        case OpKind::kSoftmaxLast: return "softmax_last";
        case OpKind::kSquare: return "square";
        case OpKind::kSqrt: return "sqrt";
        case OpKind::kSumAll: return "sum_all";
        case OpKind::kMeanAll: return "mean_all";
        case OpKind::kSumAxis: return "sum_axis";
        case OpKind::kConcatLast: return "concat_last";
        case OpKind::kGather: return "gather";
        case OpKind::kDropout: return "dropout";
        case OpKind::kL2NormalizeRows: return "l2_normalize_rows";
        case OpKind::kLayerNormLast: return "layer_norm_last";
        case OpKind::kBceWithLogits: return "bce_with_logits";
    }
    return "?";
}

// (rows, cols) view of an N-D tensor with the last axis as columns.
std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
    if (s.empty()) return {1, 1};
    std::size_t cols = s.back();
    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
    return {rows, cols};
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kNormEps = 1e-12;
constexpr double kLayerNormEps = 1e-5;

}  // namespace

void ComputeGraph::check_id(NodeId id) const {
    if (id >= nodes_.size()) {
        throw std::invalid_argument("ComputeGraph: node id " + std::to_string(id) +
                                    " out of range");
    }
}

NodeId ComputeGraph::push(Node node) {
    for (NodeId in : node.inputs) check_id(in);
    nodes_.push_back(std::move(node));
    evaluated_ = false;
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId ComputeGraph::input(Shape shape) {
    NodeId id = push({OpKind::kInput, {}, std::move(shape), 0.0, -1, {}, {}, {}, {}, {}, false, false});
    leaves_.push_back(id);
    return id;
}

NodeId ComputeGraph::param(Shape shape) {
    NodeId id = push({OpKind::kParam, {}, std::move(shape), 0.0, -1, {}, {}, {}, {}, {}, false, false});
    leaves_.push_back(id);
    params_.push_back(id);
    return id;
}

NodeId ComputeGraph::constant(Tensor value) {
    Node n{OpKind::kConst, {}, value.shape(), 0.0, -1, {}, {}, {}, {}, {}, false, false};
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId ComputeGraph::binary_same_shape(OpKind op, NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    if (nodes_[a].shape != nodes_[b].shape) {
        throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " +
                                    shape_str(nodes_[a].shape) + " vs " +
                                    shape_str(nodes_[b].shape));
    }
    return push({op, {a, b}, nodes_[a].shape, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::add(NodeId a, NodeId b) { return binary_same_shape(OpKind::kAdd, a, b); }
NodeId ComputeGraph::sub(NodeId a, NodeId b) { return binary_same_shape(OpKind::kSub, a, b); }
NodeId ComputeGraph::mul(NodeId a, NodeId b) { return binary_same_shape(OpKind::kMul, a, b); }
NodeId ComputeGraph::mask_mul(NodeId x, NodeId mask) {
    return binary_same_shape(OpKind::kMaskMul, x, mask);
}

NodeId ComputeGraph::mul_bcast(NodeId x, NodeId y) {
    check_id(x);
    check_id(y);
    const Shape& xs = nodes_[x].shape;
    const Shape& ys = nodes_[y].shape;
    if (xs.empty() || Shape(xs.begin() + 1, xs.end()) != ys) {
        throw std::invalid_argument("mul_bcast: " + shape_str(ys) +
                                    " does not broadcast over " + shape_str(xs));
    }
    return push({OpKind::kMulBcast, {x, y}, xs, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::scale(NodeId x, double c) {
    check_id(x);
    return push({OpKind::kScale, {x}, nodes_[x].shape, c, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::add_bias(NodeId x, NodeId bias) {
    check_id(x);
    check_id(bias);
    const Shape& xs = nodes_[x].shape;
    const Shape& bs = nodes_[bias].shape;
    if (xs.empty() || bs.size() != 1 || bs[0] != xs.back()) {
        throw std::invalid_argument("add_bias: bias " + shape_str(bs) +
                                    " does not match last axis of " + shape_str(xs));
    }
    return push({OpKind::kAddBias, {x, bias}, xs, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::add_scalar(NodeId x, NodeId s) {
    check_id(x);
    check_id(s);
    if (numel(nodes_[s].shape) != 1) {
        throw std::invalid_argument("add_scalar: second operand must be scalar, got " +
                                    shape_str(nodes_[s].shape));
    }
    return push({OpKind::kAddScalar, {x, s}, nodes_[x].shape, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::matmul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Shape& as = nodes_[a].shape;
    const Shape& bs = nodes_[b].shape;
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(as) + " x " +
                                    shape_str(bs));
    }
    return push({OpKind::kMatMul, {a, b}, {as[0], bs[1]}, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::bmm(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Shape& as = nodes_[a].shape;
    const Shape& bs = nodes_[b].shape;
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) {
        throw std::invalid_argument("bmm: incompatible shapes " + shape_str(as) + " x " +
                                    shape_str(bs));
    }
    return push({OpKind::kBatchMatMul, {a, b}, {as[0], as[1], bs[2]}, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::permute(NodeId x, std::vector<int> perm) {
    check_id(x);
    const Shape& xs = nodes_[x].shape;
    if (perm.size() != xs.size()) {
        throw std::invalid_argument("permute: axis list size does not match rank");
    }
    std::vector<bool> seen(perm.size(), false);
    Shape out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        int p = perm[i];
        if (p < 0 || static_cast<std::size_t>(p) >= xs.size() || seen[p]) {
            throw std::invalid_argument("permute: invalid axis permutation");
        }
        seen[p] = true;
        out[i] = xs[p];
    }
    return push({OpKind::kPermute, {x}, std::move(out), 0.0, -1, std::move(perm), {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::transpose_last2(NodeId x) {
    check_id(x);
    std::size_t r = nodes_[x].shape.size();
    if (r < 2) throw std::invalid_argument("transpose_last2: rank must be >= 2");
    std::vector<int> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = static_cast<int>(i);
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(x, std::move(perm));
}

NodeId ComputeGraph::reshape(NodeId x, Shape shape) {
    check_id(x);
    if (numel(shape) != numel(nodes_[x].shape)) {
        throw std::invalid_argument("reshape: element count mismatch " +
                                    shape_str(nodes_[x].shape) + " -> " + shape_str(shape));
    }
    return push({OpKind::kReshape, {x}, std::move(shape), 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::unary(OpKind op, NodeId x) {
    check_id(x);
    return push({op, {x}, nodes_[x].shape, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::relu(NodeId x) { return unary(OpKind::kRelu, x); }
NodeId ComputeGraph::sigmoid(NodeId x) { return unary(OpKind::kSigmoid, x); }
NodeId ComputeGraph::square(NodeId x) { return unary(OpKind::kSquare, x); }
NodeId ComputeGraph::sqrt(NodeId x) { return unary(OpKind::kSqrt, x); }
NodeId ComputeGraph::l2_normalize_rows(NodeId x) { return unary(OpKind::kL2NormalizeRows, x); }
NodeId ComputeGraph::layer_norm_last(NodeId x) { return unary(OpKind::kLayerNormLast, x); }

NodeId ComputeGraph::softmax_last(NodeId x) {
    check_id(x);
    if (nodes_[x].shape.empty()) {
        throw std::invalid_argument("softmax_last: rank must be >= 1");
    }
    return unary(OpKind::kSoftmaxLast, x);
}

NodeId ComputeGraph::sum_all(NodeId x) {
    check_id(x);
    return push({OpKind::kSumAll, {x}, {}, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::mean_all(NodeId x) {
    check_id(x);
    return push({OpKind::kMeanAll, {x}, {}, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::sum_axis(NodeId x, int axis) {
    check_id(x);
    const Shape& xs = nodes_[x].shape;
    if (axis < 0 || static_cast<std::size_t>(axis) >= xs.size()) {
        throw std::invalid_argument("sum_axis: axis out of range");
    }
    Shape out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (static_cast<int>(i) != axis) out.push_back(xs[i]);
    }
    return push({OpKind::kSumAxis, {x}, std::move(out), 0.0, axis, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::concat_last(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Shape& as = nodes_[a].shape;
    const Shape& bs = nodes_[b].shape;
    if (as.empty() || as.size() != bs.size() ||
        !std::equal(as.begin(), as.end() - 1, bs.begin())) {
        throw std::invalid_argument("concat_last: incompatible shapes " + shape_str(as) +
                                    " and " + shape_str(bs));
    }
    Shape out = as;
    out.back() = as.back() + bs.back();
    return push({OpKind::kConcatLast, {a, b}, std::move(out), 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::gather(NodeId table, std::vector<std::uint32_t> rows) {
    check_id(table);
    const Shape& ts = nodes_[table].shape;
    if (ts.size() != 2) {
        throw std::invalid_argument("gather: table must be 2-D, got " + shape_str(ts));
    }
    for (std::uint32_t r : rows) {
        if (r >= ts[0]) {
            throw std::invalid_argument("gather: row index " + std::to_string(r) +
                                        " out of range for table " + shape_str(ts));
        }
    }
    Shape out{rows.size(), ts[1]};
    return push({OpKind::kGather, {table}, std::move(out), 0.0, -1, {}, std::move(rows), {}, {}, {}, false, false});
}

NodeId ComputeGraph::dropout(NodeId x, double rate) {
    check_id(x);
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    }
    return push({OpKind::kDropout, {x}, nodes_[x].shape, rate, -1, {}, {}, {}, {}, {}, false, false});
}

NodeId ComputeGraph::bce_with_logits(NodeId logits, NodeId labels) {
    check_id(logits);
    check_id(labels);
    if (nodes_[logits].shape != nodes_[labels].shape) {
        throw std::invalid_argument("bce_with_logits: shape mismatch");
    }
    return push({OpKind::kBceWithLogits, {logits, labels}, {}, 0.0, -1, {}, {}, {}, {}, {}, false, false});
}

void ComputeGraph::evaluate(const Bindings& bindings) {
    for (NodeId leaf : leaves_) {
        auto it = bindings.find(leaf);
        if (it == bindings.end()) {
            throw std::invalid_argument("evaluate: missing binding for node " +
                                        std::to_string(leaf));
        }
        if (it->second.shape() != nodes_[leaf].shape) {
            throw std::invalid_argument("evaluate: binding shape " +
                                        shape_str(it->second.shape()) +
                                        " does not match declared " +
                                        shape_str(nodes_[leaf].shape) + " for node " +
                                        std::to_string(leaf));
        }
        nodes_[leaf].value = it->second;
        nodes_[leaf].has_value = true;
    }
    for (NodeId id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        n.has_adjoint = false;
        if (n.op == OpKind::kInput || n.op == OpKind::kParam) continue;
        forward_node(id);
        if (!n.value.all_finite()) {
            throw std::runtime_error(std::string("evaluate: non-finite value in ") +
                                     op_name(n.op) + " node " + std::to_string(id));
        }
        n.has_value = true;
    }
    evaluated_ = true;
}

void ComputeGraph::forward_node(NodeId id) {
    Node& n = nodes_[id];
    auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

    switch (n.op) {
        case OpKind::kInput:
        case OpKind::kParam:
        case OpKind::kConst:
            return;
        case OpKind::kAdd: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
            n.value = std::move(out);
            return;
        }
        case OpKind::kSub: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
            n.value = std::move(out);
            return;
        }
        case OpKind::kMul:
        case OpKind::kMaskMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
            n.value = std::move(out);
            return;
        }
        case OpKind::kMulBcast: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            std::size_t inner = y.size();
            Tensor out(n.shape);
            for (std::size_t b = 0; b < n.shape[0]; ++b) {
                const double* xb = x.data() + b * inner;
                double* ob = out.data() + b * inner;
                for (std::size_t i = 0; i < inner; ++i) ob[i] = xb[i] * y[i];
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kScale: {
            const Tensor& x = in(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * n.attr;
            n.value = std::move(out);
            return;
        }
        case OpKind::kAddBias: {
            const Tensor& x = in(0);
            const Tensor& b = in(1);
            auto [rows, cols] = rows_cols(n.shape);
            Tensor out(n.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * cols;
                double* orow = out.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) orow[c] = xr[c] + b[c];
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kAddScalar: {
            const Tensor& x = in(0);
            double s = in(1)[0];
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
            n.value = std::move(out);
            return;
        }
        case OpKind::kMatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            std::size_t nn = a.shape()[0], kk = a.shape()[1], mm = b.shape()[1];
            Tensor out(n.shape);
            for (std::size_t i = 0; i < nn; ++i) {
                double* orow = out.data() + i * mm;
                const double* arow = a.data() + i * kk;
                for (std::size_t k = 0; k < kk; ++k) {
                    double av = arow[k];
                    if (av == 0.0) continue;
                    const double* brow = b.data() + k * mm;
                    for (std::size_t j = 0; j < mm; ++j) orow[j] += av * brow[j];
                }
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kBatchMatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            std::size_t bs = a.shape()[0], nn = a.shape()[1], kk = a.shape()[2], mm = b.shape()[2];
            Tensor out(n.shape);
            for (std::size_t bi = 0; bi < bs; ++bi) {
                const double* ab = a.data() + bi * nn * kk;
                const double* bb = b.data() + bi * kk * mm;
                double* ob = out.data() + bi * nn * mm;
                for (std::size_t i = 0; i < nn; ++i) {
                    double* orow = ob + i * mm;
                    const double* arow = ab + i * kk;
                    for (std::size_t k = 0; k < kk; ++k) {
                        double av = arow[k];
                        const double* brow = bb + k * mm;
                        for (std::size_t j = 0; j < mm; ++j) orow[j] += av * brow[j];
                    }
                }
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kPermute: {
            const Tensor& x = in(0);
            const Shape& xs = x.shape();
            auto in_strides = strides_of(xs);
            std::size_t r = xs.size();
            Tensor out(n.shape);
            std::vector<std::size_t> idx(r, 0);
            for (std::size_t flat = 0; flat < out.size(); ++flat) {
                std::size_t src = 0;
                for (std::size_t d = 0; d < r; ++d) src += idx[d] * in_strides[n.perm[d]];
                out[flat] = x[src];
                for (std::size_t d = r; d-- > 0;) {
                    if (++idx[d] < n.shape[d]) break;
                    idx[d] = 0;
                }
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kReshape: {
            n.value = Tensor(n.shape, std::vector<double>(in(0).values().begin(),
                                                          in(0).values().end()));
            return;
        }
        case OpKind::kRelu: {
            const Tensor& x = in(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
            n.value = std::move(out);
            return;
        }
        case OpKind::kSigmoid: {
            const Tensor& x = in(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_stable(x[i]);
            n.value = std::move(out);
            return;
        }
        case OpKind::kSoftmaxLast: {
            const Tensor& x = in(0);
            auto [rows, cols] = rows_cols(n.shape);
            Tensor out(n.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * cols;
                double* orow = out.data() + r * cols;
                double mx = xr[0];
                for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
                double sum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    orow[c] = std::exp(xr[c] - mx);
                    sum += orow[c];
                }
                for (std::size_t c = 0; c < cols; ++c) orow[c] /= sum;
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kSquare: {
            const Tensor& x = in(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
            n.value = std::move(out);
            return;
        }
        case OpKind::kSqrt: {
            const Tensor& x = in(0);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x[i]);
            n.value = std::move(out);
            return;
        }
        case OpKind::kSumAll: {
            const Tensor& x = in(0);
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
            n.value = Tensor::scalar(s);
            return;
        }
        case OpKind::kMeanAll: {
            const Tensor& x = in(0);
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
            n.value = Tensor::scalar(s / static_cast<double>(x.size()));
            return;
        }
        case OpKind::kSumAxis: {
            const Tensor& x = in(0);
            const Shape& xs = x.shape();
            std::size_t axis = static_cast<std::size_t>(n.axis);
            std::size_t outer = 1, inner = 1, len = xs[axis];
            for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
            for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
            Tensor out(n.shape);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* xo = x.data() + o * len * inner;
                double* oo = out.data() + o * inner;
                for (std::size_t l = 0; l < len; ++l) {
                    const double* xl = xo + l * inner;
                    for (std::size_t i = 0; i < inner; ++i) oo[i] += xl[i];
                }
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kConcatLast: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            std::size_t ca = a.shape().back(), cb = b.shape().back();
            auto [rows, cols] = rows_cols(n.shape);
            Tensor out(n.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                double* orow = out.data() + r * cols;
                std::copy_n(a.data() + r * ca, ca, orow);
                std::copy_n(b.data() + r * cb, cb, orow + ca);
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kGather: {
            const Tensor& t = in(0);
            std::size_t cols = t.shape()[1];
            Tensor out(n.shape);
            for (std::size_t i = 0; i < n.indices.size(); ++i) {
                std::copy_n(t.data() + static_cast<std::size_t>(n.indices[i]) * cols, cols,
                            out.data() + i * cols);
            }
            n.value = std::move(out);
            return;
        }
        case OpKind::kDropout: {
            const Tensor& x = in(0);
            if (!training_ || n.attr == 0.0) {
                n.value = x;
                n.aux = Tensor();
                return;
            }
            double keep = 1.0 - n.attr;
            RngStream rng = derive_stream(dropout_seed_, "dropout-node", id);
            Tensor mask(n.shape);
            Tensor out(n.shape);
            for (std::size_t i = 0; i < out.size(); ++i) {
                double m = rng.uniform() < keep ? 1.0 / keep : 0.0;
                mask[i] = m;
                out[i] = x[i] * m;
            }
            n.aux = std::move(mask);
            n.value = std::move(out);
            return;
        }
        case OpKind::kL2NormalizeRows: {
            const Tensor& x = in(0);
            auto [rows, cols] = rows_cols(n.shape);
            Tensor out(n.shape);
            Tensor norms(Shape{rows});
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * cols;
                double* orow = out.data() + r * cols;
                double sq = 0.0;
                for (std::size_t c = 0; c < cols; ++c) sq += xr[c] * xr[c];
                double norm = std::sqrt(sq);
                norms[r] = norm;
                if (norm > kNormEps) {
                    for (std::size_t c = 0; c < cols; ++c) orow[c] = xr[c] / norm;
                }
            }
            n.aux = std::move(norms);
            n.value = std::move(out);
            return;
        }
        case OpKind::kLayerNormLast: {
            const Tensor& x = in(0);
            auto [rows, cols] = rows_cols(n.shape);
            Tensor out(n.shape);
            Tensor stats(Shape{rows, 2});
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * cols;
                double* orow = out.data() + r * cols;
                double mean = 0.0;
                for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
                mean /= static_cast<double>(cols);
                double var = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    double d = xr[c] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                for (std::size_t c = 0; c < cols; ++c) orow[c] = (xr[c] - mean) * inv;
                stats[r * 2] = mean;
                stats[r * 2 + 1] = inv;
            }
            n.aux = std::move(stats);
            n.value = std::move(out);
            return;
        }
        case OpKind::kBceWithLogits: {
            const Tensor& z = in(0);
            const Tensor& y = in(1);
            double sum = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                sum += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
            }
            n.value = Tensor::scalar(sum / static_cast<double>(z.size()));
            return;
        }
    }
}

const Tensor& ComputeGraph::value(NodeId id) const {
    check_id(id);
    if (!nodes_[id].has_value) {
        throw std::runtime_error("value: node " + std::to_string(id) + " not evaluated");
    }
    return nodes_[id].value;
}

Tensor& ComputeGraph::adjoint_slot(NodeId id) {
    Node& n = nodes_[id];
    if (!n.has_adjoint) {
        n.adjoint = Tensor(n.shape);
        n.has_adjoint = true;
    }
    return n.adjoint;
}

void ComputeGraph::accumulate(NodeId id, const Tensor& g) {
    Tensor& a = adjoint_slot(id);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
}

void ComputeGraph::backward(NodeId loss) {
    check_id(loss);
    if (!evaluated_) {
        throw std::runtime_error("backward: forward values missing; call evaluate first");
    }
    if (numel(nodes_[loss].shape) != 1) {
        throw std::invalid_argument("backward: loss node must be scalar, got " +
                                    shape_str(nodes_[loss].shape));
    }
    for (Node& n : nodes_) n.has_adjoint = false;
    adjoint_slot(loss)[0] = 1.0;
    for (NodeId id = static_cast<NodeId>(nodes_.size()); id-- > 0;) {
        if (!nodes_[id].has_adjoint) continue;
        backward_node(id);
    }
    // Every parameter carries an adjoint afterwards, even if disconnected.
    for (NodeId p : params_) adjoint_slot(p);
}

void ComputeGraph::backward_node(NodeId id) {
    Node& n = nodes_[id];
    const Tensor& g = n.adjoint;
    auto inval = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

    switch (n.op) {
        case OpKind::kInput:
        case OpKind::kParam:
        case OpKind::kConst:
            return;
        case OpKind::kAdd: {
            accumulate(n.inputs[0], g);
            accumulate(n.inputs[1], g);
            return;
        }
        case OpKind::kSub: {
            accumulate(n.inputs[0], g);
            Tensor& b = adjoint_slot(n.inputs[1]);
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= g[i];
            return;
        }
        case OpKind::kMul: {
            const Tensor& a = inval(0);
            const Tensor& b = inval(1);
            Tensor& da = adjoint_slot(n.inputs[0]);
            Tensor& db = adjoint_slot(n.inputs[1]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * b[i];
                db[i] += g[i] * a[i];
            }
            return;
        }
        case OpKind::kMaskMul: {
            const Tensor& mask = inval(1);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
            return;
        }
        case OpKind::kMulBcast: {
            const Tensor& x = inval(0);
            const Tensor& y = inval(1);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            Tensor& dy = adjoint_slot(n.inputs[1]);
            std::size_t inner = y.size();
            for (std::size_t b = 0; b < n.shape[0]; ++b) {
                const double* gb = g.data() + b * inner;
                const double* xb = x.data() + b * inner;
                double* dxb = dx.data() + b * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    dxb[i] += gb[i] * y[i];
                    dy[i] += gb[i] * xb[i];
                }
            }
            return;
        }
        case OpKind::kScale: {
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * n.attr;
            return;
        }
        case OpKind::kAddBias: {
            accumulate(n.inputs[0], g);
            Tensor& db = adjoint_slot(n.inputs[1]);
            auto [rows, cols] = rows_cols(n.shape);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) db[c] += gr[c];
            }
            return;
        }
        case OpKind::kAddScalar: {
            accumulate(n.inputs[0], g);
            Tensor& ds = adjoint_slot(n.inputs[1]);
            double s = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
            ds[0] += s;
            return;
        }
        case OpKind::kMatMul: {
            const Tensor& a = inval(0);
            const Tensor& b = inval(1);
            std::size_t nn = a.shape()[0], kk = a.shape()[1], mm = b.shape()[1];
            Tensor& da = adjoint_slot(n.inputs[0]);
            Tensor& db = adjoint_slot(n.inputs[1]);
            // dA = g * B^T
            for (std::size_t i = 0; i < nn; ++i) {
                const double* gr = g.data() + i * mm;
                double* dar = da.data() + i * kk;
                for (std::size_t k = 0; k < kk; ++k) {
                    const double* br = b.data() + k * mm;
                    double s = 0.0;
                    for (std::size_t j = 0; j < mm; ++j) s += gr[j] * br[j];
                    dar[k] += s;
                }
            }
            // dB = A^T * g
            for (std::size_t i = 0; i < nn; ++i) {
                const double* ar = a.data() + i * kk;
                const double* gr = g.data() + i * mm;
                for (std::size_t k = 0; k < kk; ++k) {
                    double av = ar[k];
                    if (av == 0.0) continue;
                    double* dbr = db.data() + k * mm;
                    for (std::size_t j = 0; j < mm; ++j) dbr[j] += av * gr[j];
                }
            }
            return;
        }
        case OpKind::kBatchMatMul: {
            const Tensor& a = inval(0);
            const Tensor& b = inval(1);
            std::size_t bs = a.shape()[0], nn = a.shape()[1], kk = a.shape()[2], mm = b.shape()[2];
            Tensor& da = adjoint_slot(n.inputs[0]);
            Tensor& db = adjoint_slot(n.inputs[1]);
            for (std::size_t bi = 0; bi < bs; ++bi) {
                const double* ab = a.data() + bi * nn * kk;
                const double* bb = b.data() + bi * kk * mm;
                const double* gb = g.data() + bi * nn * mm;
                double* dab = da.data() + bi * nn * kk;
                double* dbb = db.data() + bi * kk * mm;
                for (std::size_t i = 0; i < nn; ++i) {
                    const double* gr = gb + i * mm;
                    double* dar = dab + i * kk;
                    const double* ar = ab + i * kk;
                    for (std::size_t k = 0; k < kk; ++k) {
                        const double* br = bb + k * mm;
                        double s = 0.0;
                        for (std::size_t j = 0; j < mm; ++j) s += gr[j] * br[j];
                        dar[k] += s;
                        double av = ar[k];
                        double* dbr = dbb + k * mm;
                        for (std::size_t j = 0; j < mm; ++j) dbr[j] += av * gr[j];
                    }
                }
            }
            return;
        }
        case OpKind::kPermute: {
            const Shape& xs = nodes_[n.inputs[0]].shape;
            auto in_strides = strides_of(xs);
            std::size_t r = xs.size();
            Tensor& dx = adjoint_slot(n.inputs[0]);
            std::vector<std::size_t> idx(r, 0);
            for (std::size_t flat = 0; flat < g.size(); ++flat) {
                std::size_t src = 0;
                for (std::size_t d = 0; d < r; ++d) src += idx[d] * in_strides[n.perm[d]];
                dx[src] += g[flat];
                for (std::size_t d = r; d-- > 0;) {
                    if (++idx[d] < n.shape[d]) break;
                    idx[d] = 0;
                }
            }
            return;
        }
        case OpKind::kReshape: {
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            return;
        }
        case OpKind::kRelu: {
            const Tensor& x = inval(0);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x[i] > 0.0) dx[i] += g[i];
            }
            return;
        }
        case OpKind::kSigmoid: {
            const Tensor& y = n.value;
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
            return;
        }
        case OpKind::kSoftmaxLast: {
            const Tensor& y = n.value;
            auto [rows, cols] = rows_cols(n.shape);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * cols;
                const double* gr = g.data() + r * cols;
                double* dxr = dx.data() + r * cols;
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                for (std::size_t c = 0; c < cols; ++c) dxr[c] += yr[c] * (gr[c] - dot);
            }
            return;
        }
        case OpKind::kSquare: {
            const Tensor& x = inval(0);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += 2.0 * x[i] * g[i];
            return;
        }
        case OpKind::kSqrt: {
            const Tensor& y = n.value;
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / (2.0 * y[i]);
            return;
        }
        case OpKind::kSumAll: {
            Tensor& dx = adjoint_slot(n.inputs[0]);
            double gv = g[0];
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
            return;
        }
        case OpKind::kMeanAll: {
            Tensor& dx = adjoint_slot(n.inputs[0]);
            double gv = g[0] / static_cast<double>(dx.size());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gv;
            return;
        }
        case OpKind::kSumAxis: {
            const Shape& xs = nodes_[n.inputs[0]].shape;
            std::size_t axis = static_cast<std::size_t>(n.axis);
            std::size_t outer = 1, inner = 1, len = xs[axis];
            for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
            for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t o = 0; o < outer; ++o) {
                const double* go = g.data() + o * inner;
                double* dxo = dx.data() + o * len * inner;
                for (std::size_t l = 0; l < len; ++l) {
                    double* dxl = dxo + l * inner;
                    for (std::size_t i = 0; i < inner; ++i) dxl[i] += go[i];
                }
            }
            return;
        }
        case OpKind::kConcatLast: {
            std::size_t ca = nodes_[n.inputs[0]].shape.back();
            std::size_t cb = nodes_[n.inputs[1]].shape.back();
            auto [rows, cols] = rows_cols(n.shape);
            Tensor& da = adjoint_slot(n.inputs[0]);
            Tensor& db = adjoint_slot(n.inputs[1]);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                double* dar = da.data() + r * ca;
                double* dbr = db.data() + r * cb;
                for (std::size_t c = 0; c < ca; ++c) dar[c] += gr[c];
                for (std::size_t c = 0; c < cb; ++c) dbr[c] += gr[ca + c];
            }
            return;
        }
        case OpKind::kGather: {
            std::size_t cols = nodes_[n.inputs[0]].shape[1];
            Tensor& dt = adjoint_slot(n.inputs[0]);
            for (std::size_t i = 0; i < n.indices.size(); ++i) {
                double* drow = dt.data() + static_cast<std::size_t>(n.indices[i]) * cols;
                const double* gr = g.data() + i * cols;
                for (std::size_t c = 0; c < cols; ++c) drow[c] += gr[c];
            }
            return;
        }
        case OpKind::kDropout: {
            Tensor& dx = adjoint_slot(n.inputs[0]);
            if (n.aux.size() == 0) {
                for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            } else {
                const Tensor& mask = n.aux;
                for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
            }
            return;
        }
        case OpKind::kL2NormalizeRows: {
            const Tensor& u = n.value;
            const Tensor& norms = n.aux;
            auto [rows, cols] = rows_cols(n.shape);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                double norm = norms[r];
                if (norm <= kNormEps) continue;
                const double* ur = u.data() + r * cols;
                const double* gr = g.data() + r * cols;
                double* dxr = dx.data() + r * cols;
                double dot = 0.0;
                for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * ur[c];
                for (std::size_t c = 0; c < cols; ++c) dxr[c] += (gr[c] - dot * ur[c]) / norm;
            }
            return;
        }
        case OpKind::kLayerNormLast: {
            const Tensor& y = n.value;
            const Tensor& stats = n.aux;
            auto [rows, cols] = rows_cols(n.shape);
            double inv_cols = 1.0 / static_cast<double>(cols);
            Tensor& dx = adjoint_slot(n.inputs[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                double inv = stats[r * 2 + 1];
                const double* yr = y.data() + r * cols;
                const double* gr = g.data() + r * cols;
                double* dxr = dx.data() + r * cols;
                double gmean = 0.0, gymean = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    gmean += gr[c];
                    gymean += gr[c] * yr[c];
                }
                gmean *= inv_cols;
                gymean *= inv_cols;
                for (std::size_t c = 0; c < cols; ++c) {
                    dxr[c] += inv * (gr[c] - gmean - yr[c] * gymean);
                }
            }
            return;
        }
        case OpKind::kBceWithLogits: {
            const Tensor& z = inval(0);
            const Tensor& y = inval(1);
            double gv = g[0] / static_cast<double>(z.size());
            Tensor& dz = adjoint_slot(n.inputs[0]);
            Tensor& dy = adjoint_slot(n.inputs[1]);
            for (std::size_t i = 0; i < z.size(); ++i) {
                dz[i] += gv * (sigmoid_stable(z[i]) - y[i]);
                dy[i] += gv * (-z[i]);
            }
            return;
        }
    }
}

const Tensor& ComputeGraph::adjoint(NodeId id) const {
    check_id(id);
    if (!nodes_[id].has_adjoint) {
        throw std::runtime_error("adjoint: node " + std::to_string(id) +
                                 " has no adjoint; call backward first");
    }
    return nodes_[id].adjoint;
}

std::unordered_map<NodeId, Tensor> ComputeGraph::param_adjoints() const {
    std::unordered_map<NodeId, Tensor> out;
    for (NodeId p : params_) out.emplace(p, adjoint(p));
    return out;
}

double ComputeGraph::finite_difference_check(const Bindings& bindings, NodeId loss,
                                             NodeId param, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_difference_check: eps must be > 0");
    check_id(param);
    evaluate(bindings);
    if (numel(nodes_[loss].shape) != 1) {
        throw std::invalid_argument("finite_difference_check: loss must be scalar");
    }
    backward(loss);
    Tensor analytic = adjoint(param);

    Bindings perturbed = bindings;
    auto pit = perturbed.find(param);
    if (pit == perturbed.end()) {
        throw std::invalid_argument("finite_difference_check: param node " +
                                    std::to_string(param) + " is not bound");
    }
    Tensor& p = pit->second;
    double max_err = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double orig = p[i];
        p[i] = orig + eps;
        evaluate(perturbed);
        double up = value(loss).item();
        p[i] = orig - eps;
        evaluate(perturbed);
        double down = value(loss).item();
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::runtime_error("finite_difference_check: non-finite perturbation result");
        }
        double fd = (up - down) / (2.0 * eps);
        double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    // Restore unperturbed forward/backward state.
    evaluate(bindings);
    backward(loss);
    return max_err;
}

}  // namespace cl4ctr
