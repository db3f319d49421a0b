#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cl4ctr/graph.hpp"
#include "cl4ctr/tensor.hpp"

namespace cl4ctr {

// Named persistent parameter tensors. Slots are keyed by a dotted path such
// as "fm.linear" or "encoder.layer0.wq"; std::map keeps iteration order
// stable for checkpoints and reports.
class ParamSet {
public:
    Tensor& create(const std::string& name, Shape shape) {
        auto [it, inserted] = slots_.emplace(name, Tensor(std::move(shape)));
        if (!inserted) {
            throw std::invalid_argument("ParamSet: slot '" + name + "' already exists");
        }
        return it->second;
    }

    bool has(const std::string& name) const { return slots_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = slots_.find(name);
        if (it == slots_.end()) {
            throw std::invalid_argument("ParamSet: no slot named '" + name + "'");
        }
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = slots_.find(name);
        if (it == slots_.end()) {
            throw std::invalid_argument("ParamSet: no slot named '" + name + "'");
        }
        return it->second;
    }

    const std::map<std::string, Tensor>& slots() const { return slots_; }
    std::map<std::string, Tensor>& slots() { return slots_; }
    std::size_t size() const { return slots_.size(); }

private:
    std::map<std::string, Tensor> slots_;
};

// Per-graph view of a ParamSet. Graphs are rebuilt every batch, so parameter
// node ids change while the underlying tensors persist; this maps slot names
// to the current graph's param nodes and assembles leaf bindings.
class GraphParams {
public:
    GraphParams(ComputeGraph& graph, const ParamSet& params)
        : graph_(graph), params_(params) {}

    // Param node for a slot, created on first use.
    NodeId operator[](const std::string& name) {
        auto it = nodes_.find(name);
        if (it != nodes_.end()) return it->second;
        NodeId id = graph_.param(params_.at(name).shape());
        nodes_.emplace(name, id);
        return id;
    }

    bool used(const std::string& name) const { return nodes_.count(name) != 0; }

    // Current values of every slot touched so far, keyed by node id. Merge
    // into the batch bindings before evaluate().
    void bind_into(Bindings& bindings) const {
        for (const auto& [name, id] : nodes_) {
            bindings.emplace(id, params_.at(name));
        }
    }

    const std::map<std::string, NodeId>& nodes() const { return nodes_; }
    const ParamSet& set() const { return params_; }

private:
    ComputeGraph& graph_;
    const ParamSet& params_;
    std::map<std::string, NodeId> nodes_;
};

}  // namespace cl4ctr
