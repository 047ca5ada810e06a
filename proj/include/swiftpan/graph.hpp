#pragma once

#include "swiftpan/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swiftpan {

struct ParamEntry {
    std::string name;
    Tensor value;
    bool trainable = true;

    std::size_t scalar_count() const { return value.numel(); }
};

// Ordered, uniquely named parameter tensors. Order is insertion order and is
// the canonical order for serialization, tie-breaking and reports.
class ParamRegistry {
public:
    std::size_t add(std::string name, Tensor value);

    std::size_t size() const { return entries_.size(); }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    ParamEntry& operator[](std::size_t i) { return entries_.at(i); }
    const ParamEntry& operator[](std::size_t i) const { return entries_.at(i); }

    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;  // throws ConfigError

    std::size_t total_scalars() const;
    std::size_t trainable_scalars() const;
    std::vector<std::string> names() const;

    void set_all_trainable(bool trainable);

    // True when names, dims and payloads all match bitwise.
    bool identical(const ParamRegistry& other) const;

private:
    std::vector<ParamEntry> entries_;
};

using NodeId = int;
using Feed = std::map<std::string, Tensor, std::less<>>;

enum class OpKind { Input, Param, Conv2d, Relu, Add, Sub, Mul, Concat, Mean, L1Loss };

std::string op_name(OpKind kind);

// Static computation graph over a fixed op vocabulary. Nodes are stored in
// insertion order, which is a valid topological order since every op may only
// reference earlier nodes. Activation tensors are [N,C,H,W]; conv2d is
// stride 1 with symmetric zero padding; mean and l1_loss reduce to shape [1].
class Graph {
public:
    NodeId input(std::string name);
    NodeId param(std::string name, Tensor init);
    NodeId conv2d(NodeId x, NodeId weight, NodeId bias, int padding);
    NodeId relu(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId concat(std::vector<NodeId> xs);  // along the channel axis
    NodeId mean(NodeId x);
    NodeId l1_loss(NodeId pred, NodeId target);

    // Evaluates nodes 0..target in order and returns the target value.
    // Inputs not needed for the evaluated prefix may be omitted.
    const Tensor& forward(const Feed& inputs, NodeId target);
    const Tensor& forward(const Feed& inputs) { return forward(inputs, last()); }

    // Reverse pass from a scalar node evaluated by the latest forward.
    // Populates a gradient for every parameter (zeros where unreachable or
    // not trainable). Gradients are overwritten, not accumulated.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const;
    const Tensor& grad(std::size_t param_index) const;
    const Tensor& grad(const std::string& param_name) const;
    std::map<std::string, Tensor> gradients() const;

    void clear_cache();

    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }
    std::size_t node_count() const { return nodes_.size(); }
    NodeId last() const { return static_cast<NodeId>(nodes_.size()) - 1; }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }

private:
    struct Node {
        OpKind kind;
        std::vector<NodeId> in;
        std::string name;     // input name
        std::size_t param = 0;  // registry index for Param nodes
        int padding = 0;
    };

    NodeId push(Node node);
    void check_ref(NodeId id, const char* op) const;
    const Tensor& val(NodeId id) const;
    void eval(NodeId id, const Feed& inputs);
    std::vector<bool> grad_needed(NodeId loss) const;

    std::vector<Node> nodes_;
    ParamRegistry params_;
    std::vector<Tensor> values_;
    std::vector<Tensor> param_grads_;
    NodeId evaluated_upto_ = -1;
    bool have_grads_ = false;
};

}  // namespace swiftpan
