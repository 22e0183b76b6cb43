#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "femseg/core/error.hpp"
#include "femseg/core/tensor.hpp"

namespace femseg::ad {

struct NodeId {
    int index = -1;
    bool valid() const { return index >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks them once in reverse.
// A tape is confined to one thread; the kernels inside an op may fan out.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad; // allocated on first accumulation
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward; // empty for leaves/constants
    };

    NodeId leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    NodeId constant(Tensor<T> value) { return leaf(std::move(value), false); }

    NodeId emplace(Tensor<T> value, bool requires_grad, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return {int(nodes_.size()) - 1};
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[size_t(id.index)].value; }
    Tensor<T>& value(NodeId id) { return nodes_[size_t(id.index)].value; }

    bool requires_grad(NodeId id) const { return nodes_[size_t(id.index)].requires_grad; }

    // Gradient buffer, zero-initialized on first access. Valid after backward();
    // parameters off the loss path keep their zeros.
    Tensor<T>& grad(NodeId id) {
        Node& n = nodes_[size_t(id.index)];
        if (!n.has_grad) {
            n.grad = Tensor<T>(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    bool has_grad(NodeId id) const { return nodes_[size_t(id.index)].has_grad; }

    // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
    void backward(NodeId loss) {
        FEMSEG_REQUIRE(loss.valid() && loss.index < int(nodes_.size()), "backward: invalid node");
        FEMSEG_REQUIRE(value(loss).numel() == 1,
                       "backward: loss must be scalar, got " + shape_str(value(loss).shape));
        grad(loss)[0] = T(1);
        for (int i = loss.index; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.requires_grad && n.has_grad && n.backward) n.backward(*this, i);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

} // namespace femseg::ad
