#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tvm/tensor.hpp"

namespace tvm {

struct UnregisteredJvpError : TvmError {
    explicit UnregisteredJvpError(const std::string& op)
        : TvmError("no forward-mode rule registered for op '" + op + "'") {}
};

class Node;
using NodePtr = std::shared_ptr<Node>;

// One node in the reverse-mode graph. `tangent` optionally points at the
// node holding this value's forward-mode derivative; tangent nodes are
// ordinary graph nodes, so a later reverse pass can differentiate through
// them. The primal->tangent links are cleared when a jvp region closes
// (they are only needed while the region is being built, and they would
// otherwise form ownership cycles with rules like exp whose tangent
// references the primal output).
class Node {
  public:
    Tensor value;
    NodePtr tangent;
    std::vector<NodePtr> parents;
    std::string op_name;
    bool requires_grad = false;
    // Set on nodes (like a fused kernel's tangent output) whose own tangent
    // cannot be derived; consuming them inside another jvp region is an error
    // rather than a silent zero.
    bool no_higher_tangent = false;
    int64_t id = 0;

    // Numeric reverse rule: maps the output gradient to per-parent gradients
    // (empty tensor means "no gradient for this parent").
    std::function<std::vector<Tensor>(const Node&, const Tensor&)> vjp;

    // Scratch used by backward().
    Tensor grad;
    bool has_grad = false;
};

// Value-semantic handle over a graph node.
class Var {
  public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    const Tensor& value() const { return node().value; }
    const Shape& shape() const { return node().value.shape(); }
    bool defined() const { return static_cast<bool>(n_); }
    bool has_tangent() const { return defined() && node().tangent != nullptr; }
    Var tangent() const { return Var(node().tangent); }

    Node& node() const {
        if (!n_) throw TvmError("use of undefined Var");
        return *n_;
    }
    const NodePtr& ptr() const { return n_; }

    // Gradient recorded by the last backward() that reached this node.
    const Tensor& grad() const;

  private:
    NodePtr n_;
};

Var make_constant(Tensor v);
Var make_leaf(Tensor v);  // participates in reverse mode

// Attaches `tangent` to an existing node (used by jvp to seed inputs).
void set_tangent(const Var& v, const Var& tangent);

// Runs reverse mode from a scalar loss, filling node.grad on every reachable
// node that requires grad. Throws on non-scalar loss.
void backward_through(const Var& loss);

// Forward-mode differentiation with reverse-capable outputs: runs f on
// constant inputs carrying the given tangents and returns (primal,
// directional derivative). Both returned values remain valid reverse-mode
// citizens. Inputs and tangents must match in count and shape.
std::pair<Var, Var> jvp(const std::function<Var(const std::vector<Var>&)>& f,
                        const std::vector<Tensor>& inputs,
                        const std::vector<Tensor>& tangents);

// Internal: drop primal->tangent links on everything reachable from the
// given roots. Exposed for composite jvp-style drivers.
void clear_tangent_links(const std::vector<Var>& roots);

namespace graph_detail {
NodePtr new_node(Tensor value, std::vector<NodePtr> parents, std::string op_name);
}  // namespace graph_detail

}  // namespace tvm
