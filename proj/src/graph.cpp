#include "tvm/graph.hpp"

#include <algorithm>
#include <unordered_set>

namespace tvm {

namespace {
int64_t g_next_id = 1;  // graph construction is single-threaded per step
}

namespace graph_detail {
NodePtr new_node(Tensor value, std::vector<NodePtr> parents, std::string op_name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op_name = std::move(op_name);
    n->id = g_next_id++;
    for (const auto& p : n->parents)
        if (p && p->requires_grad) n->requires_grad = true;
    return n;
}
}  // namespace graph_detail

const Tensor& Var::grad() const {
    Node& n = node();
    if (!n.has_grad)
        throw TvmError("no gradient recorded on node '" + n.op_name + "'");
    return n.grad;
}

Var make_constant(Tensor v) {
    return Var(graph_detail::new_node(std::move(v), {}, "constant"));
}

Var make_leaf(Tensor v) {
    auto n = graph_detail::new_node(std::move(v), {}, "leaf");
    n->requires_grad = true;
    return Var(n);
}

void set_tangent(const Var& v, const Var& tangent) {
    if (!v.value().same_shape(tangent.value()))
        throw TvmError("tangent shape " + shape_str(tangent.shape()) +
                       " does not match value shape " + shape_str(v.shape()));
    v.node().tangent = tangent.ptr();
}

void backward_through(const Var& loss) {
    if (loss.value().size() != 1)
        throw TvmError("backward requires a scalar loss, got shape " +
                       shape_str(loss.shape()));

    // Collect the reachable grad-bearing subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{&loss.node()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || seen.count(n)) continue;
        seen.insert(n);
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p) stack.push_back(p.get());
    }
    for (Node* n : order) {
        n->has_grad = false;
        n->grad = Tensor();
    }
    if (!loss.node().requires_grad) return;  // loss is constant w.r.t. everything

    // Node ids are assigned monotonically at construction, so descending id
    // is a valid reverse topological order.
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    loss.node().grad = Tensor::full(loss.shape(), 1.0);
    loss.node().has_grad = true;

    for (Node* n : order) {
        if (!n->has_grad || !n->vjp) continue;
        std::vector<Tensor> pgrads = n->vjp(*n, n->grad);
        if (pgrads.size() != n->parents.size())
            throw TvmError("vjp of '" + n->op_name + "' returned wrong arity");
        for (size_t i = 0; i < pgrads.size(); ++i) {
            Node* p = n->parents[i].get();
            if (!p || !p->requires_grad || pgrads[i].size() == 0) continue;
            if (!pgrads[i].same_shape(p->value))
                throw TvmError("vjp of '" + n->op_name + "' produced gradient " +
                               shape_str(pgrads[i].shape()) + " for parent of shape " +
                               shape_str(p->value.shape()));
            if (!p->has_grad) {
                p->grad = std::move(pgrads[i]);
                p->has_grad = true;
            } else {
                double* dst = p->grad.data();
                const double* src = pgrads[i].data();
                const int64_t m = p->grad.size();
                for (int64_t j = 0; j < m; ++j) dst[j] += src[j];
            }
        }
    }
}

void clear_tangent_links(const std::vector<Var>& roots) {
    std::unordered_set<Node*> seen;
    std::vector<NodePtr> alive;  // keeps detached tangent chains valid mid-walk
    std::vector<Node*> stack;
    for (const auto& r : roots)
        if (r.defined()) stack.push_back(&r.node());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (seen.count(n)) continue;
        seen.insert(n);
        if (n->tangent) {
            alive.push_back(n->tangent);
            stack.push_back(n->tangent.get());
            n->tangent.reset();
        }
        for (const auto& p : n->parents)
            if (p) stack.push_back(p.get());
    }
}

std::pair<Var, Var> jvp(const std::function<Var(const std::vector<Var>&)>& f,
                        const std::vector<Tensor>& inputs,
                        const std::vector<Tensor>& tangents) {
    if (inputs.size() != tangents.size())
        throw TvmError("jvp: " + std::to_string(inputs.size()) + " inputs but " +
                       std::to_string(tangents.size()) + " tangents");
    std::vector<Var> in_vars;
    in_vars.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].same_shape(tangents[i]))
            throw TvmError("jvp: tangent " + std::to_string(i) + " has shape " +
                           shape_str(tangents[i].shape()) + ", input has " +
                           shape_str(inputs[i].shape()));
        Var v = make_constant(inputs[i]);
        // An absent tangent already means zero; skipping the attachment keeps
        // dead zero branches out of the tangent graph.
        bool nonzero = false;
        for (int64_t j = 0; j < tangents[i].size() && !nonzero; ++j)
            if (tangents[i].at(j) != 0.0) nonzero = true;
        if (nonzero) set_tangent(v, make_constant(tangents[i]));
        in_vars.push_back(v);
    }
    Var primal = f(in_vars);
    Var tangent_out = primal.has_tangent()
                          ? primal.tangent()
                          : make_constant(Tensor::zeros(primal.shape()));
    clear_tangent_links({primal, tangent_out});
    return {primal, tangent_out};
}

}  // namespace tvm
