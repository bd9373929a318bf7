#pragma once

#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "tvm/graph.hpp"
#include "tvm/ops.hpp"
#include "tvm/tensor.hpp"

namespace tvm {

// Named parameter set with deterministic (insertion) iteration order.
class ParamStore {
  public:
    void add(const std::string& path, Tensor t);
    bool has(const std::string& path) const { return values_.count(path) > 0; }
    Tensor& at(const std::string& path);
    const Tensor& at(const std::string& path) const;
    const std::vector<std::string>& paths() const { return order_; }
    size_t count() const { return order_.size(); }

    // Flat binary checkpoint: "TVMP" magic, u32 version, u64 count, then per
    // parameter (u32 path length, path bytes, u32 rank, u64 extents,
    // little-endian f64 values). See docs/checkpoint_format.md.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);
    void write_to(std::FILE* f) const;
    static ParamStore read_from(std::FILE* f);

    bool same_structure(const ParamStore& o) const;

  private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> values_;
};

using GradMap = std::vector<std::pair<std::string, Tensor>>;

// Per-forward-pass binding of a ParamStore into graph leaves. Trainable
// bindings create grad-bearing leaves; frozen bindings (EMA targets) create
// constants, so their whole subgraph prices out of the reverse pass.
class GraphParams {
  public:
    GraphParams(const ParamStore& store, bool trainable)
        : store_(&store), trainable_(trainable) {}

    Var operator[](const std::string& path);
    bool trainable() const { return trainable_; }

    // Gradients aligned one-to-one with the store's order; parameters whose
    // leaf was never created or never reached get zeros.
    GradMap grads() const;

  private:
    const ParamStore* store_;
    bool trainable_;
    std::unordered_map<std::string, Var> leaves_;
};

// Reverse pass from a scalar loss, returning gradients for `params`.
GradMap backward(const Var& loss, GraphParams& params);

}  // namespace tvm
