#include "tvm/param_store.hpp"

#include <cstring>
#include <memory>

namespace tvm {

namespace {
constexpr char kMagic[4] = {'T', 'V', 'M', 'P'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::FILE* f, const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw TvmError("checkpoint write failed");
}
void read_bytes(std::FILE* f, void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) throw TvmError("checkpoint truncated");
}
template <typename T>
void write_pod(std::FILE* f, T v) {
    write_bytes(f, &v, sizeof(T));
}
template <typename T>
T read_pod(std::FILE* f) {
    T v;
    read_bytes(f, &v, sizeof(T));
    return v;
}
}  // namespace

void ParamStore::add(const std::string& path, Tensor t) {
    if (has(path)) throw TvmError("duplicate parameter path '" + path + "'");
    order_.push_back(path);
    values_.emplace(path, std::move(t));
}

Tensor& ParamStore::at(const std::string& path) {
    auto it = values_.find(path);
    if (it == values_.end()) throw TvmError("unknown parameter '" + path + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& path) const {
    auto it = values_.find(path);
    if (it == values_.end()) throw TvmError("unknown parameter '" + path + "'");
    return it->second;
}

void ParamStore::write_to(std::FILE* f) const {
    write_bytes(f, kMagic, 4);
    write_pod<uint32_t>(f, kVersion);
    write_pod<uint64_t>(f, order_.size());
    for (const auto& path : order_) {
        const Tensor& t = values_.at(path);
        write_pod<uint32_t>(f, static_cast<uint32_t>(path.size()));
        write_bytes(f, path.data(), path.size());
        write_pod<uint32_t>(f, static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) write_pod<uint64_t>(f, static_cast<uint64_t>(t.dim(i)));
        write_bytes(f, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
    }
}

ParamStore ParamStore::read_from(std::FILE* f) {
    char magic[4];
    read_bytes(f, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw TvmError("bad checkpoint magic");
    uint32_t ver = read_pod<uint32_t>(f);
    if (ver != kVersion) throw TvmError("unsupported checkpoint version " + std::to_string(ver));
    uint64_t count = read_pod<uint64_t>(f);
    ParamStore ps;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t plen = read_pod<uint32_t>(f);
        std::string path(plen, '\0');
        read_bytes(f, path.data(), plen);
        uint32_t rank = read_pod<uint32_t>(f);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<int64_t>(read_pod<uint64_t>(f));
        Tensor t(shape);
        read_bytes(f, t.data(), static_cast<size_t>(t.size()) * sizeof(double));
        ps.add(path, std::move(t));
    }
    return ps;
}

void ParamStore::save(const std::string& path) const {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wb"),
                                                      &std::fclose);
    if (!f) throw TvmError("cannot open '" + path + "' for writing");
    write_to(f.get());
}

ParamStore ParamStore::load(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"),
                                                      &std::fclose);
    if (!f) throw TvmError("cannot open '" + path + "'");
    return read_from(f.get());
}

bool ParamStore::same_structure(const ParamStore& o) const {
    if (order_ != o.order_) return false;
    for (const auto& p : order_)
        if (!(values_.at(p).shape() == o.values_.at(p).shape())) return false;
    return true;
}

Var GraphParams::operator[](const std::string& path) {
    auto it = leaves_.find(path);
    if (it != leaves_.end()) return it->second;
    const Tensor& t = store_->at(path);
    Var v = trainable_ ? make_leaf(t) : make_constant(t);
    leaves_.emplace(path, v);
    return v;
}

GradMap GraphParams::grads() const {
    GradMap out;
    out.reserve(store_->count());
    for (const auto& path : store_->paths()) {
        auto it = leaves_.find(path);
        if (it != leaves_.end() && it->second.node().has_grad)
            out.emplace_back(path, it->second.node().grad);
        else
            out.emplace_back(path, Tensor::zeros(store_->at(path).shape()));
    }
    return out;
}

GradMap backward(const Var& loss, GraphParams& params) {
    backward_through(loss);
    return params.grads();
}

}  // namespace tvm
