#include "avx/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace avx::AVX_ABI_NS {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back({name, std::move(t), false});
    params_.back().tensor.set_requires_grad(false);
    return params_.back().tensor;
}

Parameter& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
}

void ParameterSet::set_trainable(const std::string& name, bool on) {
    auto& p = at(name);
    p.trainable = on;
    p.tensor.set_requires_grad(on);
}

void ParameterSet::zero_grad() {
    for (auto& p : params_)
        if (p.tensor.requires_grad()) p.tensor.zero_grad();
}

uint64_t tensor_checksum(const Tensor& t) {
    uint64_t h = 1469598103934665603ULL;
    for (Scalar v : t.data()) {
        const auto f = static_cast<float>(v);
        unsigned char bytes[sizeof(float)];
        std::memcpy(bytes, &f, sizeof f);
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::map<std::string, uint64_t> checksums(const ParameterSet& set) {
    std::map<std::string, uint64_t> out;
    for (const auto& p : set.all()) out[p.name] = tensor_checksum(p.tensor);
    return out;
}

void AdamW::step(ParameterSet& params, std::optional<double> lr) {
    std::vector<Parameter*> ptrs;
    for (auto& p : params.all()) ptrs.push_back(&p);
    step(ptrs, lr);
}

void AdamW::step(const std::vector<Parameter*>& params, std::optional<double> lr) {
    const double rate = lr.value_or(opts_.lr);
    for (const Parameter* pp : params) {
        const auto& p = *pp;
        if (p.trainable && !p.tensor.grad_touched()) {
            throw ContractError("adamw: trainable parameter " + p.name + " has no gradient");
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (Parameter* pp : params) {
        auto& p = *pp;
        if (!p.trainable) continue;
        auto& st = state_[p.name];
        auto data = p.tensor.data();
        auto grad = p.tensor.grad();
        if (st.m.size() != data.size()) {
            st.m.assign(data.size(), 0.0);
            st.v.assign(data.size(), 0.0);
        }
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            st.m[i] = opts_.beta1 * st.m[i] + (1.0 - opts_.beta1) * g;
            st.v[i] = opts_.beta2 * st.v[i] + (1.0 - opts_.beta2) * g * g;
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            double w = data[i];
            w -= rate * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * w);
            data[i] = static_cast<Scalar>(w);
        }
    }
}

namespace {

constexpr char kMagic[4] = {'A', 'V', 'L', 'M'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw CheckpointFormatError(path.string() + ": truncated checkpoint");
    }
    return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put_u32(os, static_cast<uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        if (static_cast<int64_t>(t.values.size()) != shape_numel(t.shape)) {
            throw DimensionError("checkpoint tensor " + t.name + " payload does not match shape");
        }
        os.write(reinterpret_cast<const char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[4] = {};
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointFormatError(path.string() + ": bad magic, not an AVLM checkpoint");
    }
    const uint32_t version = get_u32(is, path);
    if (version != kVersion) {
        throw CheckpointFormatError(path.string() + ": unsupported AVLM version " + std::to_string(version));
    }
    const uint32_t count = get_u32(is, path);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const uint32_t len = get_u32(is, path);
        t.name.resize(len);
        if (!is.read(t.name.data(), len)) throw CheckpointFormatError(path.string() + ": truncated name");
        const uint32_t rank = get_u32(is, path);
        for (uint32_t r = 0; r < rank; ++r) t.shape.push_back(get_u32(is, path));
        t.values.resize(static_cast<size_t>(shape_numel(t.shape)));
        if (!is.read(reinterpret_cast<char*>(t.values.data()),
                     static_cast<std::streamsize>(t.values.size() * sizeof(float)))) {
            throw CheckpointFormatError(path.string() + ": truncated payload for " + t.name);
        }
        out.push_back(std::move(t));
    }
    return out;
}

NamedTensor to_named(const std::string& name, const Tensor& t) {
    NamedTensor nt{name, t.shape(), {}};
    nt.values.reserve(t.numel());
    for (Scalar v : t.data()) nt.values.push_back(static_cast<float>(v));
    return nt;
}

Tensor from_named(const NamedTensor& nt, bool requires_grad) {
    std::vector<Scalar> v(nt.values.begin(), nt.values.end());
    return Tensor::from(nt.shape, std::move(v), requires_grad);
}

}  // namespace avx
