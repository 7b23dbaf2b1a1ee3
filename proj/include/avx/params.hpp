#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avx/tensor.hpp"

namespace avx::AVX_ABI_NS {

struct Parameter {
    std::string name;  // dot-separated path, unique within a set
    Tensor tensor;
    bool trainable = false;
};

// Ordered, name-unique collection of parameters. Insertion order is the
// serialization order.
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::vector<std::string> names() const;
    size_t size() const { return params_.size(); }

    // Trainable flag drives requires_grad.
    void set_trainable(const std::string& name, bool on);
    void zero_grad();

private:
    std::vector<Parameter> params_;
    std::map<std::string, size_t> index_;
};

// 64-bit FNV-1a over the raw float32 bytes of a tensor.
uint64_t tensor_checksum(const Tensor& t);
std::map<std::string, uint64_t> checksums(const ParameterSet& set);

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. State is keyed by parameter name.
class AdamW {
public:
    explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

    // Updates every trainable parameter; non-trainable ones are untouched.
    // Throws ContractError when a trainable parameter received no gradient.
    void step(ParameterSet& params, std::optional<double> lr = std::nullopt);
    void step(const std::vector<Parameter*>& params, std::optional<double> lr = std::nullopt);
    int64_t steps_taken() const { return t_; }
    const AdamWOptions& options() const { return opts_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamWOptions opts_;
    int64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

// Little-endian "AVLM" v1 container of named f32 tensors.
struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

NamedTensor to_named(const std::string& name, const Tensor& t);
Tensor from_named(const NamedTensor& nt, bool requires_grad = false);

}  // namespace avx
