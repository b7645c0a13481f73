#pragma once

// Tensor archive container. Layout:
//   magic "SSMKO1"
//   8-byte little-endian unsigned header length
//   UTF-8 JSON header mapping tensor name -> {dtype, shape, offset}
//   raw little-endian payloads, row-major, at the given offsets
//
// Offsets are relative to the end of the header. dtype is "f32" or "f64";
// f32 payloads are promoted to f64 on load. The reserved key "__meta__"
// carries free-form metadata (model spec, axis names) instead of a tensor.

#include "ssmko/numerics.hpp"
#include "ssmko/ssm.hpp"

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssmko {

struct TensorEntry {
    std::string dtype = "f64";
    std::vector<int64_t> shape;
    std::vector<double> data;  // row-major

    int64_t element_count() const;

    static TensorEntry from_matrix(const Eigen::Ref<const Matrix> & m);
    static TensorEntry from_vector(const Eigen::Ref<const Vector> & v);
    static TensorEntry from_scalar(double v);

    Matrix as_matrix() const;  // requires 2-D shape
    Vector as_vector() const;  // requires 1-D shape
    double as_scalar() const;
};

struct Archive {
    std::map<std::string, TensorEntry> tensors;
    nlohmann::json meta;

    const TensorEntry & at(const std::string & name) const;
};

void write_archive(const std::string & path, const Archive & ar);
Archive read_archive(const std::string & path);

// Model adapters on top of the container.
void save_model(const std::string & path, const ModelWeights & w);
ModelWeights load_model(const std::string & path);

// FNV-1a over a file's bytes, hex-encoded; used to stamp experiment outputs.
std::string file_hash_hex(const std::string & path);

}  // namespace ssmko
