#include "ssmko/archive.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace ssmko {

namespace {

constexpr char kMagic[6] = {'S', 'S', 'M', 'K', 'O', '1'};

int64_t shape_product(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw InvalidInput("archive: negative dimension");
        n *= d;
    }
    return n;
}

size_t dtype_size(const std::string & dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    throw InvalidInput("archive: unsupported dtype " + dtype);
}

}  // namespace

int64_t TensorEntry::element_count() const { return shape_product(shape); }

TensorEntry TensorEntry::from_matrix(const Eigen::Ref<const Matrix> & m) {
    TensorEntry e;
    e.shape = {m.rows(), m.cols()};
    e.data.resize(static_cast<size_t>(m.size()));
    // Matrix is row-major, so this is the archived layout already
    Eigen::Map<Matrix>(e.data.data(), m.rows(), m.cols()) = m;
    return e;
}

TensorEntry TensorEntry::from_vector(const Eigen::Ref<const Vector> & v) {
    TensorEntry e;
    e.shape = {v.size()};
    e.data.assign(v.data(), v.data() + v.size());
    return e;
}

TensorEntry TensorEntry::from_scalar(double v) {
    TensorEntry e;
    e.shape = {};
    e.data = {v};
    return e;
}

Matrix TensorEntry::as_matrix() const {
    if (shape.size() != 2) throw InvalidInput("archive: tensor is not 2-D");
    return Eigen::Map<const Matrix>(data.data(), shape[0], shape[1]);
}

Vector TensorEntry::as_vector() const {
    if (shape.size() != 1) throw InvalidInput("archive: tensor is not 1-D");
    return Eigen::Map<const Vector>(data.data(), shape[0]);
}

double TensorEntry::as_scalar() const {
    if (element_count() != 1) throw InvalidInput("archive: tensor is not a scalar");
    return data[0];
}

const TensorEntry & Archive::at(const std::string & name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw IoError("archive: missing tensor " + name);
    }
    return it->second;
}

void write_archive(const std::string & path, const Archive & ar) {
    nlohmann::json header;
    if (!ar.meta.is_null()) {
        header["__meta__"] = ar.meta;
    }
    uint64_t offset = 0;
    for (const auto & [name, entry] : ar.tensors) {
        if (name == "__meta__") throw InvalidInput("archive: __meta__ is a reserved name");
        if (entry.element_count() != static_cast<int64_t>(entry.data.size())) {
            throw ShapeError("archive: tensor " + name + " shape does not match data length");
        }
        header[name] = {{"dtype", entry.dtype}, {"shape", entry.shape}, {"offset", offset}};
        offset += entry.data.size() * dtype_size(entry.dtype);
    }
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("archive: cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    const uint64_t header_len = header_str.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) {
        lenbuf[i] = static_cast<char>((header_len >> (8 * i)) & 0xff);
    }
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto & [name, entry] : ar.tensors) {
        if (entry.dtype == "f64") {
            out.write(reinterpret_cast<const char *>(entry.data.data()),
                      static_cast<std::streamsize>(entry.data.size() * 8));
        } else {
            std::vector<float> f(entry.data.begin(), entry.data.end());
            out.write(reinterpret_cast<const char *>(f.data()),
                      static_cast<std::streamsize>(f.size() * 4));
        }
    }
    if (!out) throw IoError("archive: write failed for " + path);
}

Archive read_archive(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("archive: cannot open " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kMagic, 6) != 0) {
        throw IoError("archive: bad magic in " + path);
    }
    char lenbuf[8];
    in.read(lenbuf, 8);
    if (!in) throw IoError("archive: truncated header length");
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i) {
        header_len |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    }
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("archive: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::parse_error & e) {
        throw IoError(std::string("archive: header parse error: ") + e.what());
    }

    const std::streampos payload_base = in.tellg();
    Archive ar;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__meta__") {
            ar.meta = it.value();
            continue;
        }
        TensorEntry entry;
        entry.dtype = it.value().at("dtype").get<std::string>();
        entry.shape = it.value().at("shape").get<std::vector<int64_t>>();
        const uint64_t offset = it.value().at("offset").get<uint64_t>();
        const int64_t count = entry.element_count();
        in.seekg(payload_base + static_cast<std::streamoff>(offset));
        if (entry.dtype == "f64") {
            entry.data.resize(count);
            in.read(reinterpret_cast<char *>(entry.data.data()), count * 8);
        } else if (entry.dtype == "f32") {
            std::vector<float> f(count);
            in.read(reinterpret_cast<char *>(f.data()), count * 4);
            entry.data.assign(f.begin(), f.end());  // promote on load
        } else {
            throw IoError("archive: unsupported dtype " + entry.dtype);
        }
        if (!in) throw IoError("archive: truncated payload for " + it.key());
        ar.tensors.emplace(it.key(), std::move(entry));
    }
    return ar;
}

// ---------------------------------------------------------------------------

namespace {

std::string layer_prefix(size_t i) { return "layers." + std::to_string(i) + "."; }

// Stack per-unit matrices (each r x c) into one [units, r, c] entry.
TensorEntry stack_matrices(const std::vector<Matrix> & ms) {
    TensorEntry e;
    const int64_t units = static_cast<int64_t>(ms.size());
    const int64_t r = ms.empty() ? 0 : ms[0].rows();
    const int64_t c = ms.empty() ? 0 : ms[0].cols();
    e.shape = {units, r, c};
    e.data.reserve(units * r * c);
    for (const Matrix & m : ms) {
        if (m.rows() != r || m.cols() != c) throw ShapeError("archive: ragged unit stack");
        e.data.insert(e.data.end(), m.data(), m.data() + m.size());
    }
    return e;
}

std::vector<Matrix> unstack_matrices(const TensorEntry & e) {
    if (e.shape.size() != 3) throw InvalidInput("archive: tensor is not 3-D");
    std::vector<Matrix> ms;
    ms.reserve(e.shape[0]);
    const int64_t stride = e.shape[1] * e.shape[2];
    for (int64_t u = 0; u < e.shape[0]; ++u) {
        ms.emplace_back(Eigen::Map<const Matrix>(e.data.data() + u * stride, e.shape[1], e.shape[2]));
    }
    return ms;
}

void save_mamba1(Archive & ar, const std::string & p, const Mamba1Layer & layer) {
    ar.tensors[p + "in_proj"] = TensorEntry::from_matrix(layer.in_proj);
    ar.tensors[p + "gate_proj"] = TensorEntry::from_matrix(layer.gate_proj);
    ar.tensors[p + "out_proj"] = TensorEntry::from_matrix(layer.out_proj);
    ar.tensors[p + "conv_kernel"] = TensorEntry::from_matrix(layer.conv_kernel);
    const Index c = layer.channel_count();
    Matrix a_log(c, layer.channels[0].state_dim());
    Matrix delta_proj(c, layer.channels[0].cond_dim());
    Vector delta_bias(c);
    std::vector<Matrix> b, cc;
    for (Index i = 0; i < c; ++i) {
        const auto & ch = layer.channels[i];
        a_log.row(i) = ch.a_log;
        delta_proj.row(i) = ch.delta_proj;
        delta_bias(i) = ch.delta_bias;
        b.push_back(ch.b_proj);
        cc.push_back(ch.c_proj);
    }
    ar.tensors[p + "ssm.a_log"] = TensorEntry::from_matrix(a_log);
    ar.tensors[p + "ssm.b_proj"] = stack_matrices(b);
    ar.tensors[p + "ssm.c_proj"] = stack_matrices(cc);
    ar.tensors[p + "ssm.delta_proj"] = TensorEntry::from_matrix(delta_proj);
    ar.tensors[p + "ssm.delta_bias"] = TensorEntry::from_vector(delta_bias);
}

Mamba1Layer load_mamba1(const Archive & ar, const std::string & p, const ModelSpec & spec) {
    Mamba1Layer layer;
    layer.in_proj = ar.at(p + "in_proj").as_matrix();
    layer.gate_proj = ar.at(p + "gate_proj").as_matrix();
    layer.out_proj = ar.at(p + "out_proj").as_matrix();
    layer.conv_kernel = ar.at(p + "conv_kernel").as_matrix();
    layer.gated = spec.m1_gated;
    const Matrix a_log = ar.at(p + "ssm.a_log").as_matrix();
    const Matrix delta_proj = ar.at(p + "ssm.delta_proj").as_matrix();
    const Vector delta_bias = ar.at(p + "ssm.delta_bias").as_vector();
    const std::vector<Matrix> b = unstack_matrices(ar.at(p + "ssm.b_proj"));
    const std::vector<Matrix> c = unstack_matrices(ar.at(p + "ssm.c_proj"));
    for (Index i = 0; i < a_log.rows(); ++i) {
        SelectiveSsmChannel ch;
        ch.a_log = a_log.row(i);
        ch.b_proj = b[i];
        ch.c_proj = c[i];
        ch.delta_proj = delta_proj.row(i);
        ch.delta_bias = delta_bias(i);
        layer.channels.push_back(std::move(ch));
    }
    return layer;
}

void save_ssd(Archive & ar, const std::string & p, const SsdLayer & layer) {
    std::vector<Matrix> q, k, v;
    const Index h = layer.head_count();
    Matrix delta_proj(h, layer.heads[0].delta_proj.size());
    Vector a_log(h), delta_bias(h), skip_d(h);
    for (Index i = 0; i < h; ++i) {
        const auto & head = layer.heads[i];
        q.push_back(head.q_proj);
        k.push_back(head.k_proj);
        v.push_back(head.v_proj);
        a_log(i) = head.a_log;
        delta_proj.row(i) = head.delta_proj;
        delta_bias(i) = head.delta_bias;
        skip_d(i) = head.skip_d;
    }
    ar.tensors[p + "q_proj"] = stack_matrices(q);
    ar.tensors[p + "k_proj"] = stack_matrices(k);
    ar.tensors[p + "v_proj"] = stack_matrices(v);
    ar.tensors[p + "a_log"] = TensorEntry::from_vector(a_log);
    ar.tensors[p + "delta_proj"] = TensorEntry::from_matrix(delta_proj);
    ar.tensors[p + "delta_bias"] = TensorEntry::from_vector(delta_bias);
    ar.tensors[p + "skip_d"] = TensorEntry::from_vector(skip_d);
    ar.tensors[p + "out_proj"] = TensorEntry::from_matrix(layer.out_proj);
}

SsdLayer load_ssd(const Archive & ar, const std::string & p, const ModelSpec & spec) {
    SsdLayer layer;
    layer.skip_enabled = spec.ssd_skip;
    const std::vector<Matrix> q = unstack_matrices(ar.at(p + "q_proj"));
    const std::vector<Matrix> k = unstack_matrices(ar.at(p + "k_proj"));
    const std::vector<Matrix> v = unstack_matrices(ar.at(p + "v_proj"));
    const Vector a_log = ar.at(p + "a_log").as_vector();
    const Matrix delta_proj = ar.at(p + "delta_proj").as_matrix();
    const Vector delta_bias = ar.at(p + "delta_bias").as_vector();
    const Vector skip_d = ar.at(p + "skip_d").as_vector();
    for (size_t i = 0; i < q.size(); ++i) {
        SsdHead head;
        head.q_proj = q[i];
        head.k_proj = k[i];
        head.v_proj = v[i];
        head.a_log = a_log(static_cast<Index>(i));
        head.delta_proj = delta_proj.row(static_cast<Index>(i));
        head.delta_bias = delta_bias(static_cast<Index>(i));
        head.skip_d = skip_d(static_cast<Index>(i));
        layer.heads.push_back(std::move(head));
    }
    layer.out_proj = ar.at(p + "out_proj").as_matrix();
    return layer;
}

void save_attention(Archive & ar, const std::string & p, const AttentionLayerParams & layer) {
    ar.tensors[p + "wq"] = TensorEntry::from_matrix(layer.wq);
    ar.tensors[p + "wk"] = TensorEntry::from_matrix(layer.wk);
    ar.tensors[p + "wv"] = TensorEntry::from_matrix(layer.wv);
    ar.tensors[p + "wo"] = TensorEntry::from_matrix(layer.wo);
    ar.tensors[p + "ff1"] = TensorEntry::from_matrix(layer.ff1);
    ar.tensors[p + "ff1_bias"] = TensorEntry::from_vector(layer.ff1_bias);
    ar.tensors[p + "ff2"] = TensorEntry::from_matrix(layer.ff2);
    ar.tensors[p + "ff2_bias"] = TensorEntry::from_vector(layer.ff2_bias);
}

AttentionLayerParams load_attention(const Archive & ar, const std::string & p, const ModelSpec & spec) {
    AttentionLayerParams layer;
    layer.heads = spec.attn_heads;
    layer.wq = ar.at(p + "wq").as_matrix();
    layer.wk = ar.at(p + "wk").as_matrix();
    layer.wv = ar.at(p + "wv").as_matrix();
    layer.wo = ar.at(p + "wo").as_matrix();
    layer.ff1 = ar.at(p + "ff1").as_matrix();
    layer.ff1_bias = ar.at(p + "ff1_bias").as_vector();
    layer.ff2 = ar.at(p + "ff2").as_matrix();
    layer.ff2_bias = ar.at(p + "ff2_bias").as_vector();
    return layer;
}

}  // namespace

void save_model(const std::string & path, const ModelWeights & w) {
    Archive ar;
    ar.meta = {{"format", "ssmko-model"}, {"model", w.spec.to_json()}};
    ar.tensors["embedding"] = TensorEntry::from_matrix(w.embedding);
    if (w.spec.kind == LayerKind::softmax_attention) {
        ar.tensors["pos_embedding"] = TensorEntry::from_matrix(w.pos_embedding);
    }
    for (size_t i = 0; i < w.layers.size(); ++i) {
        const std::string p = layer_prefix(i);
        ar.tensors[p + "norm_gain"] = TensorEntry::from_vector(w.layer_norm_gain[i]);
        std::visit(
            [&](const auto & layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Mamba1Layer>) {
                    save_mamba1(ar, p, layer);
                } else if constexpr (std::is_same_v<T, SsdLayer>) {
                    save_ssd(ar, p, layer);
                } else {
                    save_attention(ar, p, layer);
                }
            },
            w.layers[i]);
    }
    ar.tensors["final_norm_gain"] = TensorEntry::from_vector(w.final_norm_gain);
    if (!w.spec.tied_unembedding) {
        ar.tensors["unembedding"] = TensorEntry::from_matrix(w.unembedding);
    }
    write_archive(path, ar);
}

ModelWeights load_model(const std::string & path) {
    const Archive ar = read_archive(path);
    if (!ar.meta.contains("model")) {
        throw IoError("archive: not a model file (missing model metadata): " + path);
    }
    ModelWeights w;
    w.spec = ModelSpec::from_json(ar.meta.at("model"));
    w.embedding = ar.at("embedding").as_matrix();
    if (w.spec.kind == LayerKind::softmax_attention) {
        w.pos_embedding = ar.at("pos_embedding").as_matrix();
    } else {
        w.pos_embedding.resize(0, 0);
    }
    for (int i = 0; i < w.spec.num_layers; ++i) {
        const std::string p = layer_prefix(i);
        w.layer_norm_gain.push_back(ar.at(p + "norm_gain").as_vector());
        switch (w.spec.kind) {
            case LayerKind::mamba1: w.layers.emplace_back(load_mamba1(ar, p, w.spec)); break;
            case LayerKind::ssd:    w.layers.emplace_back(load_ssd(ar, p, w.spec)); break;
            case LayerKind::softmax_attention:
                w.layers.emplace_back(load_attention(ar, p, w.spec));
                break;
        }
    }
    w.final_norm_gain = ar.at("final_norm_gain").as_vector();
    if (!w.spec.tied_unembedding) {
        w.unembedding = ar.at("unembedding").as_matrix();
    } else {
        w.unembedding.resize(0, 0);
    }
    return w;
}

std::string file_hash_hex(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("hash: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace ssmko
