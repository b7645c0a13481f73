#include "ssmko/ssm.hpp"

#include "ssmko/transformer.hpp"

namespace ssmko {

DiscretizedStep discretize(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & cond) {
    if (cond.size() != ch.cond_dim()) {
        throw ShapeError("discretize: conditioning vector size mismatch");
    }
    DiscretizedStep step;
    step.delta = softplus(ch.delta_proj.dot(cond) + ch.delta_bias);
    // A = Abar^delta = exp(-exp(a_log) * delta)
    step.a = (-ch.a_log.array().exp() * step.delta).exp().matrix();
    step.b = step.delta * (ch.b_proj.transpose() * cond);  // Euler scaling
    step.c = ch.c_proj.transpose() * cond;
    return step;
}

Vector scan_with_coeffs(const Eigen::Ref<const Matrix> & a, const Eigen::Ref<const Matrix> & b,
                        const Eigen::Ref<const Matrix> & c, const Eigen::Ref<const Vector> & u) {
    const Index len = u.size();
    if (a.rows() != len || b.rows() != len || c.rows() != len) {
        throw ShapeError("scan_with_coeffs: step count mismatch");
    }
    if (a.cols() != b.cols() || a.cols() != c.cols()) {
        throw ShapeError("scan_with_coeffs: state dimension mismatch");
    }
    Vector state = Vector::Zero(a.cols());
    Vector y(len);
    for (Index t = 0; t < len; ++t) {
        state = a.row(t).transpose().cwiseProduct(state) + b.row(t).transpose() * u(t);
        y(t) = c.row(t).dot(state);
    }
    return y;
}

Vector recurrent_scan(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & u,
                      const Eigen::Ref<const Matrix> & cond) {
    const Index len = u.size();
    if (cond.rows() != len) {
        throw ShapeError("recurrent_scan: conditioning rows must match sequence length");
    }
    Vector state = Vector::Zero(ch.state_dim());
    Vector y(len);
    for (Index t = 0; t < len; ++t) {
        const DiscretizedStep step = discretize(ch, cond.row(t).transpose());
        state = step.a.cwiseProduct(state) + step.b * u(t);
        y(t) = step.c.dot(state);
    }
    return y;
}

Vector recurrent_scan(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & u) {
    if (ch.cond_dim() != 1) {
        throw ShapeError("recurrent_scan: scalar form requires cond_dim == 1");
    }
    return recurrent_scan(ch, u, u);
}

// ---------------------------------------------------------------------------

Matrix mamba1_inner_activations(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x) {
    const Index len = x.rows();
    const Index chans = layer.channel_count();
    if (x.cols() != layer.in_proj.rows()) {
        throw ShapeError("mamba1: input width does not match in_proj");
    }
    if (layer.conv_kernel.rows() != chans) {
        throw ShapeError("mamba1: conv kernel rows must equal channel count");
    }
    const Matrix inner = x * layer.in_proj;  // L x C
    const Index k = layer.conv_width();
    Matrix u(len, chans);
    for (Index c = 0; c < chans; ++c) {
        for (Index t = 0; t < len; ++t) {
            double acc = 0.0;
            for (Index j = 0; j < k && j <= t; ++j) {
                acc += layer.conv_kernel(c, j) * inner(t - j, c);
            }
            u(t, c) = silu(acc);
        }
    }
    return u;
}

Matrix mamba1_gate_activations(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x) {
    return silu(Matrix(x * layer.gate_proj));
}

Matrix mamba1_layer_forward(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x) {
    const Matrix u = mamba1_inner_activations(layer, x);
    const Index chans = layer.channel_count();
    Matrix y(x.rows(), chans);
    for (Index c = 0; c < chans; ++c) {
        y.col(c) = recurrent_scan(layer.channels[c], u.col(c), u);
    }
    if (layer.gated) {
        y = y.cwiseProduct(mamba1_gate_activations(layer, x));
    }
    return y * layer.out_proj;
}

// ---------------------------------------------------------------------------

SsdHeadActivations ssd_head_activations(const SsdHead & head, const Eigen::Ref<const Matrix> & x) {
    if (x.cols() != head.q_proj.rows()) {
        throw ShapeError("ssd: input width does not match head projections");
    }
    SsdHeadActivations act;
    act.q = x * head.q_proj;
    act.k = x * head.k_proj;
    act.v = x * head.v_proj;
    act.kappa = std::exp(head.a_log);
    const Index len = x.rows();
    act.delta.resize(len);
    act.cum_delta.resize(len);
    double run = 0.0;
    for (Index t = 0; t < len; ++t) {
        act.delta(t) = softplus(head.delta_proj.dot(x.row(t)) + head.delta_bias);
        run += act.delta(t);
        act.cum_delta(t) = run;
    }
    return act;
}

Matrix ssd_decay_mask(const SsdHeadActivations & act) {
    const Index len = act.delta.size();
    Matrix mask = Matrix::Zero(len, len);
    for (Index p = 0; p < len; ++p) {
        mask(p, p) = 1.0;  // empty product
        for (Index q = 0; q < p; ++q) {
            mask(p, q) = std::exp(-act.kappa * (act.cum_delta(p) - act.cum_delta(q)));
        }
    }
    return mask;
}

Matrix ssd_layer_forward(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x) {
    const Index len = x.rows();
    const Index heads = layer.head_count();
    if (heads == 0) {
        throw ShapeError("ssd: layer has no heads");
    }
    const Index dv = layer.heads[0].v_proj.cols();
    Matrix concat(len, heads * dv);
    for (Index h = 0; h < heads; ++h) {
        const SsdHead & head = layer.heads[h];
        const SsdHeadActivations act = ssd_head_activations(head, x);
        const Index n = act.q.cols();
        Matrix state = Matrix::Zero(n, dv);
        for (Index p = 0; p < len; ++p) {
            const double a_p = std::exp(-act.kappa * act.delta(p));
            state = a_p * state + act.k.row(p).transpose() * act.v.row(p);
            concat.row(p).segment(h * dv, dv) = act.q.row(p) * state;
            if (layer.skip_enabled) {
                concat.row(p).segment(h * dv, dv) += head.skip_d * act.v.row(p);
            }
        }
    }
    return concat * layer.out_proj;
}

// ---------------------------------------------------------------------------

const char * to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::mamba1:            return "mamba1";
        case LayerKind::ssd:               return "ssd";
        case LayerKind::softmax_attention: return "softmax_attention";
    }
    throw InvalidInput("unknown layer kind");
}

LayerKind layer_kind_from_string(const std::string & s) {
    if (s == "mamba1")            return LayerKind::mamba1;
    if (s == "ssd")               return LayerKind::ssd;
    if (s == "softmax_attention") return LayerKind::softmax_attention;
    throw InvalidInput("unknown layer kind: " + s);
}

void ModelSpec::validate() const {
    if (vocab_size < 1) throw InvalidInput("model spec: vocab_size must be >= 1");
    if (embed_dim < 1) throw InvalidInput("model spec: embed_dim must be >= 1");
    if (num_layers < 1) throw InvalidInput("model spec: num_layers must be >= 1");
    switch (kind) {
        case LayerKind::mamba1:
            if (m1_state_dim < 1 || m1_conv_k < 1) throw InvalidInput("model spec: bad mamba1 dims");
            break;
        case LayerKind::ssd:
            if (ssd_heads < 1 || ssd_state_dim < 1 || ssd_head_dim < 1) {
                throw InvalidInput("model spec: bad ssd dims");
            }
            break;
        case LayerKind::softmax_attention:
            if (attn_heads < 1 || embed_dim % attn_heads != 0) {
                throw InvalidInput("model spec: attn_heads must divide embed_dim");
            }
            if (ffn_mult < 1 || max_seq < 1) throw InvalidInput("model spec: bad attention dims");
            break;
    }
}

nlohmann::json ModelSpec::to_json() const {
    nlohmann::json j;
    j["vocab_size"] = vocab_size;
    j["embed_dim"] = embed_dim;
    j["num_layers"] = num_layers;
    j["layer_kind"] = to_string(kind);
    j["tied_unembedding"] = tied_unembedding;
    switch (kind) {
        case LayerKind::mamba1:
            j["channels"] = mamba1_channels();
            j["state_dim"] = m1_state_dim;
            j["conv_k"] = m1_conv_k;
            j["gated"] = m1_gated;
            break;
        case LayerKind::ssd:
            j["heads"] = ssd_heads;
            j["state_dim"] = ssd_state_dim;
            j["head_dim"] = ssd_head_dim;
            j["skip"] = ssd_skip;
            break;
        case LayerKind::softmax_attention:
            j["heads"] = attn_heads;
            j["ffn_mult"] = ffn_mult;
            j["max_seq"] = max_seq;
            break;
    }
    return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json & j) {
    ModelSpec spec;
    spec.vocab_size = j.at("vocab_size").get<int>();
    spec.embed_dim = j.at("embed_dim").get<int>();
    spec.num_layers = j.at("num_layers").get<int>();
    spec.kind = layer_kind_from_string(j.at("layer_kind").get<std::string>());
    spec.tied_unembedding = j.value("tied_unembedding", true);
    switch (spec.kind) {
        case LayerKind::mamba1:
            spec.m1_channels = j.value("channels", 0);
            spec.m1_state_dim = j.value("state_dim", 8);
            spec.m1_conv_k = j.value("conv_k", 4);
            spec.m1_gated = j.value("gated", true);
            break;
        case LayerKind::ssd:
            spec.ssd_heads = j.value("heads", 4);
            spec.ssd_state_dim = j.value("state_dim", 16);
            spec.ssd_head_dim = j.value("head_dim", 16);
            spec.ssd_skip = j.value("skip", true);
            break;
        case LayerKind::softmax_attention:
            spec.attn_heads = j.value("heads", 4);
            spec.ffn_mult = j.value("ffn_mult", 4);
            spec.max_seq = j.value("max_seq", 64);
            break;
    }
    spec.validate();
    return spec;
}

Matrix layer_forward(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x) {
    return std::visit(
        [&](const auto & l) -> Matrix {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, Mamba1Layer>) {
                return mamba1_layer_forward(l, x);
            } else if constexpr (std::is_same_v<T, SsdLayer>) {
                return ssd_layer_forward(l, x);
            } else {
                return attention_layer_forward(l, x, nullptr);
            }
        },
        layer);
}

Matrix model_forward(const ModelWeights & w, std::span<const int> tokens) {
    const Index len = static_cast<Index>(tokens.size());
    if (len < 1) {
        throw InvalidInput("model_forward: empty token sequence");
    }
    Matrix x(len, w.spec.embed_dim);
    for (Index t = 0; t < len; ++t) {
        const int id = tokens[t];
        if (id < 0 || id >= w.spec.vocab_size) {
            throw InvalidInput("model_forward: token id " + std::to_string(id) + " out of range");
        }
        x.row(t) = w.embedding.row(id);
    }
    if (w.spec.kind == LayerKind::softmax_attention) {
        if (len > w.pos_embedding.rows()) {
            throw InvalidInput("model_forward: sequence exceeds max_seq");
        }
        x += w.pos_embedding.topRows(len);
    }
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const Matrix z = rms_norm(x, w.layer_norm_gain[l], ModelWeights::kNormEps);
        x += layer_forward(w.layers[l], z);
    }
    const Matrix z = rms_norm(x, w.final_norm_gain, ModelWeights::kNormEps);
    return z * w.unembed_matrix();
}

double answer_probability_from_logits(const Eigen::Ref<const Matrix> & logits, int answer_token) {
    if (answer_token < 0 || answer_token >= logits.cols()) {
        throw InvalidInput("answer_probability: token out of range");
    }
    const Matrix probs = softmax_rows(logits.bottomRows(1));
    return probs(0, answer_token);
}

double answer_probability(const ModelWeights & w, std::span<const int> tokens, int answer_token) {
    return answer_probability_from_logits(model_forward(w, tokens), answer_token);
}

// ---------------------------------------------------------------------------

namespace {

// GPT-style small init keeps an untrained model's layer outputs tiny
// relative to the embedding stream.
constexpr double kInitStd = 0.02;

SelectiveSsmChannel random_channel(Index cond_dim, Index state_dim, Rng & rng) {
    SelectiveSsmChannel ch;
    // decay rates kappa spread over [1, 16] so channels differ in memory span
    ch.a_log.resize(state_dim);
    for (Index i = 0; i < state_dim; ++i) {
        ch.a_log(i) = std::log(rng.uniform(1.0, 16.0));
    }
    ch.b_proj = rng.normal_matrix(cond_dim, state_dim, kInitStd);
    ch.c_proj = rng.normal_matrix(cond_dim, state_dim, kInitStd);
    ch.delta_proj = rng.normal_vector(cond_dim, kInitStd);
    ch.delta_bias = softplus_inverse(rng.uniform(0.001, 0.1));
    return ch;
}

Mamba1Layer random_mamba1_layer(const ModelSpec & spec, Rng & rng) {
    Mamba1Layer layer;
    const int h = spec.embed_dim;
    const int c = spec.mamba1_channels();
    layer.in_proj = rng.normal_matrix(h, c, kInitStd);
    layer.gate_proj = rng.normal_matrix(h, c, kInitStd);
    layer.out_proj = rng.normal_matrix(c, h, kInitStd);
    layer.conv_kernel = rng.normal_matrix(c, spec.m1_conv_k, 0.5);
    layer.gated = spec.m1_gated;
    layer.channels.reserve(c);
    for (int i = 0; i < c; ++i) {
        layer.channels.push_back(random_channel(c, spec.m1_state_dim, rng));
    }
    return layer;
}

SsdLayer random_ssd_layer(const ModelSpec & spec, Rng & rng) {
    SsdLayer layer;
    const int h = spec.embed_dim;
    layer.skip_enabled = spec.ssd_skip;
    layer.heads.reserve(spec.ssd_heads);
    for (int i = 0; i < spec.ssd_heads; ++i) {
        SsdHead head;
        head.q_proj = rng.normal_matrix(h, spec.ssd_state_dim, kInitStd);
        head.k_proj = rng.normal_matrix(h, spec.ssd_state_dim, kInitStd);
        head.v_proj = rng.normal_matrix(h, spec.ssd_head_dim, kInitStd);
        head.a_log = std::log(rng.uniform(1.0, 16.0));
        head.delta_proj = rng.normal_vector(h, kInitStd);
        head.delta_bias = softplus_inverse(rng.uniform(0.001, 0.1));
        head.skip_d = rng.normal() * kInitStd;
        layer.heads.push_back(std::move(head));
    }
    layer.out_proj = rng.normal_matrix(spec.ssd_heads * spec.ssd_head_dim, h, kInitStd);
    return layer;
}

AttentionLayerParams random_attention_layer(const ModelSpec & spec, Rng & rng) {
    AttentionLayerParams layer;
    const int h = spec.embed_dim;
    layer.heads = spec.attn_heads;
    layer.wq = rng.normal_matrix(h, h, kInitStd);
    layer.wk = rng.normal_matrix(h, h, kInitStd);
    layer.wv = rng.normal_matrix(h, h, kInitStd);
    layer.wo = rng.normal_matrix(h, h, kInitStd);
    layer.ff1 = rng.normal_matrix(h, h * spec.ffn_mult, kInitStd);
    layer.ff1_bias = Vector::Zero(h * spec.ffn_mult);
    layer.ff2 = rng.normal_matrix(h * spec.ffn_mult, h, kInitStd);
    layer.ff2_bias = Vector::Zero(h);
    return layer;
}

}  // namespace

ModelWeights random_model(const ModelSpec & spec, Rng & rng) {
    spec.validate();
    ModelWeights w;
    w.spec = spec;
    w.embedding = rng.normal_matrix(spec.vocab_size, spec.embed_dim, kInitStd);
    if (spec.kind == LayerKind::softmax_attention) {
        w.pos_embedding = rng.normal_matrix(spec.max_seq, spec.embed_dim, kInitStd);
    } else {
        w.pos_embedding.resize(0, 0);
    }
    w.layers.reserve(spec.num_layers);
    w.layer_norm_gain.reserve(spec.num_layers);
    for (int l = 0; l < spec.num_layers; ++l) {
        switch (spec.kind) {
            case LayerKind::mamba1: w.layers.emplace_back(random_mamba1_layer(spec, rng)); break;
            case LayerKind::ssd:    w.layers.emplace_back(random_ssd_layer(spec, rng)); break;
            case LayerKind::softmax_attention:
                w.layers.emplace_back(random_attention_layer(spec, rng));
                break;
        }
        w.layer_norm_gain.push_back(Vector::Ones(spec.embed_dim));
    }
    w.final_norm_gain = Vector::Ones(spec.embed_dim);
    if (!spec.tied_unembedding) {
        w.unembedding = rng.normal_matrix(spec.embed_dim, spec.vocab_size, kInitStd);
    } else {
        w.unembedding.resize(0, 0);
    }
    return w;
}

}  // namespace ssmko
