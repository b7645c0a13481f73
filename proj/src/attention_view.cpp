#include "ssmko/attention_view.hpp"

#include "ssmko/archive.hpp"

namespace ssmko {

AttentionTensor materialize(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index) {
    const Matrix u = mamba1_inner_activations(layer, x);
    const Index len = u.rows();
    const Index chans = layer.channel_count();

    AttentionTensor attn;
    attn.layer_index = layer_index;
    attn.unit_axis = "channel";
    attn.units.reserve(chans);

    for (Index c = 0; c < chans; ++c) {
        const SelectiveSsmChannel & ch = layer.channels[c];
        const Index n = ch.state_dim();
        const Vector kappa = ch.a_log.array().exp();  // Abar = exp(-kappa)

        Matrix b_steps(len, n), c_steps(len, n);
        Vector cum_delta(len);
        double run = 0.0;
        for (Index t = 0; t < len; ++t) {
            const DiscretizedStep step = discretize(ch, u.row(t).transpose());
            b_steps.row(t) = step.b;
            c_steps.row(t) = step.c;
            run += step.delta;
            cum_delta(t) = run;
        }

        Matrix m = Matrix::Zero(len, len);
        for (Index p = 0; p < len; ++p) {
            m(p, p) = c_steps.row(p).dot(b_steps.row(p));  // empty decay product
            for (Index q = 0; q < p; ++q) {
                const double span = cum_delta(p) - cum_delta(q);
                double acc = 0.0;
                for (Index i = 0; i < n; ++i) {
                    acc += c_steps(p, i) * std::exp(-kappa(i) * span) * b_steps(q, i);
                }
                m(p, q) = acc;
            }
        }
        attn.units.push_back(std::move(m));
    }
    return attn;
}

AttentionTensor materialize(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index) {
    AttentionTensor attn;
    attn.layer_index = layer_index;
    attn.unit_axis = "head";
    attn.units.reserve(layer.heads.size());
    for (const SsdHead & head : layer.heads) {
        const SsdHeadActivations act = ssd_head_activations(head, x);
        const Matrix mask = ssd_decay_mask(act);
        Matrix m = mask.cwiseProduct(act.q * act.k.transpose());
        attn.units.push_back(std::move(m));
    }
    return attn;
}

AttentionTensor materialize(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index) {
    return std::visit(
        [&](const auto & l) -> AttentionTensor {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, AttentionLayerParams>) {
                throw InvalidInput("materialize: softmax-attention layers have no hidden kernel");
            } else {
                return materialize(l, x, layer_index);
            }
        },
        layer);
}

namespace {

void check_compat(const AttentionTensor & attn, Index units, Index len, const char * what) {
    if (attn.unit_count() != units || attn.seq_len() != len) {
        throw ShapeError(std::string(what) + ": attention tensor does not match layer/input");
    }
}

}  // namespace

Matrix forward_via_attention(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn) {
    const Matrix u = mamba1_inner_activations(layer, x);
    check_compat(attn, layer.channel_count(), u.rows(), "forward_via_attention(mamba1)");
    Matrix y(u.rows(), u.cols());
    for (Index c = 0; c < layer.channel_count(); ++c) {
        y.col(c) = attn.units[c] * u.col(c);
    }
    if (layer.gated) {
        y = y.cwiseProduct(mamba1_gate_activations(layer, x));
    }
    return y * layer.out_proj;
}

Matrix forward_via_attention(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn) {
    check_compat(attn, layer.head_count(), x.rows(), "forward_via_attention(ssd)");
    const Index dv = layer.heads[0].v_proj.cols();
    Matrix concat(x.rows(), layer.head_count() * dv);
    for (Index h = 0; h < layer.head_count(); ++h) {
        const Matrix v = x * layer.heads[h].v_proj;
        Matrix y = attn.units[h] * v;
        if (layer.skip_enabled) {
            y += layer.heads[h].skip_d * v;
        }
        concat.middleCols(h * dv, dv) = y;
    }
    return concat * layer.out_proj;
}

Matrix forward_via_attention(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn) {
    return std::visit(
        [&](const auto & l) -> Matrix {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, AttentionLayerParams>) {
                throw InvalidInput("forward_via_attention: not defined for softmax layers");
            } else {
                return forward_via_attention(l, x, attn);
            }
        },
        layer);
}

std::vector<int> DualPathReport::failing_layers() const {
    std::vector<int> out;
    for (const auto & l : layers) {
        if (!(l.max_abs <= tolerance)) {
            out.push_back(l.layer);
        }
    }
    return out;
}

DualPathReport dual_path_check(const ModelWeights & w, std::span<const int> tokens,
                               double tolerance, const AttentionEditHook & hook) {
    if (tolerance <= 0.0) {
        throw InvalidInput("dual_path_check: tolerance must be positive");
    }
    if (w.spec.kind == LayerKind::softmax_attention) {
        throw InvalidInput("dual_path_check: softmax baseline has a single path");
    }
    const Index len = static_cast<Index>(tokens.size());
    Matrix x(len, w.spec.embed_dim);
    for (Index t = 0; t < len; ++t) {
        x.row(t) = w.embedding.row(tokens[t]);
    }
    DualPathReport report;
    report.tolerance = tolerance;
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const Matrix z = rms_norm(x, w.layer_norm_gain[l], ModelWeights::kNormEps);
        const Matrix y_rec = layer_forward(w.layers[l], z);
        AttentionTensor attn = materialize(w.layers[l], z, static_cast<int>(l));
        if (hook) {
            hook(static_cast<int>(l), attn);
        }
        const Matrix y_attn = forward_via_attention(w.layers[l], z, attn);
        report.layers.push_back({static_cast<int>(l), (y_rec - y_attn).cwiseAbs().maxCoeff()});
        x += y_rec;  // the recurrent path carries the stream
    }
    report.pass = report.failing_layers().empty();
    return report;
}

void dump_attention(const std::string & path, const AttentionTensor & attn) {
    Archive ar;
    ar.meta = {{"format", "ssmko-attention"},
               {"layer_index", attn.layer_index},
               {"unit_axis", attn.unit_axis}};
    TensorEntry e;
    const Index len = attn.seq_len();
    e.shape = {attn.unit_count(), len, len};
    e.data.reserve(attn.unit_count() * len * len);
    for (const Matrix & m : attn.units) {
        e.data.insert(e.data.end(), m.data(), m.data() + m.size());
    }
    ar.tensors["attention"] = std::move(e);
    write_archive(path, ar);
}

AttentionTensor load_attention_dump(const std::string & path) {
    const Archive ar = read_archive(path);
    const TensorEntry & e = ar.at("attention");
    if (e.shape.size() != 3 || e.shape[1] != e.shape[2]) {
        throw IoError("attention dump: expected [units, L, L] tensor");
    }
    AttentionTensor attn;
    attn.layer_index = ar.meta.value("layer_index", -1);
    attn.unit_axis = ar.meta.value("unit_axis", "");
    const int64_t stride = e.shape[1] * e.shape[2];
    for (int64_t u = 0; u < e.shape[0]; ++u) {
        attn.units.emplace_back(
            Eigen::Map<const Matrix>(e.data.data() + u * stride, e.shape[1], e.shape[2]));
    }
    return attn;
}

}  // namespace ssmko
