#include "ssmko/trainer.hpp"

#include "ssmko/transformer.hpp"

#include <algorithm>
#include <fstream>

namespace ssmko {

// ---------------------------------------------------------------------------
// Synthetic task

void FactTaskConfig::validate() const {
    if (num_subjects < 1 || num_relations < 1 || num_attributes < 1) {
        throw InvalidInput("fact task: counts must be positive");
    }
    if (max_subject_tokens < 1 || max_relation_tokens < 1) {
        throw InvalidInput("fact task: token spans must be at least 1");
    }
    if (relation_forms < 1 || relation_forms > 8) {
        throw InvalidInput("fact task: relation_forms must be in [1, 8]");
    }
}

PromptRecord SyntheticFactTask::make_prompt(int subject, int relation, int form) const {
    const auto & subj = subject_tokens.at(subject);
    const auto & rel = relation_tokens.at(relation).at(form);
    PromptRecord rec;
    rec.id = "s" + std::to_string(subject) + ".r" + std::to_string(relation) +
             ".f" + std::to_string(form);
    rec.token_ids.push_back(bos_token);
    rec.token_ids.insert(rec.token_ids.end(), subj.begin(), subj.end());
    rec.token_ids.insert(rec.token_ids.end(), rel.begin(), rel.end());
    rec.token_ids.push_back(query_token);
    rec.subject_span = {1, 1 + static_cast<int>(subj.size())};
    rec.relation_span = {rec.subject_span[1],
                         rec.subject_span[1] + static_cast<int>(rel.size())};
    rec.answer_token = attribute_tokens.at(fact.at(subject).at(relation));
    return rec;
}

std::pair<SyntheticFactTask, TaskSplits> generate_task(const FactTaskConfig & config, Rng & rng) {
    config.validate();
    SyntheticFactTask task;
    task.config = config;
    int next_id = 2;  // 0 = BOS, 1 = QUERY

    auto fresh_span = [&](int max_len) {
        const int len = 1 + static_cast<int>(rng.uniform_int(max_len));
        std::vector<int> ids(len);
        for (int & id : ids) {
            id = next_id++;
        }
        return ids;
    };

    task.subject_tokens.reserve(config.num_subjects);
    for (int s = 0; s < config.num_subjects; ++s) {
        task.subject_tokens.push_back(fresh_span(config.max_subject_tokens));
    }
    // Surface forms share the relation's base tokens and differ by one
    // trailing form token drawn from a global pool, the way paraphrases
    // share their content words. A model that keys facts on the base tokens
    // recalls them under either phrasing.
    std::vector<int> form_tokens(config.relation_forms);
    if (config.relation_forms > 1) {
        for (int & id : form_tokens) {
            id = next_id++;
        }
    }
    task.relation_tokens.reserve(config.num_relations);
    for (int r = 0; r < config.num_relations; ++r) {
        const std::vector<int> base =
            fresh_span(std::max(1, config.max_relation_tokens - (config.relation_forms > 1)));
        std::vector<std::vector<int>> forms;
        for (int f = 0; f < config.relation_forms; ++f) {
            std::vector<int> span = base;
            if (config.relation_forms > 1) {
                span.push_back(form_tokens[f]);
            }
            forms.push_back(std::move(span));
        }
        task.relation_tokens.push_back(std::move(forms));
    }
    task.attribute_tokens.reserve(config.num_attributes);
    for (int a = 0; a < config.num_attributes; ++a) {
        task.attribute_tokens.push_back(next_id++);
    }
    task.vocab_size = next_id;

    task.fact.assign(config.num_subjects, std::vector<int>(config.num_relations, 0));
    for (auto & row : task.fact) {
        for (int & a : row) {
            a = static_cast<int>(rng.uniform_int(config.num_attributes));
        }
    }

    // One phrasing per fact is held out for the eval probe; the rest train.
    // With a single form the eval probe reuses the training phrasing.
    TaskSplits splits;
    for (int s = 0; s < config.num_subjects; ++s) {
        for (int r = 0; r < config.num_relations; ++r) {
            if (config.relation_forms == 1) {
                splits.train.push_back(task.make_prompt(s, r, 0));
                splits.eval.push_back(task.make_prompt(s, r, 0));
            } else {
                const int held_out = static_cast<int>(rng.uniform_int(config.relation_forms));
                for (int f = 0; f < config.relation_forms; ++f) {
                    if (f != held_out) {
                        splits.train.push_back(task.make_prompt(s, r, f));
                    }
                }
                splits.eval.push_back(task.make_prompt(s, r, held_out));
            }
        }
    }
    return {std::move(task), std::move(splits)};
}

// ---------------------------------------------------------------------------
// Parameter traversal

namespace {

void push_span(std::vector<std::pair<std::string, std::span<double>>> & out,
               const std::string & name, double * data, size_t n) {
    out.emplace_back(name, std::span<double>(data, n));
}

void push_matrix(std::vector<std::pair<std::string, std::span<double>>> & out,
                 const std::string & name, Matrix & m) {
    push_span(out, name, m.data(), static_cast<size_t>(m.size()));
}

void push_vector(std::vector<std::pair<std::string, std::span<double>>> & out,
                 const std::string & name, Vector & v) {
    push_span(out, name, v.data(), static_cast<size_t>(v.size()));
}

}  // namespace

std::vector<std::pair<std::string, std::span<double>>> named_parameters(ModelWeights & w) {
    std::vector<std::pair<std::string, std::span<double>>> out;
    push_matrix(out, "embedding", w.embedding);
    if (w.pos_embedding.size() > 0) {
        push_matrix(out, "pos_embedding", w.pos_embedding);
    }
    for (size_t l = 0; l < w.layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        push_vector(out, p + "norm_gain", w.layer_norm_gain[l]);
        std::visit(
            [&](auto & layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Mamba1Layer>) {
                    push_matrix(out, p + "in_proj", layer.in_proj);
                    push_matrix(out, p + "gate_proj", layer.gate_proj);
                    push_matrix(out, p + "out_proj", layer.out_proj);
                    push_matrix(out, p + "conv_kernel", layer.conv_kernel);
                    for (size_t c = 0; c < layer.channels.size(); ++c) {
                        const std::string cp = p + "ssm." + std::to_string(c) + ".";
                        auto & ch = layer.channels[c];
                        push_vector(out, cp + "a_log", ch.a_log);
                        push_matrix(out, cp + "b_proj", ch.b_proj);
                        push_matrix(out, cp + "c_proj", ch.c_proj);
                        push_vector(out, cp + "delta_proj", ch.delta_proj);
                        push_span(out, cp + "delta_bias", &ch.delta_bias, 1);
                    }
                } else if constexpr (std::is_same_v<T, SsdLayer>) {
                    for (size_t h = 0; h < layer.heads.size(); ++h) {
                        const std::string hp = p + "heads." + std::to_string(h) + ".";
                        auto & head = layer.heads[h];
                        push_matrix(out, hp + "q_proj", head.q_proj);
                        push_matrix(out, hp + "k_proj", head.k_proj);
                        push_matrix(out, hp + "v_proj", head.v_proj);
                        push_span(out, hp + "a_log", &head.a_log, 1);
                        push_vector(out, hp + "delta_proj", head.delta_proj);
                        push_span(out, hp + "delta_bias", &head.delta_bias, 1);
                        push_span(out, hp + "skip_d", &head.skip_d, 1);
                    }
                    push_matrix(out, p + "out_proj", layer.out_proj);
                } else {
                    push_matrix(out, p + "wq", layer.wq);
                    push_matrix(out, p + "wk", layer.wk);
                    push_matrix(out, p + "wv", layer.wv);
                    push_matrix(out, p + "wo", layer.wo);
                    push_matrix(out, p + "ff1", layer.ff1);
                    push_vector(out, p + "ff1_bias", layer.ff1_bias);
                    push_matrix(out, p + "ff2", layer.ff2);
                    push_vector(out, p + "ff2_bias", layer.ff2_bias);
                }
            },
            w.layers[l]);
    }
    push_vector(out, "final_norm_gain", w.final_norm_gain);
    if (!w.spec.tied_unembedding) {
        push_matrix(out, "unembedding", w.unembedding);
    }
    return out;
}

std::vector<double *> parameter_pointers(ModelWeights & w) {
    std::vector<double *> out;
    for (auto & [name, span] : named_parameters(w)) {
        for (double & v : span) {
            out.push_back(&v);
        }
    }
    return out;
}

ModelWeights zeros_like(const ModelWeights & w) {
    ModelWeights g = w;
    for (double * p : parameter_pointers(g)) {
        *p = 0.0;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Forward caches and backward passes

namespace {

struct NormCache {
    Matrix x;  // pre-norm input
    Matrix z;  // normalized output
};

// dy flows back through z = rms_norm(x) * gain, accumulating dx and dgain.
void rms_norm_backward(const Matrix & x, const Vector & gain, const Matrix & dz,
                       Matrix & dx, Vector & dgain) {
    const Index h = x.cols();
    for (Index i = 0; i < x.rows(); ++i) {
        const double r = std::sqrt(x.row(i).squaredNorm() / static_cast<double>(h) +
                                   ModelWeights::kNormEps);
        const Vector xr = x.row(i);
        const Vector w = dz.row(i).transpose().cwiseProduct(gain);
        const double wx = w.dot(xr);
        dx.row(i) += (w / r - xr * (wx / (static_cast<double>(h) * r * r * r))).transpose();
        dgain += dz.row(i).transpose().cwiseProduct(xr / r);
    }
}

struct SsdHeadCache {
    SsdHeadActivations act;
    Matrix mask;     // L x L lower
    Matrix scores;   // Q K^T (full; only lower part used)
    Matrix kernel;   // mask o scores
};

struct SsdLayerCache {
    std::vector<SsdHeadCache> heads;
    Matrix concat;   // L x heads*dv
};

Matrix ssd_forward_cached(const SsdLayer & layer, const Matrix & z, SsdLayerCache & cache) {
    const Index len = z.rows();
    const Index dv = layer.heads[0].v_proj.cols();
    cache.heads.resize(layer.heads.size());
    cache.concat.resize(len, layer.head_count() * dv);
    for (Index h = 0; h < layer.head_count(); ++h) {
        SsdHeadCache & hc = cache.heads[h];
        hc.act = ssd_head_activations(layer.heads[h], z);
        hc.mask = ssd_decay_mask(hc.act);
        hc.scores = hc.act.q * hc.act.k.transpose();
        hc.kernel = hc.mask.cwiseProduct(hc.scores);
        Matrix y = hc.kernel * hc.act.v;
        if (layer.skip_enabled) {
            y += layer.heads[h].skip_d * hc.act.v;
        }
        cache.concat.middleCols(h * dv, dv) = y;
    }
    return cache.concat * layer.out_proj;
}

void ssd_backward(const SsdLayer & layer, const Matrix & z, const SsdLayerCache & cache,
                  const Matrix & dout, SsdLayer & g, Matrix & dz) {
    const Index len = z.rows();
    const Index dv = layer.heads[0].v_proj.cols();
    g.out_proj += cache.concat.transpose() * dout;
    const Matrix dconcat = dout * layer.out_proj.transpose();
    for (Index h = 0; h < layer.head_count(); ++h) {
        const SsdHead & head = layer.heads[h];
        const SsdHeadCache & hc = cache.heads[h];
        SsdHead & gh = g.heads[h];
        const Matrix gout = dconcat.middleCols(h * dv, dv);  // dY_head

        Matrix dvmat = hc.kernel.transpose() * gout;
        if (layer.skip_enabled) {
            gh.skip_d += (gout.cwiseProduct(hc.act.v)).sum();
            dvmat += head.skip_d * gout;
        }

        // kernel gradient, lower triangle only (upper is structural zero)
        Matrix dkernel = gout * hc.act.v.transpose();
        for (Index p = 0; p < len; ++p) {
            for (Index q = p + 1; q < len; ++q) {
                dkernel(p, q) = 0.0;
            }
        }
        const Matrix dscores = dkernel.cwiseProduct(hc.mask);
        const Matrix dmask = dkernel.cwiseProduct(hc.scores);

        const Matrix dq = dscores * hc.act.k;
        const Matrix dk = dscores.transpose() * hc.act.q;

        gh.q_proj += z.transpose() * dq;
        gh.k_proj += z.transpose() * dk;
        gh.v_proj += z.transpose() * dvmat;
        dz += dq * head.q_proj.transpose();
        dz += dk * head.k_proj.transpose();
        dz += dvmat * head.v_proj.transpose();

        // mask(p,q) = exp(-kappa (sigma_p - sigma_q)) for p > q; the unit
        // diagonal is constant and contributes nothing here.
        const double kappa = hc.act.kappa;
        double dkappa = 0.0;
        Vector dsigma = Vector::Zero(len);
        for (Index p = 1; p < len; ++p) {
            for (Index q = 0; q < p; ++q) {
                const double dm = dmask(p, q);
                if (dm == 0.0) continue;
                const double m = hc.mask(p, q);
                const double span = hc.act.cum_delta(p) - hc.act.cum_delta(q);
                dkappa += dm * m * (-span);
                dsigma(p) += dm * m * (-kappa);
                dsigma(q) += dm * m * kappa;
            }
        }
        gh.a_log += dkappa * kappa;

        // sigma_t = sum_{s<=t} delta_s, so d delta_t = sum_{s>=t} d sigma_s
        Vector ddelta(len);
        double suffix = 0.0;
        for (Index t = len - 1; t >= 0; --t) {
            suffix += dsigma(t);
            ddelta(t) = suffix;
        }
        // softplus'(pre) = 1 - exp(-delta)
        for (Index t = 0; t < len; ++t) {
            const double dpre = ddelta(t) * (1.0 - std::exp(-hc.act.delta(t)));
            gh.delta_proj += dpre * z.row(t).transpose();
            gh.delta_bias += dpre;
            dz.row(t) += dpre * head.delta_proj.transpose();
        }
    }
}

struct AttnLayerCache {
    std::vector<Matrix> q, k, v, probs;  // per head
    Matrix concat;                       // L x H
    Matrix ff_pre;                       // L x F, pre-GELU
    Matrix ff_act;                       // L x F
};

Matrix attn_forward_cached(const AttentionLayerParams & layer, const Matrix & z,
                           AttnLayerCache & cache) {
    const Index len = z.rows();
    const Index h = z.cols();
    const Index dh = h / layer.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.q.resize(layer.heads);
    cache.k.resize(layer.heads);
    cache.v.resize(layer.heads);
    cache.probs.resize(layer.heads);
    cache.concat.resize(len, h);
    for (int head = 0; head < layer.heads; ++head) {
        cache.q[head] = z * layer.wq.middleCols(head * dh, dh);
        cache.k[head] = z * layer.wk.middleCols(head * dh, dh);
        cache.v[head] = z * layer.wv.middleCols(head * dh, dh);
        Matrix scores = cache.q[head] * cache.k[head].transpose() * scale;
        for (Index p = 0; p < len; ++p) {
            for (Index s = p + 1; s < len; ++s) {
                scores(p, s) = kNegInf;
            }
        }
        cache.probs[head] = softmax_rows(scores);
        cache.concat.middleCols(head * dh, dh) = cache.probs[head] * cache.v[head];
    }
    const Matrix attn_out = cache.concat * layer.wo;

    cache.ff_pre = z * layer.ff1;
    cache.ff_pre.rowwise() += layer.ff1_bias.transpose();
    cache.ff_act = gelu(cache.ff_pre);
    Matrix ffn_out = cache.ff_act * layer.ff2;
    ffn_out.rowwise() += layer.ff2_bias.transpose();
    return attn_out + ffn_out;
}

void attn_backward(const AttentionLayerParams & layer, const Matrix & z,
                   const AttnLayerCache & cache, const Matrix & dout,
                   AttentionLayerParams & g, Matrix & dz) {
    const Index len = z.rows();
    const Index h = z.cols();
    const Index dh = h / layer.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // feed-forward branch
    g.ff2 += cache.ff_act.transpose() * dout;
    g.ff2_bias += dout.colwise().sum().transpose();
    Matrix dact = dout * layer.ff2.transpose();
    Matrix dpre = dact.cwiseProduct(cache.ff_pre.unaryExpr(
        [](double x) { return gelu_derivative(x); }));
    g.ff1 += z.transpose() * dpre;
    g.ff1_bias += dpre.colwise().sum().transpose();
    dz += dpre * layer.ff1.transpose();

    // attention branch
    g.wo += cache.concat.transpose() * dout;
    const Matrix dconcat = dout * layer.wo.transpose();
    for (int head = 0; head < layer.heads; ++head) {
        const Matrix do_h = dconcat.middleCols(head * dh, dh);
        const Matrix & p = cache.probs[head];
        Matrix dp = do_h * cache.v[head].transpose();
        Matrix dvh = p.transpose() * do_h;
        // softmax backward per row; masked entries have p == 0
        Matrix dscores(len, len);
        for (Index i = 0; i < len; ++i) {
            const double dot = dp.row(i).dot(p.row(i));
            dscores.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        const Matrix dq = dscores * cache.k[head] * scale;
        const Matrix dk = dscores.transpose() * cache.q[head] * scale;
        g.wq.middleCols(head * dh, dh) += z.transpose() * dq;
        g.wk.middleCols(head * dh, dh) += z.transpose() * dk;
        g.wv.middleCols(head * dh, dh) += z.transpose() * dvh;
        dz += dq * layer.wq.middleCols(head * dh, dh).transpose();
        dz += dk * layer.wk.middleCols(head * dh, dh).transpose();
        dz += dvh * layer.wv.middleCols(head * dh, dh).transpose();
    }
}

struct ForwardCache {
    std::vector<NormCache> norms;            // per layer
    std::vector<SsdLayerCache> ssd;          // per layer (ssd kind)
    std::vector<AttnLayerCache> attn;        // per layer (softmax kind)
    Matrix x_final;                          // stream into the final norm
    Matrix z_final;
    Vector logits;                           // final position
    Vector probs;
};

Vector forward_with_cache(const ModelWeights & w, std::span<const int> tokens,
                          ForwardCache & cache) {
    const Index len = static_cast<Index>(tokens.size());
    Matrix x(len, w.spec.embed_dim);
    for (Index t = 0; t < len; ++t) {
        const int id = tokens[t];
        if (id < 0 || id >= w.spec.vocab_size) {
            throw InvalidInput("trainer forward: token id out of range");
        }
        x.row(t) = w.embedding.row(id);
    }
    if (w.spec.kind == LayerKind::softmax_attention) {
        if (len > w.pos_embedding.rows()) {
            throw InvalidInput("trainer forward: sequence exceeds max_seq");
        }
        x += w.pos_embedding.topRows(len);
    }
    const size_t n_layers = w.layers.size();
    cache.norms.resize(n_layers);
    if (w.spec.kind == LayerKind::ssd) {
        cache.ssd.resize(n_layers);
    } else {
        cache.attn.resize(n_layers);
    }
    for (size_t l = 0; l < n_layers; ++l) {
        cache.norms[l].x = x;
        cache.norms[l].z = rms_norm(x, w.layer_norm_gain[l], ModelWeights::kNormEps);
        if (w.spec.kind == LayerKind::ssd) {
            x += ssd_forward_cached(std::get<SsdLayer>(w.layers[l]), cache.norms[l].z,
                                    cache.ssd[l]);
        } else {
            x += attn_forward_cached(std::get<AttentionLayerParams>(w.layers[l]),
                                     cache.norms[l].z, cache.attn[l]);
        }
    }
    cache.x_final = x;
    cache.z_final = rms_norm(x, w.final_norm_gain, ModelWeights::kNormEps);
    cache.logits = (cache.z_final.row(len - 1) * w.unembed_matrix()).transpose();
    Matrix row(1, cache.logits.size());
    row.row(0) = cache.logits.transpose();
    cache.probs = softmax_rows(row).row(0).transpose();
    return cache.logits;
}

// dlogits already carries the 1/batch factor
void backward_from_logits(const ModelWeights & w, std::span<const int> tokens,
                          const ForwardCache & cache, const Vector & dlogits,
                          ModelWeights & g) {
    const Index len = static_cast<Index>(tokens.size());
    const Matrix u = w.unembed_matrix();  // H x vocab

    // unembed
    Matrix dz_final = Matrix::Zero(len, w.spec.embed_dim);
    dz_final.row(len - 1) = (u * dlogits).transpose();
    const Matrix du = cache.z_final.row(len - 1).transpose() * dlogits.transpose();
    if (w.spec.tied_unembedding) {
        g.embedding += du.transpose();
    } else {
        g.unembedding += du;
    }

    Matrix dx = Matrix::Zero(len, w.spec.embed_dim);
    rms_norm_backward(cache.x_final, w.final_norm_gain, dz_final, dx, g.final_norm_gain);

    for (size_t l = w.layers.size(); l-- > 0;) {
        Matrix dz = Matrix::Zero(len, w.spec.embed_dim);
        if (w.spec.kind == LayerKind::ssd) {
            ssd_backward(std::get<SsdLayer>(w.layers[l]), cache.norms[l].z, cache.ssd[l], dx,
                         std::get<SsdLayer>(g.layers[l]), dz);
        } else {
            attn_backward(std::get<AttentionLayerParams>(w.layers[l]), cache.norms[l].z,
                          cache.attn[l], dx, std::get<AttentionLayerParams>(g.layers[l]), dz);
        }
        // residual: dx flows through unchanged plus through the norm
        rms_norm_backward(cache.norms[l].x, w.layer_norm_gain[l], dz, dx, g.layer_norm_gain[l]);
    }

    for (Index t = 0; t < len; ++t) {
        g.embedding.row(tokens[t]) += dx.row(t);
    }
    if (w.spec.kind == LayerKind::softmax_attention) {
        g.pos_embedding.topRows(len) += dx;
    }
}

}  // namespace

Vector training_forward_logits(const ModelWeights & w, std::span<const int> tokens) {
    ForwardCache cache;
    return forward_with_cache(w, tokens, cache);
}

std::pair<double, ModelWeights> loss_and_grads(const ModelWeights & w,
                                               std::span<const TrainExample> batch) {
    if (batch.empty()) {
        throw InvalidInput("loss_and_grads: empty batch");
    }
    if (w.spec.kind == LayerKind::mamba1) {
        throw InvalidInput("loss_and_grads: mamba1 is not trainable");
    }
    ModelWeights g = zeros_like(w);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const TrainExample & ex : batch) {
        if (ex.answer < 0 || ex.answer >= w.spec.vocab_size) {
            throw InvalidInput("loss_and_grads: answer token out of range");
        }
        ForwardCache cache;
        try {
            forward_with_cache(w, ex.tokens, cache);
        } catch (const NumericError & e) {
            throw TrainingFault(std::string("loss_and_grads: ") + e.what(), -1);
        }
        const double p_gold = cache.probs(ex.answer);
        loss += -std::log(p_gold) * scale;
        Vector dlogits = cache.probs * scale;
        dlogits(ex.answer) -= scale;
        backward_from_logits(w, ex.tokens, cache, dlogits, g);
    }
    if (!std::isfinite(loss)) {
        throw TrainingFault("loss_and_grads: non-finite loss", -1);
    }
    return {loss, std::move(g)};
}

double gold_token_accuracy(const ModelWeights & w, std::span<const PromptRecord> records) {
    if (records.empty()) {
        return 0.0;
    }
    int correct = 0;
    for (const PromptRecord & rec : records) {
        const Matrix logits = model_forward(w, rec.token_ids);
        Index argmax = 0;
        logits.row(logits.rows() - 1).maxCoeff(&argmax);
        if (static_cast<int>(argmax) == rec.answer_token) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

TrainResult train(const ModelSpec & spec, const TaskSplits & splits, const TrainConfig & config) {
    if (config.steps < 0 || config.batch_size < 1) {
        throw InvalidInput("train: bad step or batch count");
    }
    if (config.steps > 0 && spec.kind == LayerKind::mamba1) {
        throw InvalidInput("train: mamba1 is not trainable (steps must be 0)");
    }
    if (splits.train.empty()) {
        throw InvalidInput("train: empty train split");
    }
    Rng rng(config.seed);
    TrainResult result;
    result.weights = random_model(spec, rng);

    std::vector<double *> params = parameter_pointers(result.weights);
    std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0);

    for (int step = 1; step <= config.steps; ++step) {
        std::vector<TrainExample> batch;
        batch.reserve(config.batch_size);
        for (int b = 0; b < config.batch_size; ++b) {
            const auto & rec = splits.train[rng.uniform_int(splits.train.size())];
            batch.push_back({rec.token_ids, rec.answer_token});
        }
        double loss = 0.0;
        ModelWeights grads;
        try {
            std::tie(loss, grads) = loss_and_grads(result.weights, batch);
        } catch (const TrainingFault & e) {
            throw TrainDivergence(std::string(e.what()) + " at step " + std::to_string(step),
                                  step, std::move(result.log));
        }
        const double warm = config.warmup_steps > 0
                                ? std::min(1.0, static_cast<double>(step) / config.warmup_steps)
                                : 1.0;
        const double lr = config.learning_rate * warm;
        const std::vector<double *> gptrs = parameter_pointers(grads);
        const double bc1 = 1.0 - std::pow(config.beta1, step);
        const double bc2 = 1.0 - std::pow(config.beta2, step);
        for (size_t i = 0; i < params.size(); ++i) {
            const double gi = *gptrs[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            *params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.adam_eps);
        }

        StepMetrics metrics;
        metrics.step = step;
        metrics.loss = loss;
        const bool eval_now = (config.eval_interval > 0 && step % config.eval_interval == 0) ||
                              step == config.steps;
        if (eval_now) {
            metrics.eval_accuracy = gold_token_accuracy(result.weights, splits.eval);
            result.final_eval_accuracy = metrics.eval_accuracy;
        }
        result.log.push_back(metrics);
        if (eval_now && metrics.eval_accuracy >= config.target_accuracy) {
            result.reached_target = true;
            break;
        }
    }
    if (!result.reached_target) {
        result.final_eval_accuracy = gold_token_accuracy(result.weights, splits.eval);
        result.reached_target = result.final_eval_accuracy >= config.target_accuracy;
    }
    return result;
}

void write_metrics_jsonl(const std::string & path, const std::vector<StepMetrics> & log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("metrics: cannot open " + path);
    }
    for (const StepMetrics & m : log) {
        nlohmann::json j;
        j["step"] = m.step;
        j["loss"] = m.loss;
        if (m.eval_accuracy >= 0.0) {
            j["eval_accuracy"] = m.eval_accuracy;
        }
        out << j.dump() << "\n";
    }
}

}  // namespace ssmko
