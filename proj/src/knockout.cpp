#include "ssmko/knockout.hpp"

#include <algorithm>
#include <numeric>

namespace ssmko {

namespace {

const char * scope_kind_name(FeatureScopeKind k) {
    switch (k) {
        case FeatureScopeKind::all:                 return "all";
        case FeatureScopeKind::context_dependent:   return "context_dependent";
        case FeatureScopeKind::context_independent: return "context_independent";
        case FeatureScopeKind::explicit_units:      return "explicit";
    }
    throw InvalidInput("unknown feature scope");
}

}  // namespace

void KnockoutSpec::validate(int num_layers, Index seq_len) const {
    if (window_size < 0) {
        throw InvalidInput("knockout spec: negative window size");
    }
    if (window_size > 0 && (first_layer < 0 || first_layer + window_size > num_layers)) {
        throw InvalidInput("knockout spec: window outside [0, num_layers)");
    }
    for (int r : source_positions) {
        if (r < 0 || r >= seq_len) throw InvalidInput("knockout spec: source position out of range");
    }
    for (int c : target_positions) {
        if (c < 0 || c >= seq_len) throw InvalidInput("knockout spec: target position out of range");
    }
    for (int c : target_positions) {
        for (int r : source_positions) {
            if (r > c) {
                throw InvalidInput("knockout spec: source " + std::to_string(r) +
                                   " follows target " + std::to_string(c));
            }
        }
    }
}

nlohmann::json KnockoutSpec::to_json() const {
    nlohmann::json j;
    j["first_layer"] = first_layer;
    j["window_size"] = window_size;
    j["sources"] = source_positions;
    j["targets"] = target_positions;
    if (scope.kind == FeatureScopeKind::explicit_units) {
        j["feature_scope"] = scope.units;
    } else {
        j["feature_scope"] = scope_kind_name(scope.kind);
    }
    j["baseline_masking"] =
        baseline_masking == AttentionEdits::Mode::renormalize ? "renormalize" : "zero";
    return j;
}

KnockoutSpec KnockoutSpec::from_json(const nlohmann::json & j) {
    KnockoutSpec spec;
    spec.first_layer = j.at("first_layer").get<int>();
    spec.window_size = j.at("window_size").get<int>();
    spec.source_positions = j.at("sources").get<std::vector<int>>();
    spec.target_positions = j.at("targets").get<std::vector<int>>();
    const auto & fs = j.at("feature_scope");
    if (fs.is_array()) {
        spec.scope.kind = FeatureScopeKind::explicit_units;
        spec.scope.units = fs.get<std::vector<int>>();
    } else {
        const std::string name = fs.get<std::string>();
        if (name == "all")                      spec.scope.kind = FeatureScopeKind::all;
        else if (name == "context_dependent")   spec.scope.kind = FeatureScopeKind::context_dependent;
        else if (name == "context_independent") spec.scope.kind = FeatureScopeKind::context_independent;
        else throw InvalidInput("knockout spec: unknown feature scope " + name);
    }
    const std::string masking = j.value("baseline_masking", "renormalize");
    if (masking == "renormalize")  spec.baseline_masking = AttentionEdits::Mode::renormalize;
    else if (masking == "zero")    spec.baseline_masking = AttentionEdits::Mode::zero;
    else throw InvalidInput("knockout spec: unknown baseline masking " + masking);
    return spec;
}

namespace {

FeatureClassification classify_scores(std::vector<double> scores) {
    const int units = static_cast<int>(scores.size());
    if (units < 3) {
        throw InvalidInput("classify_features: need at least 3 units, got " +
                           std::to_string(units));
    }
    std::vector<int> order(units);
    std::iota(order.begin(), order.end(), 0);
    // descending score, ascending index on ties
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    const int third = units / 3;
    FeatureClassification cls;
    cls.scores = std::move(scores);
    cls.context_dependent.assign(order.begin(), order.begin() + third);
    cls.middle.assign(order.begin() + third, order.end() - third);
    cls.context_independent.assign(order.end() - third, order.end());
    return cls;
}

}  // namespace

FeatureClassification classify_features(const Mamba1Layer & layer) {
    std::vector<double> scores;
    scores.reserve(layer.channels.size());
    for (const auto & ch : layer.channels) {
        scores.push_back(ch.abar().lpNorm<1>());
    }
    return classify_scores(std::move(scores));
}

FeatureClassification classify_features(const SsdLayer & layer) {
    std::vector<double> scores;
    scores.reserve(layer.heads.size());
    for (const auto & head : layer.heads) {
        scores.push_back(std::abs(head.abar()));
    }
    return classify_scores(std::move(scores));
}

FeatureClassification classify_features(const LayerWeights & layer) {
    return std::visit(
        [](const auto & l) -> FeatureClassification {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, AttentionLayerParams>) {
                throw InvalidInput("classify_features: softmax layers have no decay features");
            } else {
                return classify_features(l);
            }
        },
        layer);
}

std::vector<int> resolve_scope(const FeatureScope & scope, Index unit_count,
                               const FeatureClassification * classification) {
    switch (scope.kind) {
        case FeatureScopeKind::all: {
            std::vector<int> all(unit_count);
            std::iota(all.begin(), all.end(), 0);
            return all;
        }
        case FeatureScopeKind::explicit_units:
            for (int u : scope.units) {
                if (u < 0 || u >= unit_count) {
                    throw InvalidInput("feature scope: unit index out of range");
                }
            }
            return scope.units;
        case FeatureScopeKind::context_dependent:
        case FeatureScopeKind::context_independent:
            if (classification == nullptr) {
                throw InvalidInput("feature scope: classification required");
            }
            return scope.kind == FeatureScopeKind::context_dependent
                       ? classification->context_dependent
                       : classification->context_independent;
    }
    throw InvalidInput("unknown feature scope");
}

AttentionTensor apply_knockout(const AttentionTensor & attn, const KnockoutSpec & spec,
                               const FeatureClassification * classification) {
    if (spec.window_size > 0 && !spec.in_window(attn.layer_index)) {
        throw InvalidInput("apply_knockout: tensor layer " + std::to_string(attn.layer_index) +
                           " outside knockout window");
    }
    const Index len = attn.seq_len();
    for (int r : spec.source_positions) {
        if (r < 0 || r >= len) throw InvalidInput("apply_knockout: source out of range");
    }
    for (int c : spec.target_positions) {
        if (c < 0 || c >= len) throw InvalidInput("apply_knockout: target out of range");
    }
    const std::vector<int> units = resolve_scope(spec.scope, attn.unit_count(), classification);
    AttentionTensor out = attn;
    for (int u : units) {
        for (int c : spec.target_positions) {
            for (int r : spec.source_positions) {
                out.units[u](c, r) = 0.0;
            }
        }
    }
    return out;
}

Matrix knocked_forward(const ModelWeights & w, std::span<const int> tokens,
                       const KnockoutSpec & spec) {
    if (spec.is_empty()) {
        return model_forward(w, tokens);
    }
    const Index len = static_cast<Index>(tokens.size());
    spec.validate(w.spec.num_layers, len);

    const bool needs_classification = spec.scope.kind == FeatureScopeKind::context_dependent ||
                                      spec.scope.kind == FeatureScopeKind::context_independent;
    if (w.spec.kind == LayerKind::softmax_attention &&
        spec.scope.kind != FeatureScopeKind::all) {
        throw InvalidInput("knocked_forward: feature scopes require an SSM layer kind");
    }

    AttentionEdits edits;
    edits.mode = spec.baseline_masking;
    for (int c : spec.target_positions) {
        for (int r : spec.source_positions) {
            edits.pairs.emplace_back(c, r);
        }
    }

    Matrix x(len, w.spec.embed_dim);
    for (Index t = 0; t < len; ++t) {
        const int id = tokens[t];
        if (id < 0 || id >= w.spec.vocab_size) {
            throw InvalidInput("knocked_forward: token id out of range");
        }
        x.row(t) = w.embedding.row(id);
    }
    if (w.spec.kind == LayerKind::softmax_attention) {
        if (len > w.pos_embedding.rows()) {
            throw InvalidInput("knocked_forward: sequence exceeds max_seq");
        }
        x += w.pos_embedding.topRows(len);
    }

    for (size_t l = 0; l < w.layers.size(); ++l) {
        const Matrix z = rms_norm(x, w.layer_norm_gain[l], ModelWeights::kNormEps);
        if (!spec.in_window(static_cast<int>(l))) {
            x += layer_forward(w.layers[l], z);
            continue;
        }
        if (w.spec.kind == LayerKind::softmax_attention) {
            x += attention_layer_forward(std::get<AttentionLayerParams>(w.layers[l]), z, &edits);
            continue;
        }
        const AttentionTensor attn = materialize(w.layers[l], z, static_cast<int>(l));
        std::optional<FeatureClassification> cls;
        if (needs_classification) {
            cls = classify_features(w.layers[l]);
        }
        const AttentionTensor edited = apply_knockout(attn, spec, cls ? &*cls : nullptr);
        x += forward_via_attention(w.layers[l], z, edited);
    }
    const Matrix z = rms_norm(x, w.final_norm_gain, ModelWeights::kNormEps);
    return z * w.unembed_matrix();
}

double knocked_answer_probability(const ModelWeights & w, std::span<const int> tokens,
                                  int answer_token, const KnockoutSpec & spec) {
    return answer_probability_from_logits(knocked_forward(w, tokens, spec), answer_token);
}

double relative_change(double p_base, double p_ko) {
    if (!(p_base > 0.0)) {
        throw InvalidInput("relative_change: baseline probability must be positive");
    }
    return 100.0 * (p_ko - p_base) / p_base;
}

}  // namespace ssmko
