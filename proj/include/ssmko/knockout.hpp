#pragma once

// Declarative interventions: token-pair attention knockout over a layer
// window, optionally restricted to feature subsets classified by decay norm.
// Applies uniformly to both SSM kinds (kernel zeroing on a materialized
// copy) and to the softmax baseline (logit masking).

#include "ssmko/attention_view.hpp"
#include "ssmko/transformer.hpp"

#include <optional>
#include <vector>

#include <json.hpp>

namespace ssmko {

enum class FeatureScopeKind { all, context_dependent, context_independent, explicit_units };

struct FeatureScope {
    FeatureScopeKind kind = FeatureScopeKind::all;
    std::vector<int> units;  // explicit_units only

    static FeatureScope all() { return {}; }
};

struct KnockoutSpec {
    int first_layer = 0;
    int window_size = 0;                 // [first_layer, first_layer + window_size)
    std::vector<int> source_positions;   // r
    std::vector<int> target_positions;   // c, every pair must satisfy r <= c
    FeatureScope scope;
    AttentionEdits::Mode baseline_masking = AttentionEdits::Mode::renormalize;

    bool in_window(int layer) const {
        return layer >= first_layer && layer < first_layer + window_size;
    }
    // No window or no pairs means nothing to edit.
    bool is_empty() const {
        return window_size <= 0 || source_positions.empty() || target_positions.empty();
    }

    void validate(int num_layers, Index seq_len) const;

    nlohmann::json to_json() const;
    static KnockoutSpec from_json(const nlohmann::json & j);
};

// Decay-norm thirds. score(unit) = ||Abar||_1; the top third by score is
// context-dependent (slow decay), the bottom third context-independent,
// ties broken by ascending unit index. |top| = |bottom| = floor(units / 3).
struct FeatureClassification {
    std::vector<double> scores;             // indexed by unit
    std::vector<int> context_dependent;
    std::vector<int> middle;
    std::vector<int> context_independent;
};

FeatureClassification classify_features(const Mamba1Layer & layer);
FeatureClassification classify_features(const SsdLayer & layer);
FeatureClassification classify_features(const LayerWeights & layer);

// Units a scope selects; classification may be null for all/explicit scopes.
std::vector<int> resolve_scope(const FeatureScope & scope, Index unit_count,
                               const FeatureClassification * classification);

// Returns an edited copy; the input tensor is never mutated.
AttentionTensor apply_knockout(const AttentionTensor & attn, const KnockoutSpec & spec,
                               const FeatureClassification * classification);

// Layers inside the window evaluate through the materialized path with edits
// applied (or masked logits for the softmax baseline); all other layers take
// the recurrent path. An empty spec short-circuits to model_forward and is a
// bitwise no-op.
Matrix knocked_forward(const ModelWeights & w, std::span<const int> tokens,
                       const KnockoutSpec & spec);

double knocked_answer_probability(const ModelWeights & w, std::span<const int> tokens,
                                  int answer_token, const KnockoutSpec & spec);

// 100 * (p_ko - p_base) / p_base. A zero baseline has no defined change.
double relative_change(double p_base, double p_ko);

}  // namespace ssmko
