#pragma once

// Compact causal softmax-attention baseline. One block = multi-head
// attention plus a two-layer GELU feed-forward, evaluated in parallel on the
// normalized stream; the residual add lives in model_forward.

#include "ssmko/ssm.hpp"

#include <utility>
#include <vector>

namespace ssmko {

struct AttentionEdits {
    enum class Mode {
        renormalize,  // -inf on masked logits before softmax; rows renormalize
        zero,         // zero masked weights after softmax; rows do not renormalize
    };
    std::vector<std::pair<int, int>> pairs;  // (target, source), source <= target
    Mode mode = Mode::renormalize;
};

// Per-head attention probability matrices (L x L each), edits applied.
std::vector<Matrix> attention_weights(const AttentionLayerParams & layer,
                                      const Eigen::Ref<const Matrix> & x,
                                      const AttentionEdits * edits);

Matrix attention_layer_forward(const AttentionLayerParams & layer,
                               const Eigen::Ref<const Matrix> & x,
                               const AttentionEdits * edits);

}  // namespace ssmko
