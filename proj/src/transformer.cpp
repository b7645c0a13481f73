#include "ssmko/transformer.hpp"

namespace ssmko {

std::vector<Matrix> attention_weights(const AttentionLayerParams & layer,
                                      const Eigen::Ref<const Matrix> & x,
                                      const AttentionEdits * edits) {
    const Index len = x.rows();
    const Index h = x.cols();
    if (h != layer.wq.rows() || layer.heads < 1 || h % layer.heads != 0) {
        throw ShapeError("attention: head geometry does not match input width");
    }
    const Index dh = h / layer.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    if (edits != nullptr) {
        for (const auto & [c, r] : edits->pairs) {
            if (c < 0 || c >= len || r < 0 || r >= len) {
                throw InvalidInput("attention edits: position out of range");
            }
            if (r > c) {
                throw InvalidInput("attention edits: source must not follow target");
            }
        }
    }

    std::vector<Matrix> weights;
    weights.reserve(layer.heads);
    for (int head = 0; head < layer.heads; ++head) {
        const Matrix q = x * layer.wq.middleCols(head * dh, dh);
        const Matrix k = x * layer.wk.middleCols(head * dh, dh);
        Matrix scores = q * k.transpose() * scale;
        for (Index p = 0; p < len; ++p) {
            for (Index s = p + 1; s < len; ++s) {
                scores(p, s) = kNegInf;
            }
        }
        if (edits != nullptr && edits->mode == AttentionEdits::Mode::renormalize) {
            for (const auto & [c, r] : edits->pairs) {
                scores(c, r) = kNegInf;
            }
        }
        Matrix p = softmax_rows(scores);
        if (edits != nullptr && edits->mode == AttentionEdits::Mode::zero) {
            for (const auto & [c, r] : edits->pairs) {
                p(c, r) = 0.0;
            }
        }
        weights.push_back(std::move(p));
    }
    return weights;
}

Matrix attention_layer_forward(const AttentionLayerParams & layer,
                               const Eigen::Ref<const Matrix> & x,
                               const AttentionEdits * edits) {
    const Index len = x.rows();
    const Index h = x.cols();
    const Index dh = h / layer.heads;
    const std::vector<Matrix> weights = attention_weights(layer, x, edits);

    Matrix concat(len, h);
    for (int head = 0; head < layer.heads; ++head) {
        const Matrix v = x * layer.wv.middleCols(head * dh, dh);
        concat.middleCols(head * dh, dh) = weights[head] * v;
    }
    const Matrix attn_out = concat * layer.wo;

    Matrix hidden = x * layer.ff1;
    hidden.rowwise() += layer.ff1_bias.transpose();
    hidden = gelu(hidden);
    Matrix ffn_out = hidden * layer.ff2;
    ffn_out.rowwise() += layer.ff2_bias.transpose();

    return attn_out + ffn_out;
}

}  // namespace ssmko
