#pragma once

// Selective state-space layers in two flavors plus full model assembly.
//
// A channel is a scalar-input SSM whose per-step transition A(t), input map
// B(t) and readout C(t) depend on a conditioning vector. The transition is
// parameterized as Abar^Delta(t) with Abar = exp(-exp(a_log)) in (0,1), so a
// span product collapses to Abar^(sum of Delta) in the log domain.
//
// Convention: x(t) = A(t) x(t-1) + B(t) u(t), y(t) = C(t) x(t) with x(0) = 0.
// The step-t input contributes to the step-t output, which gives the
// materialized kernel a nonzero diagonal.

#include "ssmko/numerics.hpp"

#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

namespace ssmko {

struct SelectiveSsmChannel {
    Vector a_log;        // n raw decay parameters
    Matrix b_proj;       // cond_dim x n
    Matrix c_proj;       // cond_dim x n
    Vector delta_proj;   // cond_dim
    double delta_bias = 0.0;

    Index state_dim() const { return a_log.size(); }
    Index cond_dim() const { return b_proj.rows(); }

    // Abar = exp(-exp(a_log)), strictly inside (0,1)
    Vector abar() const { return (-a_log.array().exp()).exp().matrix(); }
};

struct DiscretizedStep {
    Vector a;      // Abar^delta, elementwise
    Vector b;      // delta-scaled input map
    Vector c;      // readout
    double delta;  // softplus(delta_proj . cond + delta_bias) > 0
};

DiscretizedStep discretize(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & cond);

// Scan over explicit per-step coefficients; row t of a/b/c holds step t.
Vector scan_with_coeffs(const Eigen::Ref<const Matrix> & a, const Eigen::Ref<const Matrix> & b,
                        const Eigen::Ref<const Matrix> & c, const Eigen::Ref<const Vector> & u);

// General form: u drives the state, cond (one row per step) drives B/C/Delta.
Vector recurrent_scan(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & u,
                      const Eigen::Ref<const Matrix> & cond);

// Scalar-conditioned form (cond_dim == 1): the signal conditions itself.
Vector recurrent_scan(const SelectiveSsmChannel & ch, const Eigen::Ref<const Vector> & u);

// ---------------------------------------------------------------------------
// Mamba-1 style block: in_proj -> causal depthwise conv -> SiLU -> one
// independent SSM per channel -> SiLU gate -> out_proj. The residual add
// belongs to model_forward.

struct Mamba1Layer {
    Matrix in_proj;      // H x C
    Matrix gate_proj;    // H x C
    Matrix out_proj;     // C x H
    Matrix conv_kernel;  // C x k, tap j weighs input at t-j
    bool gated = true;
    std::vector<SelectiveSsmChannel> channels;  // size C, cond_dim == C

    Index channel_count() const { return static_cast<Index>(channels.size()); }
    Index conv_width() const { return conv_kernel.cols(); }
};

// Post-conv, post-SiLU inner activations U (L x C). U both drives each
// channel scalar stream and conditions every channel's B/C/Delta.
Matrix mamba1_inner_activations(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x);
Matrix mamba1_gate_activations(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x);

Matrix mamba1_layer_forward(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x);

// ---------------------------------------------------------------------------
// Mamba-2 / SSD style block: per head, Y = (L o (Q K^T)) V + skip_d V with a
// scalar-identity decay mask L[p][q] = prod_{t=q+1..p} a_t.

struct SsdHead {
    Matrix q_proj;      // H x n
    Matrix k_proj;      // H x n
    Matrix v_proj;      // H x dv
    double a_log = 0.0; // scalar decay parameter, a_t = exp(-exp(a_log) * delta_t)
    Vector delta_proj;  // H
    double delta_bias = 0.0;
    double skip_d = 0.0;

    double abar() const { return std::exp(-std::exp(a_log)); }
};

struct SsdLayer {
    std::vector<SsdHead> heads;
    Matrix out_proj;  // (heads * dv) x H
    bool skip_enabled = true;

    Index head_count() const { return static_cast<Index>(heads.size()); }
};

struct SsdHeadActivations {
    Matrix q, k, v;
    Vector delta;       // softplus-activated, per step
    Vector cum_delta;   // inclusive prefix sums of delta
    double kappa = 0.0; // exp(a_log)
};

SsdHeadActivations ssd_head_activations(const SsdHead & head, const Eigen::Ref<const Matrix> & x);

// Lower-triangular decay mask: mask(p,q) = exp(-kappa * (cum_delta_p - cum_delta_q)),
// 1 on the diagonal, 0 above.
Matrix ssd_decay_mask(const SsdHeadActivations & act);

// Evaluates the layer through the state recurrence
// x_p = a_p x_{p-1} + K_p^T (x) V_p, Y_p = Q_p x_p (+ skip).
Matrix ssd_layer_forward(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x);

// ---------------------------------------------------------------------------
// Model assembly

enum class LayerKind { mamba1, ssd, softmax_attention };

const char * to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string & s);

struct AttentionLayerParams {
    int heads = 1;
    Matrix wq, wk, wv;  // H x H, head h owns column block [h*dh, (h+1)*dh)
    Matrix wo;          // H x H
    Matrix ff1;         // H x F
    Vector ff1_bias;    // F
    Matrix ff2;         // F x H
    Vector ff2_bias;    // H
};

using LayerWeights = std::variant<Mamba1Layer, SsdLayer, AttentionLayerParams>;

struct ModelSpec {
    int vocab_size = 0;
    int embed_dim = 0;
    int num_layers = 0;
    LayerKind kind = LayerKind::ssd;
    bool tied_unembedding = true;

    // mamba1
    int m1_channels = 0;   // defaults to 2 * embed_dim when 0
    int m1_state_dim = 8;
    int m1_conv_k = 4;
    bool m1_gated = true;

    // ssd
    int ssd_heads = 4;
    int ssd_state_dim = 16;
    int ssd_head_dim = 16;
    bool ssd_skip = true;

    // softmax attention
    int attn_heads = 4;
    int ffn_mult = 4;
    int max_seq = 64;

    void validate() const;
    int mamba1_channels() const { return m1_channels > 0 ? m1_channels : 2 * embed_dim; }

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json & j);
};

struct ModelWeights {
    ModelSpec spec;
    Matrix embedding;                   // vocab x H
    Matrix pos_embedding;               // max_seq x H, softmax kind only
    std::vector<LayerWeights> layers;
    std::vector<Vector> layer_norm_gain;
    Vector final_norm_gain;
    Matrix unembedding;                 // H x vocab, empty when tied

    static constexpr double kNormEps = 1e-6;

    // H x vocab view regardless of tying
    Matrix unembed_matrix() const {
        return spec.tied_unembedding ? Matrix(embedding.transpose()) : unembedding;
    }
};

// Forward one layer on an already-normalized stream slice (no residual).
Matrix layer_forward(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x);

// embed -> per layer (rms_norm -> layer_forward -> residual add) -> final
// rms_norm -> unembed. Returns next-token logits at every position.
Matrix model_forward(const ModelWeights & w, std::span<const int> tokens);

// Gold-token probability at the final position.
double answer_probability(const ModelWeights & w, std::span<const int> tokens, int answer_token);
double answer_probability_from_logits(const Eigen::Ref<const Matrix> & logits, int answer_token);

ModelWeights random_model(const ModelSpec & spec, Rng & rng);

}  // namespace ssmko
