#pragma once

// Materialized hidden-attention view of the SSM layers.
//
// For a Mamba-1 channel the kernel entry (p, q) is
//   C(p) . (prod_{r=q+1..p} A(r)) . B(q)
// so y(p) = sum_{q<=p} M[p][q] u(q) reproduces the recurrent scan exactly.
// For an SSD head the entry is mask(p,q) * (Q_p . K_q). Everything above the
// diagonal is structurally zero. Kernels are built per layer on demand and
// discarded; edits always go through a copy, never the recurrent path.

#include "ssmko/ssm.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ssmko {

struct AttentionTensor {
    int layer_index = -1;
    std::string unit_axis;       // "channel" (mamba1) or "head" (ssd)
    std::vector<Matrix> units;   // each L x L, zero above the diagonal

    Index unit_count() const { return static_cast<Index>(units.size()); }
    Index seq_len() const { return units.empty() ? 0 : units[0].rows(); }
};

AttentionTensor materialize(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index = 0);
AttentionTensor materialize(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index = 0);
// Dispatch; softmax-attention layers have no hidden kernel and are rejected.
AttentionTensor materialize(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x,
                            int layer_index = 0);

Matrix forward_via_attention(const Mamba1Layer & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn);
Matrix forward_via_attention(const SsdLayer & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn);
Matrix forward_via_attention(const LayerWeights & layer, const Eigen::Ref<const Matrix> & x,
                             const AttentionTensor & attn);

struct DualPathReport {
    struct LayerDeviation {
        int layer = 0;
        double max_abs = 0.0;
    };
    std::vector<LayerDeviation> layers;
    double tolerance = 0.0;
    bool pass = false;

    std::vector<int> failing_layers() const;
};

// Runs every layer through both paths on the same (recurrent) residual
// stream and reports the max elementwise deviation per layer. The optional
// hook can tamper with a freshly materialized tensor; fault-injection tests
// use it to prove a corrupted kernel is caught and attributed.
using AttentionEditHook = std::function<void(int layer_index, AttentionTensor &)>;
DualPathReport dual_path_check(const ModelWeights & w, std::span<const int> tokens,
                               double tolerance, const AttentionEditHook & hook = nullptr);

// Archive dump: one [units, L, L] tensor plus axis metadata.
void dump_attention(const std::string & path, const AttentionTensor & attn);
AttentionTensor load_attention_dump(const std::string & path);

}  // namespace ssmko
