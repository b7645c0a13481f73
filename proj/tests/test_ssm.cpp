#include <doctest.h>

#include "ssmko/ssm.hpp"

using namespace ssmko;

namespace {

// n=1 channel with constant Abar, constant Delta, unit B/C maps
SelectiveSsmChannel plain_channel(double abar, double delta) {
    SelectiveSsmChannel ch;
    ch.a_log = Vector::Constant(1, std::log(-std::log(abar)));
    ch.b_proj = Matrix::Ones(1, 1);
    ch.c_proj = Matrix::Ones(1, 1);
    ch.delta_proj = Vector::Zero(1);
    ch.delta_bias = softplus_inverse(delta);
    return ch;
}

SelectiveSsmChannel random_channel(Rng & rng, Index cond_dim, Index n) {
    SelectiveSsmChannel ch;
    ch.a_log.resize(n);
    for (Index i = 0; i < n; ++i) {
        ch.a_log(i) = std::log(rng.uniform(0.1, 8.0));
    }
    ch.b_proj = rng.normal_matrix(cond_dim, n, 0.5);
    ch.c_proj = rng.normal_matrix(cond_dim, n, 0.5);
    ch.delta_proj = rng.normal_vector(cond_dim, 0.3);
    ch.delta_bias = rng.normal() * 0.3;
    return ch;
}

}  // namespace

TEST_CASE("discretize") {
    SUBCASE("delta -> 0 limit gives no decay") {
        SelectiveSsmChannel ch = plain_channel(0.5, 1.0);
        ch.delta_bias = -40.0;  // softplus(-40) ~ 4e-18
        const DiscretizedStep step = discretize(ch, Vector::Ones(1));
        CHECK(std::abs(step.a(0) - 1.0) <= 1e-12);
    }
    SUBCASE("Abar = 0.5, delta = 2 gives 0.25") {
        const SelectiveSsmChannel ch = plain_channel(0.5, 2.0);
        const DiscretizedStep step = discretize(ch, Vector::Ones(1));
        CHECK(std::abs(step.delta - 2.0) <= 1e-14);
        CHECK(std::abs(step.a(0) - 0.25) <= 1e-14);
    }
    SUBCASE("log-domain oracle: log A = delta * log Abar") {
        Rng rng(11);
        for (int trial = 0; trial < 20; ++trial) {
            const SelectiveSsmChannel ch = random_channel(rng, 5, 7);
            const Vector cond = rng.normal_vector(5, 1.0);
            const DiscretizedStep step = discretize(ch, cond);
            const Vector log_abar = -ch.a_log.array().exp();
            for (Index i = 0; i < 7; ++i) {
                CHECK(std::abs(std::log(step.a(i)) - step.delta * log_abar(i)) <= 1e-12);
            }
            CHECK(step.delta > 0.0);
            CHECK((ch.abar().array() > 0.0).all());
            CHECK((ch.abar().array() < 1.0).all());
        }
    }
}

TEST_CASE("recurrent_scan") {
    SUBCASE("zero input gives zero output") {
        Rng rng(2);
        const SelectiveSsmChannel ch = random_channel(rng, 1, 4);
        const Vector y = recurrent_scan(ch, Vector::Zero(9));
        CHECK(y.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("hand-unrolled two-step recurrence") {
        // A = 0.5, B = C = 1: x = [1, 1.5], y = [1, 1.5]
        const SelectiveSsmChannel ch = plain_channel(0.5, 1.0);
        const Vector y = recurrent_scan(ch, Vector::Ones(2));
        CHECK(std::abs(y(0) - 1.0) <= 1e-12);
        CHECK(std::abs(y(1) - 1.5) <= 1e-12);
    }
    SUBCASE("matches the closed-form kernel sum") {
        Rng rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            const Index n = 1 + static_cast<Index>(rng.uniform_int(16));
            const Index cond_dim = 1 + static_cast<Index>(rng.uniform_int(6));
            const Index len = 2 + static_cast<Index>(rng.uniform_int(63));
            const SelectiveSsmChannel ch = random_channel(rng, cond_dim, n);
            const Matrix cond = rng.normal_matrix(len, cond_dim, 1.0);
            const Vector u = rng.normal_vector(len, 1.0);
            const Vector y = recurrent_scan(ch, u, cond);

            std::vector<DiscretizedStep> steps;
            for (Index t = 0; t < len; ++t) {
                steps.push_back(discretize(ch, cond.row(t).transpose()));
            }
            for (Index t = 0; t < len; ++t) {
                double acc = 0.0;
                for (Index s = 0; s <= t; ++s) {
                    Vector decay = Vector::Ones(n);
                    for (Index r = s + 1; r <= t; ++r) {
                        decay = decay.cwiseProduct(steps[r].a);
                    }
                    acc += steps[t].c.dot(decay.cwiseProduct(steps[s].b)) * u(s);
                }
                CHECK(std::abs(y(t) - acc) <= 1e-10);
            }
        }
    }
    SUBCASE("scan_with_coeffs agrees with the channel scan") {
        Rng rng(4);
        const SelectiveSsmChannel ch = random_channel(rng, 1, 3);
        const Vector u = rng.normal_vector(12, 1.0);
        Matrix a(12, 3), b(12, 3), c(12, 3);
        for (Index t = 0; t < 12; ++t) {
            const DiscretizedStep step = discretize(ch, u.segment(t, 1));
            a.row(t) = step.a;
            b.row(t) = step.b;
            c.row(t) = step.c;
        }
        CHECK((recurrent_scan(ch, u) - scan_with_coeffs(a, b, c, u)).cwiseAbs().maxCoeff() ==
              0.0);
    }
}

namespace {

Mamba1Layer identity_mamba1(Rng & rng, Index h, Index n) {
    Mamba1Layer layer;
    layer.in_proj = Matrix::Identity(h, h);
    layer.gate_proj = Matrix::Zero(h, h);
    layer.out_proj = Matrix::Identity(h, h);
    layer.conv_kernel = Matrix::Ones(h, 1);
    layer.gated = false;
    for (Index c = 0; c < h; ++c) {
        layer.channels.push_back(random_channel(rng, h, n));
    }
    return layer;
}

}  // namespace

TEST_CASE("mamba1_layer_forward") {
    Rng rng(5);
    SUBCASE("zero weights give zero output") {
        ModelSpec spec;
        spec.kind = LayerKind::mamba1;
        spec.vocab_size = 4;
        spec.embed_dim = 6;
        spec.num_layers = 1;
        spec.m1_channels = 8;
        ModelWeights w = random_model(spec, rng);
        Mamba1Layer & layer = std::get<Mamba1Layer>(w.layers[0]);
        layer.in_proj.setZero();
        layer.gate_proj.setZero();
        layer.out_proj.setZero();
        const Matrix x = rng.normal_matrix(5, 6, 1.0);
        CHECK(mamba1_layer_forward(layer, x).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("k=1, no gate, identity projections reduce to stacked scans") {
        const Mamba1Layer layer = identity_mamba1(rng, 4, 3);
        const Matrix x = rng.normal_matrix(7, 4, 1.0);
        const Matrix u = silu(x);
        Matrix expected(7, 4);
        for (Index c = 0; c < 4; ++c) {
            expected.col(c) = recurrent_scan(layer.channels[c], u.col(c), u);
        }
        CHECK(mamba1_layer_forward(layer, x) == expected);
    }
    SUBCASE("re-execution is bitwise identical") {
        ModelSpec spec;
        spec.kind = LayerKind::mamba1;
        spec.vocab_size = 4;
        spec.embed_dim = 6;
        spec.num_layers = 1;
        spec.m1_channels = 8;
        const ModelWeights w = random_model(spec, rng);
        const Matrix x = rng.normal_matrix(8, 6, 1.0);
        const Mamba1Layer & layer = std::get<Mamba1Layer>(w.layers[0]);
        CHECK(mamba1_layer_forward(layer, x) == mamba1_layer_forward(layer, x));
    }
    SUBCASE("conv is causal") {
        ModelSpec spec;
        spec.kind = LayerKind::mamba1;
        spec.vocab_size = 4;
        spec.embed_dim = 5;
        spec.num_layers = 1;
        spec.m1_channels = 6;
        spec.m1_conv_k = 4;
        const ModelWeights w = random_model(spec, rng);
        const Mamba1Layer & layer = std::get<Mamba1Layer>(w.layers[0]);
        Matrix x = rng.normal_matrix(9, 5, 1.0);
        const Matrix y0 = mamba1_layer_forward(layer, x);
        x.row(6) += Vector::Ones(5).transpose();  // perturb position 6
        const Matrix y1 = mamba1_layer_forward(layer, x);
        CHECK((y0.topRows(6) - y1.topRows(6)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((y0.row(6) - y1.row(6)).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("ssd_layer_forward") {
    Rng rng(6);
    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = 4;
    spec.embed_dim = 6;
    spec.num_layers = 1;
    spec.ssd_heads = 3;
    spec.ssd_state_dim = 4;
    spec.ssd_head_dim = 5;

    SUBCASE("full decay leaves diagonal-only attention") {
        ModelWeights w = random_model(spec, rng);
        SsdLayer & layer = std::get<SsdLayer>(w.layers[0]);
        layer.skip_enabled = false;
        for (auto & head : layer.heads) {
            head.a_log = 6.0;          // kappa ~ 400
            head.delta_proj.setZero();
            head.delta_bias = softplus_inverse(1.0);
        }
        const Matrix x = rng.normal_matrix(6, 6, 1.0);
        const Matrix y = ssd_layer_forward(layer, x);
        // oracle: Y_p = (Q_p . K_p) V_p per head
        Matrix concat(6, 3 * 5);
        for (Index h = 0; h < 3; ++h) {
            const SsdHeadActivations act = ssd_head_activations(layer.heads[h], x);
            for (Index p = 0; p < 6; ++p) {
                concat.row(p).segment(h * 5, 5) =
                    act.q.row(p).dot(act.k.row(p)) * act.v.row(p);
            }
        }
        CHECK((y - concat * layer.out_proj).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("no decay gives the all-ones lower-triangular mask") {
        ModelWeights w = random_model(spec, rng);
        SsdLayer & layer = std::get<SsdLayer>(w.layers[0]);
        layer.heads[0].a_log = -100.0;  // kappa ~ 4e-44
        const Matrix x = rng.normal_matrix(5, 6, 1.0);
        const SsdHeadActivations act = ssd_head_activations(layer.heads[0], x);
        const Matrix mask = ssd_decay_mask(act);
        for (Index p = 0; p < 5; ++p) {
            for (Index q = 0; q <= p; ++q) {
                CHECK(mask(p, q) == 1.0);
            }
            for (Index q = p + 1; q < 5; ++q) {
                CHECK(mask(p, q) == 0.0);
            }
        }
    }
    SUBCASE("recurrence matches the masked-attention oracle") {
        for (int trial = 0; trial < 5; ++trial) {
            const ModelWeights w = random_model(spec, rng);
            const SsdLayer & layer = std::get<SsdLayer>(w.layers[0]);
            const Index len = 8;
            const Matrix x = rng.normal_matrix(len, 6, 1.0);
            const Matrix y = ssd_layer_forward(layer, x);

            Matrix concat(len, 3 * 5);
            for (Index h = 0; h < 3; ++h) {
                const SsdHeadActivations act = ssd_head_activations(layer.heads[h], x);
                const Matrix mask = ssd_decay_mask(act);
                for (Index p = 0; p < len; ++p) {
                    Vector acc = Vector::Zero(5);
                    for (Index q = 0; q <= p; ++q) {
                        acc += mask(p, q) * act.q.row(p).dot(act.k.row(q)) *
                               act.v.row(q).transpose();
                    }
                    acc += layer.heads[h].skip_d * act.v.row(p).transpose();
                    concat.row(p).segment(h * 5, 5) = acc;
                }
            }
            CHECK((y - concat * layer.out_proj).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
    SUBCASE("decay mask is bounded and decreasing away from the diagonal") {
        const ModelWeights w = random_model(spec, rng);
        const Matrix x = rng.normal_matrix(10, 6, 1.0);
        const SsdHeadActivations act = ssd_head_activations(std::get<SsdLayer>(w.layers[0]).heads[0], x);
        const Matrix mask = ssd_decay_mask(act);
        for (Index p = 0; p < 10; ++p) {
            for (Index q = 0; q <= p; ++q) {
                CHECK(mask(p, q) <= 1.0);
                CHECK(mask(p, q) > 0.0);
                if (q < p) {
                    CHECK(mask(p, q) < mask(p, q + 1));  // strictly older is weaker
                }
            }
        }
    }
}

TEST_CASE("model_forward") {
    Rng rng(8);
    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = 12;
    spec.embed_dim = 6;
    spec.num_layers = 2;
    spec.ssd_heads = 2;
    spec.ssd_state_dim = 3;
    spec.ssd_head_dim = 3;

    SUBCASE("zeroed layers pass the embedding through the norms") {
        ModelWeights w = random_model(spec, rng);
        for (auto & layer : w.layers) {
            auto & ssd = std::get<SsdLayer>(layer);
            ssd.out_proj.setZero();
        }
        const std::vector<int> tokens = {3};
        const Matrix logits = model_forward(w, tokens);
        const Matrix z = rms_norm(Matrix(w.embedding.row(3)), w.final_norm_gain,
                                  ModelWeights::kNormEps);
        CHECK((logits - z * w.unembed_matrix()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("prefix property: appending tokens never changes earlier logits") {
        const ModelWeights w = random_model(spec, rng);
        const std::vector<int> tokens = {1, 5, 7, 2};
        const std::vector<int> longer = {1, 5, 7, 2, 9, 4};
        const Matrix a = model_forward(w, tokens);
        const Matrix b = model_forward(w, longer);
        CHECK((a - b.topRows(4)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("deterministic") {
        const ModelWeights w = random_model(spec, rng);
        const std::vector<int> tokens = {1, 5, 7, 2, 0};
        CHECK(model_forward(w, tokens) == model_forward(w, tokens));
    }
    SUBCASE("out-of-range token") {
        const ModelWeights w = random_model(spec, rng);
        const std::vector<int> tokens = {1, 99};
        CHECK_THROWS_AS(model_forward(w, tokens), InvalidInput);
    }
    SUBCASE("causality under perturbation for every layer kind") {
        for (LayerKind kind :
             {LayerKind::mamba1, LayerKind::ssd, LayerKind::softmax_attention}) {
            ModelSpec s = spec;
            s.kind = kind;
            s.m1_channels = 6;
            s.attn_heads = 2;
            s.max_seq = 16;
            const ModelWeights w = random_model(s, rng);
            const std::vector<int> tokens = {1, 5, 7, 2, 9};
            std::vector<int> perturbed = tokens;
            perturbed[3] = 11;
            const Matrix a = model_forward(w, tokens);
            const Matrix b = model_forward(w, perturbed);
            CHECK((a.topRows(3) - b.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("model spec json round trip") {
        const nlohmann::json j = spec.to_json();
        const ModelSpec back = ModelSpec::from_json(j);
        CHECK(back.vocab_size == spec.vocab_size);
        CHECK(back.kind == spec.kind);
        CHECK(back.ssd_heads == spec.ssd_heads);
        CHECK(back.to_json() == j);
    }
}
