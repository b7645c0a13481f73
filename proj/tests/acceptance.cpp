// Acceptance suite: the release gates. Each criterion runs at a pinned
// tolerance and prints one pass/fail line; any failure exits nonzero.

#include "ssmko/attention_view.hpp"
#include "ssmko/checks.hpp"
#include "ssmko/harness.hpp"
#include "ssmko/knockout.hpp"
#include "ssmko/svg.hpp"
#include "ssmko/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ssmko;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Timer {
  public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

void report(int criterion, const std::string & name, bool pass, const std::string & detail) {
    std::printf("[%s] criterion %2d (%s): %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) {
        ++g_failures;
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

std::string slurp(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void criterion_1_dual_path() {
    Timer timer;
    Rng rng(1001);
    double worst = 0.0;
    bool pass = true;
    for (int kind = 0; kind < 2; ++kind) {
        for (int i = 0; i < 50; ++i) {
            const ModelSpec spec =
                kind == 0 ? random_mamba1_spec(rng, /*conv_k=*/1) : random_ssd_spec(rng);
            const ModelWeights w = random_model(spec, rng);
            const int len = 2 + static_cast<int>(rng.uniform_int(63));
            std::vector<int> tokens(len);
            for (int & t : tokens) {
                t = static_cast<int>(rng.uniform_int(spec.vocab_size));
            }
            const DualPathReport rep = dual_path_check(w, tokens, 1e-10);
            pass = pass && rep.pass;
            for (const auto & l : rep.layers) {
                worst = std::max(worst, l.max_abs);
            }
        }
    }
    const double secs = timer.seconds();
    pass = pass && secs < 120.0;
    report(1, "dual-path equivalence", pass,
           "50 mamba1 + 50 ssd models, max deviation " + fmt(worst) + " (tol 1e-10), " +
               fmt(secs) + "s (limit 120s)");
}

void criterion_2_decay_identity() {
    Timer timer;
    const CheckResult r = check_decay_identity(1002, 1000, 1e-12);
    const double secs = timer.seconds();
    report(2, "decay identity", r.pass && secs < 10.0,
           r.detail + " (tol 1e-12), " + fmt(secs) + "s (limit 10s)");
}

void criterion_3_knockout_contract() {
    const CheckResult r = check_knockout_contract(1003, 100, 1e-10);
    report(3, "knockout contract", r.pass, r.detail + " over 100 cases (tol 1e-10)");
}

void criterion_4_full_isolation() {
    const CheckResult r = check_full_isolation(1004, 20, 1e-10);
    report(4, "full-isolation oracle", r.pass,
           r.detail + " over 20 cases, conv k=1, skip disabled (tol 1e-10)");
}

void criterion_5_gradients() {
    Timer timer;
    const CheckResult r = check_gradients(1005, 1e-5);
    const double secs = timer.seconds();
    report(5, "gradient check", r.pass && secs < 60.0,
           r.detail + " (tol 1e-5), " + fmt(secs) + "s (limit 60s)");
}

// Trained toy model shared by criteria 6-8.
struct ToyRun {
    ModelSpec spec;
    TaskSplits splits;
    TrainResult result;
};

ToyRun train_toy() {
    FactTaskConfig task_cfg;
    task_cfg.num_subjects = 64;
    task_cfg.num_relations = 8;
    task_cfg.num_attributes = 64;
    task_cfg.relation_forms = 4;
    Rng task_rng(1);
    auto [task, splits] = generate_task(task_cfg, task_rng);

    ToyRun run;
    run.spec.kind = LayerKind::ssd;
    run.spec.vocab_size = task.vocab_size;
    run.spec.embed_dim = 64;
    run.spec.num_layers = 4;
    run.spec.ssd_heads = 6;
    run.spec.ssd_state_dim = 16;
    run.spec.ssd_head_dim = 16;
    run.splits = std::move(splits);

    TrainConfig tc;
    tc.seed = 1;
    tc.steps = 6000;  // documented budget
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.eval_interval = 250;
    tc.target_accuracy = 0.95;
    run.result = train(run.spec, run.splits, tc);
    return run;
}

void criterion_6_toy_recall(const ToyRun & run) {
    Timer timer;
    // determinism: the same seed must reproduce the weights bitwise
    TrainConfig tc;
    tc.seed = 1;
    tc.steps = 6000;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.eval_interval = 250;
    tc.target_accuracy = 0.95;
    const TrainResult again = train(run.spec, run.splits, tc);

    ModelWeights a = run.result.weights;
    ModelWeights b = again.weights;
    const std::vector<double *> pa = parameter_pointers(a);
    const std::vector<double *> pb = parameter_pointers(b);
    bool deterministic = pa.size() == pb.size();
    for (size_t i = 0; deterministic && i < pa.size(); ++i) {
        deterministic = *pa[i] == *pb[i];
    }
    const double secs = timer.seconds();
    const bool pass =
        run.result.final_eval_accuracy >= 0.95 && deterministic && secs < 900.0;
    report(6, "toy factual recall", pass,
           "512 facts, 4-layer ssd H=64: eval accuracy " +
               fmt(run.result.final_eval_accuracy) + " (gate 0.95), rerun bitwise " +
               (deterministic ? "identical" : "DIFFERENT") + ", " + fmt(secs) +
               "s determinism rerun (limit 900s total)");
}

void criterion_7_subject_direction(const ToyRun & run, const std::vector<double> & p_base) {
    const int window = std::min(9, run.spec.num_layers - 1);
    const SweepResult sweep = info_flow_sweep(
        run.result.weights, run.splits.eval, window,
        {SourceCategory::subject, SourceCategory::first}, p_base);
    const double subject_min = sweep.min_mean(SourceCategory::subject);
    const double first_min = sweep.min_mean(SourceCategory::first);
    const bool pass = subject_min < -20.0 && subject_min < first_min;
    report(7, "subject knockout direction", pass,
           "window " + std::to_string(window) + ": subject min " + fmt(subject_min) +
               "% (gate < -20%), first-token min " + fmt(first_min) + "%");
}

void criterion_8_feature_scopes(const ToyRun & run, const std::vector<double> & p_base) {
    const int window = std::min(9, run.spec.num_layers - 1);
    const FeatureKnockoutStudy study =
        feature_knockout_study(run.result.weights, run.splits.eval, window, p_base);

    auto linf = [](const SweepResult & a, const SweepResult & b) {
        double worst = 0.0;
        for (size_t i = 0; i < a.cells.size(); ++i) {
            worst = std::max(worst,
                             std::abs(a.cells[i].mean_change_pct - b.cells[i].mean_change_pct));
        }
        return worst;
    };
    const double d_dep = linf(study.context_dependent, study.all);
    const double d_ind = linf(study.context_independent, study.all);

    // middle-third kernels must be bitwise untouched under both partial scopes
    bool middle_untouched = true;
    const std::vector<int> tokens = run.splits.eval.front().token_ids;
    Matrix x(static_cast<Index>(tokens.size()), run.spec.embed_dim);
    for (Index t = 0; t < x.rows(); ++t) {
        x.row(t) = run.result.weights.embedding.row(tokens[t]);
    }
    for (int l = 0; l < run.spec.num_layers; ++l) {
        const Matrix z =
            rms_norm(x, run.result.weights.layer_norm_gain[l], ModelWeights::kNormEps);
        const AttentionTensor attn = materialize(run.result.weights.layers[l], z, l);
        const FeatureClassification cls = classify_features(run.result.weights.layers[l]);
        for (FeatureScopeKind kind :
             {FeatureScopeKind::context_dependent, FeatureScopeKind::context_independent}) {
            KnockoutSpec spec;
            spec.first_layer = l;
            spec.window_size = 1;
            spec.source_positions = {0, 1};
            spec.target_positions = {static_cast<int>(tokens.size()) - 1};
            spec.scope = {kind, {}};
            const AttentionTensor edited = apply_knockout(attn, spec, &cls);
            for (int u : cls.middle) {
                middle_untouched = middle_untouched && edited.units[u] == attn.units[u];
            }
        }
        x += layer_forward(run.result.weights.layers[l], z);
    }

    const bool pass = d_dep < d_ind && middle_untouched;
    report(8, "feature-scope direction", pass,
           "Linf(dependent, all) " + fmt(d_dep) + " < Linf(independent, all) " + fmt(d_ind) +
               ": " + (d_dep < d_ind ? "yes" : "NO") + "; middle third " +
               (middle_untouched ? "bitwise untouched" : "EDITED"));
}

void criterion_9_null_control(const ToyRun & run) {
    Rng rng(1009);
    const ModelWeights untrained = random_model(run.spec, rng);
    const std::vector<double> p_base = baseline_probabilities(untrained, run.splits.eval);
    int skipped = 0;
    for (double p : p_base) {
        if (!(p > 0.0)) {
            ++skipped;
        }
    }
    double worst = 0.0;
    for (int window : {1, 3}) {
        const SweepResult sweep = info_flow_sweep(
            untrained, run.splits.eval, window,
            {SourceCategory::subject, SourceCategory::relation, SourceCategory::first,
             SourceCategory::last},
            p_base);
        for (const SweepCell & cell : sweep.cells) {
            if (cell.n > 0) {
                worst = std::max(worst, std::abs(cell.mean_change_pct));
            }
        }
    }
    report(9, "untrained null control", worst <= 5.0,
           "windows {1,3}, all categories: worst |mean| " + fmt(worst) + "% (limit 5%), " +
               std::to_string(skipped) + " zero-baseline records skipped");
}

void criterion_10_reproducibility(const ToyRun & run, const std::vector<double> & p_base) {
    const fs::path dir = fs::temp_directory_path() / "ssmko_acceptance";
    fs::create_directories(dir);
    const std::vector<PromptRecord> records(run.splits.eval.begin(),
                                            run.splits.eval.begin() + 32);
    const std::vector<double> base(p_base.begin(), p_base.begin() + 32);

    bool identical = true;
    std::string first_json, first_csv, first_svg;
    for (int round = 0; round < 2; ++round) {
        SweepOptions opts;
        opts.workers = 1;
        opts.model_id = "toy";
        opts.dataset_id = "eval32";
        const SweepResult sweep =
            info_flow_sweep(run.result.weights, records, 3,
                            {SourceCategory::subject, SourceCategory::last}, base, opts);
        const std::string json_path = (dir / "sweep.json").string();
        const std::string csv_path = (dir / "sweep.csv").string();
        const std::string svg_path = (dir / "sweep.svg").string();
        write_sweep_json(json_path, {{"window", 3}}, {sweep});
        write_sweep_csv(csv_path, {sweep});
        SvgSeries series{"subject", "#1f77b4", {}};
        for (const SweepCell & c : sweep.cells) {
            if (c.category == SourceCategory::subject) {
                series.points.emplace_back(c.relative_depth, c.mean_change_pct);
            }
        }
        write_text_file(svg_path, svg_line_chart("repro", "depth", "change", {series}));
        if (round == 0) {
            first_json = slurp(json_path);
            first_csv = slurp(csv_path);
            first_svg = slurp(svg_path);
        } else {
            identical = first_json == slurp(json_path) && first_csv == slurp(csv_path) &&
                        first_svg == slurp(svg_path);
        }
    }
    fs::remove_all(dir);
    report(10, "byte-identical reruns", identical,
           std::string("json/csv/svg outputs ") +
               (identical ? "identical across reruns (workers=1)" : "DIFFER"));
}

}  // namespace

int main() {
    Timer total;
    criterion_1_dual_path();
    criterion_2_decay_identity();
    criterion_3_knockout_contract();
    criterion_4_full_isolation();
    criterion_5_gradients();

    Timer train_timer;
    const ToyRun run = train_toy();
    const double train_secs = train_timer.seconds();
    std::printf("       (toy model trained in %.1fs, eval accuracy %.4f)\n", train_secs,
                run.result.final_eval_accuracy);

    criterion_6_toy_recall(run);
    const std::vector<double> p_base =
        baseline_probabilities(run.result.weights, run.splits.eval);
    criterion_7_subject_direction(run, p_base);
    criterion_8_feature_scopes(run, p_base);
    criterion_9_null_control(run);
    criterion_10_reproducibility(run, p_base);

    std::printf("acceptance: %d/10 criteria passed in %.1fs\n", 10 - g_failures,
                total.seconds());
    return g_failures == 0 ? 0 : 1;
}
