#pragma once

// Synthetic factual-recall task plus a small trainer with hand-derived
// reverse-mode gradients. Only the SSD and softmax-attention kinds are
// trainable; Mamba-1 knockout experiments run on random weights.

#include "ssmko/records.hpp"
#include "ssmko/ssm.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssmko {

struct FactTaskConfig {
    int num_subjects = 64;
    int num_relations = 8;
    int num_attributes = 64;
    int max_subject_tokens = 3;   // subjects span 1..max dedicated tokens
    int max_relation_tokens = 3;
    // Surface forms per relation. With 2 forms every fact trains under one
    // form and is probed under the other, so eval measures recall of trained
    // facts through held-out phrasings. With 1 form eval reuses the training
    // phrasing (pure memorization probe).
    int relation_forms = 2;

    void validate() const;
};

struct SyntheticFactTask {
    FactTaskConfig config;
    int vocab_size = 0;
    int bos_token = 0;
    int query_token = 1;
    std::vector<std::vector<int>> subject_tokens;                // [subject]
    std::vector<std::vector<std::vector<int>>> relation_tokens;  // [relation][form]
    std::vector<int> attribute_tokens;                           // attribute -> vocab id
    std::vector<std::vector<int>> fact;                          // [subject][relation] -> attribute

    PromptRecord make_prompt(int subject, int relation, int form) const;
};

struct TaskSplits {
    std::vector<PromptRecord> train;
    std::vector<PromptRecord> eval;
};

// Deterministic in (config, rng seed). Every fact appears in the train
// split; splits are disjoint as prompt sets, keyed per (subject, relation).
std::pair<SyntheticFactTask, TaskSplits> generate_task(const FactTaskConfig & config, Rng & rng);

struct TrainConfig {
    uint64_t seed = 0;
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 3e-3;
    int warmup_steps = 100;       // linear warmup, then constant
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int eval_interval = 100;
    double target_accuracy = 1.0; // stop early at or above this eval accuracy
};

struct TrainExample {
    std::vector<int> tokens;
    int answer = -1;
};

// Cross-entropy at the final position, averaged over the batch, plus
// gradients for every parameter (returned in ModelWeights layout).
std::pair<double, ModelWeights> loss_and_grads(const ModelWeights & w,
                                               std::span<const TrainExample> batch);

// Final-position logits from the training-path forward. The SSD layer runs
// through its kernel here (the gradient needs the materialized mask), so
// values match model_forward's last row to fp accuracy, not bitwise.
Vector training_forward_logits(const ModelWeights & w, std::span<const int> tokens);

struct StepMetrics {
    int step = 0;
    double loss = 0.0;
    double eval_accuracy = -1.0;  // -1 when not evaluated this step
};

struct TrainResult {
    ModelWeights weights;
    std::vector<StepMetrics> log;
    bool reached_target = false;
    double final_eval_accuracy = 0.0;
};

double gold_token_accuracy(const ModelWeights & w, std::span<const PromptRecord> records);

// Divergence fault carrying the metrics logged up to the failing step.
struct TrainDivergence : TrainingFault {
    TrainDivergence(const std::string & msg, int step, std::vector<StepMetrics> log)
        : TrainingFault(msg, step), partial_log(std::move(log)) {}
    std::vector<StepMetrics> partial_log;
};

// Deterministic given (spec, splits, config). Throws TrainDivergence on a
// non-finite loss.
TrainResult train(const ModelSpec & spec, const TaskSplits & splits, const TrainConfig & config);

// Deterministically ordered views over every scalar parameter; grads and
// weights share the layout so Adam and finite differences walk them in
// lockstep.
std::vector<double *> parameter_pointers(ModelWeights & w);
std::vector<std::pair<std::string, std::span<double>>> named_parameters(ModelWeights & w);
ModelWeights zeros_like(const ModelWeights & w);

void write_metrics_jsonl(const std::string & path, const std::vector<StepMetrics> & log);

}  // namespace ssmko
