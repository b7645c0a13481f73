#pragma once

// Experiment harness: dataset ingestion, correct-prediction filtering,
// information-flow sweeps, window-size studies, feature-knockout
// comparisons, per-token heatmaps, last-token scatter, and deterministic
// persistence of results.

#include "ssmko/knockout.hpp"
#include "ssmko/records.hpp"
#include "ssmko/ssm.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssmko {

// --------------------------------------------------------------------------
// Whitespace tokenizer (smoke tests only; quantitative work uses synthetic
// token tasks).

struct Vocab {
    std::map<std::string, int> word_to_id;  // includes "<unk>" at id 0
    std::vector<std::string> id_to_word;

    int unknown_id() const { return 0; }
    int size() const { return static_cast<int>(id_to_word.size()); }
    int lookup(const std::string & word) const;

    nlohmann::json to_json() const;
    static Vocab from_json(const nlohmann::json & j);
};

Vocab build_vocab(const std::vector<std::string> & texts);

struct Tokenized {
    std::vector<int> ids;
    std::vector<std::array<int, 2>> char_spans;  // per token [start, end)
    int unknown_count = 0;

    // Smallest token range covering a character range.
    std::array<int, 2> char_span_to_token_span(int char_start, int char_end) const;
};

Tokenized tokenize_simple(const std::string & text, const Vocab & vocab);

// --------------------------------------------------------------------------
// COUNTERFACT-style ingestion: JSON array or JSON Lines of objects carrying
// a prompt, a subject string, and a target token string.

struct RawTriplet {
    std::string prompt;
    std::string subject;
    std::string target;
};

struct ImportResult {
    std::vector<PromptRecord> records;
    Vocab vocab;
    std::vector<std::string> rejected;  // "id: reason" lines
    int unknown_tokens = 0;
};

std::vector<RawTriplet> load_counterfact(const std::string & path);
ImportResult import_triplets(const std::vector<RawTriplet> & triplets);

// --------------------------------------------------------------------------
// Filtering

// Records whose final-position argmax equals the gold token.
std::vector<PromptRecord> filter_correct(const ModelWeights & model,
                                         const std::vector<PromptRecord> & records);
// The all-models-correct subset.
std::vector<PromptRecord> filter_correct_intersection(
    const std::vector<const ModelWeights *> & models, const std::vector<PromptRecord> & records);

// --------------------------------------------------------------------------
// Sweeps

struct SweepCell {
    SourceCategory category = SourceCategory::subject;
    int first_layer = 0;
    double relative_depth = 0.0;  // first_layer / num_layers
    double mean_change_pct = 0.0;
    int n = 0;
    int skipped = 0;
    std::vector<std::pair<std::string, double>> raw;  // (record id, change %)
};

struct SweepResult {
    std::string model_id;
    std::string dataset_id;
    int window_size = 0;
    std::string scope_name = "all";
    std::vector<SweepCell> cells;

    const SweepCell & cell(SourceCategory cat, int first_layer) const;
    double min_mean(SourceCategory cat) const;

    nlohmann::json to_json() const;
};

// Gold-token probability at the final position, one entry per record, in
// record order. Computed once per (model, dataset) pair and shared by every
// sweep in a session.
std::vector<double> baseline_probabilities(const ModelWeights & model,
                                           const std::vector<PromptRecord> & records);

struct SweepOptions {
    int workers = 1;
    FeatureScope scope;             // defaults to all features
    std::string model_id;
    std::string dataset_id;
};

SweepResult info_flow_sweep(const ModelWeights & model, const std::vector<PromptRecord> & records,
                            int window_size, const std::vector<SourceCategory> & categories,
                            const std::vector<double> & p_base, const SweepOptions & opts = {});

std::vector<SweepResult> window_size_study(const ModelWeights & model,
                                           const std::vector<PromptRecord> & records,
                                           const std::vector<int> & sizes,
                                           const std::vector<SourceCategory> & categories,
                                           const std::vector<double> & p_base,
                                           const SweepOptions & opts = {});

struct FeatureKnockoutStudy {
    SweepResult all;
    SweepResult context_dependent;
    SweepResult context_independent;
};

// Subject-to-last knockout under the three feature scopes (SSM kinds only).
FeatureKnockoutStudy feature_knockout_study(const ModelWeights & model,
                                            const std::vector<PromptRecord> & records,
                                            int window_size, const std::vector<double> & p_base,
                                            const SweepOptions & opts = {});

// rows = source token, cols = window start; values are relative change %.
Matrix knockout_heatmap(const ModelWeights & model, const PromptRecord & record, int window_size);

struct ScatterPoint {
    std::string record_id;
    double p_base = 0.0;
    double p_ko = 0.0;
};

// Knockout of the final token's self-pair over the last `window` layers.
std::vector<ScatterPoint> last_token_scatter(const ModelWeights & model,
                                             const std::vector<PromptRecord> & records,
                                             int window);

// --------------------------------------------------------------------------
// Persistence. One JSON file per experiment (config echo + raw values) plus
// a flat CSV for plotting. Output bytes are deterministic for a fixed input.

void write_sweep_json(const std::string & path, const nlohmann::json & config,
                      const std::vector<SweepResult> & sweeps);
void write_sweep_csv(const std::string & path, const std::vector<SweepResult> & sweeps);

std::string format_double(double v);  // shortest round-trip, used by CSV/SVG

}  // namespace ssmko
