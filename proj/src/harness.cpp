#include "ssmko/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

namespace ssmko {

// --------------------------------------------------------------------------
// Tokenizer

namespace {

std::string lowercase(const std::string & s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

struct WordPos {
    std::string word;
    int start = 0;
    int end = 0;
};

std::vector<WordPos> split_words(const std::string & text) {
    std::vector<WordPos> words;
    const int n = static_cast<int>(text.size());
    int i = 0;
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i >= n) {
            break;
        }
        const int start = i;
        while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        words.push_back({lowercase(text.substr(start, i - start)), start, i});
    }
    return words;
}

}  // namespace

int Vocab::lookup(const std::string & word) const {
    auto it = word_to_id.find(lowercase(word));
    return it == word_to_id.end() ? unknown_id() : it->second;
}

nlohmann::json Vocab::to_json() const {
    nlohmann::json j;
    j["words"] = id_to_word;
    return j;
}

Vocab Vocab::from_json(const nlohmann::json & j) {
    Vocab v;
    v.id_to_word = j.at("words").get<std::vector<std::string>>();
    for (size_t i = 0; i < v.id_to_word.size(); ++i) {
        v.word_to_id[v.id_to_word[i]] = static_cast<int>(i);
    }
    return v;
}

Vocab build_vocab(const std::vector<std::string> & texts) {
    Vocab v;
    v.id_to_word.push_back("<unk>");
    v.word_to_id["<unk>"] = 0;
    for (const std::string & text : texts) {
        for (const WordPos & w : split_words(text)) {
            if (v.word_to_id.emplace(w.word, v.size()).second) {
                v.id_to_word.push_back(w.word);
            }
        }
    }
    return v;
}

Tokenized tokenize_simple(const std::string & text, const Vocab & vocab) {
    Tokenized out;
    for (const WordPos & w : split_words(text)) {
        auto it = vocab.word_to_id.find(w.word);
        if (it == vocab.word_to_id.end()) {
            out.ids.push_back(vocab.unknown_id());
            ++out.unknown_count;
        } else {
            out.ids.push_back(it->second);
        }
        out.char_spans.push_back({w.start, w.end});
    }
    return out;
}

std::array<int, 2> Tokenized::char_span_to_token_span(int char_start, int char_end) const {
    int first = -1, last = -1;
    for (size_t t = 0; t < char_spans.size(); ++t) {
        // token overlaps [char_start, char_end)
        if (char_spans[t][0] < char_end && char_spans[t][1] > char_start) {
            if (first < 0) {
                first = static_cast<int>(t);
            }
            last = static_cast<int>(t);
        }
    }
    if (first < 0) {
        return {0, 0};
    }
    return {first, last + 1};
}

// --------------------------------------------------------------------------
// COUNTERFACT ingestion

namespace {

std::string json_string_field(const nlohmann::json & j, std::initializer_list<const char *> keys) {
    for (const char * key : keys) {
        if (j.contains(key) && j.at(key).is_string()) {
            return j.at(key).get<std::string>();
        }
    }
    return "";
}

RawTriplet triplet_from_json(const nlohmann::json & j) {
    RawTriplet t;
    t.prompt = json_string_field(j, {"prompt", "prompt_text", "text"});
    t.subject = json_string_field(j, {"subject"});
    t.target = json_string_field(j, {"target", "target_true", "attribute", "answer"});
    // templated prompts carry the subject as a {} placeholder
    const size_t brace = t.prompt.find("{}");
    if (brace != std::string::npos) {
        t.prompt = t.prompt.substr(0, brace) + t.subject + t.prompt.substr(brace + 2);
    }
    return t;
}

}  // namespace

std::vector<RawTriplet> load_counterfact(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("counterfact: cannot open " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string content = buf.str();

    std::vector<RawTriplet> out;
    const size_t first = content.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return out;  // empty file -> empty list
    }
    if (content[first] == '[') {
        nlohmann::json arr;
        try {
            arr = nlohmann::json::parse(content);
        } catch (const nlohmann::json::parse_error & e) {
            throw IoError("counterfact: parse error in " + path + ": " + e.what());
        }
        for (const auto & j : arr) {
            out.push_back(triplet_from_json(j));
        }
        return out;
    }
    // JSON Lines
    std::istringstream lines(content);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            out.push_back(triplet_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error & e) {
            throw IoError("counterfact: parse error at " + path + ":" +
                          std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

ImportResult import_triplets(const std::vector<RawTriplet> & triplets) {
    ImportResult result;
    std::vector<std::string> texts;
    for (const RawTriplet & t : triplets) {
        texts.push_back(t.prompt);
        texts.push_back(t.target);
    }
    result.vocab = build_vocab(texts);

    for (size_t i = 0; i < triplets.size(); ++i) {
        const RawTriplet & t = triplets[i];
        const std::string rid = "cf" + std::to_string(i);
        if (t.prompt.empty() || t.subject.empty() || t.target.empty()) {
            result.rejected.push_back(rid + ": missing prompt, subject, or target");
            continue;
        }
        const std::string prompt_lc = lowercase(t.prompt);
        const std::string subject_lc = lowercase(t.subject);
        const size_t pos = prompt_lc.find(subject_lc);  // first occurrence
        if (pos == std::string::npos) {
            result.rejected.push_back(rid + ": subject not found in prompt");
            continue;
        }
        const Tokenized tok = tokenize_simple(t.prompt, result.vocab);
        result.unknown_tokens += tok.unknown_count;
        if (tok.ids.size() < 2) {
            result.rejected.push_back(rid + ": prompt too short");
            continue;
        }
        PromptRecord rec;
        rec.id = rid;
        rec.token_ids = tok.ids;
        rec.source_text = t.prompt;
        rec.subject_span = tok.char_span_to_token_span(static_cast<int>(pos),
                                                       static_cast<int>(pos + subject_lc.size()));
        const int len = rec.seq_len();
        if (rec.subject_span[1] > len - 1) {
            result.rejected.push_back(rid + ": subject covers the final position");
            continue;
        }
        // relation = contiguous non-subject block excluding the final token;
        // prefer the block after the subject, fall back to the prefix
        if (rec.subject_span[1] < len - 1) {
            rec.relation_span = {rec.subject_span[1], len - 1};
        } else {
            rec.relation_span = {0, rec.subject_span[0]};
        }
        const Tokenized target_tok = tokenize_simple(t.target, result.vocab);
        if (target_tok.ids.empty()) {
            result.rejected.push_back(rid + ": empty target");
            continue;
        }
        rec.answer_token = target_tok.ids.front();
        rec.validate();
        result.records.push_back(std::move(rec));
    }
    return result;
}

// --------------------------------------------------------------------------
// Filtering

std::vector<PromptRecord> filter_correct(const ModelWeights & model,
                                         const std::vector<PromptRecord> & records) {
    std::vector<PromptRecord> out;
    for (const PromptRecord & rec : records) {
        const Matrix logits = model_forward(model, rec.token_ids);
        Index argmax = 0;
        logits.row(logits.rows() - 1).maxCoeff(&argmax);
        if (static_cast<int>(argmax) == rec.answer_token) {
            out.push_back(rec);
        }
    }
    return out;
}

std::vector<PromptRecord> filter_correct_intersection(
    const std::vector<const ModelWeights *> & models, const std::vector<PromptRecord> & records) {
    std::vector<PromptRecord> out = records;
    for (const ModelWeights * m : models) {
        out = filter_correct(*m, out);
    }
    return out;
}

// --------------------------------------------------------------------------
// Sweeps

const SweepCell & SweepResult::cell(SourceCategory cat, int first_layer) const {
    for (const SweepCell & c : cells) {
        if (c.category == cat && c.first_layer == first_layer) {
            return c;
        }
    }
    throw InvalidInput("sweep: no cell for requested category/layer");
}

double SweepResult::min_mean(SourceCategory cat) const {
    double best = std::numeric_limits<double>::infinity();
    for (const SweepCell & c : cells) {
        if (c.category == cat && c.n > 0) {
            best = std::min(best, c.mean_change_pct);
        }
    }
    return best;
}

nlohmann::json SweepResult::to_json() const {
    nlohmann::json j;
    j["model_id"] = model_id;
    j["dataset_id"] = dataset_id;
    j["window_size"] = window_size;
    j["scope"] = scope_name;
    nlohmann::json cells_json = nlohmann::json::array();
    for (const SweepCell & c : cells) {
        nlohmann::json cj;
        cj["category"] = to_string(c.category);
        cj["first_layer"] = c.first_layer;
        cj["relative_depth"] = c.relative_depth;
        cj["mean_change_pct"] = c.mean_change_pct;
        cj["n"] = c.n;
        cj["skipped"] = c.skipped;
        nlohmann::json raw = nlohmann::json::array();
        for (const auto & [id, value] : c.raw) {
            raw.push_back({id, value});
        }
        cj["raw"] = raw;
        cells_json.push_back(cj);
    }
    j["cells"] = cells_json;
    return j;
}

std::vector<double> baseline_probabilities(const ModelWeights & model,
                                           const std::vector<PromptRecord> & records) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const PromptRecord & rec : records) {
        out.push_back(answer_probability(model, rec.token_ids, rec.answer_token));
    }
    return out;
}

namespace {

std::string scope_display_name(const FeatureScope & scope) {
    switch (scope.kind) {
        case FeatureScopeKind::all:                 return "all";
        case FeatureScopeKind::context_dependent:   return "context_dependent";
        case FeatureScopeKind::context_independent: return "context_independent";
        case FeatureScopeKind::explicit_units:      return "explicit";
    }
    return "all";
}

struct RecordCellValue {
    double change = 0.0;
    bool skipped = false;
};

}  // namespace

SweepResult info_flow_sweep(const ModelWeights & model, const std::vector<PromptRecord> & records,
                            int window_size, const std::vector<SourceCategory> & categories,
                            const std::vector<double> & p_base, const SweepOptions & opts) {
    if (window_size < 1 || window_size > model.spec.num_layers) {
        throw InvalidInput("info_flow_sweep: window size must be in [1, num_layers]");
    }
    if (p_base.size() != records.size()) {
        throw InvalidInput("info_flow_sweep: baseline vector does not match records");
    }
    const int n_starts = model.spec.num_layers - window_size + 1;
    const size_t n_cats = categories.size();

    // per record, per (category, start) grid of outcomes
    std::vector<std::vector<RecordCellValue>> per_record(records.size());

    auto run_record = [&](size_t ri) {
        const PromptRecord & rec = records[ri];
        std::vector<RecordCellValue> grid(n_cats * n_starts);
        if (!(p_base[ri] > 0.0)) {
            for (auto & g : grid) {
                g.skipped = true;
            }
            per_record[ri] = std::move(grid);
            return;
        }
        for (size_t ci = 0; ci < n_cats; ++ci) {
            const std::vector<int> sources = resolve_category(categories[ci], rec);
            for (int fl = 0; fl < n_starts; ++fl) {
                KnockoutSpec spec;
                spec.first_layer = fl;
                spec.window_size = window_size;
                spec.source_positions = sources;
                spec.target_positions = {rec.last_position()};
                spec.scope = opts.scope;
                const double p_ko =
                    knocked_answer_probability(model, rec.token_ids, rec.answer_token, spec);
                grid[ci * n_starts + fl].change = relative_change(p_base[ri], p_ko);
            }
        }
        per_record[ri] = std::move(grid);
    };

    if (opts.workers <= 1) {
        for (size_t ri = 0; ri < records.size(); ++ri) {
            run_record(ri);
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        const int n_workers = std::min<int>(opts.workers, static_cast<int>(records.size()));
        for (int t = 0; t < n_workers; ++t) {
            pool.emplace_back([&] {
                for (size_t ri = next.fetch_add(1); ri < records.size(); ri = next.fetch_add(1)) {
                    run_record(ri);
                }
            });
        }
        for (auto & th : pool) {
            th.join();
        }
    }

    // deterministic merge: raw values sorted by record id before reduction
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return records[a].id < records[b].id; });

    SweepResult result;
    result.model_id = opts.model_id;
    result.dataset_id = opts.dataset_id;
    result.window_size = window_size;
    result.scope_name = scope_display_name(opts.scope);
    for (size_t ci = 0; ci < n_cats; ++ci) {
        for (int fl = 0; fl < n_starts; ++fl) {
            SweepCell cell;
            cell.category = categories[ci];
            cell.first_layer = fl;
            cell.relative_depth = static_cast<double>(fl) / model.spec.num_layers;
            double sum = 0.0;
            for (size_t ri : order) {
                const RecordCellValue & v = per_record[ri][ci * n_starts + fl];
                if (v.skipped) {
                    ++cell.skipped;
                    continue;
                }
                cell.raw.emplace_back(records[ri].id, v.change);
                sum += v.change;
                ++cell.n;
            }
            cell.mean_change_pct = cell.n > 0 ? sum / cell.n : 0.0;
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

std::vector<SweepResult> window_size_study(const ModelWeights & model,
                                           const std::vector<PromptRecord> & records,
                                           const std::vector<int> & sizes,
                                           const std::vector<SourceCategory> & categories,
                                           const std::vector<double> & p_base,
                                           const SweepOptions & opts) {
    for (int s : sizes) {
        if (s < 1 || s > model.spec.num_layers) {
            throw InvalidInput("window_size_study: size " + std::to_string(s) +
                               " outside [1, num_layers]");
        }
    }
    std::vector<SweepResult> out;
    out.reserve(sizes.size());
    for (int s : sizes) {
        out.push_back(info_flow_sweep(model, records, s, categories, p_base, opts));
    }
    return out;
}

FeatureKnockoutStudy feature_knockout_study(const ModelWeights & model,
                                            const std::vector<PromptRecord> & records,
                                            int window_size, const std::vector<double> & p_base,
                                            const SweepOptions & opts) {
    if (model.spec.kind == LayerKind::softmax_attention) {
        throw InvalidInput("feature_knockout_study: requires an SSM layer kind");
    }
    const std::vector<SourceCategory> cats = {SourceCategory::subject};
    FeatureKnockoutStudy study;
    SweepOptions o = opts;
    o.scope = FeatureScope{FeatureScopeKind::all, {}};
    study.all = info_flow_sweep(model, records, window_size, cats, p_base, o);
    o.scope = FeatureScope{FeatureScopeKind::context_dependent, {}};
    study.context_dependent = info_flow_sweep(model, records, window_size, cats, p_base, o);
    o.scope = FeatureScope{FeatureScopeKind::context_independent, {}};
    study.context_independent = info_flow_sweep(model, records, window_size, cats, p_base, o);
    return study;
}

Matrix knockout_heatmap(const ModelWeights & model, const PromptRecord & record, int window_size) {
    if (window_size < 1 || window_size > model.spec.num_layers) {
        throw InvalidInput("knockout_heatmap: window size must be in [1, num_layers]");
    }
    const int len = record.seq_len();
    const int n_starts = model.spec.num_layers - window_size + 1;
    const double p_base =
        answer_probability(model, record.token_ids, record.answer_token);
    if (!(p_base > 0.0)) {
        throw InvalidInput("knockout_heatmap: baseline probability is zero for " + record.id);
    }
    Matrix heat(len, n_starts);
    for (int src = 0; src < len; ++src) {
        for (int fl = 0; fl < n_starts; ++fl) {
            KnockoutSpec spec;
            spec.first_layer = fl;
            spec.window_size = window_size;
            spec.source_positions = {src};
            spec.target_positions = {len - 1};
            const double p_ko =
                knocked_answer_probability(model, record.token_ids, record.answer_token, spec);
            heat(src, fl) = relative_change(p_base, p_ko);
        }
    }
    return heat;
}

std::vector<ScatterPoint> last_token_scatter(const ModelWeights & model,
                                             const std::vector<PromptRecord> & records,
                                             int window) {
    if (window < 0 || window > model.spec.num_layers) {
        throw InvalidInput("last_token_scatter: window must be in [0, num_layers]");
    }
    std::vector<ScatterPoint> out;
    out.reserve(records.size());
    for (const PromptRecord & rec : records) {
        ScatterPoint pt;
        pt.record_id = rec.id;
        pt.p_base = answer_probability(model, rec.token_ids, rec.answer_token);
        KnockoutSpec spec;
        spec.first_layer = model.spec.num_layers - window;
        spec.window_size = window;
        spec.source_positions = {rec.last_position()};
        spec.target_positions = {rec.last_position()};
        pt.p_ko = knocked_answer_probability(model, rec.token_ids, rec.answer_token, spec);
        out.push_back(std::move(pt));
    }
    return out;
}

// --------------------------------------------------------------------------
// Persistence

std::string format_double(double v) {
    // shortest round-trip representation, deterministic across runs
    return nlohmann::json(v).dump();
}

void write_sweep_json(const std::string & path, const nlohmann::json & config,
                      const std::vector<SweepResult> & sweeps) {
    nlohmann::json j;
    j["config"] = config;
    nlohmann::json arr = nlohmann::json::array();
    for (const SweepResult & s : sweeps) {
        arr.push_back(s.to_json());
    }
    j["sweeps"] = arr;
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("results: cannot open " + path);
    }
    out << j.dump(2) << "\n";
}

void write_sweep_csv(const std::string & path, const std::vector<SweepResult> & sweeps) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("results: cannot open " + path);
    }
    out << "category,window_size,first_layer,relative_depth,mean_change_pct,n,skipped\n";
    for (const SweepResult & s : sweeps) {
        for (const SweepCell & c : s.cells) {
            out << to_string(c.category) << "," << s.window_size << "," << c.first_layer << ","
                << format_double(c.relative_depth) << "," << format_double(c.mean_change_pct)
                << "," << c.n << "," << c.skipped << "\n";
        }
    }
}

}  // namespace ssmko
