// ssmko: selective-SSM knockout toolkit.
//
// Subcommands: train, import-counterfact, filter, knockout-sweep,
// window-study, feature-knockout, heatmap, scatter, check, dump-attention.
// Exit codes: 0 ok, 1 usage or runtime error, 2 training gate missed,
// 3 empty dataset after filtering.

#include "ssmko/archive.hpp"
#include "ssmko/attention_view.hpp"
#include "ssmko/checks.hpp"
#include "ssmko/harness.hpp"
#include "ssmko/knockout.hpp"
#include "ssmko/svg.hpp"
#include "ssmko/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace ssmko;

namespace {

std::string default_output_root() {
    const char * env = std::getenv("SSMKO_OUTPUT_ROOT");
    return env != nullptr ? env : "out";
}

void ensure_dir(const std::string & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory " + dir + ": " + ec.message());
    }
}

// Echo the effective configuration (plus input hashes) into the run
// directory so the run is reproducible from its outputs alone.
void write_config_echo(const std::string & dir, nlohmann::json config,
                       const std::vector<std::string> & input_files) {
    nlohmann::json hashes = nlohmann::json::object();
    for (const std::string & f : input_files) {
        hashes[f] = file_hash_hex(f);
    }
    config["input_hashes"] = hashes;
    std::ofstream out(dir + "/config.json", std::ios::trunc);
    out << config.dump(2) << "\n";
}

// JSON config file values act as defaults; command-line flags override.
nlohmann::json load_config_file(int argc, char ** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) {
                throw IoError(std::string("cannot open config file ") + argv[i + 1]);
            }
            return nlohmann::json::parse(in);
        }
    }
    return nlohmann::json::object();
}

template <typename T>
void from_config(const nlohmann::json & cfg, const char * key, T & value) {
    if (cfg.contains(key)) {
        value = cfg.at(key).get<T>();
    }
}

std::vector<SourceCategory> parse_categories(const std::string & csv) {
    std::vector<SourceCategory> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(source_category_from_string(item));
        }
    }
    if (out.empty()) {
        throw InvalidInput("no categories given");
    }
    return out;
}

std::vector<int> parse_int_list(const std::string & csv) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(std::stoi(item));
        }
    }
    return out;
}

const char * category_color(SourceCategory c) {
    switch (c) {
        case SourceCategory::subject:  return "#1f77b4";
        case SourceCategory::relation: return "#ff7f0e";
        case SourceCategory::first:    return "#2ca02c";
        case SourceCategory::last:     return "#d62728";
    }
    return "#000000";
}

SvgSeries sweep_series(const SweepResult & sweep, SourceCategory cat, const std::string & label,
                       const std::string & color) {
    SvgSeries series;
    series.label = label;
    series.color = color;
    for (const SweepCell & cell : sweep.cells) {
        if (cell.category == cat) {
            series.points.emplace_back(cell.relative_depth, cell.mean_change_pct);
        }
    }
    return series;
}

void write_sweep_chart(const std::string & path, const SweepResult & sweep,
                       const std::vector<SourceCategory> & cats, const std::string & title) {
    std::vector<SvgSeries> series;
    for (SourceCategory c : cats) {
        series.push_back(sweep_series(sweep, c, to_string(c), category_color(c)));
    }
    write_text_file(path, svg_line_chart(title, "relative depth of first layer",
                                         "mean relative change (%)", series));
}

std::vector<PromptRecord> load_and_filter(const ModelWeights & model, const std::string & dataset,
                                          bool filter, int limit) {
    std::vector<PromptRecord> records = load_records_jsonl(dataset);
    if (filter) {
        records = filter_correct(model, records);
    }
    if (limit > 0 && static_cast<int>(records.size()) > limit) {
        records.resize(limit);
    }
    return records;
}

std::vector<std::string> token_labels(const PromptRecord & rec) {
    std::vector<std::string> labels;
    if (!rec.source_text.empty()) {
        std::stringstream ss(rec.source_text);
        std::string word;
        while (ss >> word) {
            labels.push_back(word);
        }
        if (labels.size() == rec.token_ids.size()) {
            return labels;
        }
        labels.clear();
    }
    for (size_t t = 0; t < rec.token_ids.size(); ++t) {
        labels.push_back("tok" + std::to_string(rec.token_ids[t]));
    }
    return labels;
}

// The shipped showcase prompt for the heatmap command.
PromptRecord sxsw_demo_record(Vocab & vocab) {
    const std::vector<RawTriplet> raw = {
        {"Where is South by Southwest? It is located in", "South by Southwest", "Austin"}};
    ImportResult res = import_triplets(raw);
    if (res.records.empty()) {
        throw InvalidInput("demo record failed to import");
    }
    vocab = res.vocab;
    PromptRecord rec = res.records.front();
    rec.id = "sxsw-demo";
    return rec;
}

// ---------------------------------------------------------------------------

int cmd_train(CLI::App & app, int argc, char ** argv) {
    const nlohmann::json cfg = load_config_file(argc, argv);
    std::string task_name = "facts512";
    std::string out_dir = default_output_root() + "/train";
    std::string kind = "ssd";
    uint64_t task_seed = 1;
    int subjects = 64, relations = 8, attributes = 64, relation_forms = 4;
    int embed = 64, layers = 4, heads = 6, state_dim = 16, head_dim = 16;
    TrainConfig tc;
    tc.seed = 1;
    tc.steps = 6000;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.eval_interval = 250;
    tc.target_accuracy = 0.95;
    std::string config_path;

    from_config(cfg, "task", task_name);
    from_config(cfg, "out", out_dir);
    from_config(cfg, "kind", kind);
    from_config(cfg, "seed", tc.seed);
    from_config(cfg, "steps", tc.steps);
    from_config(cfg, "batch_size", tc.batch_size);
    from_config(cfg, "learning_rate", tc.learning_rate);
    from_config(cfg, "target_accuracy", tc.target_accuracy);

    app.add_option("--config", config_path, "JSON config file (defaults, flags override)");
    app.add_option("--task", task_name, "one-fact | facts512 | custom");
    app.add_option("--subjects", subjects);
    app.add_option("--relations", relations);
    app.add_option("--attributes", attributes);
    app.add_option("--relation-forms", relation_forms);
    app.add_option("--task-seed", task_seed);
    app.add_option("--kind", kind, "ssd | softmax_attention");
    app.add_option("--embed", embed);
    app.add_option("--layers", layers);
    app.add_option("--heads", heads);
    app.add_option("--state-dim", state_dim);
    app.add_option("--head-dim", head_dim);
    app.add_option("--seed", tc.seed);
    app.add_option("--steps", tc.steps);
    app.add_option("--batch", tc.batch_size);
    app.add_option("--lr", tc.learning_rate);
    app.add_option("--eval-interval", tc.eval_interval);
    app.add_option("--target-accuracy", tc.target_accuracy);
    app.add_option("--out", out_dir);

    CLI11_PARSE(app, argc, argv);

    FactTaskConfig task_cfg;
    if (task_name == "one-fact") {
        task_cfg.num_subjects = 1;
        task_cfg.num_relations = 1;
        task_cfg.num_attributes = 4;
        task_cfg.relation_forms = 1;
    } else if (task_name == "facts512") {
        task_cfg.num_subjects = 64;
        task_cfg.num_relations = 8;
        task_cfg.num_attributes = 64;
        task_cfg.relation_forms = relation_forms;
    } else if (task_name == "custom") {
        task_cfg.num_subjects = subjects;
        task_cfg.num_relations = relations;
        task_cfg.num_attributes = attributes;
        task_cfg.relation_forms = relation_forms;
    } else {
        std::cerr << "unknown task: " << task_name << "\n";
        return 1;
    }

    Rng task_rng(task_seed);
    const auto [task, splits] = generate_task(task_cfg, task_rng);

    ModelSpec spec;
    spec.kind = layer_kind_from_string(kind);
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = embed;
    spec.num_layers = layers;
    spec.ssd_heads = heads;
    spec.ssd_state_dim = state_dim;
    spec.ssd_head_dim = head_dim;
    spec.attn_heads = heads;
    spec.max_seq = 16;
    spec.m1_state_dim = state_dim;
    spec.validate();
    if (spec.kind == LayerKind::mamba1 && tc.steps > 0) {
        std::cerr << "mamba1 is not trainable; use --steps 0 to emit a random-init model\n";
        return 1;
    }

    ensure_dir(out_dir);
    TrainResult result;
    try {
        result = train(spec, splits, tc);
    } catch (const TrainDivergence & e) {
        write_metrics_jsonl(out_dir + "/metrics.jsonl", e.partial_log);
        std::cerr << "training fault: " << e.what() << " (partial metrics written)\n";
        return 1;
    }

    const std::string model_path = out_dir + "/model.ssmko";
    save_model(model_path, result.weights);
    write_metrics_jsonl(out_dir + "/metrics.jsonl", result.log);
    save_records_jsonl(out_dir + "/train.jsonl", splits.train);
    save_records_jsonl(out_dir + "/eval.jsonl", splits.eval);

    nlohmann::json echo;
    echo["command"] = "train";
    echo["task"] = {{"name", task_name},
                    {"subjects", task_cfg.num_subjects},
                    {"relations", task_cfg.num_relations},
                    {"attributes", task_cfg.num_attributes},
                    {"relation_forms", task_cfg.relation_forms},
                    {"task_seed", task_seed}};
    echo["model"] = spec.to_json();
    echo["train"] = {{"seed", tc.seed},
                     {"steps", tc.steps},
                     {"batch_size", tc.batch_size},
                     {"learning_rate", tc.learning_rate},
                     {"target_accuracy", tc.target_accuracy}};
    write_config_echo(out_dir, echo, {model_path});

    std::cout << "final eval accuracy " << result.final_eval_accuracy << " after "
              << result.log.size() << " steps\n";
    std::cout << "model written to " << model_path << "\n";
    return result.reached_target ? 0 : 2;
}

int cmd_import_counterfact(CLI::App & app, int argc, char ** argv) {
    std::string input, out_dir = default_output_root() + "/import";
    app.add_option("--input", input, "COUNTERFACT-style JSON or JSONL")->required();
    app.add_option("--out", out_dir);
    CLI11_PARSE(app, argc, argv);

    const std::vector<RawTriplet> raw = load_counterfact(input);
    if (raw.empty()) {
        std::cerr << "warning: no triplets in " << input << "\n";
    }
    const ImportResult res = import_triplets(raw);
    ensure_dir(out_dir);
    save_records_jsonl(out_dir + "/dataset.jsonl", res.records);
    {
        std::ofstream vout(out_dir + "/vocab.json", std::ios::trunc);
        vout << res.vocab.to_json().dump(2) << "\n";
    }
    {
        std::ofstream rej(out_dir + "/rejected.txt", std::ios::trunc);
        for (const std::string & r : res.rejected) {
            rej << r << "\n";
        }
    }
    write_config_echo(out_dir, {{"command", "import-counterfact"}, {"input", input}}, {input});
    std::cout << "imported " << res.records.size() << " records, rejected "
              << res.rejected.size() << ", vocab " << res.vocab.size() << " words, "
              << res.unknown_tokens << " unknown tokens\n";
    return 0;
}

int cmd_filter(CLI::App & app, int argc, char ** argv) {
    std::vector<std::string> model_paths;
    std::string dataset, out_path;
    app.add_option("--model", model_paths, "model archives (repeat for intersection)")
        ->required();
    app.add_option("--dataset", dataset)->required();
    app.add_option("--out", out_path, "output JSONL")->required();
    CLI11_PARSE(app, argc, argv);

    std::vector<ModelWeights> models;
    std::vector<const ModelWeights *> ptrs;
    for (const std::string & p : model_paths) {
        models.push_back(load_model(p));
    }
    for (const ModelWeights & m : models) {
        ptrs.push_back(&m);
    }
    const std::vector<PromptRecord> records = load_records_jsonl(dataset);
    const std::vector<PromptRecord> kept = filter_correct_intersection(ptrs, records);
    save_records_jsonl(out_path, kept);
    std::cout << "kept " << kept.size() << " of " << records.size() << " records\n";
    return kept.empty() ? 3 : 0;
}

struct SweepArgs {
    std::string model, dataset, out_dir;
    std::string categories = "subject,relation,first,last";
    std::string window_sizes;
    std::string scope = "all";
    int window = 9;
    int workers = 1;
    int limit = 0;
    bool no_filter = false;
    std::string config_path;
};

FeatureScope parse_scope(const std::string & name) {
    if (name == "all")                 return {FeatureScopeKind::all, {}};
    if (name == "context_dependent")   return {FeatureScopeKind::context_dependent, {}};
    if (name == "context_independent") return {FeatureScopeKind::context_independent, {}};
    throw InvalidInput("unknown feature scope: " + name);
}

void add_sweep_options(CLI::App & app, SweepArgs & args, const nlohmann::json & cfg) {
    from_config(cfg, "model", args.model);
    from_config(cfg, "dataset", args.dataset);
    from_config(cfg, "out", args.out_dir);
    from_config(cfg, "categories", args.categories);
    from_config(cfg, "window", args.window);
    from_config(cfg, "window_sizes", args.window_sizes);
    from_config(cfg, "scope", args.scope);
    from_config(cfg, "workers", args.workers);
    from_config(cfg, "limit", args.limit);
    app.add_option("--config", args.config_path, "JSON config file");
    app.add_option("--model", args.model)->required(args.model.empty());
    app.add_option("--dataset", args.dataset)->required(args.dataset.empty());
    app.add_option("--out", args.out_dir);
    app.add_option("--categories", args.categories);
    app.add_option("--workers", args.workers);
    app.add_option("--limit", args.limit, "cap the record count (0 = all)");
    app.add_flag("--no-filter-correct", args.no_filter,
                 "keep records the model predicts incorrectly");
}

int cmd_knockout_sweep(CLI::App & app, int argc, char ** argv) {
    const nlohmann::json cfg = load_config_file(argc, argv);
    SweepArgs args;
    args.out_dir = default_output_root() + "/knockout-sweep";
    add_sweep_options(app, args, cfg);
    app.add_option("--window", args.window);
    app.add_option("--window-sizes", args.window_sizes,
                   "comma list; emits one chart per size");
    app.add_option("--scope", args.scope,
                   "all | context_dependent | context_independent");
    CLI11_PARSE(app, argc, argv);

    const ModelWeights model = load_model(args.model);
    const std::vector<PromptRecord> records =
        load_and_filter(model, args.dataset, !args.no_filter, args.limit);
    if (records.empty()) {
        std::cerr << "no records after filtering\n";
        return 3;
    }
    const std::vector<SourceCategory> cats = parse_categories(args.categories);
    const std::vector<int> sizes =
        args.window_sizes.empty() ? std::vector<int>{args.window} : parse_int_list(args.window_sizes);

    ensure_dir(args.out_dir);
    const std::vector<double> p_base = baseline_probabilities(model, records);
    SweepOptions opts;
    opts.workers = args.workers;
    opts.scope = parse_scope(args.scope);
    opts.model_id = file_hash_hex(args.model);
    opts.dataset_id = file_hash_hex(args.dataset);
    const std::vector<SweepResult> sweeps =
        window_size_study(model, records, sizes, cats, p_base, opts);

    nlohmann::json echo;
    echo["command"] = "knockout-sweep";
    echo["scope"] = args.scope;
    echo["model"] = args.model;
    echo["dataset"] = args.dataset;
    echo["categories"] = args.categories;
    echo["window_sizes"] = sizes;
    echo["workers"] = args.workers;
    echo["filter_correct"] = !args.no_filter;
    echo["records"] = records.size();
    write_sweep_json(args.out_dir + "/sweep.json", echo, sweeps);
    write_sweep_csv(args.out_dir + "/sweep.csv", sweeps);
    for (const SweepResult & s : sweeps) {
        write_sweep_chart(args.out_dir + "/sweep_w" + std::to_string(s.window_size) + ".svg", s,
                          cats, "information flow to the last token (window " +
                                    std::to_string(s.window_size) + ")");
    }
    write_config_echo(args.out_dir, echo, {args.model, args.dataset});
    std::cout << "wrote " << sweeps.size() << " sweep(s) over " << records.size()
              << " records to " << args.out_dir << "\n";
    return 0;
}

int cmd_window_study(CLI::App & app, int argc, char ** argv) {
    const nlohmann::json cfg = load_config_file(argc, argv);
    SweepArgs args;
    args.out_dir = default_output_root() + "/window-study";
    args.window_sizes = "1,3,5,9,12,15";
    add_sweep_options(app, args, cfg);
    app.add_option("--window-sizes", args.window_sizes);
    CLI11_PARSE(app, argc, argv);

    const ModelWeights model = load_model(args.model);
    std::vector<int> sizes = parse_int_list(args.window_sizes);
    const std::vector<PromptRecord> records =
        load_and_filter(model, args.dataset, !args.no_filter, args.limit);
    if (records.empty()) {
        std::cerr << "no records after filtering\n";
        return 3;
    }
    const std::vector<SourceCategory> cats = parse_categories(args.categories);
    ensure_dir(args.out_dir);
    const std::vector<double> p_base = baseline_probabilities(model, records);
    SweepOptions opts;
    opts.workers = args.workers;
    opts.model_id = file_hash_hex(args.model);
    opts.dataset_id = file_hash_hex(args.dataset);
    const std::vector<SweepResult> sweeps =
        window_size_study(model, records, sizes, cats, p_base, opts);

    nlohmann::json echo;
    echo["command"] = "window-study";
    echo["model"] = args.model;
    echo["dataset"] = args.dataset;
    echo["window_sizes"] = sizes;
    echo["categories"] = args.categories;
    write_sweep_json(args.out_dir + "/window_study.json", echo, sweeps);
    write_sweep_csv(args.out_dir + "/window_study.csv", sweeps);
    for (const SweepResult & s : sweeps) {
        write_sweep_chart(args.out_dir + "/study_w" + std::to_string(s.window_size) + ".svg", s,
                          cats, "window size " + std::to_string(s.window_size));
    }
    write_config_echo(args.out_dir, echo, {args.model, args.dataset});
    std::cout << "window study over sizes";
    for (int s : sizes) {
        std::cout << " " << s;
    }
    std::cout << " written to " << args.out_dir << "\n";
    return 0;
}

int cmd_feature_knockout(CLI::App & app, int argc, char ** argv) {
    const nlohmann::json cfg = load_config_file(argc, argv);
    SweepArgs args;
    args.out_dir = default_output_root() + "/feature-knockout";
    add_sweep_options(app, args, cfg);
    app.add_option("--window", args.window);
    CLI11_PARSE(app, argc, argv);

    const ModelWeights model = load_model(args.model);
    const std::vector<PromptRecord> records =
        load_and_filter(model, args.dataset, !args.no_filter, args.limit);
    if (records.empty()) {
        std::cerr << "no records after filtering\n";
        return 3;
    }
    ensure_dir(args.out_dir);
    const std::vector<double> p_base = baseline_probabilities(model, records);
    SweepOptions opts;
    opts.workers = args.workers;
    opts.model_id = file_hash_hex(args.model);
    opts.dataset_id = file_hash_hex(args.dataset);
    const FeatureKnockoutStudy study =
        feature_knockout_study(model, records, args.window, p_base, opts);

    nlohmann::json echo;
    echo["command"] = "feature-knockout";
    echo["model"] = args.model;
    echo["dataset"] = args.dataset;
    echo["window"] = args.window;
    const std::vector<SweepResult> sweeps = {study.all, study.context_dependent,
                                             study.context_independent};
    write_sweep_json(args.out_dir + "/feature_knockout.json", echo, sweeps);
    write_sweep_csv(args.out_dir + "/feature_knockout.csv", sweeps);
    const std::vector<SvgSeries> series = {
        sweep_series(study.all, SourceCategory::subject, "all features", "#1f77b4"),
        sweep_series(study.context_independent, SourceCategory::subject,
                     "context-independent", "#d62728"),
        sweep_series(study.context_dependent, SourceCategory::subject, "context-dependent",
                     "#2ca02c"),
    };
    write_text_file(args.out_dir + "/feature_knockout.svg",
                    svg_line_chart("feature knockout, subject to last token",
                                   "relative depth of first layer",
                                   "mean relative change (%)", series));
    write_config_echo(args.out_dir, echo, {args.model, args.dataset});
    std::cout << "feature knockout study written to " << args.out_dir << "\n";
    return 0;
}

int cmd_heatmap(CLI::App & app, int argc, char ** argv) {
    std::string model_path, dataset, prompt_id = "sxsw-demo";
    std::string out_dir = default_output_root() + "/heatmap";
    int window = 9;
    uint64_t demo_seed = 7;
    app.add_option("--model", model_path, "model archive (omit for the built-in demo model)");
    app.add_option("--dataset", dataset, "record source (omit for the built-in demo prompt)");
    app.add_option("--prompt-id", prompt_id);
    app.add_option("--window", window);
    app.add_option("--demo-seed", demo_seed);
    app.add_option("--out", out_dir);
    CLI11_PARSE(app, argc, argv);

    PromptRecord record;
    ModelWeights model;
    std::vector<std::string> inputs;
    if (prompt_id == "sxsw-demo" && dataset.empty()) {
        Vocab vocab;
        record = sxsw_demo_record(vocab);
        if (model_path.empty()) {
            // self-contained showcase: a small random SSM over the demo vocab
            ModelSpec spec;
            spec.kind = LayerKind::ssd;
            spec.vocab_size = vocab.size();
            spec.embed_dim = 32;
            spec.num_layers = std::max(window, 9) + 3;
            spec.ssd_heads = 4;
            spec.ssd_state_dim = 8;
            spec.ssd_head_dim = 8;
            Rng rng(demo_seed);
            model = random_model(spec, rng);
        } else {
            model = load_model(model_path);
            inputs.push_back(model_path);
        }
    } else {
        if (model_path.empty() || dataset.empty()) {
            std::cerr << "--model and --dataset are required for non-demo prompts\n";
            return 1;
        }
        model = load_model(model_path);
        inputs = {model_path, dataset};
        const std::vector<PromptRecord> records = load_records_jsonl(dataset);
        bool found = false;
        for (const PromptRecord & r : records) {
            if (r.id == prompt_id) {
                record = r;
                found = true;
                break;
            }
        }
        if (!found) {
            std::cerr << "prompt id " << prompt_id << " not found in " << dataset << "\n";
            return 3;
        }
    }
    window = std::min(window, model.spec.num_layers);

    ensure_dir(out_dir);
    const Matrix heat = knockout_heatmap(model, record, window);
    std::vector<std::string> col_labels;
    for (Index c = 0; c < heat.cols(); ++c) {
        col_labels.push_back(std::to_string(c));
    }
    write_text_file(out_dir + "/heatmap.svg",
                    svg_heatmap("knockout to the last token: " + record.id, heat,
                                token_labels(record), col_labels));
    {
        std::ofstream csv(out_dir + "/heatmap.csv", std::ios::trunc);
        csv << "source_token,first_layer,change_pct\n";
        for (Index r = 0; r < heat.rows(); ++r) {
            for (Index c = 0; c < heat.cols(); ++c) {
                csv << r << "," << c << "," << format_double(heat(r, c)) << "\n";
            }
        }
    }
    nlohmann::json echo;
    echo["command"] = "heatmap";
    echo["prompt_id"] = record.id;
    echo["window"] = window;
    echo["model"] = model_path.empty() ? "demo" : model_path;
    write_config_echo(out_dir, echo, inputs);
    std::cout << "heatmap (" << heat.rows() << " tokens x " << heat.cols()
              << " starts) written to " << out_dir << "\n";
    return 0;
}

int cmd_scatter(CLI::App & app, int argc, char ** argv) {
    SweepArgs args;
    args.out_dir = default_output_root() + "/scatter";
    const nlohmann::json cfg = load_config_file(argc, argv);
    add_sweep_options(app, args, cfg);
    app.add_option("--window", args.window);
    CLI11_PARSE(app, argc, argv);

    const ModelWeights model = load_model(args.model);
    const std::vector<PromptRecord> records =
        load_and_filter(model, args.dataset, !args.no_filter, args.limit);
    if (records.empty()) {
        std::cerr << "no records after filtering\n";
        return 3;
    }
    const int window = std::min(args.window, model.spec.num_layers);
    ensure_dir(args.out_dir);
    const std::vector<ScatterPoint> points = last_token_scatter(model, records, window);

    std::vector<std::pair<double, double>> xy;
    for (const ScatterPoint & pt : points) {
        xy.emplace_back(pt.p_base, pt.p_ko);
    }
    write_text_file(args.out_dir + "/scatter.svg",
                    svg_scatter("last-token self knockout over the final " +
                                    std::to_string(window) + " layers",
                                "baseline probability", "post-knockout probability", xy, true));
    {
        std::ofstream csv(args.out_dir + "/scatter.csv", std::ios::trunc);
        csv << "record_id,p_base,p_ko\n";
        for (const ScatterPoint & pt : points) {
            csv << pt.record_id << "," << format_double(pt.p_base) << ","
                << format_double(pt.p_ko) << "\n";
        }
    }
    nlohmann::json echo;
    echo["command"] = "scatter";
    echo["model"] = args.model;
    echo["dataset"] = args.dataset;
    echo["window"] = window;
    write_config_echo(args.out_dir, echo, {args.model, args.dataset});
    std::cout << points.size() << " scatter points written to " << args.out_dir << "\n";
    return 0;
}

int cmd_check(CLI::App & app, int argc, char ** argv) {
    uint64_t seed = 1;
    bool all = false;
    app.add_flag("--all", all, "run every suite");
    app.add_option("--seed", seed);
    CLI11_PARSE(app, argc, argv);
    (void)all;  // every suite runs either way

    const std::vector<CheckResult> results = run_all_checks(seed);
    bool ok = true;
    for (const CheckResult & r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.pass;
    }
    return ok ? 0 : 1;
}

int cmd_dump_attention(CLI::App & app, int argc, char ** argv) {
    std::string model_path, dataset, prompt_id;
    std::string out_dir = default_output_root() + "/attention";
    int layer = -1;
    app.add_option("--model", model_path)->required();
    app.add_option("--dataset", dataset)->required();
    app.add_option("--prompt-id", prompt_id)->required();
    app.add_option("--layer", layer, "layer index (-1 = all layers)");
    app.add_option("--out", out_dir);
    CLI11_PARSE(app, argc, argv);

    const ModelWeights model = load_model(model_path);
    if (model.spec.kind == LayerKind::softmax_attention) {
        std::cerr << "dump-attention requires an SSM layer kind\n";
        return 1;
    }
    const std::vector<PromptRecord> records = load_records_jsonl(dataset);
    const PromptRecord * record = nullptr;
    for (const PromptRecord & r : records) {
        if (r.id == prompt_id) {
            record = &r;
            break;
        }
    }
    if (record == nullptr) {
        std::cerr << "prompt id " << prompt_id << " not found\n";
        return 3;
    }
    ensure_dir(out_dir);

    // advance the stream exactly as model_forward does, dumping per layer
    const Index len = record->seq_len();
    Matrix x(len, model.spec.embed_dim);
    for (Index t = 0; t < len; ++t) {
        x.row(t) = model.embedding.row(record->token_ids[t]);
    }
    int dumped = 0;
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const Matrix z = rms_norm(x, model.layer_norm_gain[l], ModelWeights::kNormEps);
        if (layer < 0 || layer == static_cast<int>(l)) {
            const AttentionTensor attn = materialize(model.layers[l], z, static_cast<int>(l));
            dump_attention(out_dir + "/attn_layer" + std::to_string(l) + ".ssmko", attn);
            ++dumped;
        }
        x += layer_forward(model.layers[l], z);
    }
    write_config_echo(out_dir,
                      {{"command", "dump-attention"},
                       {"model", model_path},
                       {"dataset", dataset},
                       {"prompt_id", prompt_id},
                       {"layer", layer}},
                      {model_path, dataset});
    std::cout << "dumped " << dumped << " attention tensor(s) to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char ** argv) {
    if (argc < 2) {
        std::cerr << "usage: ssmko <train|import-counterfact|filter|knockout-sweep|window-study|"
                     "feature-knockout|heatmap|scatter|check|dump-attention> [options]\n";
        return 1;
    }
    const std::string command = argv[1];
    CLI::App app{"selective-SSM knockout toolkit: " + command};
    // shift argv past the subcommand
    argc -= 1;
    argv += 1;
    try {
        if (command == "train")               return cmd_train(app, argc, argv);
        if (command == "import-counterfact")  return cmd_import_counterfact(app, argc, argv);
        if (command == "filter")              return cmd_filter(app, argc, argv);
        if (command == "knockout-sweep")      return cmd_knockout_sweep(app, argc, argv);
        if (command == "window-study")        return cmd_window_study(app, argc, argv);
        if (command == "feature-knockout")    return cmd_feature_knockout(app, argc, argv);
        if (command == "heatmap")             return cmd_heatmap(app, argc, argv);
        if (command == "scatter")             return cmd_scatter(app, argc, argv);
        if (command == "check")               return cmd_check(app, argc, argv);
        if (command == "dump-attention")      return cmd_dump_attention(app, argc, argv);
    } catch (const std::exception & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "unknown command: " << command << "\n";
    return 1;
}
