#include <doctest.h>

#include "ssmko/checks.hpp"
#include "ssmko/harness.hpp"
#include "ssmko/svg.hpp"
#include "ssmko/trainer.hpp"

#include <cstdio>
#include <fstream>

using namespace ssmko;

TEST_CASE("tokenize_simple") {
    const Vocab vocab = build_vocab({"a b"});
    SUBCASE("direct lookup") {
        const Tokenized tok = tokenize_simple("a b a", vocab);
        CHECK(tok.ids == std::vector<int>{1, 2, 1});
        CHECK(tok.unknown_count == 0);
    }
    SUBCASE("char span maps to token span") {
        const Tokenized tok = tokenize_simple("a b a", vocab);
        const auto span = tok.char_span_to_token_span(2, 3);  // "b"
        CHECK(span == std::array<int, 2>{1, 2});
    }
    SUBCASE("out-of-vocab maps to unk and counts") {
        const Tokenized tok = tokenize_simple("a zebra b", vocab);
        CHECK(tok.ids == std::vector<int>{1, 0, 2});
        CHECK(tok.unknown_count == 1);
    }
    SUBCASE("case folds") {
        const Tokenized tok = tokenize_simple("A B", vocab);
        CHECK(tok.ids == std::vector<int>{1, 2});
    }
}

TEST_CASE("counterfact import") {
    SUBCASE("subject span covers the leading tokens") {
        const std::vector<RawTriplet> raw = {
            {"Beats Music is owned by", "Beats Music", "Apple"}};
        const ImportResult res = import_triplets(raw);
        REQUIRE(res.records.size() == 1);
        const PromptRecord & rec = res.records[0];
        CHECK(rec.token_ids.size() == 5);
        CHECK(rec.subject_span == std::array<int, 2>{0, 2});
        CHECK(rec.relation_span == std::array<int, 2>{2, 4});
        CHECK(rec.answer_token == res.vocab.lookup("apple"));
    }
    SUBCASE("missing subject is rejected with a reason") {
        const std::vector<RawTriplet> raw = {{"The sky is blue today", "Beats Music", "x"}};
        const ImportResult res = import_triplets(raw);
        CHECK(res.records.empty());
        REQUIRE(res.rejected.size() == 1);
        CHECK(res.rejected[0].find("subject not found") != std::string::npos);
    }
    SUBCASE("empty file loads as an empty list") {
        const std::string path = "cf_empty_test.json";
        std::ofstream(path).close();
        CHECK(load_counterfact(path).empty());
        std::remove(path.c_str());
    }
    SUBCASE("json array and json lines both parse") {
        const std::string path = "cf_fmt_test.json";
        {
            std::ofstream out(path);
            out << R"([{"prompt": "Beats Music is owned by", "subject": "Beats Music", "target": "Apple"}])";
        }
        CHECK(load_counterfact(path).size() == 1);
        {
            std::ofstream out(path, std::ios::trunc);
            out << R"({"prompt": "{} is owned by", "subject": "Beats Music", "target": "Apple"})"
                << "\n";
        }
        const auto rows = load_counterfact(path);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].prompt == "Beats Music is owned by");
        std::remove(path.c_str());
    }
    SUBCASE("malformed json reports the line") {
        const std::string path = "cf_bad_test.jsonl";
        {
            std::ofstream out(path);
            out << R"({"prompt": "a b", "subject": "a", "target": "c"})" << "\n";
            out << "{nope\n";
        }
        CHECK_THROWS_WITH_AS(load_counterfact(path),
                             doctest::Contains(":2"), IoError);
        std::remove(path.c_str());
    }
}

TEST_CASE("filter_correct") {
    Rng rng(71);
    FactTaskConfig cfg;
    cfg.num_subjects = 6;
    cfg.num_relations = 3;
    cfg.num_attributes = 8;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 2;
    spec.ssd_heads = 2;
    spec.ssd_state_dim = 4;
    spec.ssd_head_dim = 4;
    const ModelWeights w = random_model(spec, rng);

    SUBCASE("an untrained model keeps almost nothing") {
        const auto kept = filter_correct(w, splits.train);
        CHECK(kept.size() <= splits.train.size() / 2);
    }
    SUBCASE("intersection is a subset of each side") {
        const ModelWeights w2 = random_model(spec, rng);
        const auto a = filter_correct(w, splits.train);
        const auto both = filter_correct_intersection({&w, &w2}, splits.train);
        CHECK(both.size() <= a.size());
        for (const auto & rec : both) {
            bool found = false;
            for (const auto & ra : a) {
                found = found || ra.id == rec.id;
            }
            CHECK(found);
        }
    }
}

TEST_CASE("info_flow_sweep") {
    Rng rng(72);
    FactTaskConfig cfg;
    cfg.num_subjects = 4;
    cfg.num_relations = 2;
    cfg.num_attributes = 6;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 3;
    spec.ssd_heads = 3;
    spec.ssd_state_dim = 4;
    spec.ssd_head_dim = 4;
    const ModelWeights w = random_model(spec, rng);
    const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 4);
    const std::vector<double> p_base = baseline_probabilities(w, records);

    SUBCASE("window covering the whole stack has one point at depth zero") {
        const SweepResult res =
            info_flow_sweep(w, records, spec.num_layers, {SourceCategory::last}, p_base);
        REQUIRE(res.cells.size() == 1);
        CHECK(res.cells[0].first_layer == 0);
        CHECK(res.cells[0].relative_depth == 0.0);
    }
    SUBCASE("means are recomputable from retained raw values") {
        const SweepResult res = info_flow_sweep(
            w, records, 2, {SourceCategory::subject, SourceCategory::first}, p_base);
        for (const SweepCell & cell : res.cells) {
            CHECK(cell.n == static_cast<int>(cell.raw.size()));
            double sum = 0.0;
            for (const auto & [id, v] : cell.raw) {
                sum += v;
            }
            const double mean = cell.n > 0 ? sum / cell.n : 0.0;
            CHECK(mean == cell.mean_change_pct);
        }
    }
    SUBCASE("skipped plus processed equals input") {
        std::vector<double> forced = p_base;
        forced[1] = 0.0;  // simulate an impossible baseline
        const SweepResult res =
            info_flow_sweep(w, records, 2, {SourceCategory::subject}, forced);
        for (const SweepCell & cell : res.cells) {
            CHECK(cell.n + cell.skipped == static_cast<int>(records.size()));
            CHECK(cell.skipped == 1);
        }
    }
    SUBCASE("worker pool output equals the serial path") {
        const std::vector<SourceCategory> cats = {SourceCategory::subject,
                                                  SourceCategory::relation};
        const SweepResult serial = info_flow_sweep(w, records, 2, cats, p_base);
        SweepOptions opts;
        opts.workers = 4;
        const SweepResult parallel = info_flow_sweep(w, records, 2, cats, p_base, opts);
        REQUIRE(serial.cells.size() == parallel.cells.size());
        for (size_t i = 0; i < serial.cells.size(); ++i) {
            CHECK(serial.cells[i].mean_change_pct == parallel.cells[i].mean_change_pct);
            CHECK(serial.cells[i].raw == parallel.cells[i].raw);
        }
    }
    SUBCASE("window study shares the baseline and covers each size") {
        const auto sweeps =
            window_size_study(w, records, {1, 3}, {SourceCategory::subject}, p_base);
        REQUIRE(sweeps.size() == 2);
        CHECK(sweeps[0].window_size == 1);
        CHECK(sweeps[1].window_size == 3);
        // size-1 sweep at first_layer k equals a single-layer knockout
        const SweepResult & s1 = sweeps[0];
        CHECK(s1.cells.size() == 3);
        CHECK_THROWS_AS(
            window_size_study(w, records, {5}, {SourceCategory::subject}, p_base),
            InvalidInput);
    }
}

TEST_CASE("feature knockout study partitions by scope") {
    Rng rng(73);
    FactTaskConfig cfg;
    cfg.num_subjects = 3;
    cfg.num_relations = 2;
    cfg.num_attributes = 4;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 2;
    spec.ssd_heads = 6;
    spec.ssd_state_dim = 3;
    spec.ssd_head_dim = 3;
    const ModelWeights w = random_model(spec, rng);
    const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 3);
    const std::vector<double> p_base = baseline_probabilities(w, records);

    const FeatureKnockoutStudy study = feature_knockout_study(w, records, 2, p_base);
    CHECK(study.all.scope_name == "all");
    CHECK(study.context_dependent.scope_name == "context_dependent");
    CHECK(study.context_independent.scope_name == "context_independent");

    // the all-scope study equals a plain subject sweep
    const SweepResult plain = info_flow_sweep(w, records, 2, {SourceCategory::subject}, p_base);
    for (size_t i = 0; i < plain.cells.size(); ++i) {
        CHECK(plain.cells[i].mean_change_pct == study.all.cells[i].mean_change_pct);
    }

    ModelSpec tspec;
    tspec.kind = LayerKind::softmax_attention;
    tspec.vocab_size = task.vocab_size;
    tspec.embed_dim = 8;
    tspec.num_layers = 2;
    tspec.attn_heads = 2;
    tspec.max_seq = 16;
    const ModelWeights tw = random_model(tspec, rng);
    CHECK_THROWS_AS(feature_knockout_study(tw, records, 2, p_base), InvalidInput);
}

TEST_CASE("heatmap and scatter") {
    Rng rng(74);
    FactTaskConfig cfg;
    cfg.num_subjects = 3;
    cfg.num_relations = 2;
    cfg.num_attributes = 4;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 3;
    spec.ssd_heads = 2;
    spec.ssd_state_dim = 4;
    spec.ssd_head_dim = 4;
    const ModelWeights w = random_model(spec, rng);

    SUBCASE("heatmap dimensions follow the record and window") {
        const Matrix heat = knockout_heatmap(w, splits.train[0], 2);
        CHECK(heat.rows() == splits.train[0].seq_len());
        CHECK(heat.cols() == 2);  // 3 layers, window 2 -> starts {0, 1}
    }
    SUBCASE("scatter with an empty window sits on the diagonal") {
        const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 3);
        const auto points = last_token_scatter(w, records, 0);
        REQUIRE(points.size() == 3);
        for (const auto & pt : points) {
            CHECK(pt.p_base == pt.p_ko);
            CHECK(pt.p_base >= 0.0);
            CHECK(pt.p_base <= 1.0);
        }
    }
    SUBCASE("scatter probabilities stay in [0, 1]") {
        const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 3);
        for (const auto & pt : last_token_scatter(w, records, 2)) {
            CHECK(pt.p_base >= 0.0);
            CHECK(pt.p_base <= 1.0);
            CHECK(pt.p_ko >= 0.0);
            CHECK(pt.p_ko <= 1.0);
        }
    }
}

TEST_CASE("harness experiments run unchanged on the softmax baseline") {
    Rng rng(77);
    FactTaskConfig cfg;
    cfg.num_subjects = 3;
    cfg.num_relations = 2;
    cfg.num_attributes = 4;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::softmax_attention;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 3;
    spec.attn_heads = 2;
    spec.ffn_mult = 2;
    spec.max_seq = 16;
    const ModelWeights w = random_model(spec, rng);
    const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 3);
    const std::vector<double> p_base = baseline_probabilities(w, records);

    const SweepResult sweep = info_flow_sweep(
        w, records, 2, {SourceCategory::subject, SourceCategory::last}, p_base);
    CHECK(sweep.cells.size() == 4);
    for (const SweepCell & cell : sweep.cells) {
        CHECK(cell.n == 3);
    }
    const Matrix heat = knockout_heatmap(w, records[0], 2);
    CHECK(heat.rows() == records[0].seq_len());
    CHECK(last_token_scatter(w, records, 2).size() == 3);
}

TEST_CASE("result files are deterministic") {
    Rng rng(75);
    FactTaskConfig cfg;
    cfg.num_subjects = 3;
    cfg.num_relations = 2;
    cfg.num_attributes = 4;
    const auto [task, splits] = generate_task(cfg, rng);

    ModelSpec spec;
    spec.kind = LayerKind::ssd;
    spec.vocab_size = task.vocab_size;
    spec.embed_dim = 8;
    spec.num_layers = 2;
    spec.ssd_heads = 2;
    spec.ssd_state_dim = 3;
    spec.ssd_head_dim = 3;
    const ModelWeights w = random_model(spec, rng);
    const std::vector<PromptRecord> records(splits.train.begin(), splits.train.begin() + 3);
    const std::vector<double> p_base = baseline_probabilities(w, records);
    const SweepResult res = info_flow_sweep(
        w, records, 1, {SourceCategory::subject, SourceCategory::last}, p_base);

    auto slurp = [](const std::string & p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };

    const nlohmann::json cfg_echo = {{"window", 1}};
    write_sweep_json("sweep_a.json", cfg_echo, {res});
    write_sweep_json("sweep_b.json", cfg_echo, {res});
    CHECK(slurp("sweep_a.json") == slurp("sweep_b.json"));
    write_sweep_csv("sweep_a.csv", {res});
    write_sweep_csv("sweep_b.csv", {res});
    const std::string csv = slurp("sweep_a.csv");
    CHECK(csv == slurp("sweep_b.csv"));
    CHECK(csv.rfind("category,window_size,first_layer,relative_depth,mean_change_pct,n,skipped",
                    0) == 0);

    SvgSeries series{"subject", "#1f77b4", {{0.0, -10.0}, {0.5, -25.0}, {1.0, 5.0}}};
    const std::string svg1 = svg_line_chart("t", "x", "y", {series});
    const std::string svg2 = svg_line_chart("t", "x", "y", {series});
    CHECK(svg1 == svg2);
    CHECK(svg1.find("<svg") == 0);

    for (const char * p : {"sweep_a.json", "sweep_b.json", "sweep_a.csv", "sweep_b.csv"}) {
        std::remove(p);
    }
}

TEST_CASE("records jsonl round trip") {
    Rng rng(76);
    FactTaskConfig cfg;
    cfg.num_subjects = 3;
    cfg.num_relations = 2;
    cfg.num_attributes = 4;
    const auto [task, splits] = generate_task(cfg, rng);
    save_records_jsonl("records_test.jsonl", splits.train);
    const auto back = load_records_jsonl("records_test.jsonl");
    REQUIRE(back.size() == splits.train.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == splits.train[i].id);
        CHECK(back[i].token_ids == splits.train[i].token_ids);
        CHECK(back[i].subject_span == splits.train[i].subject_span);
        CHECK(back[i].answer_token == splits.train[i].answer_token);
    }
    std::remove("records_test.jsonl");
}
