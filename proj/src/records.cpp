#include "ssmko/records.hpp"

#include <fstream>

namespace ssmko {

void PromptRecord::validate() const {
    const int len = seq_len();
    if (len < 1) {
        throw InvalidInput("record " + id + ": empty token sequence");
    }
    auto check_span = [&](const std::array<int, 2> & span, const char * name) {
        if (span[0] < 0 || span[1] < span[0] || span[1] > len) {
            throw InvalidInput("record " + id + ": bad " + name + " span");
        }
        if (span[1] > span[0] && span[1] > len - 1) {
            throw InvalidInput("record " + id + ": " + name + " span covers the final position");
        }
    };
    check_span(subject_span, "subject");
    check_span(relation_span, "relation");
    // spans must not overlap
    if (subject_span[1] > subject_span[0] && relation_span[1] > relation_span[0]) {
        const bool disjoint =
            subject_span[1] <= relation_span[0] || relation_span[1] <= subject_span[0];
        if (!disjoint) {
            throw InvalidInput("record " + id + ": overlapping subject/relation spans");
        }
    }
    if (answer_token < 0) {
        throw InvalidInput("record " + id + ": missing answer token");
    }
}

nlohmann::json PromptRecord::to_json() const {
    nlohmann::json j;
    j["id"] = id;
    j["token_ids"] = token_ids;
    j["subject_span"] = subject_span;
    j["relation_span"] = relation_span;
    j["answer_token"] = answer_token;
    if (!source_text.empty()) {
        j["source_text"] = source_text;
    }
    return j;
}

PromptRecord PromptRecord::from_json(const nlohmann::json & j) {
    PromptRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.token_ids = j.at("token_ids").get<std::vector<int>>();
    rec.subject_span = j.at("subject_span").get<std::array<int, 2>>();
    rec.relation_span = j.at("relation_span").get<std::array<int, 2>>();
    rec.answer_token = j.at("answer_token").get<int>();
    rec.source_text = j.value("source_text", "");
    rec.validate();
    return rec;
}

const char * to_string(SourceCategory c) {
    switch (c) {
        case SourceCategory::subject:  return "subject";
        case SourceCategory::relation: return "relation";
        case SourceCategory::first:    return "first";
        case SourceCategory::last:     return "last";
    }
    throw InvalidInput("unknown source category");
}

SourceCategory source_category_from_string(const std::string & s) {
    if (s == "subject")  return SourceCategory::subject;
    if (s == "relation") return SourceCategory::relation;
    if (s == "first")    return SourceCategory::first;
    if (s == "last")     return SourceCategory::last;
    throw InvalidInput("unknown source category: " + s);
}

std::vector<int> resolve_category(SourceCategory c, const PromptRecord & rec) {
    std::vector<int> out;
    switch (c) {
        case SourceCategory::first:
            out.push_back(0);
            break;
        case SourceCategory::last:
            out.push_back(rec.last_position());
            break;
        case SourceCategory::subject:
            for (int p = rec.subject_span[0]; p < rec.subject_span[1]; ++p) {
                out.push_back(p);
            }
            break;
        case SourceCategory::relation:
            for (int p = rec.relation_span[0]; p < rec.relation_span[1]; ++p) {
                out.push_back(p);
            }
            break;
    }
    return out;
}

std::vector<PromptRecord> load_records_jsonl(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("records: cannot open " + path);
    }
    std::vector<PromptRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            records.push_back(PromptRecord::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error & e) {
            throw IoError("records: parse error at " + path + ":" + std::to_string(line_no) +
                          ": " + e.what());
        }
    }
    return records;
}

void save_records_jsonl(const std::string & path, const std::vector<PromptRecord> & records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("records: cannot open " + path + " for writing");
    }
    for (const PromptRecord & rec : records) {
        out << rec.to_json().dump() << "\n";
    }
}

}  // namespace ssmko
