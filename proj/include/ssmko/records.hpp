#pragma once

// Prompt records: a token sequence with subject/relation span annotations
// and the gold answer token. Spans are [start, end) and never include the
// final position, which is the prediction target.

#include "ssmko/numerics.hpp"

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssmko {

struct PromptRecord {
    std::string id;
    std::vector<int> token_ids;
    std::array<int, 2> subject_span{0, 0};
    std::array<int, 2> relation_span{0, 0};
    int answer_token = -1;
    std::string source_text;

    int seq_len() const { return static_cast<int>(token_ids.size()); }
    int last_position() const { return seq_len() - 1; }

    void validate() const;

    nlohmann::json to_json() const;
    static PromptRecord from_json(const nlohmann::json & j);
};

enum class SourceCategory { subject, relation, first, last };

const char * to_string(SourceCategory c);
SourceCategory source_category_from_string(const std::string & s);

// Position set a category names for a given record.
std::vector<int> resolve_category(SourceCategory c, const PromptRecord & rec);

std::vector<PromptRecord> load_records_jsonl(const std::string & path);
void save_records_jsonl(const std::string & path, const std::vector<PromptRecord> & records);

}  // namespace ssmko
