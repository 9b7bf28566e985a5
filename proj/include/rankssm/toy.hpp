#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rankssm/retrieval.hpp"

namespace rankssm {

// Deterministic synthetic retrieval corpus. Relevance is a controlled
// term-overlap construction: each topic has a distinctive signature word
// that appears in its queries and its relevant documents (three times in the
// grade-2 document, once in each grade-1 document) and never in its grade-0
// documents, which share only ordinary topic words. Queries come in a
// training split (several phrasings per topic) and a dev split (one held-out
// phrasing per topic).
struct ToyCorpus {
    std::vector<std::pair<std::string, std::string>> collection;     // docid, text
    std::vector<std::pair<std::string, std::string>> train_queries;  // qid, text
    std::vector<std::pair<std::string, std::string>> dev_queries;
    Qrels train_qrels;
    Qrels dev_qrels;
};

ToyCorpus make_toy_corpus(std::uint64_t seed = 13);

// Writes collection.tsv, queries-train.tsv, queries-dev.tsv, qrels-train.txt
// and qrels-dev.txt under dir.
void write_toy_corpus(const std::string& dir, const ToyCorpus& corpus);

}  // namespace rankssm
