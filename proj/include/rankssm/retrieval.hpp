#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rankssm/errors.hpp"

namespace rankssm {

// Index-side analyzer: lowercase, split on non-alphanumeric, no stemming,
// no stopwords.
std::vector<std::string> analyze(std::string_view text);

struct Posting {
    int doc = 0;  // internal id, insertion order of the collection
    int tf = 0;
};

class InvertedIndex {
public:
    void add_document(const std::string& doc_id, std::string_view text);

    int doc_count() const { return static_cast<int>(doc_names_.size()); }
    double avg_doc_length() const;
    int doc_length(int internal) const { return doc_lengths_[static_cast<std::size_t>(internal)]; }
    const std::string& doc_name(int internal) const {
        return doc_names_[static_cast<std::size_t>(internal)];
    }
    int internal_id(const std::string& doc_id) const;  // -1 when unknown
    const std::vector<Posting>* postings(const std::string& term) const;
    int doc_frequency(const std::string& term) const;

    void save(const std::string& dir) const;
    static InvertedIndex load(const std::string& dir);

private:
    std::map<std::string, std::vector<Posting>> postings_;
    std::vector<std::string> doc_names_;
    std::map<std::string, int> doc_ids_;
    std::vector<int> doc_lengths_;
    long total_length_ = 0;
};

struct Bm25Params {
    double k1 = 4.46;
    double b = 0.82;
};

// Lucene-variant BM25: sum over query term occurrences of
// idf(t) * tf * (k1+1) / (tf + k1*(1 - b + b*dl/avgdl)),
// idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)).
double bm25_score(const std::vector<std::string>& query_terms, const std::string& doc_id,
                  const InvertedIndex& index, Bm25Params params = {});

struct RunEntry {
    std::string doc_id;
    double score = 0.0;
};

// qid -> candidates sorted by descending score (rank = position + 1).
using RunList = std::map<std::string, std::vector<RunEntry>>;

// qid -> docid -> grade
using Qrels = std::map<std::string, std::map<std::string, int>>;

// Exact top-k by score; ties broken by ascending doc id. Fewer than k
// matching documents yield a shorter list.
std::vector<RunEntry> retrieve_topk(const std::string& query_text, const InvertedIndex& index,
                                    int k = 100, Bm25Params params = {});

// Rescores every candidate with scorer(query_text, doc_text) and reorders
// descending; ties keep first-stage order. The candidate set is unchanged.
RunList rerank(const RunList& run, const std::map<std::string, std::string>& queries,
               const std::map<std::string, std::string>& collection,
               const std::function<double(const std::string&, const std::string&)>& scorer,
               int threads = 1);

struct MetricValue {
    double value = 0.0;
    int num_queries = 0;
};

enum class Gain { linear, exponential };

MetricValue mrr_at_k(const RunList& run, const Qrels& qrels, int k = 100);
MetricValue ndcg_at_k(const RunList& run, const Qrels& qrels, int k = 10,
                      Gain gain = Gain::linear);

// TREC formats, single-space separated:
//   run:   "qid Q0 docid rank score tag"
//   qrels: "qid 0 docid grade"
// Collection / queries are two-column TSV: "id \t text".
RunList read_trec_run(const std::string& path);
void write_trec_run(const std::string& path, const RunList& run, const std::string& tag);
Qrels read_trec_qrels(const std::string& path);
void write_trec_qrels(const std::string& path, const Qrels& qrels);

std::vector<std::pair<std::string, std::string>> read_tsv(const std::string& path);
void write_tsv(const std::string& path,
               const std::vector<std::pair<std::string, std::string>>& rows);

struct MetricRow {
    std::string metric;
    int k = 0;
    double value = 0.0;
    int num_queries = 0;
};

void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace rankssm
