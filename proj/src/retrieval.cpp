#include "rankssm/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace rankssm {

std::vector<std::string> analyze(std::string_view text) {
    std::vector<std::string> terms;
    std::string cur;
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            terms.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) terms.push_back(std::move(cur));
    return terms;
}

void InvertedIndex::add_document(const std::string& doc_id, std::string_view text) {
    if (doc_ids_.contains(doc_id)) {
        throw DataError("index: duplicate doc id '" + doc_id + "'");
    }
    const int internal = static_cast<int>(doc_names_.size());
    doc_ids_.emplace(doc_id, internal);
    doc_names_.push_back(doc_id);

    const std::vector<std::string> terms = analyze(text);
    std::map<std::string, int> tf;
    for (const std::string& t : terms) ++tf[t];
    for (const auto& [term, count] : tf) {
        postings_[term].push_back({internal, count});  // stays sorted: ids ascend
    }
    doc_lengths_.push_back(static_cast<int>(terms.size()));
    total_length_ += static_cast<long>(terms.size());
}

double InvertedIndex::avg_doc_length() const {
    if (doc_names_.empty()) return 0.0;
    return static_cast<double>(total_length_) / static_cast<double>(doc_names_.size());
}

int InvertedIndex::internal_id(const std::string& doc_id) const {
    auto it = doc_ids_.find(doc_id);
    return it == doc_ids_.end() ? -1 : it->second;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

int InvertedIndex::doc_frequency(const std::string& term) const {
    const std::vector<Posting>* p = postings(term);
    return p ? static_cast<int>(p->size()) : 0;
}

void InvertedIndex::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir + "/docs.tsv");
        if (!os) throw DataError("index: cannot write " + dir + "/docs.tsv");
        for (std::size_t i = 0; i < doc_names_.size(); ++i) {
            os << doc_names_[i] << "\t" << doc_lengths_[i] << "\n";
        }
    }
    {
        std::ofstream os(dir + "/postings.txt");
        if (!os) throw DataError("index: cannot write " + dir + "/postings.txt");
        for (const auto& [term, plist] : postings_) {
            os << term;
            for (const Posting& p : plist) os << " " << p.doc << ":" << p.tf;
            os << "\n";
        }
    }
}

InvertedIndex InvertedIndex::load(const std::string& dir) {
    InvertedIndex idx;
    {
        std::ifstream is(dir + "/docs.tsv");
        if (!is) throw DataError("index: cannot open " + dir + "/docs.tsv");
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw DataError("index: malformed docs.tsv line " + std::to_string(lineno));
            }
            const std::string name = line.substr(0, tab);
            const int len = std::stoi(line.substr(tab + 1));
            idx.doc_ids_.emplace(name, static_cast<int>(idx.doc_names_.size()));
            idx.doc_names_.push_back(name);
            idx.doc_lengths_.push_back(len);
            idx.total_length_ += len;
        }
    }
    {
        std::ifstream is(dir + "/postings.txt");
        if (!is) throw DataError("index: cannot open " + dir + "/postings.txt");
        std::string line;
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string term;
            ls >> term;
            std::vector<Posting>& plist = idx.postings_[term];
            std::string pair;
            while (ls >> pair) {
                const auto colon = pair.find(':');
                if (colon == std::string::npos) {
                    throw DataError("index: malformed posting '" + pair + "'");
                }
                plist.push_back(
                    {std::stoi(pair.substr(0, colon)), std::stoi(pair.substr(colon + 1))});
            }
        }
    }
    return idx;
}

namespace {

double bm25_idf(int doc_count, int df) {
    return std::log(1.0 + (static_cast<double>(doc_count) - df + 0.5) / (df + 0.5));
}

double bm25_term(double idf, int tf, double dl, double avgdl, const Bm25Params& p) {
    const double norm = p.k1 * (1.0 - p.b + p.b * dl / avgdl);
    return idf * static_cast<double>(tf) * (p.k1 + 1.0) / (static_cast<double>(tf) + norm);
}

void validate_bm25(const Bm25Params& p) {
    if (p.k1 < 0.0 || p.b < 0.0 || p.b > 1.0) {
        throw ConfigError("bm25: need k1 >= 0 and 0 <= b <= 1");
    }
}

}  // namespace

double bm25_score(const std::vector<std::string>& query_terms, const std::string& doc_id,
                  const InvertedIndex& index, Bm25Params params) {
    validate_bm25(params);
    const int internal = index.internal_id(doc_id);
    if (internal < 0) throw DataError("bm25_score: unknown doc id '" + doc_id + "'");
    const double dl = index.doc_length(internal);
    const double avgdl = index.avg_doc_length();
    double score = 0.0;
    for (const std::string& term : query_terms) {
        const std::vector<Posting>* plist = index.postings(term);
        if (!plist) continue;
        const auto it = std::lower_bound(
            plist->begin(), plist->end(), internal,
            [](const Posting& p, int id) { return p.doc < id; });
        if (it == plist->end() || it->doc != internal) continue;
        score += bm25_term(bm25_idf(index.doc_count(), static_cast<int>(plist->size())), it->tf,
                           dl, avgdl, params);
    }
    return score;
}

std::vector<RunEntry> retrieve_topk(const std::string& query_text, const InvertedIndex& index,
                                    int k, Bm25Params params) {
    validate_bm25(params);
    if (k < 1) throw ConfigError("retrieve_topk: k must be >= 1");
    const std::vector<std::string> terms = analyze(query_text);
    const double avgdl = index.avg_doc_length();

    // term-at-a-time accumulation over candidates that match at least once
    std::map<int, double> scores;
    for (const std::string& term : terms) {
        const std::vector<Posting>* plist = index.postings(term);
        if (!plist) continue;
        const double idf = bm25_idf(index.doc_count(), static_cast<int>(plist->size()));
        for (const Posting& p : *plist) {
            scores[p.doc] += bm25_term(idf, p.tf, index.doc_length(p.doc), avgdl, params);
        }
    }

    std::vector<RunEntry> entries;
    entries.reserve(scores.size());
    for (const auto& [doc, score] : scores) {
        entries.push_back({index.doc_name(doc), score});
    }
    std::sort(entries.begin(), entries.end(), [](const RunEntry& a, const RunEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (static_cast<int>(entries.size()) > k) entries.resize(static_cast<std::size_t>(k));
    return entries;
}

RunList rerank(const RunList& run, const std::map<std::string, std::string>& queries,
               const std::map<std::string, std::string>& collection,
               const std::function<double(const std::string&, const std::string&)>& scorer,
               int threads) {
    RunList out;
    for (const auto& [qid, entries] : run) {
        const auto qit = queries.find(qid);
        if (qit == queries.end()) throw DataError("rerank: missing query text for '" + qid + "'");
        std::vector<const std::string*> texts(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto dit = collection.find(entries[i].doc_id);
            if (dit == collection.end()) {
                throw DataError("rerank: missing document text for '" + entries[i].doc_id + "'");
            }
            texts[i] = &dit->second;
        }

        std::vector<double> scores(entries.size());
        if (threads > 1 && entries.size() > 1) {
            // scoring is a pure function of (q, d); parallel over candidates
            std::vector<std::thread> pool;
            const std::size_t n = entries.size();
            const int nthreads = std::min<int>(threads, static_cast<int>(n));
            std::vector<std::size_t> starts(static_cast<std::size_t>(nthreads) + 1);
            for (int t = 0; t <= nthreads; ++t) {
                starts[static_cast<std::size_t>(t)] = n * static_cast<std::size_t>(t) /
                                                      static_cast<std::size_t>(nthreads);
            }
            for (int t = 0; t < nthreads; ++t) {
                pool.emplace_back([&, t]() {
                    for (std::size_t i = starts[static_cast<std::size_t>(t)];
                         i < starts[static_cast<std::size_t>(t) + 1]; ++i) {
                        scores[i] = scorer(qit->second, *texts[i]);
                    }
                });
            }
            for (std::thread& th : pool) th.join();
        } else {
            for (std::size_t i = 0; i < entries.size(); ++i) {
                scores[i] = scorer(qit->second, *texts[i]);
            }
        }

        std::vector<std::size_t> order(entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores[a] > scores[b];  // ties keep first-stage rank
        });
        std::vector<RunEntry> reranked;
        reranked.reserve(entries.size());
        for (std::size_t i : order) reranked.push_back({entries[i].doc_id, scores[i]});
        out.emplace(qid, std::move(reranked));
    }
    return out;
}

MetricValue mrr_at_k(const RunList& run, const Qrels& qrels, int k) {
    if (k < 1) throw ConfigError("mrr_at_k: k must be >= 1");
    MetricValue mv;
    double total = 0.0;
    for (const auto& [qid, entries] : run) {
        ++mv.num_queries;
        const auto qit = qrels.find(qid);
        if (qit == qrels.end()) {
            std::cerr << "warning: mrr: query '" << qid << "' has no qrels, counted as 0\n";
            continue;
        }
        const int depth = std::min<int>(k, static_cast<int>(entries.size()));
        for (int i = 0; i < depth; ++i) {
            const auto dit = qit->second.find(entries[static_cast<std::size_t>(i)].doc_id);
            if (dit != qit->second.end() && dit->second >= 1) {
                total += 1.0 / static_cast<double>(i + 1);
                break;
            }
        }
    }
    mv.value = mv.num_queries ? total / mv.num_queries : 0.0;
    return mv;
}

MetricValue ndcg_at_k(const RunList& run, const Qrels& qrels, int k, Gain gain) {
    if (k < 1) throw ConfigError("ndcg_at_k: k must be >= 1");
    auto g = [gain](int grade) {
        return gain == Gain::linear ? static_cast<double>(grade)
                                    : std::pow(2.0, static_cast<double>(grade)) - 1.0;
    };
    MetricValue mv;
    double total = 0.0;
    for (const auto& [qid, entries] : run) {
        ++mv.num_queries;
        const auto qit = qrels.find(qid);
        if (qit == qrels.end()) {
            std::cerr << "warning: ndcg: query '" << qid << "' has no qrels, counted as 0\n";
            continue;
        }
        double dcg = 0.0;
        const int depth = std::min<int>(k, static_cast<int>(entries.size()));
        for (int i = 0; i < depth; ++i) {
            const auto dit = qit->second.find(entries[static_cast<std::size_t>(i)].doc_id);
            const int grade = dit == qit->second.end() ? 0 : dit->second;  // unjudged = 0
            dcg += g(grade) / std::log2(static_cast<double>(i + 2));
        }
        std::vector<int> grades;
        grades.reserve(qit->second.size());
        for (const auto& [doc, grade] : qit->second) grades.push_back(grade);
        std::sort(grades.rbegin(), grades.rend());
        double idcg = 0.0;
        for (int i = 0; i < std::min<int>(k, static_cast<int>(grades.size())); ++i) {
            idcg += g(grades[static_cast<std::size_t>(i)]) / std::log2(static_cast<double>(i + 2));
        }
        if (idcg <= 0.0) {
            std::cerr << "warning: ndcg: query '" << qid << "' has no relevant docs, counts 0\n";
            continue;
        }
        total += dcg / idcg;
    }
    mv.value = mv.num_queries ? total / mv.num_queries : 0.0;
    return mv;
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

RunList read_trec_run(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("run: cannot open " + path);
    RunList run;
    std::map<std::string, std::vector<int>> ranks;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_ws(line);
        if (f.size() != 6) {
            throw DataError("run: line " + std::to_string(lineno) + ": expected 6 fields, got " +
                            std::to_string(f.size()));
        }
        int rank = 0;
        double score = 0.0;
        try {
            rank = std::stoi(f[3]);
            score = std::stod(f[4]);
        } catch (const std::exception&) {
            throw DataError("run: line " + std::to_string(lineno) + ": bad rank or score");
        }
        for (const RunEntry& e : run[f[0]]) {
            if (e.doc_id == f[2]) {
                throw DataError("run: line " + std::to_string(lineno) + ": duplicate doc '" +
                                f[2] + "' for query '" + f[0] + "'");
            }
        }
        run[f[0]].push_back({f[2], score});
        ranks[f[0]].push_back(rank);
    }
    // normalize: entries ordered by descending score; warn when the file's
    // ranks were not already contiguous 1..n in that order
    for (auto& [qid, entries] : run) {
        std::vector<std::size_t> order(entries.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return entries[a].score > entries[b].score;
        });
        bool contiguous = true;
        const std::vector<int>& rk = ranks[qid];
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (rk[order[i]] != static_cast<int>(i) + 1) contiguous = false;
        }
        if (!contiguous) {
            std::cerr << "warning: run: ranks for query '" << qid
                      << "' not contiguous by score; normalized\n";
        }
        std::vector<RunEntry> sorted;
        sorted.reserve(entries.size());
        for (std::size_t i : order) sorted.push_back(entries[i]);
        entries = std::move(sorted);
    }
    return run;
}

void write_trec_run(const std::string& path, const RunList& run, const std::string& tag) {
    std::ofstream os(path);
    if (!os) throw DataError("run: cannot open " + path + " for writing");
    char buf[64];
    for (const auto& [qid, entries] : run) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6f", entries[i].score);
            os << qid << " Q0 " << entries[i].doc_id << " " << (i + 1) << " " << buf << " " << tag
               << "\n";
        }
    }
}

Qrels read_trec_qrels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("qrels: cannot open " + path);
    Qrels qrels;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_ws(line);
        if (f.size() != 4) {
            throw DataError("qrels: line " + std::to_string(lineno) + ": expected 4 fields");
        }
        int grade = 0;
        try {
            grade = std::stoi(f[3]);
        } catch (const std::exception&) {
            throw DataError("qrels: line " + std::to_string(lineno) + ": bad grade");
        }
        if (grade < 0) {
            throw DataError("qrels: line " + std::to_string(lineno) + ": negative grade");
        }
        auto& judged = qrels[f[0]];
        if (judged.contains(f[2])) {
            std::cerr << "warning: qrels: duplicate (" << f[0] << ", " << f[2]
                      << "), last wins\n";
        }
        judged[f[2]] = grade;
    }
    return qrels;
}

void write_trec_qrels(const std::string& path, const Qrels& qrels) {
    std::ofstream os(path);
    if (!os) throw DataError("qrels: cannot open " + path + " for writing");
    for (const auto& [qid, judged] : qrels) {
        for (const auto& [doc, grade] : judged) {
            os << qid << " 0 " << doc << " " << grade << "\n";
        }
    }
}

std::vector<std::pair<std::string, std::string>> read_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("tsv: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError("tsv: line " + std::to_string(lineno) + " of " + path +
                            " has no tab separator");
        }
        rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return rows;
}

void write_tsv(const std::string& path,
               const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("tsv: cannot open " + path + " for writing");
    for (const auto& [id, text] : rows) os << id << "\t" << text << "\n";
}

void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("metrics: cannot open " + path + " for writing");
    os << "metric,k,value,num_queries\n";
    char buf[64];
    for (const MetricRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.value);
        os << r.metric << "," << r.k << "," << buf << "," << r.num_queries << "\n";
    }
}

}  // namespace rankssm
