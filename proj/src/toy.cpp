#include "rankssm/toy.hpp"

#include <filesystem>
#include <set>

#include "rankssm/rng.hpp"

namespace rankssm {

namespace {

constexpr int kTopics = 50;
constexpr int kDocsPerTopic = 10;       // 1 grade-2, 2 grade-1, 7 grade-0
constexpr int kTrainQueriesPerTopic = 4;
constexpr int kTopicWords = 5;
constexpr int kFillerVocab = 120;

std::string random_word(Rng& rng, const std::string& letters, int min_len, int max_len) {
    const int len = min_len + static_cast<int>(rng.uniform_below(
                                  static_cast<std::uint64_t>(max_len - min_len + 1)));
    std::string w;
    for (int i = 0; i < len; ++i) {
        w.push_back(letters[static_cast<std::size_t>(
            rng.uniform_below(static_cast<std::uint64_t>(letters.size())))]);
    }
    return w;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

}  // namespace

ToyCorpus make_toy_corpus(std::uint64_t seed) {
    Rng rng(seed);
    ToyCorpus corpus;

    // ordinary vocabulary, shared across topics
    std::vector<std::string> filler;
    std::set<std::string> used;
    while (static_cast<int>(filler.size()) < kFillerVocab) {
        std::string w = random_word(rng, "abcdeghilmnoprstu", 3, 6);
        if (used.insert(w).second) filler.push_back(std::move(w));
    }
    // signature words drawn from rare letters so they stand out at byte level
    std::vector<std::string> signatures;
    while (static_cast<int>(signatures.size()) < kTopics) {
        std::string w = random_word(rng, "jkqvwxz", 5, 5);
        if (used.insert(w).second) signatures.push_back(std::move(w));
    }

    auto pick_filler = [&](int n) {
        std::vector<std::string> out;
        for (int i = 0; i < n; ++i) {
            out.push_back(filler[static_cast<std::size_t>(
                rng.uniform_below(static_cast<std::uint64_t>(filler.size())))]);
        }
        return out;
    };

    int doc_seq = 0;
    int train_q_seq = 0;
    for (int topic = 0; topic < kTopics; ++topic) {
        const std::string& sig = signatures[static_cast<std::size_t>(topic)];
        std::vector<std::string> topic_words = pick_filler(kTopicWords);

        auto topic_word = [&]() {
            return topic_words[static_cast<std::size_t>(
                rng.uniform_below(static_cast<std::uint64_t>(topic_words.size())))];
        };

        std::vector<std::string> topic_doc_ids;
        std::vector<int> topic_grades;
        for (int d = 0; d < kDocsPerTopic; ++d) {
            const int grade = d == 0 ? 2 : (d <= 2 ? 1 : 0);
            std::vector<std::string> words;
            if (grade == 2) {
                for (int i = 0; i < 3; ++i) words.push_back(sig);
                for (int i = 0; i < 6; ++i) words.push_back(topic_word());
                auto extra = pick_filler(7);
                words.insert(words.end(), extra.begin(), extra.end());
            } else if (grade == 1) {
                words.push_back(sig);
                for (int i = 0; i < 5; ++i) words.push_back(topic_word());
                auto extra = pick_filler(8);
                words.insert(words.end(), extra.begin(), extra.end());
            } else {
                for (int i = 0; i < 4; ++i) words.push_back(topic_word());
                auto extra = pick_filler(10);
                words.insert(words.end(), extra.begin(), extra.end());
            }
            rng.shuffle(words);
            char id[16];
            std::snprintf(id, sizeof(id), "D%04d", doc_seq++);
            corpus.collection.emplace_back(id, join(words));
            topic_doc_ids.push_back(id);
            topic_grades.push_back(grade);
        }

        auto make_query_text = [&]() {
            std::vector<std::string> words = {sig, topic_word(), topic_word()};
            rng.shuffle(words);
            return join(words);
        };

        for (int q = 0; q < kTrainQueriesPerTopic; ++q) {
            char qid[16];
            std::snprintf(qid, sizeof(qid), "QT%04d", train_q_seq++);
            corpus.train_queries.emplace_back(qid, make_query_text());
            for (std::size_t d = 0; d < topic_doc_ids.size(); ++d) {
                corpus.train_qrels[qid][topic_doc_ids[d]] = topic_grades[d];
            }
        }
        char qid[16];
        std::snprintf(qid, sizeof(qid), "QD%04d", topic);
        corpus.dev_queries.emplace_back(qid, make_query_text());
        for (std::size_t d = 0; d < topic_doc_ids.size(); ++d) {
            corpus.dev_qrels[qid][topic_doc_ids[d]] = topic_grades[d];
        }
    }
    return corpus;
}

void write_toy_corpus(const std::string& dir, const ToyCorpus& corpus) {
    std::filesystem::create_directories(dir);
    write_tsv(dir + "/collection.tsv", corpus.collection);
    write_tsv(dir + "/queries-train.tsv", corpus.train_queries);
    write_tsv(dir + "/queries-dev.tsv", corpus.dev_queries);
    write_trec_qrels(dir + "/qrels-train.txt", corpus.train_qrels);
    write_trec_qrels(dir + "/qrels-dev.txt", corpus.dev_qrels);
}

}  // namespace rankssm
