#include <CLI11.hpp>

#include <cstdint>
#include <iostream>

#include "rankssm/toy.hpp"

// Regenerates the synthetic corpus bundled under data/toy. The files in the
// repository are this tool's output for the default seed; a test keeps them
// in sync with the generator.
int main(int argc, char** argv) {
    CLI::App app{"deterministic synthetic retrieval corpus generator"};
    std::string out = "data/toy";
    std::uint64_t seed = 13;
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_option("--seed", seed, "generator seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const rankssm::ToyCorpus corpus = rankssm::make_toy_corpus(seed);
    rankssm::write_toy_corpus(out, corpus);
    std::cout << "wrote " << corpus.collection.size() << " docs, "
              << corpus.train_queries.size() << " train queries, " << corpus.dev_queries.size()
              << " dev queries to " << out << "\n";
    return 0;
}
