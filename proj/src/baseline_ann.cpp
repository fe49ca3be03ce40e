#include "cdr3gen/baseline_ann.hpp"

#include <algorithm>
#include <map>

#include "cdr3gen/error.hpp"
#include "cdr3gen/parallel.hpp"

namespace cdr3gen::baseline_ann {

RetrievalIndex::RetrievalIndex(std::span<const data_io::Triple> triples, const metrics::SubstitutionMatrix& matrix)
    : triples_(triples.size()), matrix_(&matrix) {
    std::map<data_io::ContextKey, std::vector<std::string>> grouped;
    for (const auto& t : triples) grouped[data_io::context_of(t)].push_back(t.tcr);
    entries_.reserve(grouped.size());
    for (auto& [key, receptors] : grouped) {
        std::sort(receptors.begin(), receptors.end());
        entries_.push_back({key.first, key.second, key.first + key.second, std::move(receptors)});
    }
}

RetrievalIndex::Hit RetrievalIndex::nearest(std::string_view mhc, std::string_view peptide, int threads) const {
    if (entries_.empty()) throw Error(ErrorKind::EmptyIndex, "baseline_ann", "retrieval index is empty");
    const std::string query = std::string(mhc) + std::string(peptide);
    std::vector<double> sims(entries_.size());
    parallel_for(entries_.size(), threads,
                 [&](std::size_t i) { sims[i] = metrics::similarity_sw(query, entries_[i].context, *matrix_); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < sims.size(); ++i)
        if (sims[i] > sims[best]) best = i;
    return {&entries_[best], sims[best]};
}

}  // namespace cdr3gen::baseline_ann
