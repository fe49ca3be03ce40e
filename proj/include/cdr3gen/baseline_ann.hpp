#pragma once

// Nearest-neighbour baseline: answer a query context with a receptor of the
// most similar training context (normalized BLOSUM62 local alignment over
// the concatenated mhc + peptide strings).

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdr3gen/data_io.hpp"
#include "cdr3gen/metrics.hpp"

namespace cdr3gen::baseline_ann {

class RetrievalIndex {
public:
    struct Entry {
        std::string mhc;
        std::string peptide;
        std::string context;                 // mhc + peptide, no separator
        std::vector<std::string> receptors;  // sorted, duplicates kept
    };

    struct Hit {
        const Entry* entry = nullptr;
        double similarity = 0.0;
        const std::string& receptor() const { return entry->receptors.front(); }
    };

    explicit RetrievalIndex(std::span<const data_io::Triple> triples,
                            const metrics::SubstitutionMatrix& matrix = metrics::SubstitutionMatrix::blosum62());

    // Entries sorted by (mhc, peptide).
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t triple_count() const noexcept { return triples_; }
    bool empty() const noexcept { return entries_.empty(); }

    // Exhaustive scan; the first entry in (mhc, peptide) order wins ties.
    // Throws EmptyIndex.
    Hit nearest(std::string_view mhc, std::string_view peptide, int threads = 1) const;
    std::string retrieve(std::string_view mhc, std::string_view peptide, int threads = 1) const {
        return nearest(mhc, peptide, threads).receptor();
    }

private:
    std::vector<Entry> entries_;
    std::size_t triples_ = 0;
    const metrics::SubstitutionMatrix* matrix_;
};

}  // namespace cdr3gen::baseline_ann
