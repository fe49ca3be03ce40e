#pragma once

// Seeded synthetic triple corpora for tests. Receptors carry a
// chemistry-complementary image of the peptide core, so the physicochemical
// channel has something to pick up.

#include <cstdint>
#include <string>
#include <vector>

#include "cdr3gen/data_io.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/seqcore.hpp"

namespace testsupport {

inline char complement(char c) {
    static const std::string from = "ACDEFGHIKLMNPQRSTVWY";
    static const std::string to = "GAKRYSYVDILQGSETNLFW";
    return to[from.find(c)];
}

inline std::string random_residues(cdr3gen::Rng& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i)
        s += cdr3gen::seqcore::kCanonicalResidues[cdr3gen::uniform_below(rng, 20)];
    return s;
}

struct CorpusShape {
    std::size_t alleles = 4;
    std::size_t mhc_len = 12;
    std::size_t peptide_len = 9;
    std::size_t receptors_per_context = 1;
};

inline std::vector<cdr3gen::data_io::Triple> synthetic_corpus(std::size_t contexts, std::uint64_t seed,
                                                              const CorpusShape& shape = {}) {
    cdr3gen::Rng rng(seed);
    std::vector<std::string> alleles;
    for (std::size_t a = 0; a < shape.alleles; ++a) alleles.push_back(random_residues(rng, shape.mhc_len));
    std::vector<cdr3gen::data_io::Triple> out;
    for (std::size_t c = 0; c < contexts; ++c) {
        const std::string& mhc = alleles[cdr3gen::uniform_below(rng, alleles.size())];
        const std::string peptide = random_residues(rng, shape.peptide_len);
        for (std::size_t r = 0; r < shape.receptors_per_context; ++r) {
            std::string tcr = "CAS";
            for (std::size_t i = 2; i + 2 < peptide.size(); ++i) tcr += complement(peptide[i]);
            tcr += random_residues(rng, 1 + cdr3gen::uniform_below(rng, 3));
            tcr += cdr3gen::uniform_below(rng, 2) ? "EQYF" : "YTF";
            out.push_back({mhc, peptide, tcr});
        }
    }
    return out;
}

}  // namespace testsupport
