#pragma once

// String-level agreement between a reference receptor and a generated one:
// unit-cost edit distance, longest common subsequence and normalized
// Smith-Waterman similarity with affine gaps.

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdr3gen::metrics {

class SubstitutionMatrix {
public:
    // NCBI BLOSUM62 over the 20 canonical residues plus X, open 10, extend 1.
    static const SubstitutionMatrix& blosum62();
    // Whitespace-separated square matrix: '#' comment lines, a header row of
    // residue letters, then one labelled row per residue.
    static SubstitutionMatrix from_text(std::string_view text);
    static SubstitutionMatrix load(const std::string& path);

    // Throws UnknownResidue when either residue is not covered.
    int score(char a, char b) const;
    bool covers(char c) const noexcept;
    const std::string& alphabet() const noexcept { return alphabet_; }
    bool symmetric() const;

    // A gap of length k costs gap_open + (k - 1) * gap_extend.
    int gap_open = 10;
    int gap_extend = 1;

private:
    std::string alphabet_;
    std::array<int, 256> index_{};
    std::vector<int> scores_;
};

std::size_t levenshtein(std::string_view a, std::string_view b);
std::size_t lcs_len(std::string_view a, std::string_view b);

// Best local alignment score (Gotoh recursion); 0 for an empty alignment.
int sw_score(std::string_view a, std::string_view b,
             const SubstitutionMatrix& m = SubstitutionMatrix::blosum62());

// S(a,b) / max(S(a,a), S(b,b)); 1 for identical strings, 0 when the
// denominator is 0.
double similarity_sw(std::string_view a, std::string_view b,
                     const SubstitutionMatrix& m = SubstitutionMatrix::blosum62());

struct PairInput {
    std::string mhc;
    std::string peptide;
    std::string actual;
    std::string generated;
};

struct PairMetrics {
    std::size_t levenshtein = 0;
    double similarity = 0.0;
    std::size_t lcs = 0;
};

struct Summary {
    std::size_t count = 0;
    double levenshtein_mean = 0.0, levenshtein_std = 0.0;
    double similarity_mean = 0.0, similarity_std = 0.0;
    double lcs_mean = 0.0, lcs_std = 0.0;
};

struct MetricsReport {
    std::vector<PairMetrics> pairs;  // input order
    Summary overall;
    std::map<std::string, Summary> by_mhc;
    std::map<std::string, Summary> by_peptide;
};

// Standard deviations are population (divide-by-N). Empty mhc/peptide keys
// are left out of the groupings. Throws EmptyInput.
MetricsReport evaluate(std::span<const PairInput> pairs,
                       const SubstitutionMatrix& m = SubstitutionMatrix::blosum62(), int threads = 1);

Summary summarize(std::span<const PairMetrics> rows);

}  // namespace cdr3gen::metrics
