#pragma once

// Triple ingestion from tab-separated files and context-level splitting.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cdr3gen::data_io {

struct Triple {
    std::string mhc;
    std::string peptide;
    std::string tcr;

    bool operator==(const Triple&) const = default;
};

using ContextKey = std::pair<std::string, std::string>;  // (mhc, peptide)

inline ContextKey context_of(const Triple& t) { return {t.mhc, t.peptide}; }

// Header-addressed TSV. Blank lines are skipped, CRLF is accepted.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based, per row

    // Throws MissingColumn.
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;
};

// Throws MalformedRow when a row's field count differs from the header's.
Table parse_table(std::string_view text, std::string_view source = "<input>");
Table read_table(const std::string& path);

// Columns mhc, peptide, tcr in any order; extra columns are ignored.
// Residues are uppercased. Throws MissingColumn, MalformedRow (empty field,
// non-letter, receptor over 26 residues, source over 55 tokens) and
// UnknownResidue, each naming the line.
std::vector<Triple> parse_tsv(std::string_view text, std::string_view source = "<input>");
std::vector<Triple> load_tsv(const std::string& path);

std::string to_tsv(std::span<const Triple> triples);
void write_tsv(const std::string& path, std::span<const Triple> triples);

// Generation contexts: columns mhc and peptide.
std::vector<ContextKey> load_contexts(const std::string& path);

enum class Split { Train = 0, Valid = 1, Test = 2 };
std::string_view split_name(Split s);

struct SplitRatios {
    int train = 7;
    int valid = 1;
    int test = 2;
};

// Largest-remainder apportionment of n items; ties go to the earlier split.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios);

struct SplitSet {
    std::vector<Triple> train, valid, test;
    std::map<ContextKey, Split> partition;

    std::array<std::size_t, 3> context_counts() const;
};

inline constexpr std::size_t kMinContexts = 10;

// Distinct context keys are sorted, shuffled by `seed` and cut by the
// apportioned counts; every triple follows its key. In strict mode, contexts
// sharing an MHC or a peptide are kept together, so the counts only
// approximate the ratios. Throws TooFewContexts and InvalidConfig.
SplitSet split_contexts(std::span<const Triple> triples, const SplitRatios& ratios, std::uint64_t seed,
                        bool strict = false);

}  // namespace cdr3gen::data_io
