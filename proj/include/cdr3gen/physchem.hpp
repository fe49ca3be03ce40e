#pragma once

// Per-residue physicochemical descriptors:
//   [aromatic, charge, hbond, hydrophobicity, mass_ratio]
// aromatic is a 0/1 ring indicator; charge is the formal charge at pH 7
// (His +0.1); hbond counts side-chain donors plus acceptors; hydrophobicity
// is Kyte-Doolittle; mass_ratio is average residue mass over Trp's.
// X and all special tokens map to the zero vector (raw and z-scored).

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>

namespace cdr3gen::physchem {

inline constexpr std::size_t kDims = 5;
using Descriptor = std::array<double, kDims>;

inline constexpr std::array<std::string_view, kDims> kColumnNames = {
    "aromatic", "charge", "hbond", "hydrophobicity", "mass_ratio"};

// Raw table row; throws UnknownResidue for anything outside the 21 residues.
Descriptor descriptor_raw(char residue);

class DescriptorTable {
public:
    // Built-in table; statistics over the 20 canonical residues with
    // population (divide-by-N) variance.
    static DescriptorTable builtin();
    // Parses the tab-separated data file format written by serialize().
    static DescriptorTable from_tsv_text(std::string_view text);
    static DescriptorTable load(const std::string& path);

    DescriptorTable(const DescriptorTable& other);
    DescriptorTable& operator=(const DescriptorTable& other);

    const Descriptor& raw(char residue) const;
    Descriptor zscore(char residue) const;
    // Z-scored descriptor for a vocabulary id; zero for X and special tokens.
    Descriptor zscore_token(int token_id) const;

    const Descriptor& mean() const noexcept { return mu_; }
    const Descriptor& stddev() const noexcept { return sigma_; }

    std::string serialize() const;
    std::uint64_t checksum() const;

    // Instrumentation: number of descriptor lookups served so far.
    std::uint64_t reads() const noexcept { return reads_.load(std::memory_order_relaxed); }

private:
    DescriptorTable() = default;
    void compute_statistics();

    std::array<Descriptor, 21> rows_{};  // indexed like seqcore::kResidues
    Descriptor mu_{};
    Descriptor sigma_{};
    mutable std::atomic<std::uint64_t> reads_{0};
};

const DescriptorTable& default_table();

Descriptor zscore(const DescriptorTable& table, char residue);

}  // namespace cdr3gen::physchem
