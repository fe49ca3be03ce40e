#pragma once

// Token alphabet shared by the source (MHC <SEP> peptide) and target
// (receptor) streams, plus the encoders between residue strings and ids.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cdr3gen::seqcore {

inline constexpr int kVocabSize = 26;
inline constexpr int kPad = 0;
inline constexpr int kSep = 1;
inline constexpr int kSos = 2;
inline constexpr int kEos = 3;
inline constexpr int kUnk = 4;  // reserved, never produced by the encoders
inline constexpr int kFirstResidue = 5;

inline constexpr std::size_t kSourceLength = 55;
inline constexpr std::size_t kMaxTargetResidues = 26;

// Residue symbols in id order (ids 5..25). Alphabetical, so comparing id
// sequences orders residue strings lexicographically.
inline constexpr std::string_view kResidues = "ACDEFGHIKLMNPQRSTVWXY";
inline constexpr std::string_view kCanonicalResidues = "ACDEFGHIKLMNPQRSTVWY";

enum class SeqKind { Source, Target };

class Vocabulary {
public:
    Vocabulary();

    std::size_t size() const noexcept { return symbols_.size(); }
    const std::string& symbol(int id) const;
    // -1 when the symbol is not in the vocabulary.
    int id(std::string_view symbol) const noexcept;
    // Residue letter (case-insensitive) to id; -1 for anything else.
    int residue_id(char c) const noexcept { return residue_ids_[static_cast<unsigned char>(c)]; }

    static bool is_residue(int id) noexcept { return id >= kFirstResidue && id < kVocabSize; }
    static bool is_canonical(int id) noexcept;
    static char residue_char(int id);

    const std::vector<std::string>& symbols() const noexcept { return symbols_; }

private:
    std::vector<std::string> symbols_;
    std::array<int, 256> residue_ids_{};
};

// Process-wide instance; the vocabulary is fixed so one copy suffices.
const Vocabulary& vocab();
Vocabulary build_vocab();

struct TokenSeq {
    std::vector<int> ids;
    SeqKind kind = SeqKind::Target;
};

TokenSeq encode_source(std::string_view mhc, std::string_view peptide,
                       const Vocabulary& v = vocab());
TokenSeq encode_target(std::string_view tcr, const Vocabulary& v = vocab());
std::string decode_tokens(const TokenSeq& seq, const Vocabulary& v = vocab());
std::string decode_ids(const std::vector<int>& ids, const Vocabulary& v = vocab());

// Number of non-PAD positions at the front of a padded sequence.
std::size_t unpadded_length(const std::vector<int>& ids);

// Uppercases and validates a residue string; throws UnknownResidue.
std::string normalize_residues(std::string_view s, std::string_view what = "residue string");

}  // namespace cdr3gen::seqcore
