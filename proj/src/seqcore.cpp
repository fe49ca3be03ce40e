#include "cdr3gen/seqcore.hpp"

#include <cctype>

#include "cdr3gen/error.hpp"

namespace cdr3gen::seqcore {

namespace {

[[noreturn]] void unknown_residue(char c, std::string_view what) {
    std::string shown = std::isprint(static_cast<unsigned char>(c)) ? std::string(1, c)
                                                                   : "\\x" + std::to_string(static_cast<unsigned char>(c));
    throw Error(ErrorKind::UnknownResidue, "seqcore",
                "character '" + shown + "' in " + std::string(what) + " is not a residue symbol");
}

void append_residues(std::vector<int>& out, std::string_view s, const Vocabulary& v,
                     std::string_view what) {
    for (char c : s) {
        int id = v.residue_id(c);
        if (id < 0) unknown_residue(c, what);
        out.push_back(id);
    }
}

}  // namespace

Vocabulary::Vocabulary() {
    symbols_ = {"<PAD>", "<SEP>", "<SOS>", "<EOS>", "<UNK>"};
    residue_ids_.fill(-1);
    for (char c : kResidues) {
        const int id = static_cast<int>(symbols_.size());
        symbols_.emplace_back(1, c);
        residue_ids_[static_cast<unsigned char>(c)] = id;
        residue_ids_[static_cast<unsigned char>(std::tolower(c))] = id;
    }
}

const std::string& Vocabulary::symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

int Vocabulary::id(std::string_view symbol) const noexcept {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (symbols_[i] == symbol) return static_cast<int>(i);
    }
    return -1;
}

bool Vocabulary::is_canonical(int id) noexcept {
    return is_residue(id) && kResidues[static_cast<std::size_t>(id - kFirstResidue)] != 'X';
}

char Vocabulary::residue_char(int id) {
    if (!is_residue(id)) {
        throw Error(ErrorKind::UnknownResidue, "seqcore", "id " + std::to_string(id) + " is not a residue");
    }
    return kResidues[static_cast<std::size_t>(id - kFirstResidue)];
}

const Vocabulary& vocab() {
    static const Vocabulary instance;
    return instance;
}

Vocabulary build_vocab() { return Vocabulary{}; }

TokenSeq encode_source(std::string_view mhc, std::string_view peptide, const Vocabulary& v) {
    const std::size_t combined = mhc.size() + 1 + peptide.size();
    if (combined > kSourceLength) {
        throw Error(ErrorKind::OverlongSource, "seqcore",
                    "mhc (" + std::to_string(mhc.size()) + ") + SEP + peptide (" +
                        std::to_string(peptide.size()) + ") = " + std::to_string(combined) +
                        " tokens exceeds " + std::to_string(kSourceLength));
    }
    TokenSeq seq{{}, SeqKind::Source};
    seq.ids.reserve(kSourceLength);
    append_residues(seq.ids, mhc, v, "mhc");
    seq.ids.push_back(kSep);
    append_residues(seq.ids, peptide, v, "peptide");
    seq.ids.resize(kSourceLength, kPad);
    return seq;
}

TokenSeq encode_target(std::string_view tcr, const Vocabulary& v) {
    if (tcr.size() > kMaxTargetResidues) {
        throw Error(ErrorKind::OverlongTarget, "seqcore",
                    "receptor of length " + std::to_string(tcr.size()) + " exceeds " +
                        std::to_string(kMaxTargetResidues));
    }
    TokenSeq seq{{kSos}, SeqKind::Target};
    append_residues(seq.ids, tcr, v, "receptor");
    seq.ids.push_back(kEos);
    return seq;
}

std::string decode_ids(const std::vector<int>& ids, const Vocabulary& v) {
    std::string out;
    for (int id : ids) {
        if (Vocabulary::is_residue(id)) out += v.symbol(id);
    }
    return out;
}

std::string decode_tokens(const TokenSeq& seq, const Vocabulary& v) { return decode_ids(seq.ids, v); }

std::size_t unpadded_length(const std::vector<int>& ids) {
    std::size_t n = ids.size();
    while (n > 0 && ids[n - 1] == kPad) --n;
    return n;
}

std::string normalize_residues(std::string_view s, std::string_view what) {
    const Vocabulary& v = vocab();
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (v.residue_id(c) < 0) unknown_residue(c, what);
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

}  // namespace cdr3gen::seqcore
