#include "cdr3gen/physchem.hpp"

#include <cmath>
#include <sstream>

#include "cdr3gen/error.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::physchem {

namespace {

struct ResidueRow {
    char symbol;
    double aromatic;
    double charge;
    double hbond;
    double kyte_doolittle;
    double residue_mass;  // average residue mass, Da
};

constexpr double kTrpResidueMass = 186.2132;

// clang-format off
constexpr std::array<ResidueRow, 20> kRows = {{
    {'A', 0, 0.0, 0,  1.8,  71.0788},
    {'C', 0, 0.0, 1,  2.5, 103.1388},
    {'D', 0, -1.0, 4, -3.5, 115.0886},
    {'E', 0, -1.0, 4, -3.5, 129.1155},
    {'F', 1, 0.0, 0,  2.8, 147.1766},
    {'G', 0, 0.0, 0, -0.4,  57.0519},
    {'H', 1, 0.1, 2, -3.2, 137.1411},
    {'I', 0, 0.0, 0,  4.5, 113.1594},
    {'K', 0, 1.0, 3, -3.9, 128.1741},
    {'L', 0, 0.0, 0,  3.8, 113.1594},
    {'M', 0, 0.0, 1,  1.9, 131.1926},
    {'N', 0, 0.0, 4, -3.5, 114.1038},
    {'P', 0, 0.0, 0, -1.6,  97.1167},
    {'Q', 0, 0.0, 4, -3.5, 128.1307},
    {'R', 0, 1.0, 6, -4.5, 156.1875},
    {'S', 0, 0.0, 2, -0.8,  87.0782},
    {'T', 0, 0.0, 2, -0.7, 101.1051},
    {'V', 0, 0.0, 0,  4.2,  99.1326},
    {'W', 1, 0.0, 1, -0.9, kTrpResidueMass},
    {'Y', 1, 0.0, 2, -1.3, 163.1760},
}};
// clang-format on

constexpr std::string_view kHeader =
    "# residue descriptor table v1\taromatic\tcharge\thbond\thydrophobicity\tmass_ratio\n";

int row_index(char residue) {
    const int id = seqcore::vocab().residue_id(residue);
    if (id < 0) {
        throw Error(ErrorKind::UnknownResidue, "physchem",
                    std::string("no descriptor for '") + residue + "'");
    }
    return id - seqcore::kFirstResidue;
}

bool is_canonical_row(std::size_t row) { return seqcore::kResidues[row] != 'X'; }

}  // namespace

Descriptor descriptor_raw(char residue) { return default_table().raw(residue); }

DescriptorTable DescriptorTable::builtin() {
    DescriptorTable t;
    for (const ResidueRow& r : kRows) {
        const auto row = static_cast<std::size_t>(row_index(r.symbol));
        t.rows_[row] = {r.aromatic, r.charge, r.hbond, r.kyte_doolittle,
                        r.residue_mass / kTrpResidueMass};
    }
    t.compute_statistics();
    return t;
}

DescriptorTable DescriptorTable::from_tsv_text(std::string_view text) {
    DescriptorTable t;
    std::array<bool, 21> seen{};
    std::size_t line_no = 0;
    for (const std::string& line : split(text, '\n')) {
        ++line_no;
        std::string_view body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const auto fields = split(body, '\t');
        if (fields.size() != 1 + kDims || fields[0].size() != 1) {
            throw Error(ErrorKind::MalformedRow, "physchem",
                        "descriptor file line " + std::to_string(line_no) + " needs symbol + 5 values");
        }
        const auto row = static_cast<std::size_t>(row_index(fields[0][0]));
        for (std::size_t k = 0; k < kDims; ++k) {
            try {
                t.rows_[row][k] = std::stod(fields[k + 1]);
            } catch (const std::exception&) {
                throw Error(ErrorKind::MalformedRow, "physchem",
                            "descriptor file line " + std::to_string(line_no) + ": bad number '" +
                                fields[k + 1] + "'");
            }
        }
        seen[row] = true;
    }
    for (std::size_t row = 0; row < seen.size(); ++row) {
        if (!seen[row] && is_canonical_row(row)) {
            throw Error(ErrorKind::MalformedRow, "physchem",
                        std::string("descriptor file is missing residue ") + seqcore::kResidues[row]);
        }
    }
    t.compute_statistics();
    return t;
}

DescriptorTable DescriptorTable::load(const std::string& path) { return from_tsv_text(read_file(path)); }

DescriptorTable::DescriptorTable(const DescriptorTable& other)
    : rows_(other.rows_), mu_(other.mu_), sigma_(other.sigma_) {}

DescriptorTable& DescriptorTable::operator=(const DescriptorTable& other) {
    rows_ = other.rows_;
    mu_ = other.mu_;
    sigma_ = other.sigma_;
    reads_.store(0);
    return *this;
}

void DescriptorTable::compute_statistics() {
    const auto x = static_cast<std::size_t>(row_index('X'));
    rows_[x] = Descriptor{};
    mu_ = Descriptor{};
    sigma_ = Descriptor{};
    for (std::size_t row = 0; row < rows_.size(); ++row) {
        if (!is_canonical_row(row)) continue;
        for (std::size_t k = 0; k < kDims; ++k) mu_[k] += rows_[row][k];
    }
    for (double& m : mu_) m /= 20.0;
    for (std::size_t row = 0; row < rows_.size(); ++row) {
        if (!is_canonical_row(row)) continue;
        for (std::size_t k = 0; k < kDims; ++k) {
            const double dev = rows_[row][k] - mu_[k];
            sigma_[k] += dev * dev;
        }
    }
    for (std::size_t k = 0; k < kDims; ++k) {
        sigma_[k] = std::sqrt(sigma_[k] / 20.0);
        if (!(sigma_[k] > 0.0)) {
            throw Error(ErrorKind::InvalidConfig, "physchem",
                        std::string("descriptor column '") + std::string(kColumnNames[k]) +
                            "' has zero variance");
        }
    }
}

const Descriptor& DescriptorTable::raw(char residue) const {
    reads_.fetch_add(1, std::memory_order_relaxed);
    return rows_[static_cast<std::size_t>(row_index(residue))];
}

Descriptor DescriptorTable::zscore(char residue) const {
    const auto row = static_cast<std::size_t>(row_index(residue));
    reads_.fetch_add(1, std::memory_order_relaxed);
    if (!is_canonical_row(row)) return Descriptor{};
    Descriptor z{};
    for (std::size_t k = 0; k < kDims; ++k) z[k] = (rows_[row][k] - mu_[k]) / sigma_[k];
    return z;
}

Descriptor DescriptorTable::zscore_token(int token_id) const {
    if (!seqcore::Vocabulary::is_residue(token_id)) {
        reads_.fetch_add(1, std::memory_order_relaxed);
        return Descriptor{};
    }
    return zscore(seqcore::Vocabulary::residue_char(token_id));
}

std::string DescriptorTable::serialize() const {
    std::string out(kHeader);
    for (std::size_t row = 0; row < rows_.size(); ++row) {
        out += seqcore::kResidues[row];
        for (double v : rows_[row]) {
            out += '\t';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

std::uint64_t DescriptorTable::checksum() const { return fnv1a64(serialize()); }

const DescriptorTable& default_table() {
    static const DescriptorTable table = DescriptorTable::builtin();
    return table;
}

Descriptor zscore(const DescriptorTable& table, char residue) { return table.zscore(residue); }

}  // namespace cdr3gen::physchem
