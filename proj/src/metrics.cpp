#include "cdr3gen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cdr3gen/error.hpp"
#include "cdr3gen/parallel.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::metrics {

namespace {

constexpr const char* kModule = "metrics";

// Same content as data/blosum62.txt.
constexpr std::string_view kBlosum62 =
    "  A  R  N  D  C  Q  E  G  H  I  L  K  M  F  P  S  T  W  Y  V  X\n"
    "A  4 -1 -2 -2  0 -1 -1  0 -2 -1 -1 -1 -1 -2 -1  1  0 -3 -2  0 -1\n"
    "R -1  5  0 -2 -3  1  0 -2  0 -3 -2  2 -1 -3 -2 -1 -1 -3 -2 -3 -1\n"
    "N -2  0  6  1 -3  0  0  0  1 -3 -3  0 -2 -3 -2  1  0 -4 -2 -3 -1\n"
    "D -2 -2  1  6 -3  0  2 -1 -1 -3 -4 -1 -3 -3 -1  0 -1 -4 -3 -3 -1\n"
    "C  0 -3 -3 -3  9 -3 -4 -3 -3 -1 -1 -3 -1 -2 -3 -1 -1 -2 -2 -1 -1\n"
    "Q -1  1  0  0 -3  5  2 -2  0 -3 -2  1  0 -3 -1  0 -1 -2 -1 -2 -1\n"
    "E -1  0  0  2 -4  2  5 -2  0 -3 -3  1 -2 -3 -1  0 -1 -3 -2 -2 -1\n"
    "G  0 -2  0 -1 -3 -2 -2  6 -2 -4 -4 -2 -3 -3 -2  0 -2 -2 -3 -3 -1\n"
    "H -2  0  1 -1 -3  0  0 -2  8 -3 -3 -1 -2 -1 -2 -1 -2 -2  2 -3 -1\n"
    "I -1 -3 -3 -3 -1 -3 -3 -4 -3  4  2 -3  1  0 -3 -2 -1 -3 -1  3 -1\n"
    "L -1 -2 -3 -4 -1 -2 -3 -4 -3  2  4 -2  2  0 -3 -2 -1 -2 -1  1 -1\n"
    "K -1  2  0 -1 -3  1  1 -2 -1 -3 -2  5 -1 -3 -1  0 -1 -3 -2 -2 -1\n"
    "M -1 -1 -2 -3 -1  0 -2 -3 -2  1  2 -1  5  0 -2 -1 -1 -1 -1  1 -1\n"
    "F -2 -3 -3 -3 -2 -3 -3 -3 -1  0  0 -3  0  6 -4 -2 -2  1  3 -1 -1\n"
    "P -1 -2 -2 -1 -3 -1 -1 -2 -2 -3 -3 -1 -2 -4  7 -1 -1 -4 -3 -2 -1\n"
    "S  1 -1  1  0 -1  0  0  0 -1 -2 -2  0 -1 -2 -1  4  1 -3 -2 -2 -1\n"
    "T  0 -1  0 -1 -1 -1 -1 -2 -2 -1 -1 -1 -1 -2 -1  1  5 -2 -2  0 -1\n"
    "W -3 -3 -4 -4 -2 -2 -3 -2 -2 -3 -2 -3 -1  1 -4 -3 -2 11  2 -3 -1\n"
    "Y -2 -2 -2 -3 -2 -1 -2 -3  2 -1 -1 -2 -1  3 -3 -2 -2  2  7 -1 -1\n"
    "V  0 -3 -3 -3 -1 -2 -2 -3 -3  3  1 -2  1 -1 -2 -2  0 -3 -1  4 -1\n"
    "X -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1 -1\n";

}  // namespace

const SubstitutionMatrix& SubstitutionMatrix::blosum62() {
    static const SubstitutionMatrix m = from_text(kBlosum62);
    return m;
}

SubstitutionMatrix SubstitutionMatrix::from_text(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    for (const std::string& line : split(text, '\n')) {
        const std::string_view l = trim(line);
        if (l.empty() || l.front() == '#') continue;
        std::istringstream in{std::string(l)};
        std::vector<std::string> fields;
        for (std::string f; in >> f;) fields.push_back(f);
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) throw Error(ErrorKind::MalformedRow, kModule, "substitution matrix is empty");

    SubstitutionMatrix m;
    m.index_.fill(-1);
    for (const std::string& c : rows[0]) {
        if (c.size() != 1) throw Error(ErrorKind::MalformedRow, kModule, "bad matrix header symbol '" + c + "'");
        const auto u = static_cast<unsigned char>(c[0]);
        if (m.index_[u] >= 0) throw Error(ErrorKind::MalformedRow, kModule, "duplicate matrix symbol " + c);
        m.index_[u] = static_cast<int>(m.alphabet_.size());
        m.alphabet_ += c[0];
    }
    const std::size_t n = m.alphabet_.size();
    if (rows.size() != n + 1) throw Error(ErrorKind::MalformedRow, kModule, "matrix is not square");
    m.scores_.assign(n * n, 0);
    std::vector<bool> seen(n, false);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        if (fields.size() != n + 1 || fields[0].size() != 1 || !m.covers(fields[0][0]))
            throw Error(ErrorKind::MalformedRow, kModule, "bad matrix row " + std::to_string(r));
        const auto i = static_cast<std::size_t>(m.index_[static_cast<unsigned char>(fields[0][0])]);
        if (seen[i]) throw Error(ErrorKind::MalformedRow, kModule, "duplicate matrix row " + fields[0]);
        seen[i] = true;
        for (std::size_t j = 0; j < n; ++j) {
            try {
                std::size_t used = 0;
                m.scores_[i * n + j] = std::stoi(fields[j + 1], &used);
                if (used != fields[j + 1].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw Error(ErrorKind::MalformedRow, kModule, "non-integer score '" + fields[j + 1] + "'");
            }
        }
    }
    return m;
}

SubstitutionMatrix SubstitutionMatrix::load(const std::string& path) { return from_text(read_file(path)); }

bool SubstitutionMatrix::covers(char c) const noexcept { return index_[static_cast<unsigned char>(c)] >= 0; }

int SubstitutionMatrix::score(char a, char b) const {
    const int i = index_[static_cast<unsigned char>(a)];
    const int j = index_[static_cast<unsigned char>(b)];
    if (i < 0 || j < 0) {
        const char bad = i < 0 ? a : b;
        throw Error(ErrorKind::UnknownResidue, kModule, std::string("residue '") + bad + "' not in substitution matrix");
    }
    return scores_[static_cast<std::size_t>(i) * alphabet_.size() + static_cast<std::size_t>(j)];
}

bool SubstitutionMatrix::symmetric() const {
    for (char a : alphabet_)
        for (char b : alphabet_)
            if (score(a, b) != score(b, a)) return false;
    return true;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::size_t lcs_len(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

int sw_score(std::string_view a, std::string_view b, const SubstitutionMatrix& m) {
    for (char c : a) m.score(c, c);
    for (char c : b) m.score(c, c);
    constexpr int kNeg = -(1 << 28);
    // h: best score ending at (i, j); e: ending in a gap in a; f: gap in b.
    std::vector<int> h_prev(b.size() + 1, 0), h_cur(b.size() + 1, 0);
    std::vector<int> f(b.size() + 1, kNeg);
    int best = 0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        int e = kNeg;
        h_cur[0] = 0;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            e = std::max(e - m.gap_extend, h_cur[j - 1] - m.gap_open);
            f[j] = std::max(f[j] - m.gap_extend, h_prev[j] - m.gap_open);
            const int diag = h_prev[j - 1] + m.score(a[i - 1], b[j - 1]);
            h_cur[j] = std::max({0, diag, e, f[j]});
            best = std::max(best, h_cur[j]);
        }
        std::swap(h_prev, h_cur);
    }
    return best;
}

double similarity_sw(std::string_view a, std::string_view b, const SubstitutionMatrix& m) {
    const int ab = sw_score(a, b, m);
    if (a == b) return 1.0;
    const int denom = std::max(sw_score(a, a, m), sw_score(b, b, m));
    if (denom <= 0) return 0.0;
    return static_cast<double>(ab) / static_cast<double>(denom);
}

Summary summarize(std::span<const PairMetrics> rows) {
    Summary s;
    s.count = rows.size();
    if (rows.empty()) return s;
    const auto n = static_cast<double>(rows.size());
    auto stats = [&](auto get, double& mean, double& sd) {
        double sum = 0.0;
        for (const auto& r : rows) sum += get(r);
        mean = sum / n;
        double sq = 0.0;
        for (const auto& r : rows) sq += (get(r) - mean) * (get(r) - mean);
        sd = std::sqrt(sq / n);
    };
    stats([](const PairMetrics& r) { return static_cast<double>(r.levenshtein); }, s.levenshtein_mean,
          s.levenshtein_std);
    stats([](const PairMetrics& r) { return r.similarity; }, s.similarity_mean, s.similarity_std);
    stats([](const PairMetrics& r) { return static_cast<double>(r.lcs); }, s.lcs_mean, s.lcs_std);
    return s;
}

MetricsReport evaluate(std::span<const PairInput> pairs, const SubstitutionMatrix& m, int threads) {
    if (pairs.empty()) throw Error(ErrorKind::EmptyInput, kModule, "no pairs to evaluate");
    MetricsReport report;
    report.pairs.resize(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        const PairInput& p = pairs[i];
        report.pairs[i] = {levenshtein(p.actual, p.generated), similarity_sw(p.actual, p.generated, m),
                           lcs_len(p.actual, p.generated)};
    });
    report.overall = summarize(report.pairs);

    std::map<std::string, std::vector<PairMetrics>> mhc_rows, peptide_rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!pairs[i].mhc.empty()) mhc_rows[pairs[i].mhc].push_back(report.pairs[i]);
        if (!pairs[i].peptide.empty()) peptide_rows[pairs[i].peptide].push_back(report.pairs[i]);
    }
    for (const auto& [key, rows] : mhc_rows) report.by_mhc[key] = summarize(rows);
    for (const auto& [key, rows] : peptide_rows) report.by_peptide[key] = summarize(rows);
    return report;
}

}  // namespace cdr3gen::metrics
