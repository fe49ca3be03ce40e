#include "cdr3gen/data_io.hpp"

#include <algorithm>
#include <numeric>

#include "cdr3gen/error.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::data_io {

namespace {

constexpr const char* kModule = "data_io";

std::string at_line(std::string_view source, std::size_t line) {
    return std::string(source) + ":" + std::to_string(line) + ": ";
}

bool is_letter(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }

std::string residue_field(const std::string& raw, std::string_view column, std::string_view source,
                          std::size_t line) {
    const std::string_view f = trim(raw);
    if (f.empty()) throw Error(ErrorKind::MalformedRow, kModule, at_line(source, line) + "empty " + std::string(column));
    for (char c : f) {
        if (!is_letter(c))
            throw Error(ErrorKind::MalformedRow, kModule,
                        at_line(source, line) + "non-letter '" + std::string(1, c) + "' in " + std::string(column));
    }
    try {
        return seqcore::normalize_residues(f, column);
    } catch (const Error& e) {
        throw Error(ErrorKind::UnknownResidue, kModule, at_line(source, line) + e.detail());
    }
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw Error(ErrorKind::MissingColumn, kModule, "missing column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
}

Table parse_table(std::string_view text, std::string_view source) {
    Table t;
    const std::vector<std::string> lines = split(text, '\n');
    bool have_header = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view line = lines[i];
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) continue;
        std::vector<std::string> fields = split(line, '\t');
        if (!have_header) {
            for (auto& f : fields) f = std::string(trim(f));
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            throw Error(ErrorKind::MalformedRow, kModule,
                        at_line(source, i + 1) + "expected " + std::to_string(t.header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(i + 1);
    }
    if (!have_header) throw Error(ErrorKind::MissingColumn, kModule, std::string(source) + ": no header row");
    return t;
}

Table read_table(const std::string& path) { return parse_table(read_file(path), path); }

std::vector<Triple> parse_tsv(std::string_view text, std::string_view source) {
    const Table t = parse_table(text, source);
    const std::size_t c_mhc = t.column("mhc"), c_pep = t.column("peptide"), c_tcr = t.column("tcr");
    std::vector<Triple> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::size_t line = t.line_numbers[r];
        Triple tr{residue_field(row[c_mhc], "mhc", source, line), residue_field(row[c_pep], "peptide", source, line),
                  residue_field(row[c_tcr], "tcr", source, line)};
        if (tr.tcr.size() > seqcore::kMaxTargetResidues)
            throw Error(ErrorKind::MalformedRow, kModule,
                        at_line(source, line) + "tcr has " + std::to_string(tr.tcr.size()) + " residues (max 26)");
        if (tr.mhc.size() + 1 + tr.peptide.size() > seqcore::kSourceLength)
            throw Error(ErrorKind::MalformedRow, kModule, at_line(source, line) + "mhc + peptide exceed 55 tokens");
        out.push_back(std::move(tr));
    }
    return out;
}

std::vector<Triple> load_tsv(const std::string& path) { return parse_tsv(read_file(path), path); }

std::string to_tsv(std::span<const Triple> triples) {
    std::string out = "mhc\tpeptide\ttcr\n";
    for (const Triple& t : triples) out += t.mhc + '\t' + t.peptide + '\t' + t.tcr + '\n';
    return out;
}

void write_tsv(const std::string& path, std::span<const Triple> triples) { write_file(path, to_tsv(triples)); }

std::vector<ContextKey> load_contexts(const std::string& path) {
    const Table t = read_table(path);
    const std::size_t c_mhc = t.column("mhc"), c_pep = t.column("peptide");
    std::vector<ContextKey> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::size_t line = t.line_numbers[r];
        ContextKey key{residue_field(t.rows[r][c_mhc], "mhc", path, line),
                       residue_field(t.rows[r][c_pep], "peptide", path, line)};
        if (key.first.size() + 1 + key.second.size() > seqcore::kSourceLength)
            throw Error(ErrorKind::MalformedRow, kModule, at_line(path, line) + "mhc + peptide exceed 55 tokens");
        out.push_back(std::move(key));
    }
    return out;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
    const std::array<long long, 3> r = {ratios.train, ratios.valid, ratios.test};
    const long long total = r[0] + r[1] + r[2];
    if (r[0] < 0 || r[1] < 0 || r[2] < 0 || total <= 0)
        throw Error(ErrorKind::InvalidConfig, kModule, "split ratios must be non-negative with a positive sum");
    std::array<std::size_t, 3> counts{};
    std::array<long long, 3> remainder{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const auto num = static_cast<unsigned long long>(n) * static_cast<unsigned long long>(r[i]);
        counts[i] = static_cast<std::size_t>(num / static_cast<unsigned long long>(total));
        remainder[i] = static_cast<long long>(num % static_cast<unsigned long long>(total));
        assigned += counts[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k]];
    return counts;
}

std::array<std::size_t, 3> SplitSet::context_counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& [key, split] : partition) ++c[static_cast<int>(split)];
    return c;
}

SplitSet split_contexts(std::span<const Triple> triples, const SplitRatios& ratios, std::uint64_t seed,
                        bool strict) {
    std::vector<ContextKey> keys;
    for (const Triple& t : triples) keys.push_back(context_of(t));
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    if (keys.size() < kMinContexts)
        throw Error(ErrorKind::TooFewContexts, kModule,
                    "need at least " + std::to_string(kMinContexts) + " distinct contexts, got " +
                        std::to_string(keys.size()));
    const std::array<std::size_t, 3> target = apportion(keys.size(), ratios);

    Rng rng(seed);
    SplitSet out;
    if (!strict) {
        shuffle(keys, rng);
        std::size_t k = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t i = 0; i < target[s]; ++i) out.partition[keys[k++]] = static_cast<Split>(s);
    } else {
        UnionFind uf(keys.size());
        std::map<std::string, std::size_t> first_mhc, first_pep;
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (auto [it, fresh] = first_mhc.emplace(keys[i].first, i); !fresh) uf.unite(i, it->second);
            if (auto [it, fresh] = first_pep.emplace(keys[i].second, i); !fresh) uf.unite(i, it->second);
        }
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < keys.size(); ++i) groups[uf.find(i)].push_back(i);
        std::vector<std::vector<std::size_t>> components;
        for (auto& [root, members] : groups) components.push_back(std::move(members));
        shuffle(components, rng);
        std::array<std::size_t, 3> filled{};
        for (const auto& comp : components) {
            int best = 0;
            long long best_deficit = 0;
            for (int s = 0; s < 3; ++s) {
                const long long deficit = static_cast<long long>(target[s]) - static_cast<long long>(filled[s]);
                if (s == 0 || deficit > best_deficit) {
                    best = s;
                    best_deficit = deficit;
                }
            }
            filled[best] += comp.size();
            for (std::size_t i : comp) out.partition[keys[i]] = static_cast<Split>(best);
        }
    }

    for (const Triple& t : triples) {
        switch (out.partition.at(context_of(t))) {
            case Split::Train: out.train.push_back(t); break;
            case Split::Valid: out.valid.push_back(t); break;
            case Split::Test: out.test.push_back(t); break;
        }
    }
    return out;
}

}  // namespace cdr3gen::data_io
