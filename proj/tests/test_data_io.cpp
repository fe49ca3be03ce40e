#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "cdr3gen/data_io.hpp"
#include "cdr3gen/error.hpp"
#include "cdr3gen/util.hpp"
#include "support/synthetic.hpp"

using namespace cdr3gen;
using namespace cdr3gen::data_io;

namespace {

Error error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e;
    }
    FAIL("expected an Error");
    return Error(ErrorKind::Usage, "", "");
}

std::vector<Triple> contexts(std::size_t n, std::size_t per_context = 1) {
    std::vector<Triple> out;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < per_context; ++r)
            out.push_back({"YFAMY" + std::string(1, "ACDEFGHIKL"[i % 10]), "GILGF" + std::string(1 + i / 10, 'V'),
                           "CASS" + std::string(1 + r, 'L') + "F"});
    return out;
}

}  // namespace

TEST_CASE("load_tsv parses and normalizes") {
    const auto t = parse_tsv("tcr\tmhc\textra\tpeptide\n"
                             "CASSLF\tYFAMY\tx\tGILGFVFTL\r\n"
                             "cassqf\tyfamy\ty\tnlvpmvatv\n"
                             "\n"
                             "CASSLF\tYFAMY\tz\tGILGFVFTL\n");
    REQUIRE(t.size() == 3);
    CHECK(t[0] == Triple{"YFAMY", "GILGFVFTL", "CASSLF"});
    CHECK(t[1] == Triple{"YFAMY", "NLVPMVATV", "CASSQF"});
    CHECK(t[2] == t[0]);

    const auto path = (std::filesystem::temp_directory_path() / "cdr3gen_test_io.tsv").string();
    write_tsv(path, t);
    CHECK(load_tsv(path) == t);
    std::filesystem::remove(path);
}

TEST_CASE("load_tsv errors") {
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\nA\tB\n"); }).kind() == ErrorKind::MissingColumn);
    CHECK(error_of([] { parse_tsv(""); }).kind() == ErrorKind::MissingColumn);

    const Error digit = error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\tCASS\nYFA\tG1L\tCASS\n", "f.tsv"); });
    CHECK(digit.kind() == ErrorKind::MalformedRow);
    CHECK(digit.detail().find("f.tsv:3") != std::string::npos);

    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\t\tCASS\n"); }).kind() == ErrorKind::MalformedRow);
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\n"); }).kind() == ErrorKind::MalformedRow);
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\tCA-SS\n"); }).kind() == ErrorKind::MalformedRow);
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\tCABS\n"); }).kind() == ErrorKind::UnknownResidue);
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\t" + std::string(27, 'A') + "\n"); }).kind() ==
          ErrorKind::MalformedRow);
    CHECK(parse_tsv("mhc\tpeptide\ttcr\nYFA\tGIL\t" + std::string(26, 'A') + "\n").size() == 1);
    CHECK(error_of([] { parse_tsv("mhc\tpeptide\ttcr\n" + std::string(50, 'A') + "\tGILGF\tCASS\n"); }).kind() ==
          ErrorKind::MalformedRow);
    CHECK(parse_tsv("mhc\tpeptide\ttcr\nXXX\tGIX\tCASX\n").size() == 1);
    CHECK(error_of([] { load_tsv("/nonexistent/file.tsv"); }).kind() == ErrorKind::Io);
}

TEST_CASE("largest-remainder apportionment") {
    CHECK(apportion(10, {}) == std::array<std::size_t, 3>{7, 1, 2});
    CHECK(apportion(500, {}) == std::array<std::size_t, 3>{350, 50, 100});
    CHECK(apportion(11, {}) == std::array<std::size_t, 3>{8, 1, 2});
    CHECK(apportion(13, {}) == std::array<std::size_t, 3>{9, 1, 3});
    CHECK(apportion(3, {1, 1, 1}) == std::array<std::size_t, 3>{1, 1, 1});
    CHECK(apportion(2, {1, 1, 1}) == std::array<std::size_t, 3>{1, 1, 0});
    CHECK(apportion(0, {}) == std::array<std::size_t, 3>{0, 0, 0});
    CHECK(error_of([] { apportion(5, {0, 0, 0}); }).kind() == ErrorKind::InvalidConfig);
}

TEST_CASE("context-level split") {
    const auto triples = contexts(10, 3);
    const SplitSet s = split_contexts(triples, {}, 7);
    CHECK(s.context_counts() == std::array<std::size_t, 3>{7, 1, 2});
    CHECK(s.train.size() + s.valid.size() + s.test.size() == triples.size());
    CHECK(s.train.size() == 21);

    std::set<ContextKey> tr, va, te;
    for (const auto& t : s.train) tr.insert(context_of(t));
    for (const auto& t : s.valid) va.insert(context_of(t));
    for (const auto& t : s.test) te.insert(context_of(t));
    for (const auto& k : tr) CHECK((!va.contains(k) && !te.contains(k)));
    for (const auto& k : va) CHECK(!te.contains(k));

    const SplitSet again = split_contexts(triples, {}, 7);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
    bool differs = false;
    for (std::uint64_t seed = 8; seed < 20 && !differs; ++seed) differs = split_contexts(triples, {}, seed).test != s.test;
    CHECK(differs);

    CHECK(error_of([] { split_contexts(contexts(9, 4), {}, 1); }).kind() == ErrorKind::TooFewContexts);
}

TEST_CASE("strict split keeps alleles and peptides apart") {
    testsupport::CorpusShape shape;
    shape.alleles = 12;
    const auto triples = testsupport::synthetic_corpus(60, 3, shape);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SplitSet s = split_contexts(triples, {}, seed, true);
        std::array<std::set<std::string>, 3> mhcs, peps;
        for (const auto& [key, split] : s.partition) {
            mhcs[static_cast<int>(split)].insert(key.first);
            peps[static_cast<int>(split)].insert(key.second);
        }
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b)
                for (const auto& m : mhcs[a]) CHECK(!mhcs[b].contains(m));
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b)
                for (const auto& p : peps[a]) CHECK(!peps[b].contains(p));
        CHECK(s.train.size() + s.valid.size() + s.test.size() == triples.size());
    }
}

TEST_CASE("table reader") {
    const Table t = parse_table("a\tb\n1\t2\n\n3\t4\n");
    CHECK(t.rows.size() == 2);
    CHECK(t.line_numbers[1] == 4);
    CHECK(t.column("b") == 1);
    CHECK(error_of([&] { t.column("c"); }).kind() == ErrorKind::MissingColumn);
}
