#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <tuple>

#include "cdr3gen/baseline_ann.hpp"
#include "cdr3gen/error.hpp"
#include "support/synthetic.hpp"

using namespace cdr3gen;
using baseline_ann::RetrievalIndex;
using data_io::Triple;

namespace {

// Scan over raw triples; ties resolved by (mhc, peptide, receptor).
std::string brute_force(const std::vector<Triple>& triples, const std::string& mhc, const std::string& peptide) {
    const Triple* best = nullptr;
    double best_sim = -1.0;
    for (const Triple& t : triples) {
        const double s = metrics::similarity_sw(mhc + peptide, t.mhc + t.peptide);
        if (!best || s > best_sim ||
            (s == best_sim && std::tie(t.mhc, t.peptide, t.tcr) < std::tie(best->mhc, best->peptide, best->tcr))) {
            best = &t;
            best_sim = s;
        }
    }
    return best->tcr;
}

}  // namespace

TEST_CASE("exact context returns its first receptor") {
    const std::vector<Triple> triples = {{"YFAMY", "GILGFVFTL", "CASSYF"},
                                         {"YFAMY", "GILGFVFTL", "CASSAF"},
                                         {"YYSEY", "NLVPMVATV", "CASSQF"}};
    const RetrievalIndex idx(triples);
    CHECK(idx.entries().size() == 2);
    CHECK(idx.triple_count() == 3);
    CHECK(idx.retrieve("YFAMY", "GILGFVFTL") == "CASSAF");
    const auto hit = idx.nearest("YYSEY", "NLVPMVATV");
    CHECK(hit.similarity == 1.0);
    CHECK(hit.receptor() == "CASSQF");
}

TEST_CASE("single entry and empty index") {
    const std::vector<Triple> one = {{"AAAA", "CCCC", "CASSF"}};
    const RetrievalIndex idx(one);
    CHECK(idx.retrieve("WWWW", "DDDD") == "CASSF");
    CHECK(idx.retrieve("AAAA", "CCCC") == "CASSF");

    const RetrievalIndex empty(std::vector<Triple>{});
    try {
        empty.retrieve("A", "C");
        FAIL("expected EmptyIndex");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyIndex);
    }
}

TEST_CASE("five-entry index matches a brute-force scan") {
    const std::vector<Triple> triples = {{"YFAMY", "GILGFVFTL", "CASSIRSSYEQYF"},
                                         {"YFAMY", "NLVPMVATV", "CASSPQTGTIYGYTGF"},
                                         {"YYSEY", "KAFSPEVIPMF", "CASSGQGYGYAF"},
                                         {"YFAMY", "ELAGIGILTV", "CASSFTGLGQPQHF"},
                                         {"YHTKY", "KRWIILGLNK", "CASSLGTSAYEQYF"}};
    const RetrievalIndex idx(triples);
    const std::vector<std::pair<std::string, std::string>> queries = {
        {"YFAMY", "GILGFVFTV"}, {"YYSEY", "KAFSPEVIPM"}, {"YHTKY", "KRWIILGLN"}, {"WWWWW", "DDDDD"},
        {"YFAMY", "NLVPMVATL"}, {"YFAMY", "ELAGIGILT"},  {"", "AAAAA"}};
    for (const auto& [m, p] : queries) {
        CAPTURE(p);
        CHECK(idx.retrieve(m, p) == brute_force(triples, m, p));
        CHECK(idx.retrieve(m, p, 3) == idx.retrieve(m, p, 1));
    }
}

TEST_CASE("retrieval returns training receptors on a larger corpus") {
    const auto triples = testsupport::synthetic_corpus(80, 3);
    const RetrievalIndex idx(triples);
    const auto queries = testsupport::synthetic_corpus(15, 99);
    for (const auto& q : queries) {
        const std::string r = idx.retrieve(q.mhc, q.peptide);
        CHECK(r == brute_force(triples, q.mhc, q.peptide));
    }
}
