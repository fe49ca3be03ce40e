#include "cdr3gen/generate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cdr3gen/error.hpp"
#include "cdr3gen/parallel.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/seqcore.hpp"
#include "cdr3gen/util.hpp"

namespace cdr3gen::generate {

namespace {

constexpr const char* kModule = "generate";

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::InvalidConfig, kModule, what);
}

std::string to_residues(const std::vector<int>& tokens) { return seqcore::decode_ids(tokens); }

std::string_view mode_name(SelectionMode m) { return m == SelectionMode::Mmr ? "mmr" : "unique"; }
std::string_view pool_name(PoolMode p) { return p == PoolMode::Wide ? "wide" : "map"; }

}  // namespace

void GenConfig::validate() const {
    require(n_starts >= 0, "n_starts must be non-negative");
    require(t_min > 0.0 && t_min <= t_max, "temperature range must satisfy 0 < t_min <= t_max");
    require(b_min >= 1 && b_min <= b_max, "beam range must satisfy 1 <= b_min <= b_max");
    require(len_min >= 0 && len_min <= len_max && len_max <= static_cast<int>(seqcore::kMaxTargetResidues),
            "length bounds must satisfy 0 <= len_min <= len_max <= 26");
    require(top_k >= 1, "K must be at least 1");
    require(mmr_lambda >= 0.0 && mmr_lambda <= 1.0, "mmr_lambda must lie in [0,1]");
    require(candidate_cap >= 1, "candidate cap must be at least 1");
    require(threads >= 1, "threads must be at least 1");
}

nlohmann::json config_to_json(const GenConfig& cfg) {
    return {{"n_starts", cfg.n_starts},   {"t_min", cfg.t_min},
            {"t_max", cfg.t_max},         {"b_min", cfg.b_min},
            {"b_max", cfg.b_max},         {"len_min", cfg.len_min},
            {"len_max", cfg.len_max},     {"k", cfg.top_k},
            {"selection", mode_name(cfg.mode)}, {"mmr_lambda", cfg.mmr_lambda},
            {"pool", pool_name(cfg.pool)}, {"candidate_cap", cfg.candidate_cap},
            {"seed", cfg.seed}};
}

const std::vector<int>& allowed_tokens() {
    static const std::vector<int> tokens = [] {
        std::vector<int> t{seqcore::kEos};
        for (int id = seqcore::kFirstResidue; id < seqcore::kVocabSize; ++id)
            if (seqcore::Vocabulary::is_canonical(id)) t.push_back(id);
        return t;
    }();
    return tokens;
}

beam::Result beam_search(const model::Model& m, std::span<const int> src, double temperature, int width,
                         int max_len) {
    require(temperature > 0.0, "temperature must be positive");
    require(width >= 1, "beam width must be at least 1");
    const ModelScorer scorer(m, src);
    beam::Config cfg{temperature, width, max_len, seqcore::kEos, allowed_tokens()};
    return beam::search(scorer, cfg);
}

std::string greedy_decode(const model::Model& m, std::span<const int> src, int max_len) {
    const ModelScorer scorer(m, src);
    return to_residues(beam::greedy(scorer, allowed_tokens(), seqcore::kEos, max_len).tokens);
}

std::vector<Provenance> draw_starts(const GenConfig& cfg, const data_io::ContextKey& context) {
    Rng rng(splitmix64(cfg.seed ^ fnv1a64(context.first + "\t" + context.second)));
    std::vector<Provenance> starts;
    for (int i = 0; i < cfg.n_starts; ++i) {
        Provenance p;
        p.start = i;
        p.temperature = uniform_real(rng, cfg.t_min, cfg.t_max);
        p.beam = uniform_int(rng, cfg.b_min, cfg.b_max);
        starts.push_back(p);
    }
    return starts;
}

std::vector<Candidate> multi_start(const model::Model& m, const data_io::ContextKey& context, const GenConfig& cfg) {
    cfg.validate();
    const std::vector<Provenance> starts = draw_starts(cfg, context);
    const std::vector<int> src = seqcore::encode_source(context.first, context.second).ids;
    const ModelScorer scorer(m, src);

    std::vector<beam::Result> results(starts.size());
    parallel_for(starts.size(), cfg.threads, [&](std::size_t i) {
        beam::Config bc{starts[i].temperature, starts[i].beam, static_cast<int>(seqcore::kMaxTargetResidues),
                        seqcore::kEos, allowed_tokens()};
        results[i] = beam::search(scorer, bc);
    });

    std::vector<Candidate> pool;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        if (cfg.pool == PoolMode::Map) {
            pool.push_back({to_residues(results[i].best.tokens), results[i].best.logprob, 0.0, 0.0, starts[i]});
            continue;
        }
        for (const beam::Hypothesis& h : results[i].finished) {
            if (pool.size() >= cfg.candidate_cap) return pool;
            pool.push_back({to_residues(h.tokens), h.logprob, 0.0, 0.0, starts[i]});
        }
    }
    return pool;
}

std::vector<Candidate> legality_filter(std::span<const Candidate> pool,
                                       const std::unordered_set<std::string>& training, int len_min, int len_max) {
    std::vector<Candidate> out;
    for (const Candidate& c : pool) {
        const auto len = static_cast<int>(c.sequence.size());
        if (len < len_min || len > len_max || training.contains(c.sequence)) continue;
        out.push_back(c);
    }
    return out;
}

SequenceScore score_llh(const model::Model& m, std::span<const int> src, std::string_view sequence) {
    if (sequence.empty()) throw Error(ErrorKind::EmptySequence, kModule, "cannot score an empty sequence");
    const std::vector<int> tgt = seqcore::encode_target(sequence).ids;
    const std::span<const int> tgt_in(tgt.data(), tgt.size() - 1);
    const model::Mat logits = m.logits(src, tgt_in);
    SequenceScore s;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        s.logprob += logits(r, tgt[static_cast<std::size_t>(r) + 1]) - lse;
    }
    s.e_llh = -s.logprob / static_cast<double>(logits.rows());
    return s;
}

void rank(const model::Model& m, std::span<const int> src, std::vector<Candidate>& pool) {
    std::map<std::string, SequenceScore> cache;
    for (const Candidate& c : pool) cache.emplace(c.sequence, SequenceScore{});
    for (auto& [seq, score] : cache) score = score_llh(m, src, seq);
    for (Candidate& c : pool) {
        const SequenceScore& s = cache.at(c.sequence);
        c.logprob = s.logprob;
        c.e_llh = s.e_llh;
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
        if (a.e_llh != b.e_llh) return a.e_llh < b.e_llh;
        return a.sequence < b.sequence;
    });
}

std::vector<Candidate> select_diverse(std::span<const Candidate> ranked, int k, SelectionMode mode,
                                      double mmr_lambda, const metrics::SubstitutionMatrix& matrix) {
    std::vector<Candidate> distinct;
    {
        std::unordered_set<std::string> seen;
        for (const Candidate& c : ranked)
            if (seen.insert(c.sequence).second) distinct.push_back(c);
    }
    const auto limit = std::min<std::size_t>(distinct.size(), static_cast<std::size_t>(std::max(k, 0)));
    if (mode == SelectionMode::UniqueRanked) {
        distinct.resize(limit);
        return distinct;
    }

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Candidate& c : distinct) {
        lo = std::min(lo, -c.e_llh);
        hi = std::max(hi, -c.e_llh);
    }
    std::vector<double> relevance(distinct.size(), 1.0);
    if (hi > lo)
        for (std::size_t i = 0; i < distinct.size(); ++i) relevance[i] = (-distinct[i].e_llh - lo) / (hi - lo);

    std::vector<double> max_sim(distinct.size(), 0.0);
    std::vector<bool> taken(distinct.size(), false);
    std::vector<Candidate> out;
    while (out.size() < limit) {
        std::size_t best = distinct.size();
        double best_score = 0.0;
        for (std::size_t i = 0; i < distinct.size(); ++i) {
            if (taken[i]) continue;
            const double score = mmr_lambda * relevance[i] - (1.0 - mmr_lambda) * max_sim[i];
            if (best == distinct.size() || score > best_score) {
                best = i;
                best_score = score;
            }
        }
        taken[best] = true;
        out.push_back(distinct[best]);
        if (mmr_lambda < 1.0) {
            for (std::size_t i = 0; i < distinct.size(); ++i)
                if (!taken[i])
                    max_sim[i] =
                        std::max(max_sim[i], metrics::similarity_sw(distinct[i].sequence, distinct[best].sequence, matrix));
        }
    }
    return out;
}

CandidateSet run(const model::Model& m, const data_io::ContextKey& context, const GenConfig& cfg,
                 const std::unordered_set<std::string>& training) {
    cfg.validate();
    const std::vector<int> src = seqcore::encode_source(context.first, context.second).ids;
    CandidateSet set;
    set.raw = multi_start(m, context, cfg);
    set.legal = legality_filter(set.raw, training, cfg.len_min, cfg.len_max);
    rank(m, src, set.legal);
    set.selected = select_diverse(set.legal, cfg.top_k, cfg.mode, cfg.mmr_lambda);
    return set;
}

}  // namespace cdr3gen::generate
