#pragma once

// Inference pipeline for one (mhc, peptide) context:
//   1. multi-start temperature beam search -> raw pool
//   2. legality filter (length bounds, not a training receptor)
//   3. E_llh rescoring at temperature 1, ascending rank
//   4. diverse selection of the top K (unique-ranked or MMR)

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cdr3gen/beam.hpp"
#include "cdr3gen/data_io.hpp"
#include "cdr3gen/metrics.hpp"
#include "cdr3gen/model.hpp"

namespace cdr3gen::generate {

enum class SelectionMode { UniqueRanked, Mmr };
enum class PoolMode { Map, Wide };

struct GenConfig {
    int n_starts = 20;
    double t_min = 0.6, t_max = 1.0;
    int b_min = 3, b_max = 10;
    int len_min = 10, len_max = 26;
    int top_k = 20;
    SelectionMode mode = SelectionMode::UniqueRanked;
    double mmr_lambda = 0.5;
    PoolMode pool = PoolMode::Map;
    std::size_t candidate_cap = 1024;
    std::uint64_t seed = 0;
    int threads = 1;

    // Throws InvalidConfig.
    void validate() const;
};

nlohmann::json config_to_json(const GenConfig& cfg);

struct Provenance {
    int start = 0;
    double temperature = 1.0;
    int beam = 1;
};

struct Candidate {
    std::string sequence;
    double search_logprob = 0.0;  // beam score at the search temperature
    double logprob = 0.0;         // teacher-forced at T = 1, EOS included
    double e_llh = 0.0;           // -logprob / (|sequence| + 1)
    Provenance provenance;
};

struct CandidateSet {
    std::vector<Candidate> raw;
    std::vector<Candidate> legal;   // ranked by e_llh
    std::vector<Candidate> selected;
};

// Tokens the decoder may emit: EOS and the 20 canonical residues, ascending.
const std::vector<int>& allowed_tokens();

// Incremental scorer over a prepared context.
class ModelScorer {
public:
    using State = model::DecodeState;
    ModelScorer(const model::Model& m, std::span<const int> src) : model_(&m), ctx_(m.prepare(src)) {}

    State start() const { return model_->begin(ctx_); }
    std::vector<double> logits(const State& s) const {
        return {s.next_logits.data(), s.next_logits.data() + s.next_logits.size()};
    }
    State extend(const State& s, int token) const { return model_->advance(ctx_, s, token); }

private:
    const model::Model* model_;
    model::EncodedContext ctx_;
};

beam::Result beam_search(const model::Model& m, std::span<const int> src, double temperature, int width,
                         int max_len = 26);
std::string greedy_decode(const model::Model& m, std::span<const int> src, int max_len = 26);

// The (T, b) draws for each start; a pure function of the seed and context.
std::vector<Provenance> draw_starts(const GenConfig& cfg, const data_io::ContextKey& context);

// Raw pool in start order. Map keeps each start's best path; Wide keeps all
// finished hypotheses of each start, capped at candidate_cap overall. Only
// search_logprob and provenance are filled in.
std::vector<Candidate> multi_start(const model::Model& m, const data_io::ContextKey& context, const GenConfig& cfg);

// Keeps length-bounded sequences absent from `training`, order preserved.
std::vector<Candidate> legality_filter(std::span<const Candidate> pool,
                                       const std::unordered_set<std::string>& training, int len_min, int len_max);

struct SequenceScore {
    double logprob = 0.0;
    double e_llh = 0.0;
};

// Teacher-forced score at T = 1, averaged over the residues plus EOS.
// Throws EmptySequence.
SequenceScore score_llh(const model::Model& m, std::span<const int> src, std::string_view sequence);

// Fills logprob / e_llh and sorts ascending by e_llh (ties: sequence).
void rank(const model::Model& m, std::span<const int> src, std::vector<Candidate>& pool);

// Expects `ranked` in rank order.
std::vector<Candidate> select_diverse(std::span<const Candidate> ranked, int k, SelectionMode mode,
                                      double mmr_lambda,
                                      const metrics::SubstitutionMatrix& matrix = metrics::SubstitutionMatrix::blosum62());

CandidateSet run(const model::Model& m, const data_io::ContextKey& context, const GenConfig& cfg,
                 const std::unordered_set<std::string>& training);

}  // namespace cdr3gen::generate
