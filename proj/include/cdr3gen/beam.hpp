#pragma once

// Length-capped temperature beam search over any incremental scorer.
//
// Each step expands every alive hypothesis by every allowed token, scoring
// with log_softmax(logits / T) over the full logit row. The best `width`
// expansions survive, ordered by log-probability and then by token sequence.
// Expansions ending in EOS are finished; a hypothesis that reaches max_len
// tokens can only be extended by EOS. The search stops when nothing is alive
// or the best finished score is at least the best alive score (scores only
// decrease, so no alive hypothesis can overtake it).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace cdr3gen::beam {

template <class S>
concept Scorer = requires(const S& s, const typename S::State& st, int token) {
    { s.start() } -> std::same_as<typename S::State>;
    { s.logits(st) } -> std::convertible_to<std::vector<double>>;
    { s.extend(st, token) } -> std::same_as<typename S::State>;
};

struct Config {
    double temperature = 1.0;
    int width = 1;
    int max_len = 26;        // tokens before the closing EOS
    int eos = 3;
    std::vector<int> allowed;  // must contain eos
};

struct Hypothesis {
    std::vector<int> tokens;  // emitted tokens, EOS excluded
    double logprob = 0.0;     // temperature-scaled, EOS included
};

struct Result {
    Hypothesis best;
    std::vector<Hypothesis> finished;  // best first
};

// log_softmax(logits / T).
inline std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
    std::vector<double> out(logits.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] / temperature;
        m = std::max(m, out[i]);
    }
    double sum = 0.0;
    for (double v : out) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    for (double& v : out) v -= lse;
    return out;
}

// Higher score first, then lexicographically smaller token sequence.
inline bool better(double score_a, const std::vector<int>& a, double score_b, const std::vector<int>& b) {
    if (score_a != score_b) return score_a > score_b;
    return a < b;
}

template <Scorer S>
Result search(const S& scorer, const Config& cfg) {
    using State = typename S::State;
    struct Alive {
        std::vector<int> tokens;
        double logprob;
        State state;
    };
    struct Expansion {
        std::size_t parent;
        int token;
        double logprob;
        std::vector<int> tokens;  // including `token`
    };

    Result result;
    std::vector<Alive> alive;
    alive.push_back({{}, 0.0, scorer.start()});
    const std::vector<int> eos_only{cfg.eos};

    while (!alive.empty()) {
        std::vector<Expansion> expansions;
        for (std::size_t a = 0; a < alive.size(); ++a) {
            const std::vector<double> logits = scorer.logits(alive[a].state);
            const std::vector<double> lp = log_softmax(logits, cfg.temperature);
            const bool capped = static_cast<int>(alive[a].tokens.size()) >= cfg.max_len;
            for (int token : capped ? eos_only : cfg.allowed) {
                Expansion e{a, token, alive[a].logprob + lp[static_cast<std::size_t>(token)], alive[a].tokens};
                e.tokens.push_back(token);
                expansions.push_back(std::move(e));
            }
        }
        const std::size_t keep = std::min<std::size_t>(expansions.size(), static_cast<std::size_t>(cfg.width));
        std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep), expansions.end(),
                          [](const Expansion& x, const Expansion& y) {
                              return better(x.logprob, x.tokens, y.logprob, y.tokens);
                          });
        expansions.resize(keep);

        std::vector<Alive> next;
        for (Expansion& e : expansions) {
            if (e.token == cfg.eos) {
                e.tokens.pop_back();
                result.finished.push_back({std::move(e.tokens), e.logprob});
            } else {
                State st = scorer.extend(alive[e.parent].state, e.token);
                next.push_back({std::move(e.tokens), e.logprob, std::move(st)});
            }
        }
        alive = std::move(next);

        if (!alive.empty() && !result.finished.empty()) {
            double best_finished = -std::numeric_limits<double>::infinity();
            for (const auto& h : result.finished) best_finished = std::max(best_finished, h.logprob);
            double best_alive = -std::numeric_limits<double>::infinity();
            for (const auto& h : alive) best_alive = std::max(best_alive, h.logprob);
            if (best_finished >= best_alive) break;
        }
    }

    std::sort(result.finished.begin(), result.finished.end(), [](const Hypothesis& x, const Hypothesis& y) {
        return better(x.logprob, x.tokens, y.logprob, y.tokens);
    });
    if (!result.finished.empty()) result.best = result.finished.front();
    return result;
}

// Argmax over the allowed tokens at every step (lowest id on ties), closed
// with EOS at max_len. Scores are at temperature 1.
template <Scorer S>
Hypothesis greedy(const S& scorer, std::span<const int> allowed, int eos, int max_len) {
    Hypothesis h;
    typename S::State state = scorer.start();
    while (true) {
        const std::vector<double> lp = log_softmax(scorer.logits(state), 1.0);
        int pick = eos;
        if (static_cast<int>(h.tokens.size()) < max_len) {
            pick = -1;
            for (int t : allowed)
                if (pick < 0 || lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(pick)] ||
                    (lp[static_cast<std::size_t>(t)] == lp[static_cast<std::size_t>(pick)] && t < pick))
                    pick = t;
        }
        h.logprob += lp[static_cast<std::size_t>(pick)];
        if (pick == eos) return h;
        h.tokens.push_back(pick);
        state = scorer.extend(state, pick);
    }
}

}  // namespace cdr3gen::beam
