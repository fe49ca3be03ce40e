#pragma once

// Toy autoregressive scorer: logits are a seeded pseudo-random function of
// the prefix. Used to compare beam search against exhaustive enumeration.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cdr3gen/beam.hpp"
#include "cdr3gen/rng.hpp"
#include "cdr3gen/util.hpp"

namespace oracles {

class ToyScorer {
public:
    using State = std::vector<int>;

    ToyScorer(std::uint64_t seed, int vocab, double spread) : seed_(seed), vocab_(vocab), spread_(spread) {}

    State start() const { return {}; }
    State extend(const State& s, int token) const {
        State next = s;
        next.push_back(token);
        return next;
    }
    std::vector<double> logits(const State& s) const {
        std::uint64_t h = cdr3gen::splitmix64(seed_);
        for (int t : s) h = cdr3gen::splitmix64(h ^ static_cast<std::uint64_t>(t + 1));
        cdr3gen::Rng rng(h);
        std::vector<double> out(static_cast<std::size_t>(vocab_));
        for (double& v : out) v = spread_ * (2.0 * cdr3gen::uniform_open01(rng) - 1.0);
        return out;
    }

private:
    std::uint64_t seed_;
    int vocab_;
    double spread_;
};

// Enumerates every sequence over the non-EOS tokens of length <= max_len,
// closed by EOS, and returns the best (score, then lexicographic).
inline cdr3gen::beam::Hypothesis brute_force_map(const ToyScorer& s, int eos, const std::vector<int>& residues,
                                                 int max_len, double temperature) {
    cdr3gen::beam::Hypothesis best;
    best.logprob = -std::numeric_limits<double>::infinity();
    bool have = false;
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double lp) {
        const auto step = cdr3gen::beam::log_softmax(s.logits(prefix), temperature);
        const double closed = lp + step[static_cast<std::size_t>(eos)];
        if (!have || cdr3gen::beam::better(closed, prefix, best.logprob, best.tokens)) {
            best = {prefix, closed};
            have = true;
        }
        if (static_cast<int>(prefix.size()) == max_len) return;
        for (int t : residues) {
            prefix.push_back(t);
            walk(prefix, lp + step[static_cast<std::size_t>(t)]);
            prefix.pop_back();
        }
    };
    std::vector<int> prefix;
    walk(prefix, 0.0);
    return best;
}

}  // namespace oracles
