#pragma once

// Model explanation: Integrated Gradients against dinucleotide-shuffled
// baselines, projection onto observed bases, null-calibrated seqlet calling,
// greedy strand-aware seqlet clustering into PWMs, and PWM comparison.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcnbind/genomic.hpp"
#include "tcnbind/layers.hpp"
#include "tcnbind/parallel.hpp"
#include "tcnbind/provenance.hpp"
#include "tcnbind/random.hpp"
#include "tcnbind/tensor.hpp"

namespace tcnbind {

struct AttributionMap {
    std::size_t sample = 0;
    std::string label;
    std::size_t length = 0;
    std::vector<double> scores;  // [length, 4]
    std::size_t baseline_count = 0;
    std::size_t steps = 0;
    double completeness_gap = 0.0;
    double output_delta = 0.0;  // F(x) - mean over baselines of F(x')

    double score(std::size_t t, std::size_t c) const { return scores[t * 4 + c]; }
    double total() const { return std::accumulate(scores.begin(), scores.end(), 0.0); }
    double relative_gap() const { return completeness_gap / std::max(std::abs(output_delta), 1e-6); }
};

namespace detail {

template <typename T>
void require_frozen(const TcnModel<T>& model) {
    for (const auto& [name, t] : model.parameters()) {
        if (t.requires_grad()) {
            throw std::invalid_argument("attribution needs a frozen model (set_trainable(false))");
        }
    }
}

template <typename T>
std::vector<double> logits_for(const TcnModel<T>& model, const std::vector<const Tensor<T>*>& inputs,
                               std::size_t label_index) {
    NoGradGuard guard;
    const std::size_t len = inputs.front()->extent(0);
    std::vector<T> v;
    v.reserve(inputs.size() * len * 4);
    for (const auto* x : inputs) {
        v.insert(v.end(), x->values().begin(), x->values().end());
    }
    const auto logits = model.forward(Tensor<T>::create({inputs.size(), len, 4}, std::move(v)));
    std::vector<double> out(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        out[i] = logits.values()[i * model.config().num_labels + label_index];
    }
    return out;
}

}  // namespace detail

/// Midpoint-rule Integrated Gradients of the label's pre-sigmoid logit,
/// averaged over baselines. `chunk` bounds how many path points share one
/// forward/backward pass.
template <typename T>
AttributionMap integrated_gradients(const TcnModel<T>& model, const Tensor<T>& x, std::size_t label_index,
                                    const std::vector<Tensor<T>>& baselines, std::size_t steps,
                                    std::size_t chunk = 100) {
    detail::require_frozen(model);
    if (label_index >= model.config().num_labels) {
        throw std::out_of_range("label index " + std::to_string(label_index) + " out of range");
    }
    if (steps == 0 || baselines.empty()) {
        throw std::invalid_argument("integrated gradients needs steps >= 1 and at least one baseline");
    }
    if (x.ndim() != 2) {
        throw ShapeError("integrated gradients expects a [L,4] input");
    }
    for (const auto& b : baselines) {
        if (b.shape() != x.shape()) {
            throw ShapeError("baseline shape " + shape_str(b.shape()) + " differs from input " + shape_str(x.shape()));
        }
    }
    const std::size_t len = x.extent(0);
    const std::size_t width = x.extent(1);
    const std::size_t n = len * width;
    const std::size_t points = steps * baselines.size();
    chunk = std::max<std::size_t>(1, chunk);

    // Per-baseline sum of path gradients.
    std::vector<double> grad_sum(baselines.size() * n, 0.0);
    const auto xv = x.values();
    for (std::size_t first = 0; first < points; first += chunk) {
        const std::size_t count = std::min(chunk, points - first);
        std::vector<T> batch(count * n);
        for (std::size_t p = 0; p < count; ++p) {
            const std::size_t m = (first + p) / steps;
            const std::size_t s = (first + p) % steps;
            const double alpha = (double(s) + 0.5) / double(steps);
            const auto bv = baselines[m].values();
            for (std::size_t i = 0; i < n; ++i) {
                batch[p * n + i] = static_cast<T>(double(bv[i]) + alpha * (double(xv[i]) - double(bv[i])));
            }
        }
        auto input = Tensor<T>::create({count, len, width}, std::move(batch), true);
        auto target = sum(select_column(model.forward(input), label_index));
        backward(target);
        const auto g = input.grad();
        for (std::size_t p = 0; p < count; ++p) {
            const std::size_t m = (first + p) / steps;
            double* dst = &grad_sum[m * n];
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] += g[p * n + i];
            }
        }
    }

    AttributionMap map;
    map.length = len;
    map.steps = steps;
    map.baseline_count = baselines.size();
    map.scores.assign(n, 0.0);
    for (std::size_t m = 0; m < baselines.size(); ++m) {
        const auto bv = baselines[m].values();
        for (std::size_t i = 0; i < n; ++i) {
            map.scores[i] += (double(xv[i]) - double(bv[i])) * grad_sum[m * n + i] / double(steps);
        }
    }
    for (auto& s : map.scores) {
        s /= double(baselines.size());
    }

    std::vector<const Tensor<T>*> inputs{&x};
    for (const auto& b : baselines) {
        inputs.push_back(&b);
    }
    const auto f = detail::logits_for(model, inputs, label_index);
    double delta = 0.0;
    for (std::size_t m = 1; m < f.size(); ++m) {
        delta += f[0] - f[m];
    }
    map.output_delta = delta / double(baselines.size());
    map.completeness_gap = std::abs(map.total() - map.output_delta);
    return map;
}

/// `count` dinucleotide shuffles of `sequence`, one-hot encoded.
template <typename T>
std::vector<Tensor<T>> shuffled_baselines(const std::string& sequence, std::size_t count, Rng& rng) {
    std::vector<Tensor<T>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(one_hot<T>(dinucleotide_shuffle(sequence, rng)));
    }
    return out;
}

/// score[t] = sum_c map[t, c] * x[t, c]; zero at N positions.
template <typename T>
std::vector<double> actual_base_scores(const AttributionMap& map, const Tensor<T>& x) {
    if (x.ndim() != 2 || x.extent(0) != map.length || x.extent(1) != 4) {
        throw ShapeError("actual_base_scores: input does not match the attribution map");
    }
    std::vector<double> out(map.length, 0.0);
    for (std::size_t t = 0; t < map.length; ++t) {
        for (std::size_t c = 0; c < 4; ++c) {
            out[t] += map.score(t, c) * double(x.values()[t * 4 + c]);
        }
    }
    return out;
}

struct IgOptions {
    std::size_t steps = 50;
    std::size_t baselines = 10;
    std::size_t chunk = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Attributions for dataset samples `indices` towards one label. Baselines for
/// sample i come from a stream derived from (seed, i), so results do not
/// depend on the thread count.
template <typename T>
std::vector<AttributionMap> attribute_samples(const TcnModel<T>& model, const EncodedDataset& ds,
                                              const std::vector<std::size_t>& indices, std::size_t label_index,
                                              const IgOptions& opt) {
    std::vector<AttributionMap> out(indices.size());
    parallel_for(indices.size(), opt.threads, [&](std::size_t k) {
        const auto& seq = ds.samples.at(indices[k]).sequence;
        auto rng = derive_rng(opt.seed, indices[k]);
        const auto baselines = shuffled_baselines<T>(seq, opt.baselines, rng);
        out[k] = integrated_gradients(model, one_hot<T>(seq), label_index, baselines, opt.steps, opt.chunk);
        out[k].sample = indices[k];
        out[k].label = ds.label_names.at(label_index);
    });
    return out;
}

/// One block per map: `>sample_id label completeness_gap`, then L rows of
/// four tab-separated scores.
inline void write_attributions(std::ostream& os, const std::vector<AttributionMap>& maps,
                               const Provenance* provenance = nullptr) {
    if (provenance) {
        provenance->write_header(os);
    }
    os << std::setprecision(8);
    for (const auto& m : maps) {
        os << '>' << m.sample << ' ' << m.label << ' ' << m.completeness_gap << '\n';
        for (std::size_t t = 0; t < m.length; ++t) {
            os << m.score(t, 0) << '\t' << m.score(t, 1) << '\t' << m.score(t, 2) << '\t' << m.score(t, 3) << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Seqlets
// ---------------------------------------------------------------------------

struct Seqlet {
    std::size_t sample = 0;  // index into the track list
    std::size_t start = 0;
    std::size_t length = 0;
    std::vector<double> scores;  // actual-base scores inside the window
    std::string label;

    double magnitude() const {
        double s = 0.0;
        for (double v : scores) {
            s += std::abs(v);
        }
        return s;
    }
};

namespace detail {

inline std::vector<double> window_sums(const std::vector<double>& track, std::size_t window) {
    std::vector<double> out;
    if (track.size() < window) {
        return out;
    }
    out.reserve(track.size() - window + 1);
    for (std::size_t s = 0; s + window <= track.size(); ++s) {
        double acc = 0.0;
        for (std::size_t i = s; i < s + window; ++i) {
            acc += std::abs(track[i]);
        }
        out.push_back(acc);
    }
    return out;
}

}  // namespace detail

/// mean + sigma * stddev of sliding-window |score| sums over the null tracks.
inline double null_threshold(const std::vector<std::vector<double>>& null_tracks, std::size_t window,
                             double sigma = 3.0) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& t : null_tracks) {
        for (double v : detail::window_sums(t, window)) {
            sum += v;
            sq += v * v;
            ++n;
        }
    }
    if (n == 0) {
        throw std::invalid_argument("null tracks are shorter than the seqlet window");
    }
    const double mean = sum / double(n);
    const double var = std::max(0.0, sq / double(n) - mean * mean);
    return mean + sigma * std::sqrt(var);
}

/// Windows whose |score| sum exceeds the null threshold, thinned by greedy
/// non-maximum suppression. Among equal sums the window whose mass is most
/// centred wins.
inline std::vector<Seqlet> extract_seqlets(const std::vector<std::vector<double>>& tracks, std::size_t window,
                                           const std::vector<std::vector<double>>& null_tracks,
                                           const std::string& label = "", double sigma = 3.0) {
    if (tracks.empty()) {
        throw std::invalid_argument("extract_seqlets: no tracks");
    }
    if (null_tracks.empty()) {
        throw std::invalid_argument("extract_seqlets: no null tracks");
    }
    if (window == 0) {
        throw std::invalid_argument("extract_seqlets: window must be positive");
    }
    for (const auto& t : tracks) {
        if (t.size() < window) {
            throw std::invalid_argument("extract_seqlets: window longer than a track");
        }
    }
    const double threshold = null_threshold(null_tracks, window, sigma);

    struct Candidate {
        std::size_t track, start;
        double sum, offcentre;
    };
    std::vector<Candidate> cands;
    const double mid = 0.5 * double(window - 1);
    for (std::size_t k = 0; k < tracks.size(); ++k) {
        const auto sums = detail::window_sums(tracks[k], window);
        for (std::size_t s = 0; s < sums.size(); ++s) {
            if (!(sums[s] > threshold)) {
                continue;
            }
            double moment = 0.0;
            for (std::size_t i = 0; i < window; ++i) {
                moment += std::abs(tracks[k][s + i]) * (double(i) - mid);
            }
            cands.push_back({k, s, sums[s], std::abs(moment) / sums[s]});
        }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.sum != b.sum) {
            return a.sum > b.sum;
        }
        if (a.offcentre != b.offcentre) {
            return a.offcentre < b.offcentre;
        }
        return a.track != b.track ? a.track < b.track : a.start < b.start;
    });
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> taken(tracks.size());
    std::vector<Seqlet> out;
    for (const auto& c : cands) {
        auto& spans = taken[c.track];
        const bool overlaps = std::any_of(spans.begin(), spans.end(), [&](const auto& sp) {
            return c.start < sp.first + window && sp.first < c.start + window;
        });
        if (overlaps) {
            continue;
        }
        spans.emplace_back(c.start, c.start + window);
        Seqlet s{c.track, c.start, window, {}, label};
        s.scores.assign(tracks[c.track].begin() + static_cast<std::ptrdiff_t>(c.start),
                        tracks[c.track].begin() + static_cast<std::ptrdiff_t>(c.start + window));
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PWMs
// ---------------------------------------------------------------------------

struct Pwm {
    std::size_t width = 0;
    std::vector<double> probs;  // [width, 4]
    std::vector<double> ic;     // bits per position
    std::size_t members = 0;

    double p(std::size_t row, std::size_t c) const { return probs[row * 4 + c]; }

    std::string consensus() const {
        std::string out;
        for (std::size_t r = 0; r < width; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < 4; ++c) {
                if (p(r, c) > p(r, best)) {
                    best = c;
                }
            }
            out.push_back(kAlphabet[best]);
        }
        return out;
    }

    /// Consensus of the highest-information stretch whose rows reach `min_ic`.
    std::string core_consensus(double min_ic = 1.0) const {
        const auto full = consensus();
        std::size_t best_start = 0, best_len = 0;
        for (std::size_t i = 0; i < width;) {
            if (ic[i] < min_ic) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < width && ic[j] >= min_ic) {
                ++j;
            }
            if (j - i > best_len) {
                best_start = i;
                best_len = j - i;
            }
            i = j;
        }
        return full.substr(best_start, best_len);
    }
};

inline double information_content(const double* row) {
    double ic = 2.0;
    for (std::size_t c = 0; c < 4; ++c) {
        if (row[c] > 0.0) {
            ic += row[c] * std::log2(row[c]);
        }
    }
    return std::clamp(ic, 0.0, 2.0);
}

/// Normalizes rows of a [w, 4] weight matrix (empty rows become uniform).
inline Pwm make_pwm(std::vector<double> weights, std::size_t members = 0) {
    Pwm pwm;
    pwm.width = weights.size() / 4;
    pwm.members = members;
    for (std::size_t r = 0; r < pwm.width; ++r) {
        double* row = &weights[r * 4];
        const double total = row[0] + row[1] + row[2] + row[3];
        for (std::size_t c = 0; c < 4; ++c) {
            row[c] = total > 0.0 ? row[c] / total : 0.25;
        }
        pwm.ic.push_back(information_content(row));
    }
    pwm.probs = std::move(weights);
    return pwm;
}

/// PWM of a consensus string where each base keeps probability 1 - noise and
/// the other three share the rest.
inline Pwm pwm_from_consensus(const std::string& consensus, double noise = 0.0) {
    std::vector<double> w(consensus.size() * 4, noise / 3.0);
    for (std::size_t r = 0; r < consensus.size(); ++r) {
        const int b = base_index(consensus[r]);
        if (b < 0) {
            throw DataError("consensus must be ACGT");
        }
        w[r * 4 + static_cast<std::size_t>(b)] = 1.0 - noise;
    }
    return make_pwm(std::move(w), 1);
}

inline Pwm reverse_complement(const Pwm& pwm) {
    std::vector<double> w(pwm.probs.size());
    for (std::size_t r = 0; r < pwm.width; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            w[(pwm.width - 1 - r) * 4 + (3 - c)] = pwm.p(r, c);
        }
    }
    return make_pwm(std::move(w), pwm.members);
}

/// Pearson correlation; 0 when either side has zero variance.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    if (n == 0 || b.size() != n) {
        return 0.0;
    }
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / double(n);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / double(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 1e-300 || sbb <= 1e-300) {
        return 0.0;
    }
    return sab / std::sqrt(saa * sbb);
}

/// Best Pearson correlation of the shorter PWM slid (fully contained) over the
/// longer, on both strands.
inline double pwm_similarity(const Pwm& a, const Pwm& b) {
    const Pwm& longer = a.width >= b.width ? a : b;
    const Pwm& shorter = a.width >= b.width ? b : a;
    if (shorter.width == 0) {
        return 0.0;
    }
    double best = -1.0;
    for (const auto& s : {shorter, reverse_complement(shorter)}) {
        for (std::size_t off = 0; off + s.width <= longer.width; ++off) {
            std::vector<double> x(longer.probs.begin() + static_cast<std::ptrdiff_t>(off * 4),
                                  longer.probs.begin() + static_cast<std::ptrdiff_t>((off + s.width) * 4));
            best = std::max(best, pearson(x, s.probs));
        }
    }
    return best;
}

namespace detail {

/// [w, 4] contribution matrix of a seqlet: observed base weighted by its score.
inline std::vector<double> contribution_matrix(const Seqlet& s, const std::string& sequence, bool revcomp) {
    const std::size_t w = s.length;
    std::vector<double> m(w * 4, 0.0);
    for (std::size_t q = 0; q < w; ++q) {
        const std::size_t src = revcomp ? w - 1 - q : q;
        int b = base_index(sequence[s.start + src]);
        if (b < 0) {
            continue;
        }
        if (revcomp) {
            b = 3 - b;
        }
        m[q * 4 + static_cast<std::size_t>(b)] = s.scores[src];
    }
    return m;
}

struct Alignment {
    double correlation = -1.0;
    long shift = 0;  // candidate row q aligns with seed row q + shift
    bool revcomp = false;
};

inline Alignment best_alignment(const std::vector<double>& seed, const std::vector<std::vector<double>>& strands,
                                std::size_t w) {
    Alignment best;
    const long max_shift = static_cast<long>(w / 2);
    for (int strand = 0; strand < 2; ++strand) {
        const auto& cand = strands[strand];
        for (long shift = -max_shift; shift <= max_shift; ++shift) {
            std::vector<double> a, b;
            for (long p = 0; p < static_cast<long>(w); ++p) {
                const long q = p - shift;
                if (q < 0 || q >= static_cast<long>(w)) {
                    continue;
                }
                for (std::size_t c = 0; c < 4; ++c) {
                    a.push_back(seed[static_cast<std::size_t>(p) * 4 + c]);
                    b.push_back(cand[static_cast<std::size_t>(q) * 4 + c]);
                }
            }
            const double r = pearson(a, b);
            if (r > best.correlation) {
                best = {r, shift, strand == 1};
            }
        }
    }
    return best;
}

}  // namespace detail

/// Greedy clustering: the strongest unassigned seqlet seeds a cluster and
/// absorbs every unassigned seqlet whose best shifted, strand-aware alignment
/// correlation exceeds `min_correlation`. Each cluster yields a PWM from the
/// aligned one-hot rows weighted by seqlet magnitude. Returned largest first.
inline std::vector<Pwm> cluster_and_build_pwm(const std::vector<Seqlet>& seqlets,
                                              const std::vector<std::string>& sequences,
                                              double min_correlation = 0.7) {
    if (seqlets.empty()) {
        return {};
    }
    const std::size_t w = seqlets.front().length;
    for (const auto& s : seqlets) {
        if (s.length != w) {
            throw std::invalid_argument("seqlets must share one length");
        }
        if (s.sample >= sequences.size() || s.start + w > sequences[s.sample].size()) {
            throw std::out_of_range("seqlet lies outside its sequence");
        }
    }
    std::vector<std::size_t> order(seqlets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return seqlets[a].magnitude() > seqlets[b].magnitude(); });
    std::vector<std::vector<std::vector<double>>> strands(seqlets.size());
    for (std::size_t i = 0; i < seqlets.size(); ++i) {
        const auto& seq = sequences[seqlets[i].sample];
        strands[i] = {detail::contribution_matrix(seqlets[i], seq, false),
                      detail::contribution_matrix(seqlets[i], seq, true)};
    }

    std::vector<bool> assigned(seqlets.size(), false);
    std::vector<Pwm> out;
    for (auto seed : order) {
        if (assigned[seed]) {
            continue;
        }
        assigned[seed] = true;
        std::vector<std::pair<std::size_t, detail::Alignment>> members{{seed, {1.0, 0, false}}};
        for (auto other : order) {
            if (assigned[other]) {
                continue;
            }
            const auto al = detail::best_alignment(strands[seed][0], strands[other], w);
            if (al.correlation > min_correlation) {
                assigned[other] = true;
                members.emplace_back(other, al);
            }
        }
        std::vector<double> weights(w * 4, 0.0);
        for (const auto& [idx, al] : members) {
            const auto& s = seqlets[idx];
            const auto& seq = sequences[s.sample];
            const double weight = s.magnitude();
            for (long p = 0; p < static_cast<long>(w); ++p) {
                const long q = p - al.shift;  // row in the candidate's oriented window
                const long pos = al.revcomp ? static_cast<long>(s.start + w) - 1 - q : static_cast<long>(s.start) + q;
                if (pos < 0 || pos >= static_cast<long>(seq.size())) {
                    continue;
                }
                int b = base_index(seq[static_cast<std::size_t>(pos)]);
                if (b < 0) {
                    continue;
                }
                if (al.revcomp) {
                    b = 3 - b;
                }
                weights[static_cast<std::size_t>(p) * 4 + static_cast<std::size_t>(b)] += weight;
            }
        }
        out.push_back(make_pwm(std::move(weights), members.size()));
    }
    std::stable_sort(out.begin(), out.end(), [](const Pwm& a, const Pwm& b) { return a.members > b.members; });
    return out;
}

/// MEME-like text: `MOTIF name`, `w= width`, width rows of probabilities,
/// then information content as comment lines.
inline void write_pwms(std::ostream& os, const std::vector<std::pair<std::string, Pwm>>& motifs,
                       const Provenance* provenance = nullptr) {
    if (provenance) {
        provenance->write_header(os);
    }
    os << std::fixed << std::setprecision(6);
    for (const auto& [name, pwm] : motifs) {
        os << "MOTIF " << name << '\n' << "w= " << pwm.width << '\n';
        for (std::size_t r = 0; r < pwm.width; ++r) {
            os << pwm.p(r, 0) << ' ' << pwm.p(r, 1) << ' ' << pwm.p(r, 2) << ' ' << pwm.p(r, 3) << '\n';
        }
        os << "# members " << pwm.members << " consensus " << pwm.consensus() << '\n';
        os << "# ic";
        for (double v : pwm.ic) {
            os << ' ' << v;
        }
        os << "\n\n";
    }
}

// ---------------------------------------------------------------------------
// End-to-end motif discovery for one label
// ---------------------------------------------------------------------------

struct MotifOptions {
    IgOptions ig{20, 5, 100, 0, 1};
    std::size_t window = 15;
    double sigma = 3.0;
    double min_correlation = 0.7;
    std::size_t max_samples = 200;
    std::size_t null_samples = 50;
};

struct LabelMotifs {
    std::string label;
    std::vector<Seqlet> seqlets;
    std::vector<std::size_t> seqlet_samples;  // dataset index of each seqlet
    std::vector<Pwm> pwms;
};

/// Attributes positive samples of one label, calls seqlets against null
/// tracks from dinucleotide-shuffled copies of those samples, and clusters.
template <typename T>
LabelMotifs discover_motifs(const TcnModel<T>& model, const EncodedDataset& ds, std::size_t label_index,
                            const MotifOptions& opt) {
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < ds.size() && positives.size() < opt.max_samples; ++i) {
        if (ds.samples[i].y.at(label_index)) {
            positives.push_back(i);
        }
    }
    LabelMotifs result;
    result.label = ds.label_names.at(label_index);
    if (positives.empty()) {
        return result;
    }
    const auto maps = attribute_samples(model, ds, positives, label_index, opt.ig);
    std::vector<std::vector<double>> tracks;
    std::vector<std::string> sequences;
    for (std::size_t k = 0; k < positives.size(); ++k) {
        const auto& seq = ds.samples[positives[k]].sequence;
        tracks.push_back(actual_base_scores(maps[k], one_hot<T>(seq)));
        sequences.push_back(seq);
    }

    EncodedDataset null_ds{ds.label_names, {}};
    auto rng = derive_rng(opt.ig.seed, 0x6e756c6c);
    for (std::size_t k = 0; k < std::min(opt.null_samples, positives.size()); ++k) {
        Sample s = ds.samples[positives[k]];
        s.sequence = dinucleotide_shuffle(s.sequence, rng);
        null_ds.samples.push_back(std::move(s));
    }
    std::vector<std::size_t> null_idx(null_ds.size());
    std::iota(null_idx.begin(), null_idx.end(), std::size_t{0});
    const auto null_maps = attribute_samples(model, null_ds, null_idx, label_index, opt.ig);
    std::vector<std::vector<double>> null_tracks;
    for (std::size_t k = 0; k < null_idx.size(); ++k) {
        null_tracks.push_back(actual_base_scores(null_maps[k], one_hot<T>(null_ds.samples[k].sequence)));
    }

    result.seqlets = extract_seqlets(tracks, opt.window, null_tracks, result.label, opt.sigma);
    for (const auto& s : result.seqlets) {
        result.seqlet_samples.push_back(positives[s.sample]);
    }
    result.pwms = cluster_and_build_pwm(result.seqlets, sequences, opt.min_correlation);
    return result;
}

}  // namespace tcnbind
