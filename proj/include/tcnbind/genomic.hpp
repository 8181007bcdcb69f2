#pragma once

// Genomic inputs and datasets: BED/FASTA parsing, peak intersection, window
// extraction, one-hot encoding, dinucleotide shuffling, synthetic planted-motif
// data, splitting and the tab-separated dataset format.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tcnbind/provenance.hpp"
#include "tcnbind/random.hpp"
#include "tcnbind/tensor.hpp"

namespace tcnbind {

/// Malformed input data. Carries the 1-based line number when known.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

inline constexpr std::string_view kAlphabet = "ACGT";

/// Channel index of a base (A=0, C=1, G=2, T=3), -1 for N, -2 otherwise.
inline int base_index(char c) {
    switch (c) {
        case 'A': return 0;
        case 'C': return 1;
        case 'G': return 2;
        case 'T': return 3;
        case 'N': return -1;
        default: return -2;
    }
}

inline char complement(char c) {
    switch (c) {
        case 'A': return 'T';
        case 'C': return 'G';
        case 'G': return 'C';
        case 'T': return 'A';
        default: return c;
    }
}

inline std::string reverse_complement(std::string_view s) {
    std::string out(s.rbegin(), s.rend());
    for (auto& c : out) {
        c = complement(c);
    }
    return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto next = s.find(sep, pos);
        out.emplace_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (next == std::string_view::npos) {
            break;
        }
        pos = next + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) {
            out += sep;
        }
        out += parts[i];
    }
    return out;
}

inline std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') {
        line.remove_suffix(1);
    }
    return line;
}

// ---------------------------------------------------------------------------
// BED / FASTA
// ---------------------------------------------------------------------------

struct GenomicInterval {
    std::string chrom;
    std::uint64_t start = 0;  // 0-based inclusive
    std::uint64_t end = 0;    // exclusive
    std::string tf;

    bool operator==(const GenomicInterval&) const = default;
};

inline std::uint64_t parse_coordinate(const std::string& field, std::size_t line) {
    if (field.empty() || !std::all_of(field.begin(), field.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw DataError("coordinate '" + field + "' is not a non-negative integer", line);
    }
    try {
        return std::stoull(field);
    } catch (const std::out_of_range&) {
        throw DataError("coordinate '" + field + "' out of range", line);
    }
}

/// Tab-separated BED with at least three columns. track/browser/# lines and
/// blank lines are skipped; extra columns are ignored.
inline std::vector<GenomicInterval> parse_bed(std::istream& in, const std::string& tf = "") {
    std::vector<GenomicInterval> out;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto line = strip_cr(raw);
        if (line.empty() || line.starts_with('#') || line.starts_with("track") || line.starts_with("browser")) {
            continue;
        }
        const auto fields = split(line, '\t');
        if (fields.size() < 3) {
            throw DataError("BED record needs at least 3 tab-separated fields", lineno);
        }
        GenomicInterval iv{fields[0], parse_coordinate(fields[1], lineno), parse_coordinate(fields[2], lineno), tf};
        if (iv.chrom.empty()) {
            throw DataError("empty chromosome name", lineno);
        }
        if (iv.start >= iv.end) {
            throw DataError("interval start " + fields[1] + " is not before end " + fields[2], lineno);
        }
        out.push_back(std::move(iv));
    }
    return out;
}

using Genome = std::map<std::string, std::string>;

/// Multi-line FASTA; the header token up to the first whitespace names the
/// record. Sequences are uppercased and restricted to ACGTN.
inline Genome parse_fasta(std::istream& in) {
    Genome genome;
    std::string raw;
    std::string* current = nullptr;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto line = strip_cr(raw);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '>') {
            const auto header = line.substr(1);
            const auto end = header.find_first_of(" \t");
            const std::string name(header.substr(0, end));
            if (name.empty()) {
                throw DataError("FASTA header without a name", lineno);
            }
            auto [it, inserted] = genome.emplace(name, std::string());
            if (!inserted) {
                throw DataError("duplicate FASTA record '" + name + "'", lineno);
            }
            current = &it->second;
            continue;
        }
        if (!current) {
            throw DataError("sequence data before the first FASTA header", lineno);
        }
        for (char c : line) {
            const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            if (base_index(u) == -2) {
                throw DataError(std::string("invalid nucleotide '") + c + "'", lineno);
            }
            current->push_back(u);
        }
    }
    return genome;
}

// ---------------------------------------------------------------------------
// Peak intersection
// ---------------------------------------------------------------------------

struct LabeledRegion {
    std::string chrom;
    std::uint64_t start = 0;
    std::uint64_t end = 0;
    std::vector<std::string> labels;  // ordered as the peak sets were given

    std::uint64_t midpoint() const { return (start + end) / 2; }
    bool operator==(const LabeledRegion&) const = default;
};

using PeakSets = std::vector<std::pair<std::string, std::vector<GenomicInterval>>>;

/// Partitions the union of all peaks into maximal regions with a constant set
/// of covering TFs. Overlapping peaks of one TF are unioned first; touching
/// regions with identical label sets are merged.
inline std::vector<LabeledRegion> intersect_peaks(const PeakSets& peak_sets) {
    struct Event {
        std::uint64_t pos;
        int delta;
        std::size_t tf;
    };
    std::map<std::string, std::vector<Event>> by_chrom;
    for (std::size_t tf = 0; tf < peak_sets.size(); ++tf) {
        std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> spans;
        for (const auto& iv : peak_sets[tf].second) {
            spans[iv.chrom].emplace_back(iv.start, iv.end);
        }
        for (auto& [chrom, list] : spans) {
            std::sort(list.begin(), list.end());
            std::uint64_t cs = list.front().first, ce = list.front().second;
            auto flush = [&] {
                by_chrom[chrom].push_back({cs, +1, tf});
                by_chrom[chrom].push_back({ce, -1, tf});
            };
            for (std::size_t i = 1; i < list.size(); ++i) {
                if (list[i].first <= ce) {
                    ce = std::max(ce, list[i].second);
                } else {
                    flush();
                    cs = list[i].first;
                    ce = list[i].second;
                }
            }
            flush();
        }
    }

    std::vector<LabeledRegion> out;
    for (auto& [chrom, events] : by_chrom) {
        std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.pos < b.pos; });
        std::vector<int> cover(peak_sets.size(), 0);
        std::size_t i = 0;
        std::size_t region_begin = out.size();
        while (i < events.size()) {
            const auto pos = events[i].pos;
            while (i < events.size() && events[i].pos == pos) {
                cover[events[i].tf] += events[i].delta;
                ++i;
            }
            if (i == events.size()) {
                break;
            }
            const auto next = events[i].pos;
            std::vector<std::string> labels;
            for (std::size_t tf = 0; tf < cover.size(); ++tf) {
                if (cover[tf] > 0) {
                    labels.push_back(peak_sets[tf].first);
                }
            }
            if (labels.empty()) {
                continue;
            }
            if (out.size() > region_begin && out.back().end == pos && out.back().labels == labels) {
                out.back().end = next;
            } else {
                out.push_back({chrom, pos, next, std::move(labels)});
            }
        }
    }
    return out;
}

/// The window of `window` bases whose start is midpoint - floor(window / 2),
/// or nullopt when it would leave the chromosome.
inline std::optional<std::string> extract_window(const Genome& genome, const LabeledRegion& region,
                                                 std::size_t window = 1000) {
    auto it = genome.find(region.chrom);
    if (it == genome.end()) {
        throw DataError("chromosome '" + region.chrom + "' missing from genome");
    }
    const auto mid = region.midpoint();
    const auto half = window / 2;
    if (mid < half || mid - half + window > it->second.size()) {
        return std::nullopt;
    }
    return it->second.substr(mid - half, window);
}

// ---------------------------------------------------------------------------
// Encodings
// ---------------------------------------------------------------------------

/// [L, 4] one-hot in A, C, G, T channel order; N rows are all zero.
template <typename T = float>
Tensor<T> one_hot(std::string_view sequence) {
    if (sequence.empty()) {
        throw DataError("cannot encode an empty sequence");
    }
    std::vector<T> v(sequence.size() * 4, T(0));
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const int b = base_index(sequence[i]);
        if (b == -2) {
            throw DataError(std::string("invalid nucleotide '") + sequence[i] + "' at position " + std::to_string(i));
        }
        if (b >= 0) {
            v[i * 4 + static_cast<std::size_t>(b)] = T(1);
        }
    }
    return Tensor<T>::create({sequence.size(), 4}, std::move(v));
}

/// Inverse of one_hot; all-zero rows decode to N.
template <typename T>
std::string decode_one_hot(const Tensor<T>& x) {
    std::string out(x.extent(0), 'N');
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t c = 0; c < 4; ++c) {
            if (x.values()[i * 4 + c] > T(0.5)) {
                out[i] = kAlphabet[c];
            }
        }
    }
    return out;
}

namespace detail {

inline std::string shuffle_segment(std::string_view s, Rng& rng) {
    const std::size_t n = s.size();
    if (n < 3) {
        return std::string(s);
    }
    std::array<std::vector<int>, 4> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        edges[base_index(s[i])].push_back(base_index(s[i + 1]));
    }
    const int first = base_index(s.front());
    const int last = base_index(s.back());

    // Random last-exit edges forming an arborescence into `last`; this makes
    // the walk below an Euler path drawn uniformly at random.
    std::array<int, 4> exit_edge{-1, -1, -1, -1};
    while (true) {
        for (int v = 0; v < 4; ++v) {
            exit_edge[v] = (v == last || edges[v].empty())
                               ? -1
                               : static_cast<int>(uniform_index(rng, edges[v].size()));
        }
        bool ok = true;
        for (int v = 0; v < 4 && ok; ++v) {
            if (v == last || edges[v].empty()) {
                continue;
            }
            int cur = v;
            int steps = 0;
            while (cur != last && steps <= 4) {
                cur = edges[cur][exit_edge[cur]];
                ++steps;
            }
            ok = cur == last;
        }
        if (ok) {
            break;
        }
    }
    for (int v = 0; v < 4; ++v) {
        auto& list = edges[v];
        if (list.empty()) {
            continue;
        }
        if (exit_edge[v] >= 0) {
            std::swap(list[exit_edge[v]], list.back());
            const int keep = list.back();
            list.pop_back();
            shuffle_in_place(list, rng);
            list.push_back(keep);
        } else {
            shuffle_in_place(list, rng);
        }
    }
    std::array<std::size_t, 4> next{0, 0, 0, 0};
    std::string out;
    out.reserve(n);
    int cur = first;
    out.push_back(kAlphabet[cur]);
    for (std::size_t i = 1; i < n; ++i) {
        cur = edges[cur][next[cur]++];
        out.push_back(kAlphabet[cur]);
    }
    return out;
}

}  // namespace detail

/// Random permutation preserving every dinucleotide count and both endpoints.
/// N characters stay in place and each N-free segment is shuffled separately.
inline std::string dinucleotide_shuffle(std::string_view sequence, Rng& rng) {
    if (sequence.empty()) {
        throw DataError("cannot shuffle an empty sequence");
    }
    std::string out;
    out.reserve(sequence.size());
    std::size_t i = 0;
    while (i < sequence.size()) {
        if (sequence[i] == 'N') {
            out.push_back('N');
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < sequence.size() && sequence[j] != 'N') {
            if (base_index(sequence[j]) < 0) {
                throw DataError(std::string("invalid nucleotide '") + sequence[j] + "'");
            }
            ++j;
        }
        out += detail::shuffle_segment(sequence.substr(i, j - i), rng);
        i = j;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Origin {
    std::string chrom;
    std::uint64_t start = 0;
    std::uint64_t end = 0;

    std::string str() const { return chrom + ":" + std::to_string(start) + "-" + std::to_string(end); }
    bool operator==(const Origin&) const = default;
};

/// Where a synthetic generator put a motif instance.
struct PlantedMotif {
    std::size_t label = 0;
    std::size_t start = 0;
    std::size_t length = 0;
};

struct Sample {
    std::string sequence;
    std::vector<std::uint8_t> y;  // one 0/1 slot per label
    std::optional<Origin> origin;
    std::vector<PlantedMotif> planted;  // synthetic data only; not serialized
};

struct EncodedDataset {
    std::vector<std::string> label_names;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::size_t num_labels() const { return label_names.size(); }
    bool binary() const { return label_names.size() == 1; }
    std::size_t sequence_length() const { return samples.empty() ? 0 : samples.front().sequence.size(); }

    /// Enforces the dataset invariants; throws DataError on violation.
    void validate() const {
        if (label_names.empty()) {
            throw DataError("dataset has no labels");
        }
        std::set<std::string> unique(label_names.begin(), label_names.end());
        if (unique.size() != label_names.size()) {
            throw DataError("duplicate label names");
        }
        const auto len = sequence_length();
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            if (s.sequence.size() != len) {
                throw DataError("sample " + std::to_string(i) + " has length " + std::to_string(s.sequence.size()) +
                                ", expected " + std::to_string(len));
            }
            if (s.y.size() != label_names.size()) {
                throw DataError("sample " + std::to_string(i) + " has the wrong number of label slots");
            }
            if (!binary() && std::count(s.y.begin(), s.y.end(), 1) == 0) {
                throw DataError("sample " + std::to_string(i) + " carries no label");
            }
        }
    }

    EncodedDataset subset(const std::vector<std::size_t>& indices) const {
        EncodedDataset out{label_names, {}};
        out.samples.reserve(indices.size());
        for (auto i : indices) {
            out.samples.push_back(samples.at(i));
        }
        return out;
    }
};

/// Assembles a dataset from intersected regions, skipping windows that leave
/// the chromosome. `skipped`, when given, receives the number skipped.
inline EncodedDataset build_dataset(const Genome& genome, const std::vector<LabeledRegion>& regions,
                                    const std::vector<std::string>& label_names, std::size_t window,
                                    std::size_t* skipped = nullptr) {
    EncodedDataset ds{label_names, {}};
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < label_names.size(); ++i) {
        slot[label_names[i]] = i;
    }
    std::size_t skip = 0;
    for (const auto& r : regions) {
        auto seq = extract_window(genome, r, window);
        if (!seq) {
            ++skip;
            continue;
        }
        Sample s;
        s.sequence = std::move(*seq);
        s.y.assign(label_names.size(), 0);
        for (const auto& l : r.labels) {
            s.y.at(slot.at(l)) = 1;
        }
        const auto start = r.midpoint() - window / 2;
        s.origin = Origin{r.chrom, start, start + window};
        ds.samples.push_back(std::move(s));
    }
    if (skipped) {
        *skipped = skip;
    }
    return ds;
}

/// [B, L, 4] one-hot batch of the given samples.
template <typename T>
Tensor<T> encode_batch(const EncodedDataset& ds, std::span<const std::size_t> indices) {
    const std::size_t len = ds.sequence_length();
    std::vector<T> v(indices.size() * len * 4, T(0));
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& seq = ds.samples.at(indices[b]).sequence;
        for (std::size_t t = 0; t < len; ++t) {
            const int c = base_index(seq[t]);
            if (c >= 0) {
                v[(b * len + t) * 4 + static_cast<std::size_t>(c)] = T(1);
            }
        }
    }
    return Tensor<T>::create({indices.size(), len, 4}, std::move(v));
}

/// [B, k] label matrix of the given samples.
template <typename T>
Tensor<T> label_batch(const EncodedDataset& ds, std::span<const std::size_t> indices) {
    const std::size_t k = ds.num_labels();
    std::vector<T> v(indices.size() * k);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        for (std::size_t j = 0; j < k; ++j) {
            v[b * k + j] = static_cast<T>(ds.samples.at(indices[b]).y[j]);
        }
    }
    return Tensor<T>::create({indices.size(), k}, std::move(v));
}

// ---------------------------------------------------------------------------
// Synthetic planted-motif data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t num_samples = 1000;
    std::size_t length = 256;
    std::vector<std::pair<std::string, std::string>> label_motifs;  // name -> consensus
    /// co_occurrence[i][j]: probability that label j joins a sample whose
    /// primary label is i. Empty means no co-occurrence.
    std::vector<std::vector<double>> co_occurrence;
    double noise = 0.0;  // per-base probability of substituting a different base
    /// Fraction of label-free samples; only allowed with a single label.
    double negative_fraction = 0.0;
};

/// Marginal probability of each label under the generator's label model:
/// a uniformly chosen primary label, plus each other label j independently
/// with probability co_occurrence[primary][j].
inline std::vector<double> expected_label_frequency(const SyntheticSpec& spec) {
    const std::size_t k = spec.label_motifs.size();
    std::vector<double> freq(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        double p = 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (i != j && !spec.co_occurrence.empty()) {
                p += spec.co_occurrence[i][j];
            }
        }
        freq[j] = (1.0 - spec.negative_fraction) * p / double(k);
    }
    return freq;
}

inline EncodedDataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
    const std::size_t k = spec.label_motifs.size();
    if (k == 0) {
        throw DataError("synthetic spec needs at least one label motif");
    }
    std::size_t total_motif = 0;
    for (const auto& [name, motif] : spec.label_motifs) {
        if (motif.empty() || !std::all_of(motif.begin(), motif.end(), [](char c) { return base_index(c) >= 0; })) {
            throw DataError("motif for '" + name + "' must be a non-empty ACGT string");
        }
        if (motif.size() >= spec.length) {
            throw DataError("motif for '" + name + "' is not shorter than the sequence length");
        }
        total_motif += motif.size();
    }
    if (total_motif > spec.length / 2) {
        throw DataError("motifs cannot all be planted without crowding a sequence of length " +
                        std::to_string(spec.length));
    }
    if (!spec.co_occurrence.empty()) {
        if (spec.co_occurrence.size() != k) {
            throw DataError("co-occurrence matrix must be k x k");
        }
        for (const auto& row : spec.co_occurrence) {
            if (row.size() != k) {
                throw DataError("co-occurrence matrix must be k x k");
            }
            for (double p : row) {
                if (p < 0.0 || p > 1.0) {
                    throw DataError("co-occurrence probabilities must lie in [0, 1]");
                }
            }
        }
    }
    if (spec.noise < 0.0 || spec.noise > 1.0) {
        throw DataError("noise must lie in [0, 1]");
    }
    if (spec.negative_fraction != 0.0 && (k != 1 || spec.negative_fraction < 0.0 || spec.negative_fraction >= 1.0)) {
        throw DataError("negative_fraction is only supported for a single label, in [0, 1)");
    }

    EncodedDataset ds;
    for (const auto& [name, motif] : spec.label_motifs) {
        ds.label_names.push_back(name);
    }
    ds.samples.reserve(spec.num_samples);

    auto random_base = [&] { return kAlphabet[uniform_index(rng, 4)]; };

    while (ds.samples.size() < spec.num_samples) {
        Sample s;
        s.y.assign(k, 0);
        if (!bernoulli(rng, spec.negative_fraction)) {
            const auto primary = static_cast<std::size_t>(uniform_index(rng, k));
            s.y[primary] = 1;
            for (std::size_t j = 0; j < k; ++j) {
                if (j != primary && !spec.co_occurrence.empty() && bernoulli(rng, spec.co_occurrence[primary][j])) {
                    s.y[j] = 1;
                }
            }
        }
        s.sequence.resize(spec.length);
        for (auto& c : s.sequence) {
            c = random_base();
        }
        bool placed = true;
        for (std::size_t j = 0; j < k && placed; ++j) {
            if (!s.y[j]) {
                continue;
            }
            const auto& motif = spec.label_motifs[j].second;
            placed = false;
            for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                const auto start = static_cast<std::size_t>(uniform_index(rng, spec.length - motif.size() + 1));
                const bool overlaps = std::any_of(s.planted.begin(), s.planted.end(), [&](const PlantedMotif& p) {
                    return start < p.start + p.length && p.start < start + motif.size();
                });
                if (overlaps) {
                    continue;
                }
                for (std::size_t i = 0; i < motif.size(); ++i) {
                    char c = motif[i];
                    if (bernoulli(rng, spec.noise)) {
                        char m = c;
                        while (m == c) {
                            m = random_base();
                        }
                        c = m;
                    }
                    s.sequence[start + i] = c;
                }
                s.planted.push_back({j, start, motif.size()});
                placed = true;
            }
        }
        if (!placed) {
            continue;
        }
        // Reject samples where a consensus shows up anywhere but a planted
        // instance of its own label.
        bool clean = true;
        for (std::size_t j = 0; j < k && clean; ++j) {
            const auto& motif = spec.label_motifs[j].second;
            for (auto pos = s.sequence.find(motif); pos != std::string::npos && clean;
                 pos = s.sequence.find(motif, pos + 1)) {
                clean = std::any_of(s.planted.begin(), s.planted.end(),
                                    [&](const PlantedMotif& p) { return p.label == j && p.start == pos; });
            }
        }
        if (!clean) {
            continue;
        }
        s.origin = Origin{"synthetic", 0, 0};
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct DatasetSplit {
    EncodedDataset train;
    EncodedDataset validation;
    EncodedDataset test;
};

/// Index form of split_dataset: seeded shuffle, then floor-rounded sizes
/// train_total = floor(n * train_frac), validation = floor(train_total *
/// val_frac_of_train), test = the remainder.
struct SplitIndices {
    std::vector<std::size_t> train, validation, test;
};

inline SplitIndices split_indices(std::size_t n, double train_frac, double val_frac_of_train, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0) || !(val_frac_of_train > 0.0 && val_frac_of_train < 1.0)) {
        throw DataError("split fractions must lie in (0, 1)");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = derive_rng(seed, 0x5d1f);
    shuffle_in_place(perm, rng);
    const auto train_total = static_cast<std::size_t>(std::floor(double(n) * train_frac));
    const auto n_val = static_cast<std::size_t>(std::floor(double(train_total) * val_frac_of_train));
    SplitIndices out;
    out.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val),
                     perm.begin() + static_cast<std::ptrdiff_t>(train_total));
    out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(train_total), perm.end());
    if (out.train.empty() || out.validation.empty() || out.test.empty()) {
        throw DataError("split of " + std::to_string(n) + " samples leaves an empty partition");
    }
    return out;
}

inline DatasetSplit split_dataset(const EncodedDataset& ds, double train_frac, double val_frac_of_train,
                                  std::uint64_t seed) {
    const auto idx = split_indices(ds.size(), train_frac, val_frac_of_train, seed);
    return {ds.subset(idx.train), ds.subset(idx.validation), ds.subset(idx.test)};
}

// ---------------------------------------------------------------------------
// Dataset text format
// ---------------------------------------------------------------------------
//
//   # <free comment lines>
//   #labels<TAB>name1,name2,...
//   chrom:start-end<TAB>SEQUENCE<TAB>label1,label2

inline void save_dataset(std::ostream& os, const EncodedDataset& ds, const Provenance* provenance = nullptr) {
    if (provenance) {
        provenance->write_header(os);
    }
    os << "#labels\t" << join(ds.label_names, ',') << '\n';
    for (const auto& s : ds.samples) {
        std::vector<std::string> active;
        for (std::size_t j = 0; j < s.y.size(); ++j) {
            if (s.y[j]) {
                active.push_back(ds.label_names[j]);
            }
        }
        os << (s.origin ? s.origin->str() : std::string("synthetic:0-0")) << '\t' << s.sequence << '\t'
           << join(active, ',') << '\n';
    }
}

inline Origin parse_origin(const std::string& field, std::size_t line) {
    const auto colon = field.rfind(':');
    const auto dash = field.rfind('-');
    if (colon == std::string::npos || dash == std::string::npos || dash < colon) {
        throw DataError("origin '" + field + "' is not chrom:start-end", line);
    }
    return Origin{field.substr(0, colon), parse_coordinate(field.substr(colon + 1, dash - colon - 1), line),
                  parse_coordinate(field.substr(dash + 1), line)};
}

inline EncodedDataset load_dataset(std::istream& in) {
    EncodedDataset ds;
    std::map<std::string, std::size_t> slot;
    bool have_labels = false;
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto line = strip_cr(raw);
        if (line.empty()) {
            continue;
        }
        if (line.starts_with("#labels")) {
            if (have_labels) {
                throw DataError("second #labels header", lineno);
            }
            const auto fields = split(line, '\t');
            if (fields.size() != 2 || fields[0] != "#labels" || fields[1].empty()) {
                throw DataError("malformed #labels header", lineno);
            }
            ds.label_names = split(fields[1], ',');
            for (std::size_t i = 0; i < ds.label_names.size(); ++i) {
                if (ds.label_names[i].empty() || !slot.emplace(ds.label_names[i], i).second) {
                    throw DataError("empty or duplicate label name in header", lineno);
                }
            }
            have_labels = true;
            continue;
        }
        if (line.front() == '#') {
            continue;
        }
        if (!have_labels) {
            throw DataError("record before the #labels header", lineno);
        }
        const auto fields = split(line, '\t');
        if (fields.size() != 3) {
            throw DataError("record needs 3 tab-separated fields", lineno);
        }
        Sample s;
        s.origin = parse_origin(fields[0], lineno);
        s.sequence = fields[1];
        for (char c : s.sequence) {
            if (base_index(c) == -2) {
                throw DataError(std::string("invalid nucleotide '") + c + "'", lineno);
            }
        }
        if (s.sequence.empty()) {
            throw DataError("empty sequence", lineno);
        }
        if (!ds.empty() && s.sequence.size() != ds.sequence_length()) {
            throw DataError("sequence length " + std::to_string(s.sequence.size()) + " differs from " +
                                std::to_string(ds.sequence_length()),
                            lineno);
        }
        s.y.assign(ds.label_names.size(), 0);
        if (fields[2].empty()) {
            if (ds.label_names.size() > 1) {
                throw DataError("empty label field in a multi-label dataset", lineno);
            }
        } else {
            for (const auto& name : split(fields[2], ',')) {
                auto it = slot.find(name);
                if (it == slot.end()) {
                    throw DataError("unknown label '" + name + "'", lineno);
                }
                s.y[it->second] = 1;
            }
        }
        ds.samples.push_back(std::move(s));
    }
    if (!have_labels) {
        throw DataError("dataset has no #labels header");
    }
    return ds;
}

inline void save_dataset(const std::string& path, const EncodedDataset& ds, const Provenance* provenance = nullptr) {
    std::ofstream os(path);
    if (!os) {
        throw DataError("cannot write " + path);
    }
    save_dataset(os, ds, provenance);
}

inline EncodedDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read " + path);
    }
    return load_dataset(in);
}

}  // namespace tcnbind
