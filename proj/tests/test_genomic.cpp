#include <gtest/gtest.h>

#include <array>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tcnbind/genomic.hpp"
#include "tcnbind/metrics.hpp"

using namespace tcnbind;

namespace {

std::array<std::size_t, 16> dinucleotide_counts(const std::string& s) {
    std::array<std::size_t, 16> counts{};
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const int a = base_index(s[i]), b = base_index(s[i + 1]);
        if (a >= 0 && b >= 0) {
            ++counts[std::size_t(a * 4 + b)];
        }
    }
    return counts;
}

std::string random_sequence(std::size_t n, Rng& rng) {
    std::string s(n, 'A');
    for (auto& c : s) {
        c = kAlphabet[uniform_index(rng, 4)];
    }
    return s;
}

SyntheticSpec four_label_spec(std::size_t n, double noise) {
    SyntheticSpec spec;
    spec.num_samples = n;
    spec.length = 120;
    spec.label_motifs = {{"MYC", "CACGTG"}, {"E2F1", "TTTCGCGC"}, {"GATA1", "AGATAAGA"}, {"CREB1", "TGACGTCA"}};
    spec.co_occurrence = {{0, 0.3, 0.1, 0.0}, {0.2, 0, 0.0, 0.1}, {0.0, 0.0, 0, 0.4}, {0.1, 0.1, 0.1, 0}};
    spec.noise = noise;
    return spec;
}

}  // namespace

TEST(ParseBed, Examples) {
    std::istringstream one("chr1\t100\t200\n");
    const auto iv = parse_bed(one, "TF1");
    ASSERT_EQ(iv.size(), 1u);
    EXPECT_EQ(iv[0], (GenomicInterval{"chr1", 100, 200, "TF1"}));

    std::istringstream header("track name=peaks\nbrowser position chr1\n# comment\nchr2\t5\t9\tpeak1\t900\n");
    const auto skipped = parse_bed(header);
    ASSERT_EQ(skipped.size(), 1u);
    EXPECT_EQ(skipped[0].chrom, "chr2");
    EXPECT_EQ(skipped[0].end, 9u);
}

TEST(ParseBed, ErrorsCarryLineNumbers) {
    std::istringstream reversed("chr1\t200\t100\n");
    try {
        parse_bed(reversed);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    std::istringstream bad("chr1\t1\t5\nchr1\tx\t10\n");
    try {
        parse_bed(bad);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    std::istringstream short_line("chr1\t100\n");
    EXPECT_THROW(parse_bed(short_line), DataError);
}

TEST(ParseFasta, Examples) {
    std::istringstream lower(">chr1\nacgt\n");
    EXPECT_EQ(parse_fasta(lower), (Genome{{"chr1", "ACGT"}}));
    std::istringstream multi(">c1 desc\nAC\nGT\n>c2\r\nnnA\r\n");
    EXPECT_EQ(parse_fasta(multi), (Genome{{"c1", "ACGT"}, {"c2", "NNA"}}));
}

TEST(ParseFasta, Errors) {
    std::istringstream headless("ACGT\n");
    EXPECT_THROW(parse_fasta(headless), DataError);
    std::istringstream duplicate(">a\nAC\n>a\nGT\n");
    EXPECT_THROW(parse_fasta(duplicate), DataError);
    std::istringstream invalid(">a\nACXT\n");
    EXPECT_THROW(parse_fasta(invalid), DataError);
}

TEST(IntersectPeaks, TwoOverlappingPeaks) {
    const PeakSets peaks = {{"TF1", {{"chr1", 100, 200, "TF1"}}}, {"TF2", {{"chr1", 150, 250, "TF2"}}}};
    const auto regions = intersect_peaks(peaks);
    const std::vector<LabeledRegion> expect = {{"chr1", 100, 150, {"TF1"}},
                                               {"chr1", 150, 200, {"TF1", "TF2"}},
                                               {"chr1", 200, 250, {"TF2"}}};
    EXPECT_EQ(regions, expect);
    EXPECT_EQ(regions[1].midpoint(), 175u);
}

TEST(IntersectPeaks, SingletonPeak) {
    const auto regions = intersect_peaks({{"TF1", {{"chr3", 10, 20, "TF1"}}}});
    ASSERT_EQ(regions.size(), 1u);
    EXPECT_EQ(regions[0], (LabeledRegion{"chr3", 10, 20, {"TF1"}}));
}

TEST(IntersectPeaks, ThreeWayOverlap) {
    const PeakSets peaks = {{"A", {{"c", 0, 10, "A"}}}, {"B", {{"c", 5, 15, "B"}}}, {"C", {{"c", 8, 9, "C"}}}};
    const auto regions = intersect_peaks(peaks);
    bool found = false;
    for (const auto& r : regions) {
        if (r.start == 8 && r.end == 9) {
            EXPECT_EQ(r.labels, (std::vector<std::string>{"A", "B", "C"}));
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(IntersectPeaks, SameTfOverlapsAreUnioned) {
    const auto regions = intersect_peaks({{"T", {{"c", 0, 10, "T"}, {"c", 5, 20, "T"}, {"c", 20, 25, "T"}}}});
    ASSERT_EQ(regions.size(), 1u);
    EXPECT_EQ(regions[0], (LabeledRegion{"c", 0, 25, {"T"}}));
}

TEST(IntersectPeaks, MatchesPerBaseCoverageOracle) {
    Rng rng(31);
    const std::vector<std::string> tfs = {"A", "B", "C", "D"};
    const std::vector<std::string> chroms = {"chr1", "chr2"};
    for (int trial = 0; trial < 200; ++trial) {
        PeakSets peaks;
        // chrom -> base -> set of covering TFs
        std::map<std::string, std::vector<std::set<std::string>>> cover;
        for (const auto& c : chroms) {
            cover[c].resize(500);
        }
        for (const auto& tf : tfs) {
            std::vector<GenomicInterval> ivs;
            const auto n = uniform_index(rng, 6);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& chrom = chroms[uniform_index(rng, 2)];
                const auto start = uniform_index(rng, 480);
                const auto end = start + 1 + uniform_index(rng, std::min<std::uint64_t>(60, 500 - start - 1));
                ivs.push_back({chrom, start, end, tf});
                for (auto b = start; b < end; ++b) {
                    cover[chrom][b].insert(tf);
                }
            }
            peaks.emplace_back(tf, ivs);
        }
        const auto regions = intersect_peaks(peaks);
        std::map<std::string, std::vector<std::set<std::string>>> got;
        for (const auto& c : chroms) {
            got[c].resize(500);
        }
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const auto& r = regions[i];
            ASSERT_LT(r.start, r.end);
            ASSERT_FALSE(r.labels.empty());
            if (i > 0 && regions[i - 1].chrom == r.chrom) {
                ASSERT_LE(regions[i - 1].end, r.start) << "sorted and disjoint";
                if (regions[i - 1].end == r.start) {
                    ASSERT_NE(regions[i - 1].labels, r.labels) << "touching equal regions are merged";
                }
            }
            for (auto b = r.start; b < r.end; ++b) {
                got[r.chrom][b] = std::set<std::string>(r.labels.begin(), r.labels.end());
            }
        }
        ASSERT_EQ(got, cover) << "trial " << trial;
    }
}

TEST(ExtractWindow, Examples) {
    const Genome g{{"c", "AACCGGTT"}};
    EXPECT_EQ(extract_window(g, {"c", 2, 3, {"T"}}, 4), std::optional<std::string>("AACC"));
    EXPECT_EQ(extract_window(g, {"c", 3, 5, {"T"}}, 5), std::optional<std::string>("CCGGT"));
    EXPECT_FALSE(extract_window(g, {"c", 0, 2, {"T"}}, 4).has_value());
    EXPECT_FALSE(extract_window(g, {"c", 6, 8, {"T"}}, 4).has_value());
    EXPECT_THROW(extract_window(g, {"missing", 0, 2, {"T"}}, 2), DataError);
}

TEST(ExtractWindow, DefaultIsOneKilobase) {
    Rng rng(1);
    const Genome g{{"c", random_sequence(5000, rng)}};
    const auto w = extract_window(g, {"c", 2000, 2100, {"T"}});
    ASSERT_TRUE(w.has_value());
    EXPECT_EQ(w->size(), 1000u);
    EXPECT_EQ(*w, g.at("c").substr(2050 - 500, 1000));
    EXPECT_FALSE(extract_window(g, {"c", 100, 200, {"T"}}).has_value());
}

TEST(BuildDataset, CountsSkippedWindows) {
    Rng rng(2);
    const Genome g{{"c", random_sequence(100, rng)}};
    const std::vector<LabeledRegion> regions = {{"c", 40, 50, {"A"}}, {"c", 0, 4, {"A", "B"}}, {"c", 60, 70, {"B"}}};
    std::size_t skipped = 0;
    const auto ds = build_dataset(g, regions, {"A", "B"}, 20, &skipped);
    EXPECT_EQ(skipped, 1u);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.samples[0].y, (std::vector<std::uint8_t>{1, 0}));
    EXPECT_EQ(ds.samples[1].y, (std::vector<std::uint8_t>{0, 1}));
    EXPECT_EQ(ds.samples[0].origin->str(), "c:35-55");
    EXPECT_EQ(ds.samples[0].sequence, g.at("c").substr(35, 20));
    EXPECT_NO_THROW(ds.validate());
}

TEST(OneHot, Examples) {
    const auto x = one_hot<float>("ACGT");
    EXPECT_EQ(std::vector<float>(x.values().begin(), x.values().end()),
              (std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}));
    const auto n = one_hot<float>("N");
    EXPECT_EQ(std::vector<float>(n.values().begin(), n.values().end()), (std::vector<float>{0, 0, 0, 0}));
    EXPECT_THROW(one_hot<float>("ACXG"), DataError);
}

TEST(OneHot, RowSumsAndArgmaxInverse) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto s = random_sequence(1 + uniform_index(rng, 80), rng);
        const auto x = one_hot<double>(s);
        EXPECT_EQ(decode_one_hot(x), s);
        s[uniform_index(rng, s.size())] = 'N';
        const auto xn = one_hot<double>(s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            double row = 0;
            for (std::size_t c = 0; c < 4; ++c) {
                row += xn.values()[i * 4 + c];
            }
            EXPECT_EQ(row, s[i] == 'N' ? 0.0 : 1.0);
        }
    }
}

TEST(DinucleotideShuffle, Examples) {
    Rng rng(4);
    EXPECT_EQ(dinucleotide_shuffle("AAAA", rng), "AAAA");
    const auto s = dinucleotide_shuffle("ACAC", rng);
    EXPECT_EQ(s.front(), 'A');
    EXPECT_EQ(s.back(), 'C');
    EXPECT_THROW(dinucleotide_shuffle("", rng), DataError);
}

TEST(DinucleotideShuffle, PreservesTransitionCountsOn1000Inputs) {
    Rng rng(5);
    std::size_t changed = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = random_sequence(2 + uniform_index(rng, 200), rng);
        const auto t = dinucleotide_shuffle(s, rng);
        ASSERT_EQ(t.size(), s.size());
        ASSERT_EQ(dinucleotide_counts(t), dinucleotide_counts(s));
        ASSERT_EQ(t.front(), s.front());
        ASSERT_EQ(t.back(), s.back());
        changed += t != s ? 1 : 0;
    }
    EXPECT_GT(changed, 900u);
}

TEST(DinucleotideShuffle, NSegmentsShuffledIndependently) {
    Rng rng(6);
    const std::string s = "ACGTTGCA" "N" "GGATCCAT" "NN" "TTAC";
    const auto t = dinucleotide_shuffle(s, rng);
    ASSERT_EQ(t.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(t[i] == 'N', s[i] == 'N');
    }
    EXPECT_EQ(dinucleotide_counts(t), dinucleotide_counts(s));
}

TEST(DinucleotideShuffle, SeedDeterministic) {
    Rng a(9), b(9);
    Rng src(1);
    const auto s = random_sequence(300, src);
    EXPECT_EQ(dinucleotide_shuffle(s, a), dinucleotide_shuffle(s, b));
}

TEST(Synthetic, NoiseFreeMotifIsPresent) {
    SyntheticSpec spec;
    spec.num_samples = 300;
    spec.length = 100;
    spec.label_motifs = {{"MYC", "CACGTG"}};
    spec.negative_fraction = 0.5;
    Rng rng(7);
    const auto ds = generate_synthetic(spec, rng);
    ASSERT_EQ(ds.size(), 300u);
    std::size_t pos = 0;
    for (const auto& s : ds.samples) {
        EXPECT_EQ(s.sequence.find("CACGTG") != std::string::npos, s.y[0] == 1);
        pos += s.y[0];
    }
    EXPECT_GT(pos, 100u);
    EXPECT_LT(pos, 200u);
}

TEST(Synthetic, FullCoOccurrence) {
    SyntheticSpec spec;
    spec.num_samples = 50;
    spec.length = 60;
    spec.label_motifs = {{"A", "CACGTG"}, {"B", "TGACTCA"}};
    spec.co_occurrence = {{0, 1}, {1, 0}};
    Rng rng(8);
    for (const auto& s : generate_synthetic(spec, rng).samples) {
        EXPECT_EQ(s.y, (std::vector<std::uint8_t>{1, 1}));
    }
}

TEST(Synthetic, LabelFrequenciesWithinBinomialBounds) {
    const auto spec = four_label_spec(2000, 0.1);
    Rng rng(9);
    const auto ds = generate_synthetic(spec, rng);
    const auto expect = expected_label_frequency(spec);
    for (std::size_t j = 0; j < 4; ++j) {
        double count = 0;
        for (const auto& s : ds.samples) {
            count += s.y[j];
        }
        const double p = expect[j];
        const double sigma = std::sqrt(2000 * p * (1 - p));
        EXPECT_NEAR(count, 2000 * p, 3 * sigma) << ds.label_names[j];
    }
}

TEST(Synthetic, NoiseFreeScanPredictsLabelsPerfectly) {
    const auto spec = four_label_spec(600, 0.0);
    Rng rng(10);
    const auto ds = generate_synthetic(spec, rng);
    EXPECT_NO_THROW(ds.validate());
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        for (const auto& s : ds.samples) {
            scores.push_back(s.sequence.find(spec.label_motifs[j].second) != std::string::npos ? 1.0 : 0.0);
            labels.push_back(s.y[j]);
        }
        EXPECT_EQ(average_precision(scores, labels), 1.0) << spec.label_motifs[j].first;
    }
}

TEST(Synthetic, PlantedPositionsAreRecorded) {
    const auto spec = four_label_spec(100, 0.0);
    Rng rng(11);
    for (const auto& s : generate_synthetic(spec, rng).samples) {
        std::size_t active = 0;
        for (auto v : s.y) {
            active += v;
        }
        EXPECT_EQ(s.planted.size(), active);
        for (const auto& p : s.planted) {
            EXPECT_EQ(s.sequence.substr(p.start, p.length), spec.label_motifs[p.label].second);
        }
    }
}

TEST(Synthetic, InfeasibleSpecIsAnError) {
    SyntheticSpec spec;
    spec.length = 5;
    spec.label_motifs = {{"A", "CACGTG"}};
    Rng rng(1);
    EXPECT_THROW(generate_synthetic(spec, rng), DataError);
    spec.length = 50;
    spec.co_occurrence = {{0.0, 1.5}};
    EXPECT_THROW(generate_synthetic(spec, rng), DataError);
}

TEST(Split, DefaultProtocolSizes) {
    const auto idx = split_indices(100, 0.8, 0.2, 1);
    EXPECT_EQ(idx.train.size(), 64u);
    EXPECT_EQ(idx.validation.size(), 16u);
    EXPECT_EQ(idx.test.size(), 20u);
}

TEST(Split, PartitionAndDeterminism) {
    for (std::uint64_t seed : {0u, 1u, 99u}) {
        const auto a = split_indices(257, 0.8, 0.2, seed);
        const auto b = split_indices(257, 0.8, 0.2, seed);
        EXPECT_EQ(a.train, b.train);
        EXPECT_EQ(a.validation, b.validation);
        EXPECT_EQ(a.test, b.test);
        std::vector<std::size_t> all;
        all.insert(all.end(), a.train.begin(), a.train.end());
        all.insert(all.end(), a.validation.begin(), a.validation.end());
        all.insert(all.end(), a.test.begin(), a.test.end());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < 257; ++i) {
            ASSERT_EQ(all[i], i);
        }
    }
    EXPECT_NE(split_indices(257, 0.8, 0.2, 1).test, split_indices(257, 0.8, 0.2, 2).test);
}

TEST(Split, DatasetSplitKeepsSamples) {
    const auto spec = four_label_spec(50, 0.0);
    Rng rng(12);
    const auto ds = generate_synthetic(spec, rng);
    const auto split = split_dataset(ds, 0.8, 0.2, 3);
    std::multiset<std::string> before, after;
    for (const auto& s : ds.samples) before.insert(s.sequence);
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
        EXPECT_EQ(part->label_names, ds.label_names);
        for (const auto& s : part->samples) after.insert(s.sequence);
    }
    EXPECT_EQ(before, after);
}

TEST(Split, Errors) {
    EXPECT_THROW(split_indices(100, 1.0, 0.2, 0), DataError);
    EXPECT_THROW(split_indices(100, 0.8, 0.0, 0), DataError);
    EXPECT_THROW(split_indices(3, 0.8, 0.2, 0), DataError);
}

TEST(DatasetFile, RoundTrip) {
    const auto spec = four_label_spec(40, 0.1);
    Rng rng(13);
    auto ds = generate_synthetic(spec, rng);
    ds.samples[3].origin = Origin{"chr7", 1200, 1320};
    std::stringstream buf;
    const Provenance prov{"abc123", 13};
    save_dataset(buf, ds, &prov);
    const auto text = buf.str();
    EXPECT_NE(text.find("#labels\tMYC,E2F1,GATA1,CREB1"), std::string::npos);
    EXPECT_NE(text.find("synthetic:0-0\t"), std::string::npos);
    const auto back = load_dataset(buf);
    EXPECT_EQ(back.label_names, ds.label_names);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.samples[i].sequence, ds.samples[i].sequence);
        EXPECT_EQ(back.samples[i].y, ds.samples[i].y);
        EXPECT_EQ(back.samples[i].origin, ds.samples[i].origin);
    }
}

TEST(DatasetFile, Errors) {
    std::istringstream unknown("#labels\tA,B\nc:0-4\tACGT\tA,C\n");
    try {
        load_dataset(unknown);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    std::istringstream empty_labels("#labels\tA,B\nc:0-4\tACGT\t\n");
    EXPECT_THROW(load_dataset(empty_labels), DataError);
    std::istringstream binary_negative("#labels\tA\nc:0-4\tACGT\t\n");
    EXPECT_EQ(load_dataset(binary_negative).samples[0].y, (std::vector<std::uint8_t>{0}));
    std::istringstream no_header("c:0-4\tACGT\tA\n");
    EXPECT_THROW(load_dataset(no_header), DataError);
    std::istringstream ragged("#labels\tA\nc:0-4\tACGT\tA\nc:0-3\tACG\tA\n");
    EXPECT_THROW(load_dataset(ragged), DataError);
    std::istringstream bad_origin("#labels\tA\nnowhere\tACGT\tA\n");
    EXPECT_THROW(load_dataset(bad_origin), DataError);
}

TEST(Batches, EncodeAndLabelMatrices) {
    EncodedDataset ds{{"A", "B"}, {}};
    ds.samples.push_back({"ACGN", {1, 0}, std::nullopt, {}});
    ds.samples.push_back({"TTTT", {0, 1}, std::nullopt, {}});
    const std::vector<std::size_t> idx = {1, 0};
    const auto x = encode_batch<float>(ds, idx);
    EXPECT_EQ(x.shape(), (Shape{2, 4, 4}));
    EXPECT_EQ(x.values()[3], 1.0f);
    EXPECT_EQ(x.values()[16 + 12 + 0], 0.0f);
    const auto y = label_batch<float>(ds, idx);
    EXPECT_EQ(std::vector<float>(y.values().begin(), y.values().end()), (std::vector<float>{0, 1, 1, 0}));
}
