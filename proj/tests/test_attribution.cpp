#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "tcnbind/attribution.hpp"
#include "tcnbind/training.hpp"

using namespace tcnbind;

namespace {

// One causal conv spanning the whole input feeds the MLP; large positive
// biases keep every ReLU active on [0, 2]^L inputs, so the logit is affine.
TcnModel<double> affine_model(std::size_t len, std::size_t labels, std::uint64_t seed) {
    ModelConfig c;
    c.input_length = len;
    c.num_labels = labels;
    c.cnn_layers = 1;
    c.cnn_kernels = 6;
    c.cnn_kernel_size = len;
    c.tcn_blocks = 0;
    c.mlp_hidden = 5;
    c.dropout = 0.0;
    Rng rng(seed);
    auto model = TcnModel<double>::initialize(c, rng);
    for (auto& [name, t] : model.parameters()) {
        if (name.ends_with(".bias") && name != "mlp.out.bias") {
            for (auto& v : t.mutable_values()) {
                v = 50.0;
            }
        }
    }
    model.set_trainable(false);
    return model;
}

TcnModel<double> small_model(std::size_t len, std::uint64_t seed) {
    ModelConfig c;
    c.input_length = len;
    c.num_labels = 2;
    c.cnn_layers = 1;
    c.cnn_kernels = 8;
    c.cnn_kernel_size = 4;
    c.tcn_blocks = 2;
    c.tcn_channels = 8;
    c.kernel_size = 4;
    c.mlp_hidden = 8;
    c.dropout = 0.0;
    Rng rng(seed);
    auto model = TcnModel<double>::initialize(c, rng);
    model.set_trainable(false);
    return model;
}

// Gradient of one logit with respect to the input, by reverse mode.
std::vector<double> input_gradient(const TcnModel<double>& model, const TensorD& x, std::size_t label) {
    auto leaf = x.detach(true);
    std::vector<double> mask(model.config().num_labels, 0.0);
    mask[label] = 1.0;
    backward(sum(mul(model.forward(leaf), TensorD::create({mask.size()}, mask))));
    return {leaf.grad().begin(), leaf.grad().end()};
}

double logit(const TcnModel<double>& model, const TensorD& x, std::size_t label) {
    NoGradGuard guard;
    return model.forward(x).values()[label];
}

std::string random_sequence(std::size_t len, Rng& rng) {
    std::string s(len, 'A');
    for (auto& ch : s) {
        ch = "ACGT"[uniform_index(rng, 4)];
    }
    return s;
}

TensorD random_input(std::size_t len, Rng& rng) {
    std::vector<double> v(len * 4);
    for (auto& x : v) {
        x = uniform(rng, 0, 1);
    }
    return TensorD::create({len, 4}, v);
}

std::vector<std::vector<double>> noise_tracks(std::size_t n, std::size_t len, double scale, Rng& rng) {
    std::vector<std::vector<double>> out(n, std::vector<double>(len));
    for (auto& t : out) {
        for (auto& v : t) {
            v = uniform(rng, -scale, scale);
        }
    }
    return out;
}

}  // namespace

TEST(IntegratedGradients, AffineModelHasClosedForm) {
    const std::size_t len = 12;
    const auto model = affine_model(len, 3, 1);
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_input(len, rng);
        const std::vector<TensorD> baselines = {random_input(len, rng), random_input(len, rng)};
        const std::size_t label = trial % 3;
        const auto w = input_gradient(model, x, label);
        const auto map = integrated_gradients(model, x, label, baselines, 7);
        ASSERT_EQ(map.scores.size(), len * 4);
        for (std::size_t i = 0; i < len * 4; ++i) {
            const double mean_delta =
                0.5 * ((x.values()[i] - baselines[0].values()[i]) + (x.values()[i] - baselines[1].values()[i]));
            EXPECT_NEAR(map.scores[i], w[i] * mean_delta, 1e-10);
        }
        EXPECT_NEAR(map.completeness_gap, 0.0, 1e-9);
        const double fx = logit(model, x, label);
        const double delta = fx - 0.5 * (logit(model, baselines[0], label) + logit(model, baselines[1], label));
        EXPECT_NEAR(map.output_delta, delta, 1e-10);
        EXPECT_NEAR(map.total(), delta, 1e-9);
    }
}

TEST(IntegratedGradients, BaselineEqualToInputGivesZero) {
    const auto model = small_model(20, 3);
    Rng rng(4);
    const auto x = one_hot<double>(random_sequence(20, rng));
    const auto map = integrated_gradients(model, x, 1, {x}, 10);
    for (double v : map.scores) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(map.output_delta, 0.0);
}

TEST(IntegratedGradients, ScalesWithInputOffsetForAffineModel) {
    const std::size_t len = 10;
    const auto model = affine_model(len, 2, 5);
    Rng rng(6);
    const auto base = random_input(len, rng);
    const auto x = random_input(len, rng);
    std::vector<double> far(len * 4);
    for (std::size_t i = 0; i < far.size(); ++i) {
        far[i] = base.values()[i] + 2.0 * (x.values()[i] - base.values()[i]);
    }
    const auto a = integrated_gradients(model, x, 0, {base}, 5);
    const auto b = integrated_gradients(model, TensorD::create({len, 4}, far), 0, {base}, 5);
    for (std::size_t i = 0; i < far.size(); ++i) {
        EXPECT_NEAR(b.scores[i], 2.0 * a.scores[i], 1e-10);
    }
}

TEST(IntegratedGradients, CompletenessGapShrinksWithSteps) {
    const auto model = small_model(24, 7);
    Rng rng(8);
    const std::string seq = random_sequence(24, rng);
    const auto x = one_hot<double>(seq);
    const auto baselines = shuffled_baselines<double>(seq, 3, rng);
    const auto coarse = integrated_gradients(model, x, 0, baselines, 2);
    const auto fine = integrated_gradients(model, x, 0, baselines, 400);
    EXPECT_LE(std::abs(fine.completeness_gap), std::abs(coarse.completeness_gap) + 1e-12);
    EXPECT_LT(fine.relative_gap(), 0.01);
    EXPECT_NEAR(std::abs(fine.total() - fine.output_delta), fine.completeness_gap, 1e-12);
    EXPECT_EQ(fine.steps, 400u);
    EXPECT_EQ(fine.baseline_count, 3u);
}

TEST(IntegratedGradients, ChunkSizeDoesNotChangeResult) {
    const auto model = small_model(16, 9);
    Rng rng(10);
    const std::string seq = random_sequence(16, rng);
    const auto baselines = shuffled_baselines<double>(seq, 2, rng);
    const auto a = integrated_gradients(model, one_hot<double>(seq), 1, baselines, 13, 1);
    const auto b = integrated_gradients(model, one_hot<double>(seq), 1, baselines, 13, 100);
    for (std::size_t i = 0; i < a.scores.size(); ++i) {
        EXPECT_NEAR(a.scores[i], b.scores[i], 1e-12);
    }
}

TEST(IntegratedGradients, Errors) {
    auto model = small_model(16, 11);
    Rng rng(12);
    const auto x = one_hot<double>(random_sequence(16, rng));
    EXPECT_THROW(integrated_gradients(model, x, 2, {x}, 5), std::out_of_range);
    EXPECT_THROW(integrated_gradients(model, x, 0, {}, 5), std::invalid_argument);
    EXPECT_THROW(integrated_gradients(model, x, 0, {x}, 0), std::invalid_argument);
    EXPECT_THROW(integrated_gradients(model, x, 0, {one_hot<double>(random_sequence(15, rng))}, 5), ShapeError);
    model.set_trainable(true);
    EXPECT_THROW(integrated_gradients(model, x, 0, {x}, 5), std::invalid_argument);
}

TEST(IntegratedGradients, ShuffledBaselinesKeepComposition) {
    Rng rng(13);
    const std::string seq = random_sequence(40, rng);
    const auto baselines = shuffled_baselines<double>(seq, 4, rng);
    ASSERT_EQ(baselines.size(), 4u);
    for (const auto& b : baselines) {
        auto shuffled = decode_one_hot(b);
        auto sorted_a = seq, sorted_b = shuffled;
        std::sort(sorted_a.begin(), sorted_a.end());
        std::sort(sorted_b.begin(), sorted_b.end());
        EXPECT_EQ(sorted_a, sorted_b);
        EXPECT_EQ(shuffled.front(), seq.front());
        EXPECT_EQ(shuffled.back(), seq.back());
    }
}

TEST(ActualBaseScores, Examples) {
    AttributionMap map;
    map.length = 3;
    map.scores = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    const auto s = actual_base_scores(map, one_hot<double>("ATN"));
    EXPECT_EQ(s, (std::vector<double>{1, 8, 0}));
    EXPECT_THROW(actual_base_scores(map, one_hot<double>("AT")), ShapeError);
}

TEST(AttributeSamples, ThreadCountDoesNotChangeMaps) {
    const auto model = small_model(20, 14);
    EncodedDataset ds{{"A", "B"}, {}};
    Rng rng(15);
    for (int i = 0; i < 6; ++i) {
        ds.samples.push_back({random_sequence(20, rng), {1, 0}, std::nullopt, {}});
    }
    IgOptions opt{8, 3, 100, 42, 1};
    const std::vector<std::size_t> idx = {0, 2, 3, 5};
    const auto one = attribute_samples(model, ds, idx, 1, opt);
    opt.threads = 3;
    const auto many = attribute_samples(model, ds, idx, 1, opt);
    ASSERT_EQ(one.size(), 4u);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        EXPECT_EQ(one[k].sample, idx[k]);
        EXPECT_EQ(one[k].label, "B");
        EXPECT_EQ(one[k].scores, many[k].scores);
    }
}

TEST(WriteAttributions, Format) {
    AttributionMap m;
    m.sample = 7;
    m.label = "MYC";
    m.length = 2;
    m.scores = {0.5, 0, 0, 0, 0, 0, -0.25, 0};
    m.completeness_gap = 0.125;
    std::ostringstream os;
    write_attributions(os, {m});
    EXPECT_EQ(os.str(), ">7 MYC 0.125\n0.5\t0\t0\t0\n0\t0\t-0.25\t0\n");
    std::ostringstream with_header;
    const Provenance prov{"abc", 3};
    write_attributions(with_header, {m}, &prov);
    EXPECT_EQ(with_header.str().rfind("# ", 0), 0u);
    EXPECT_NE(with_header.str().find("abc"), std::string::npos);
}

TEST(Seqlets, AllZeroTracksGiveNone) {
    const std::vector<std::vector<double>> zero(3, std::vector<double>(50, 0.0));
    EXPECT_TRUE(extract_seqlets(zero, 10, zero).empty());
}

TEST(Seqlets, SingleSpikeGivesOneCentredSeqlet) {
    Rng rng(16);
    const auto nulls = noise_tracks(10, 100, 0.01, rng);
    std::vector<double> track(100, 0.0);
    track[50] = 5.0;
    const auto seqlets = extract_seqlets({track}, 15, nulls, "MYC");
    ASSERT_EQ(seqlets.size(), 1u);
    EXPECT_EQ(seqlets[0].start, 43u);
    EXPECT_EQ(seqlets[0].length, 15u);
    EXPECT_EQ(seqlets[0].label, "MYC");
    EXPECT_DOUBLE_EQ(seqlets[0].scores[7], 5.0);
    EXPECT_DOUBLE_EQ(seqlets[0].magnitude(), 5.0);
}

TEST(Seqlets, NonOverlappingAndAboveThreshold) {
    Rng rng(17);
    const auto nulls = noise_tracks(10, 200, 0.1, rng);
    auto tracks = noise_tracks(4, 200, 0.1, rng);
    for (auto& t : tracks) {
        for (std::size_t p : {20u, 90u, 95u, 160u}) {
            t[p] = uniform(rng, 1, 3);
        }
    }
    const double threshold = null_threshold(nulls, 12);
    const auto seqlets = extract_seqlets(tracks, 12, nulls);
    EXPECT_GE(seqlets.size(), 4u * 3u);
    for (std::size_t i = 0; i < seqlets.size(); ++i) {
        EXPECT_GT(seqlets[i].magnitude(), threshold);
        for (std::size_t j = i + 1; j < seqlets.size(); ++j) {
            if (seqlets[i].sample == seqlets[j].sample) {
                const bool disjoint = seqlets[i].start + 12 <= seqlets[j].start || seqlets[j].start + 12 <= seqlets[i].start;
                EXPECT_TRUE(disjoint);
            }
        }
    }
}

TEST(Seqlets, Errors) {
    const std::vector<std::vector<double>> t(1, std::vector<double>(10, 1.0));
    EXPECT_THROW(extract_seqlets({}, 5, t), std::invalid_argument);
    EXPECT_THROW(extract_seqlets(t, 5, {}), std::invalid_argument);
    EXPECT_THROW(extract_seqlets(t, 0, t), std::invalid_argument);
    EXPECT_THROW(extract_seqlets(t, 11, t), std::invalid_argument);
    EXPECT_THROW(null_threshold(t, 11), std::invalid_argument);
}

TEST(NullThreshold, MatchesMeanPlusSigmaStd) {
    const std::vector<std::vector<double>> nulls = {{1, -1, 2, 0}, {0, 3, 0, 1}};
    // Window-2 |sum|s: 2, 3, 2, 3, 3, 1.
    const std::vector<double> sums = {2, 3, 2, 3, 3, 1};
    double mean = 0, var = 0;
    for (double s : sums) {
        mean += s / 6;
    }
    for (double s : sums) {
        var += (s - mean) * (s - mean) / 6;
    }
    EXPECT_NEAR(null_threshold(nulls, 2, 2.0), mean + 2.0 * std::sqrt(var), 1e-12);
}

TEST(Pwm, InformationContentExamples) {
    const double onehot[4] = {0, 1, 0, 0};
    const double uniform_row[4] = {0.25, 0.25, 0.25, 0.25};
    const double half[4] = {0.5, 0.5, 0, 0};
    EXPECT_DOUBLE_EQ(information_content(onehot), 2.0);
    EXPECT_NEAR(information_content(uniform_row), 0.0, 1e-15);
    EXPECT_NEAR(information_content(half), 1.0, 1e-15);
}

TEST(Pwm, RowsAreDistributionsWithBoundedInformation) {
    Rng rng(18);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t w = 1 + uniform_index(rng, 12);
        std::vector<double> weights(w * 4);
        for (auto& v : weights) {
            v = bernoulli(rng, 0.2) ? 0.0 : uniform(rng, 0, 5);
        }
        const auto pwm = make_pwm(weights);
        ASSERT_EQ(pwm.width, w);
        for (std::size_t r = 0; r < w; ++r) {
            EXPECT_NEAR(pwm.p(r, 0) + pwm.p(r, 1) + pwm.p(r, 2) + pwm.p(r, 3), 1.0, 1e-12);
            EXPECT_GE(pwm.ic[r], 0.0);
            EXPECT_LE(pwm.ic[r], 2.0);
        }
    }
    const auto empty_row = make_pwm({0, 0, 0, 0});
    EXPECT_DOUBLE_EQ(empty_row.p(0, 2), 0.25);
}

TEST(Pwm, ConsensusAndReverseComplement) {
    const auto pwm = pwm_from_consensus("GATAAG", 0.1);
    EXPECT_EQ(pwm.consensus(), "GATAAG");
    EXPECT_EQ(reverse_complement(pwm).consensus(), "CTTATC");
    EXPECT_EQ(reverse_complement(reverse_complement(pwm)).probs, pwm.probs);
    EXPECT_NEAR(pwm.p(0, 2), 0.9, 1e-15);
    EXPECT_NEAR(pwm.p(0, 0), 0.1 / 3, 1e-15);
    EXPECT_THROW(pwm_from_consensus("GANA"), DataError);
    auto mixed = make_pwm({0.25, 0.25, 0.25, 0.25, 1, 0, 0, 0, 0, 1, 0, 0, 0.25, 0.25, 0.25, 0.25});
    EXPECT_EQ(mixed.core_consensus(), "AC");
}

TEST(PwmSimilarity, Examples) {
    const auto a = pwm_from_consensus("CACGTGAT", 0.05);
    EXPECT_NEAR(pwm_similarity(a, a), 1.0, 1e-12);
    EXPECT_NEAR(pwm_similarity(a, reverse_complement(a)), 1.0, 1e-12);
    const auto uniform_pwm = make_pwm(std::vector<double>(8 * 4, 1.0));
    EXPECT_NEAR(pwm_similarity(uniform_pwm, a), 0.0, 1e-12);
    EXPECT_NEAR(pwm_similarity(pwm_from_consensus("ACGTGA"), a), 1.0, 1e-12);
    EXPECT_LT(pwm_similarity(pwm_from_consensus("GGGGGG"), pwm_from_consensus("AAAAAA")), 0.0);
}

TEST(PwmSimilarity, PearsonOracle) {
    EXPECT_NEAR(pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
    EXPECT_NEAR(pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
    EXPECT_EQ(pearson({1, 1, 1}, {1, 2, 3}), 0.0);
    EXPECT_EQ(pearson({1, 2}, {1, 2, 3}), 0.0);
}

TEST(Cluster, IdenticalSeqletsGiveOneSharpCluster) {
    const std::string seq = "TTTTCACGTGTTTT";
    std::vector<std::string> sequences(5, seq);
    std::vector<Seqlet> seqlets;
    for (std::size_t i = 0; i < 5; ++i) {
        seqlets.push_back({i, 4, 6, {1.0, 2.0, 3.0, 3.0, 2.0, 1.0}, "MYC"});
    }
    const auto pwms = cluster_and_build_pwm(seqlets, sequences);
    ASSERT_EQ(pwms.size(), 1u);
    EXPECT_EQ(pwms[0].members, 5u);
    EXPECT_EQ(pwms[0].consensus(), "CACGTG");
    for (std::size_t r = 0; r < 6; ++r) {
        EXPECT_DOUBLE_EQ(pwms[0].ic[r], 2.0);
    }
}

TEST(Cluster, ShiftedAndReverseStrandCopiesJoinOneCluster) {
    Rng rng(19);
    const std::string motif = "GATAAG";
    const std::string rc = "CTTATC";
    std::vector<std::string> sequences;
    std::vector<Seqlet> seqlets;
    for (std::size_t i = 0; i < 30; ++i) {
        std::string seq = random_sequence(40, rng);
        const std::size_t pos = 15 + uniform_index(rng, 4);
        seq.replace(pos, 6, i % 2 ? rc : motif);
        std::vector<double> track(40, 0.0);
        for (std::size_t p = pos; p < pos + 6; ++p) {
            track[p] = 1.0 + uniform(rng, 0, 0.2);
        }
        Seqlet s{i, 12, 12, {}, "GATA1"};
        s.scores.assign(track.begin() + 12, track.begin() + 24);
        seqlets.push_back(s);
        sequences.push_back(seq);
    }
    const auto pwms = cluster_and_build_pwm(seqlets, sequences);
    ASSERT_FALSE(pwms.empty());
    EXPECT_EQ(pwms[0].members, 30u);
    const auto core = pwms[0].core_consensus();
    EXPECT_TRUE(core == motif || core == rc) << core;
    EXPECT_GT(pwm_similarity(pwms[0], pwm_from_consensus(motif)), 0.9);
}

TEST(Cluster, DissimilarSeqletsStaySeparate) {
    std::vector<std::string> sequences = {"AAACACGTGAAA", "AAACACGTGAAA", "GGGATTTAAGGG", "GGGATTTAAGGG"};
    std::vector<Seqlet> seqlets;
    const std::vector<double> scores = {0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0};
    for (std::size_t i = 0; i < 4; ++i) {
        seqlets.push_back({i, 0, 12, scores, ""});
    }
    const auto pwms = cluster_and_build_pwm(seqlets, sequences);
    EXPECT_EQ(pwms.size(), 2u);
    EXPECT_EQ(pwms[0].members, 2u);
    EXPECT_EQ(pwms[1].members, 2u);
}

TEST(Cluster, Errors) {
    EXPECT_TRUE(cluster_and_build_pwm({}, {}).empty());
    const std::vector<std::string> seqs = {"ACGTACGT"};
    EXPECT_THROW(cluster_and_build_pwm({{0, 0, 4, {1, 1, 1, 1}, ""}, {0, 0, 3, {1, 1, 1}, ""}}, seqs),
                 std::invalid_argument);
    EXPECT_THROW(cluster_and_build_pwm({{0, 6, 4, {1, 1, 1, 1}, ""}}, seqs), std::out_of_range);
    EXPECT_THROW(cluster_and_build_pwm({{1, 0, 4, {1, 1, 1, 1}, ""}}, seqs), std::out_of_range);
}

TEST(WritePwms, Format) {
    std::ostringstream os;
    write_pwms(os, {{"MYC_1", pwm_from_consensus("CA")}});
    EXPECT_EQ(os.str(),
              "MOTIF MYC_1\nw= 2\n0.000000 1.000000 0.000000 0.000000\n1.000000 0.000000 0.000000 0.000000\n"
              "# members 1 consensus CA\n# ic 2.000000 2.000000\n\n");
}

TEST(DiscoverMotifs, RecoversPlantedMotifFromTrainedModel) {
    SyntheticSpec spec;
    spec.num_samples = 800;
    spec.length = 40;
    spec.label_motifs = {{"MYC", "CACGTG"}};
    spec.negative_fraction = 0.5;
    Rng data_rng(1);
    const auto ds = generate_synthetic(spec, data_rng);
    const auto split = split_dataset(ds, 0.8, 0.2, 1);

    ModelConfig c;
    c.input_length = 40;
    c.num_labels = 1;
    c.cnn_layers = 1;
    c.cnn_kernels = 16;
    c.cnn_kernel_size = 6;
    c.tcn_blocks = 3;
    c.tcn_channels = 16;
    c.kernel_size = 4;
    c.mlp_hidden = 16;
    c.dropout = 0.1;
    Rng model_rng(2);
    TrainConfig tc;
    tc.epochs = 30;
    tc.patience = 30;
    tc.batch_size = 32;
    tc.lr_max = 0.005;
    auto model = train<float>(TcnModel<float>::initialize(c, model_rng), split.train, split.validation, tc).model;
    ASSERT_GT(metrics_report(predict_scores(model, split.test)).ap_micro, 0.95);
    model.set_trainable(false);

    MotifOptions opt;
    opt.max_samples = 100;
    opt.null_samples = 30;
    const auto found = discover_motifs(model, split.test, 0, opt);
    EXPECT_EQ(found.label, "MYC");
    ASSERT_FALSE(found.pwms.empty());
    EXPECT_EQ(found.pwms[0].core_consensus(), "CACGTG");
    EXPECT_GT(pwm_similarity(found.pwms[0], pwm_from_consensus("CACGTG")), 0.95);
    ASSERT_EQ(found.seqlet_samples.size(), found.seqlets.size());

    std::size_t covering = 0;
    for (std::size_t k = 0; k < found.seqlets.size(); ++k) {
        const auto& s = found.seqlets[k];
        for (const auto& m : split.test.samples[found.seqlet_samples[k]].planted) {
            if (m.start >= s.start && m.start + m.length <= s.start + s.length) {
                ++covering;
                break;
            }
        }
    }
    EXPECT_GT(double(covering), 0.8 * double(found.seqlets.size()));
}
