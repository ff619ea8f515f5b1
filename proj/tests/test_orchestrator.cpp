#include <gtest/gtest.h>

#include "reimts/data.hpp"
#include "reimts/orchestrator.hpp"
#include "test_util.hpp"

using namespace reimts;

namespace {

struct Toy {
    AlignedSample level1;
    ForecastQuery query;
};

Toy make_toy(long V = 2, std::uint64_t seed = 404) {
    Rng rng(seed);
    RawSample full;
    full.num_variables = V;
    full.total_span = 60.0;
    full.sample_id = "toy";
    for (long v = 0; v < V; ++v) {
        int n = 4 + static_cast<int>(rng.index(4));
        for (int i = 0; i < n; ++i)
            full.observations.push_back({rng.uniform(0.01, 48.0), rng.normal(0, 1), v});
        full.observations.push_back({rng.uniform(48.01, 60.0), rng.normal(0, 1), v});
    }
    WindowedSample w;
    if (!window_sample(full, 48.0, 12.0, 0, w)) throw std::runtime_error("toy windowing failed");
    Toy t;
    t.level1 = align_and_pad(w.lookback);
    t.query = w.query;
    return t;
}

ReimtsConfig make_config(std::vector<double> periods, RepKind kind, long V,
                         DecodeMode mode = DecodeMode::concat_all_levels,
                         Ablation ablation = Ablation::full) {
    ReimtsConfig cfg;
    cfg.periods = std::move(periods);
    cfg.backbone = BackboneConfig{kind, 4, 1};
    cfg.decode_mode = mode;
    cfg.ablation = ablation;
    cfg.num_variables = V;
    return cfg;
}

Tensor run_forward(const ReimtsConfig& cfg, ParamStore& store, const Toy& toy,
                   ForwardStats* stats = nullptr) {
    ad::Tape tape;
    BoundParams params(tape, store);
    ForwardResult res = forward(tape, params, cfg, toy.level1, toy.query);
    if (stats) *stats = res.stats;
    return res.predictions.val();
}

} // namespace

TEST(Orchestrator, InvocationCounters) {
    Toy toy = make_toy();
    for (auto mode : {DecodeMode::concat_all_levels, DecodeMode::lowest_level_only}) {
        ReimtsConfig cfg = make_config({48.0, 24.0, 12.0}, RepKind::temporal, 2, mode);
        ParamStore store = make_model_params(cfg, 1);
        ForwardStats stats;
        run_forward(cfg, store, toy, &stats);
        EXPECT_EQ(stats.encoder_calls, 3);
        EXPECT_EQ(stats.fusion_calls, 2);
        EXPECT_EQ(stats.decoder_calls, 1);
    }
}

TEST(Orchestrator, SingleLevelEqualsBareBackbone) {
    Toy toy = make_toy();
    for (RepKind kind : {RepKind::temporal, RepKind::variable, RepKind::observation}) {
        for (auto mode : {DecodeMode::concat_all_levels, DecodeMode::lowest_level_only}) {
            ReimtsConfig cfg = make_config({48.0}, kind, 2, mode);
            ParamStore store = make_model_params(cfg, 7);
            Tensor via_forward = run_forward(cfg, store, toy);

            ad::Tape tape;
            BoundParams params(tape, store);
            RepVar rep = encode(tape, params, cfg.backbone, toy.level1, toy.query, 48.0,
                                "enc.l1.");
            ad::Var pred = decode(tape, params, cfg.backbone, rep, toy.level1, toy.query, 48.0);
            EXPECT_TRUE(testutil::tensors_equal(via_forward, pred.val()))
                << rep_kind_name(kind) << " " << decode_mode_name(mode);
        }
    }
}

TEST(Orchestrator, ZeroFusionLowestEqualsLevel2Backbone) {
    Toy toy = make_toy();
    for (RepKind kind : {RepKind::temporal, RepKind::variable, RepKind::observation}) {
        ReimtsConfig cfg =
            make_config({48.0, 24.0}, kind, 2, DecodeMode::lowest_level_only);
        ParamStore store = make_model_params(cfg, 11);
        store.at("fusion.b1.w").fill(0.0);
        store.at("fusion.b1.b").fill(0.0);
        Tensor via_forward = run_forward(cfg, store, toy);

        // a backbone run only on the level-2 subsamples with the level-2
        // encoder parameters
        ScaleStack stack({48.0, 24.0});
        AlignedSample l2 = split_to_level(toy.level1, stack, 2);
        ad::Tape tape;
        BoundParams params(tape, store);
        RepVar rep = encode(tape, params, cfg.backbone, l2, toy.query, 48.0, "enc.l2.");
        ad::Var pred = decode(tape, params, cfg.backbone, rep, l2, toy.query, 48.0);
        EXPECT_TRUE(testutil::tensors_equal(via_forward, pred.val())) << rep_kind_name(kind);
    }
}

TEST(Orchestrator, ZeroFusionNeutralToUpperEncoderPerturbation) {
    Toy toy = make_toy();
    Rng rng(55);
    for (auto periods : {std::vector<double>{48.0, 24.0}, std::vector<double>{48.0, 24.0, 12.0}}) {
        for (RepKind kind : {RepKind::temporal, RepKind::variable, RepKind::observation}) {
            ReimtsConfig cfg = make_config(periods, kind, 2, DecodeMode::lowest_level_only);
            ParamStore store = make_model_params(cfg, 13);
            for (int b = 1; b < cfg.levels(); ++b) {
                store.at("fusion.b" + std::to_string(b) + ".w").fill(0.0);
                store.at("fusion.b" + std::to_string(b) + ".b").fill(0.0);
            }
            Tensor base = run_forward(cfg, store, toy);
            for (int trial = 0; trial < 3; ++trial) {
                ParamStore perturbed = store;
                for (const auto& name : perturbed.names()) {
                    bool upper = false;
                    for (int n = 1; n < cfg.levels(); ++n)
                        if (name.rfind("enc.l" + std::to_string(n) + ".", 0) == 0) upper = true;
                    if (!upper) continue;
                    Tensor& t = perturbed.at(name);
                    for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0, 3);
                }
                Tensor out = run_forward(cfg, perturbed, toy);
                EXPECT_TRUE(testutil::tensors_equal(base, out))
                    << rep_kind_name(kind) << " N=" << cfg.levels();
            }
        }
    }
}

TEST(Orchestrator, ShapeWalkPhysioNetLikeStack) {
    // N=3 stack [48, 24, 12]: subsample counts 1, 2, 4 and L^n from an
    // independent per-(interval, variable) counting oracle over the tuples
    Toy toy = make_toy(3, 777);
    ReimtsConfig cfg = make_config({48.0, 24.0, 12.0}, RepKind::observation, 3);
    ParamStore store = make_model_params(cfg, 17);
    ad::Tape tape;
    BoundParams params(tape, store);
    ForwardResult res = forward(tape, params, cfg, toy.level1, toy.query);

    std::vector<ObservationTuple> obs = extract_observations(toy.level1);
    std::vector<long> expected_P{1, 2, 4};
    for (int level = 1; level <= 3; ++level) {
        const AlignedSample& g = res.level_grids[static_cast<std::size_t>(level - 1)];
        long P = expected_P[static_cast<std::size_t>(level - 1)];
        EXPECT_EQ(g.num_subsamples, P);
        double period = 48.0 / static_cast<double>(P);
        std::map<std::pair<long, long>, long> counts;
        for (const auto& o : obs) {
            long k = 0;
            while (!(o.timestamp <= period * static_cast<double>(k + 1)) ||
                   !(o.timestamp > period * static_cast<double>(k)))
                if (++k >= P - 1) break;
            ++counts[{k, o.variable_id}];
        }
        long expected_L = 0;
        for (const auto& [key, c] : counts) expected_L = std::max(expected_L, c);
        EXPECT_EQ(g.max_len, expected_L) << "level " << level;
    }
    EXPECT_EQ(res.predictions.val().rows(), toy.query.max_len);
    EXPECT_EQ(res.predictions.val().cols(), 3);
}

TEST(Orchestrator, MaskedMseHandCases) {
    ad::Tape tape;
    ForecastQuery q;
    q.horizon_span = 12.0;
    q.max_len = 1;
    q.num_variables = 2;
    q.query_timestamps = Tensor({1, 2}, {50.0, 50.0});
    q.query_mask = Tensor({1, 2}, {1.0, 0.0});
    q.truth_values = Tensor({1, 2}, {1.0, 0.0});
    q.has_truth = true;

    // exact predictions -> 0
    ad::Var exact = tape.constant(Tensor({1, 2}, {1.0, 1.0}));
    EXPECT_DOUBLE_EQ(masked_mse_loss(tape, exact, q).val()[0], 0.0);

    // predictions [3, 1], truth [1, 1], mask [1, 0] -> (3-1)^2 / 1 = 4
    ad::Var pred = tape.constant(Tensor({1, 2}, {3.0, 1.0}));
    EXPECT_DOUBLE_EQ(masked_mse_loss(tape, pred, q).val()[0], 4.0);

    // masked positions are free: arbitrary values there leave the loss bit-identical
    ad::Var pred2 = tape.constant(Tensor({1, 2}, {3.0, -1234.5}));
    EXPECT_EQ(masked_mse_loss(tape, pred, q).val()[0], masked_mse_loss(tape, pred2, q).val()[0]);

    // no targets -> error
    ForecastQuery empty = q;
    empty.query_mask.fill(0.0);
    empty.truth_values.fill(0.0);
    EXPECT_THROW(masked_mse_loss(tape, pred, empty), std::invalid_argument);

    // truth missing -> error
    ForecastQuery no_truth = q;
    no_truth.has_truth = false;
    EXPECT_THROW(masked_mse_loss(tape, pred, no_truth), std::invalid_argument);
}

TEST(Orchestrator, LossGradientSilentAtMaskedQueries) {
    ad::Tape tape;
    ForecastQuery q;
    q.horizon_span = 12.0;
    q.max_len = 2;
    q.num_variables = 2;
    q.query_timestamps = Tensor({2, 2}, {50.0, 51.0, 52.0, 0.0});
    q.query_mask = Tensor({2, 2}, {1.0, 1.0, 1.0, 0.0});
    q.truth_values = Tensor({2, 2}, {0.5, -0.5, 1.0, 0.0});
    q.has_truth = true;

    ad::Var pred = tape.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}), true);
    ad::Var loss = masked_mse_loss(tape, pred, q);
    tape.backward(loss);
    const Tensor& g = tape.grad(pred);
    EXPECT_DOUBLE_EQ(g[3], 0.0); // exactly zero at mask=0
    EXPECT_DOUBLE_EQ(g[0], 2.0 * (1.0 - 0.5) / 3.0);
    EXPECT_DOUBLE_EQ(g[1], 2.0 * (2.0 + 0.5) / 3.0);
    EXPECT_DOUBLE_EQ(g[2], 2.0 * (3.0 - 1.0) / 3.0);
}

TEST(Orchestrator, RpIarfEqualsZeroAlphaWhenGlobalsVanish) {
    // with all level-1 encoder parameters zero, H == 0, so rp_iarf (G = E + H)
    // and full with zero fusion (G = E + 0*H) coincide
    Toy toy = make_toy();
    ReimtsConfig full_cfg = make_config({48.0, 24.0}, RepKind::variable, 2);
    ParamStore store = make_model_params(full_cfg, 19);
    for (const auto& name : store.names())
        if (name.rfind("enc.l1.", 0) == 0) store.at(name).fill(0.0);
    ParamStore zero_fusion = store;
    zero_fusion.at("fusion.b1.w").fill(0.0);
    zero_fusion.at("fusion.b1.b").fill(0.0);

    ReimtsConfig iarf_cfg = full_cfg;
    iarf_cfg.ablation = Ablation::rp_iarf;
    Tensor a = run_forward(iarf_cfg, store, toy);
    Tensor b = run_forward(full_cfg, zero_fusion, toy);
    EXPECT_TRUE(testutil::tensors_equal(a, b));
}

TEST(Orchestrator, RpSplitMatchesFullOnUniformData) {
    // uniform timestamps with equal per-variable counts: count quantiles
    // coincide with the time intervals
    RawSample full;
    full.num_variables = 2;
    full.total_span = 60.0;
    full.sample_id = "uniform";
    for (int j = 1; j <= 8; ++j)
        for (long v = 0; v < 2; ++v)
            full.observations.push_back({j * 6.0, 0.2 * j + 0.1 * v, v});
    for (long v = 0; v < 2; ++v) full.observations.push_back({54.0, 0.3, v});
    WindowedSample w;
    ASSERT_TRUE(window_sample(full, 48.0, 12.0, 0, w));
    Toy toy{align_and_pad(w.lookback), w.query};

    ReimtsConfig cfg = make_config({48.0, 24.0}, RepKind::temporal, 2);
    ParamStore store = make_model_params(cfg, 23);
    ReimtsConfig cfg_split = cfg;
    cfg_split.ablation = Ablation::rp_split;
    EXPECT_TRUE(
        testutil::tensors_equal(run_forward(cfg, store, toy), run_forward(cfg_split, store, toy)));
}

TEST(Orchestrator, RpSampleUsesUnsplitSampleEverywhere) {
    Toy toy = make_toy();
    ReimtsConfig cfg =
        make_config({48.0, 24.0, 12.0}, RepKind::temporal, 2, DecodeMode::concat_all_levels,
                    Ablation::rp_sample);
    ParamStore store = make_model_params(cfg, 29);
    ad::Tape tape;
    BoundParams params(tape, store);
    ForwardResult res = forward(tape, params, cfg, toy.level1, toy.query);
    for (const auto& g : res.level_grids) {
        EXPECT_EQ(g.num_subsamples, 1);
        EXPECT_EQ(g.max_len, toy.level1.max_len);
    }
    EXPECT_TRUE(res.predictions.val().all_finite());
}

TEST(Orchestrator, WoIarfSkipsFusionButReachesUpperLevels) {
    Toy toy = make_toy();
    ReimtsConfig cfg = make_config({48.0, 24.0}, RepKind::variable, 2,
                                   DecodeMode::lowest_level_only, Ablation::wo_iarf);
    ParamStore store = make_model_params(cfg, 31);
    ForwardStats stats;
    Tensor base = run_forward(cfg, store, toy, &stats);
    EXPECT_EQ(stats.fusion_calls, 0);

    // decode mode is forced to concat, so level-1 encoder parameters still
    // shape the output
    ParamStore perturbed = store;
    Rng rng(32);
    for (const auto& name : perturbed.names())
        if (name.rfind("enc.l1.", 0) == 0) {
            Tensor& t = perturbed.at(name);
            for (long i = 0; i < t.numel(); ++i) t[i] += rng.normal(0, 1);
        }
    Tensor out = run_forward(cfg, perturbed, toy);
    EXPECT_FALSE(testutil::tensors_equal(base, out));
}

TEST(Orchestrator, ForwardDeterminism) {
    Toy toy = make_toy();
    ReimtsConfig cfg = make_config({48.0, 24.0}, RepKind::observation, 2);
    ParamStore store = make_model_params(cfg, 37);
    EXPECT_TRUE(testutil::tensors_equal(run_forward(cfg, store, toy),
                                        run_forward(cfg, store, toy)));
}

TEST(Orchestrator, EndToEndGradientCheck) {
    Toy toy = make_toy(2, 909);
    for (RepKind kind : {RepKind::temporal, RepKind::variable, RepKind::observation}) {
        ReimtsConfig cfg = make_config({48.0, 24.0}, kind, 2);
        ParamStore store = make_model_params(cfg, 41);
        auto build = [&](ad::Tape& tape, BoundParams& params) {
            ForwardResult res = forward(tape, params, cfg, toy.level1, toy.query);
            return masked_mse_loss(tape, res.predictions, toy.query);
        };
        auto res = testutil::check_gradients(store, build, 1e-5);
        EXPECT_LT(res.max_rel_err, 1e-4)
            << rep_kind_name(kind) << " worst " << res.worst_param;
    }
}

TEST(Orchestrator, RejectsNonLevel1Input) {
    Toy toy = make_toy();
    ReimtsConfig cfg = make_config({48.0, 24.0}, RepKind::temporal, 2);
    ParamStore store = make_model_params(cfg, 43);
    ScaleStack stack({48.0, 24.0});
    AlignedSample l2 = split_to_level(toy.level1, stack, 2);
    ad::Tape tape;
    BoundParams params(tape, store);
    EXPECT_THROW(forward(tape, params, cfg, l2, toy.query), std::invalid_argument);
}
