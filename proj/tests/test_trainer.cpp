#include <doctest.h>

#include <cmath>

#include "gmsl/trainer.hpp"
#include "gmsl/rng.hpp"
#include "testutil.hpp"

using namespace gmsl;

namespace {

MoleculePool synthetic_pool(std::size_t n, std::uint64_t seed) {
    gmsl::Rng rng(seed);
    MoleculePool pool;
    for (std::size_t i = 0; i < n; ++i) {
        MoleculeRecord rec;
        rec.id = "syn" + std::to_string(i);
        rec.smiles = testutil::synthetic_smiles(rng);
        rec.graph = parse_smiles(rec.smiles);
        pool.by_id.emplace(rec.id, pool.molecules.size());
        pool.molecules.push_back(std::move(rec));
    }
    return pool;
}

MoleculePool identical_pool(std::size_t n) {
    MoleculePool pool;
    for (std::size_t i = 0; i < n; ++i) {
        MoleculeRecord rec;
        rec.id = "dup" + std::to_string(i);
        rec.smiles = "CCO";
        rec.graph = parse_smiles(rec.smiles);
        pool.by_id.emplace(rec.id, pool.molecules.size());
        pool.molecules.push_back(std::move(rec));
    }
    return pool;
}

TrainConfig small_train(std::uint32_t epochs, std::uint32_t batch, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.learning_rate = 0.005;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.seed = seed;
    cfg.fusion = *fusion_preset("fingerprint");
    return cfg;
}

EncoderConfig small_encoder(std::size_t hidden = 8, std::uint64_t seed = 2) {
    EncoderConfig cfg;
    cfg.hidden_dim = hidden;
    cfg.depth = 2;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Matrix p(2, 3, 1.5);
    Matrix g(2, 3, 0.0);
    Matrix before = p;
    AdamState state;
    adam_step({&p}, {&g}, state, 0.1);
    CHECK(p.data == before.data);
    CHECK(state.step == 1);
}

TEST_CASE("adam: first-step magnitude is about lr for a large gradient") {
    Matrix p(1, 1, 0.0);
    Matrix g(1, 1, 5.0);
    AdamState state;
    adam_step({&p}, {&g}, state, 0.001);
    // Bias-corrected first step: |delta| = lr * g / (|g| + eps') ~ lr.
    CHECK(std::fabs(p.data[0] + 0.001) < 1e-8);
}

TEST_CASE("adam: identical runs give identical trajectories") {
    gmsl::Rng rng(71);
    auto run = [&](std::uint64_t seed) {
        gmsl::Rng local(seed);
        Matrix p(3, 3);
        for (double& v : p.data) v = local.uniform(-1, 1);
        AdamState state;
        for (int step = 0; step < 50; ++step) {
            Matrix g(3, 3);
            for (std::size_t i = 0; i < 9; ++i) g.data[i] = p.data[i] * 0.3 - 0.1;
            adam_step({&p}, {&g}, state, 0.01);
        }
        return p.data;
    };
    CHECK(run(9) == run(9));
    CHECK(run(9) != run(10));
}

TEST_CASE("adam: shape mismatch is typed") {
    Matrix p(2, 2, 0.0);
    Matrix g(2, 3, 0.0);
    AdamState state;
    CHECK_THROWS_AS(adam_step({&p}, {&g}, state, 0.1), ShapeError);
}

TEST_CASE("pretrain on identical molecules starts at ln(batch)") {
    // All self-similarities equal -> uniform target; identical embeddings ->
    // constant latent matrix; the first loss is exactly ln(n).
    MoleculePool pool = identical_pool(4);
    TrainConfig cfg = small_train(1, 4);
    ModelCheckpoint ckpt = pretrain(pool, {}, cfg, small_encoder());
    REQUIRE(ckpt.loss_history.size() == 1);
    CHECK(ckpt.loss_history[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("pretrain reduces the loss on a small synthetic pool") {
    MoleculePool pool = synthetic_pool(8, 81);
    TrainConfig cfg = small_train(50, 8);
    ModelCheckpoint ckpt = pretrain(pool, {}, cfg, small_encoder());
    REQUIRE(ckpt.loss_history.size() == 50);
    CHECK(ckpt.loss_history.back() < ckpt.loss_history.front());
}

TEST_CASE("pretrain is seed-deterministic") {
    MoleculePool pool = synthetic_pool(12, 82);
    TrainConfig cfg = small_train(5, 4, 7);
    ModelCheckpoint a = pretrain(pool, {}, cfg, small_encoder());
    ModelCheckpoint b = pretrain(pool, {}, cfg, small_encoder());
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.params.w_in.data == b.params.w_in.data);
    CHECK(a.params.w_msg.data == b.params.w_msg.data);
    CHECK(a.params.w_node.data == b.params.w_node.data);
}

TEST_CASE("full-batch training equals a single chunk per epoch") {
    MoleculePool pool = synthetic_pool(6, 83);
    TrainConfig exact = small_train(4, 6);
    TrainConfig oversized = small_train(4, 64);
    ModelCheckpoint a = pretrain(pool, {}, exact, small_encoder());
    ModelCheckpoint b = pretrain(pool, {}, oversized, small_encoder());
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.params.w_node.data == b.params.w_node.data);
}

TEST_CASE("trailing batches below two molecules are dropped") {
    MoleculePool pool = synthetic_pool(5, 84);
    TrainConfig cfg = small_train(2, 4);  // chunks of 4 + 1 -> the 1 is dropped
    ModelCheckpoint ckpt = pretrain(pool, {}, cfg, small_encoder());
    CHECK(ckpt.loss_history.size() == 2);  // one kept batch per epoch
}

TEST_CASE("checkpoint resume continues the exact trajectory") {
    testutil::TempDir dir("resume");
    MoleculePool pool = synthetic_pool(10, 85);
    EncoderConfig enc = small_encoder();

    TrainConfig full = small_train(10, 4, 3);
    ModelCheckpoint straight = pretrain(pool, {}, full, enc);

    TrainConfig first_half = small_train(5, 4, 3);
    ModelCheckpoint half = pretrain(pool, {}, first_half, enc);
    std::string path = dir.path("half.gmsl");
    save_checkpoint(half, path);
    ModelCheckpoint reloaded = load_checkpoint(path);
    ModelCheckpoint resumed = pretrain(pool, {}, full, enc, reloaded);

    CHECK(resumed.loss_history == straight.loss_history);
    CHECK(resumed.grad_norm_history == straight.grad_norm_history);
    CHECK(resumed.params.w_in.data == straight.params.w_in.data);
    CHECK(resumed.params.w_msg.data == straight.params.w_msg.data);
    CHECK(resumed.params.w_node.data == straight.params.w_node.data);
    CHECK(resumed.adam.step == straight.adam.step);
}

TEST_CASE("node-level training over annotated carbons") {
    MoleculePool pool = identical_pool(3);
    PeakTable peaks;
    peaks.entries.push_back({"dup0", {{0, 20.0}, {1, 60.0}}});
    peaks.entries.push_back({"dup1", {{0, 25.0}}});
    peaks.entries.push_back({"dup2", {{1, 100.0}}});
    ModalityInputs inputs;
    inputs.peaks = &peaks;

    TrainConfig cfg = small_train(3, 3);
    cfg.level = TrainLevel::Node;
    ModelCheckpoint ckpt = pretrain(pool, inputs, cfg, small_encoder());
    CHECK(ckpt.loss_history.size() == 3);
    for (double l : ckpt.loss_history) CHECK(std::isfinite(l));

    SUBCASE("missing peaks table fails fast") {
        CHECK_THROWS_AS(pretrain(pool, {}, cfg, small_encoder()), MissingModalityError);
    }
    SUBCASE("batch without annotated carbons") {
        PeakTable empty;
        ModalityInputs no_peaks;
        no_peaks.peaks = &empty;
        CHECK_THROWS_AS(pretrain(pool, no_peaks, cfg, small_encoder()), EmptyNodePoolError);
    }
    SUBCASE("bilevel loss adds both levels") {
        TrainConfig bi = cfg;
        bi.level = TrainLevel::Bilevel;
        ModelCheckpoint bc = pretrain(pool, inputs, bi, small_encoder());
        CHECK(bc.loss_history.size() == 3);
        // An identical pool gives uniform graph targets; the bilevel loss must
        // exceed the graph-level part alone.
        CHECK(bc.loss_history[0] > std::log(3.0) - 1e-9);
    }
}

TEST_CASE("cosine-modality fusion uses embedding tables") {
    MoleculePool pool = synthetic_pool(6, 86);
    EmbeddingTable table;
    table.modality = Modality::Nmr;
    table.dim = 3;
    gmsl::Rng rng(87);
    for (const auto& rec : pool.molecules) {
        std::vector<double> v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        table.ids.push_back(rec.id);
        table.rows.emplace(rec.id, v);
    }
    ModalityInputs inputs;
    inputs.nmr = &table;
    TrainConfig cfg = small_train(2, 6);
    cfg.fusion = FusionWeights{0.0, 0.5, 0.0, 0.5};
    ModelCheckpoint ckpt = pretrain(pool, inputs, cfg, small_encoder());
    CHECK(ckpt.loss_history.size() == 2);

    SUBCASE("a molecule without the modality fails fast") {
        EmbeddingTable partial = table;
        partial.rows.erase(pool.molecules[0].id);
        ModalityInputs bad;
        bad.nmr = &partial;
        CHECK_THROWS_AS(pretrain(pool, bad, cfg, small_encoder()), MissingModalityError);
    }
    SUBCASE("permissive mode renormalizes over available modalities") {
        EmbeddingTable partial = table;
        partial.rows.erase(pool.molecules[0].id);
        ModalityInputs sparse;
        sparse.nmr = &partial;
        TrainConfig permissive = cfg;
        permissive.permissive_modalities = true;
        ModelCheckpoint ckpt2 = pretrain(pool, sparse, permissive, small_encoder());
        CHECK(ckpt2.loss_history.size() == 2);
        for (double l : ckpt2.loss_history) CHECK(std::isfinite(l));
    }
    SUBCASE("missing table with nonzero weight fails fast") {
        ModalityInputs none;
        CHECK_THROWS_AS(pretrain(pool, none, cfg, small_encoder()), MissingModalityError);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg = small_train(1, 1);
    CHECK_THROWS_AS(cfg.validate(), DataError);  // batch_size < 2
    cfg = small_train(1, 4);
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), DataError);
    cfg = small_train(1, 4);
    cfg.fusion = FusionWeights{0.5, 0.0, 0.0, 0.4};
    CHECK_THROWS_AS(cfg.validate(), WeightSumError);
}

TEST_CASE("history csv layout") {
    MoleculePool pool = synthetic_pool(4, 88);
    ModelCheckpoint ckpt = pretrain(pool, {}, small_train(2, 2), small_encoder());
    std::string csv = history_csv(ckpt);
    CHECK(csv.rfind("epoch,batch,loss,grad_norm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);  // header + 2 epochs x 2 batches
    CHECK(csv.find("\n1,1,") != std::string::npos);
}

TEST_CASE("optimize_to_target: uniform target converges immediately") {
    TargetSimilarityMatrix t;
    t.values = Matrix(3, 3, 1.0 / 3.0);
    t.ids = {"a", "b", "c"};
    OptimizeResult res = optimize_to_target(t);
    CHECK(res.max_deviation < 1e-6);
    CHECK(res.steps < 10);  // constant-per-row D is already optimal
}

TEST_CASE("optimize_to_target: converged gap matches the log-ratio") {
    TargetSimilarityMatrix t;
    t.values = Matrix(2, 2);
    t.values.at(0, 0) = 0.75;
    t.values.at(0, 1) = 0.25;
    t.values.at(1, 0) = 0.75;
    t.values.at(1, 1) = 0.25;
    t.ids = {"a", "b"};
    OptimizeResult res = optimize_to_target(t);
    for (std::size_t i = 0; i < 2; ++i) {
        double gap = res.latent.at(i, 0) - res.latent.at(i, 1);
        CHECK(std::fabs(gap - std::log(3.0)) < 1e-4);
    }
    CHECK(count_ordering_violations(t.values, res.latent) == 0);
}

TEST_CASE("verify_theorem on random targets") {
    TheoremOptions opts;
    TheoremReport report = verify_theorem(6, 3, 11, opts);
    CHECK(report.max_softmax_deviation < 1e-3);
    CHECK(report.ordering_violations == 0);
    CHECK(report.trial_deviations.size() == 3);
}

TEST_CASE("verify_theorem deviation decreases after smoothing") {
    TheoremOptions opts;
    opts.record_trace = true;
    TheoremReport report = verify_theorem(4, 1, 13, opts);
    const std::vector<double>& trace = report.deviation_trace;
    REQUIRE(trace.size() > 20);
    const std::size_t window = 10;
    double prev = 1e300;
    for (std::size_t i = 0; i + window <= trace.size(); i += window) {
        double avg = 0.0;
        for (std::size_t j = i; j < i + window; ++j) avg += trace[j];
        avg /= static_cast<double>(window);
        CHECK(avg <= prev + 1e-9);
        prev = avg;
    }
}

TEST_CASE("non-convergence is reported with the achieved deviation") {
    TargetSimilarityMatrix t;
    t.values = Matrix(4, 4);
    gmsl::Rng rng(14);
    for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            t.values.at(i, j) = 0.05 + rng.next_double();
            sum += t.values.at(i, j);
        }
        for (std::size_t j = 0; j < 4; ++j) t.values.at(i, j) /= sum;
        t.ids.push_back(std::to_string(i));
    }
    TheoremOptions opts;
    opts.max_steps = 5;  // far too few
    try {
        optimize_to_target(t, opts);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        CHECK(e.steps == 5);
        CHECK(e.achieved_deviation > 0.0);
        CHECK(std::string(e.what()).find("deviation") != std::string::npos);
    }
}
