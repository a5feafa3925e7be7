#include <doctest.h>

#include <sstream>

#include "gmsl/dataio.hpp"
#include "gmsl/rng.hpp"
#include "testutil.hpp"

using namespace gmsl;

TEST_CASE("load_molecules basics") {
    testutil::TempDir dir("mols");
    std::string path = dir.path("mols.jsonl");

    SUBCASE("three valid lines") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"smiles\":\"C\"}\n"
                             "{\"id\":\"m2\",\"smiles\":\"CCO\",\"labels\":[1,null,0.5]}\n"
                             "{\"id\":\"m3\",\"smiles\":\"c1ccccc1\"}\n");
        MoleculePool pool = load_molecules(path);
        REQUIRE(pool.size() == 3);
        CHECK(pool.molecules[0].id == "m1");
        CHECK(pool.molecules[1].graph.atoms.size() == 3);
        REQUIRE(pool.molecules[1].labels.size() == 3);
        CHECK(pool.molecules[1].labels[0] == 1.0);
        CHECK_FALSE(pool.molecules[1].labels[1].has_value());
        CHECK(pool.molecules[1].labels[2] == 0.5);
        CHECK(pool.find("m3") != nullptr);
        CHECK(pool.find("nope") == nullptr);
    }
    SUBCASE("bad SMILES names the line") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"smiles\":\"C\"}\n"
                             "{\"id\":\"m2\",\"smiles\":\"C1CC\"}\n");
        try {
            load_molecules(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }
    SUBCASE("duplicate ids") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"smiles\":\"C\"}\n"
                             "{\"id\":\"m1\",\"smiles\":\"CC\"}\n");
        CHECK_THROWS_AS(load_molecules(path), DuplicateIdError);
    }
    SUBCASE("empty file") {
        testutil::write_text(path, "");
        CHECK_THROWS_AS(load_molecules(path), EmptyDatasetError);
    }
    SUBCASE("malformed json names the line") {
        testutil::write_text(path, "{\"id\":\"m1\",\"smiles\":\"C\"}\nnot json\n");
        CHECK_THROWS_AS(load_molecules(path), ParseError);
    }
    SUBCASE("file order is preserved") {
        testutil::write_text(path,
                             "{\"id\":\"z\",\"smiles\":\"C\"}\n"
                             "{\"id\":\"a\",\"smiles\":\"CC\"}\n");
        MoleculePool pool = load_molecules(path);
        CHECK(pool.molecules[0].id == "z");
        CHECK(pool.molecules[1].id == "a");
    }
}

TEST_CASE("load_embeddings") {
    testutil::TempDir dir("emb");
    std::string path = dir.path("emb.jsonl");

    SUBCASE("uniform dimension") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"vector\":[1,2,3,4]}\n"
                             "{\"id\":\"m2\",\"vector\":[0.5,0,0,-1]}\n");
        EmbeddingTable t = load_embeddings(path, Modality::Nmr);
        CHECK(t.dim == 4);
        CHECK(t.modality == Modality::Nmr);
        CHECK(t.ids == std::vector<std::string>{"m1", "m2"});
        REQUIRE(t.find("m2") != nullptr);
        CHECK((*t.find("m2"))[3] == -1.0);
    }
    SUBCASE("dimension mismatch carries line and sizes") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"vector\":[1,2,3,4]}\n"
                             "{\"id\":\"m2\",\"vector\":[1,2,3]}\n");
        try {
            load_embeddings(path, Modality::Smiles);
            FAIL("expected DimensionMismatchError");
        } catch (const DimensionMismatchError& e) {
            std::string msg = e.what();
            CHECK(msg.find(":2") != std::string::npos);
            CHECK(msg.find("3") != std::string::npos);
            CHECK(msg.find("4") != std::string::npos);
        }
    }
    SUBCASE("duplicate id") {
        testutil::write_text(path,
                             "{\"id\":\"m1\",\"vector\":[1]}\n"
                             "{\"id\":\"m1\",\"vector\":[2]}\n");
        CHECK_THROWS_AS(load_embeddings(path, Modality::Image), DuplicateIdError);
    }
}

TEST_CASE("load_peaks") {
    testutil::TempDir dir("peaks");
    std::string mols = dir.path("mols.jsonl");
    testutil::write_text(mols,
                         "{\"id\":\"m1\",\"smiles\":\"C\"}\n"
                         "{\"id\":\"m2\",\"smiles\":\"CCO\"}\n");
    MoleculePool pool = load_molecules(mols);
    std::string path = dir.path("peaks.jsonl");

    SUBCASE("peak on atom 0 of methane is accepted") {
        testutil::write_text(path, "{\"id\":\"m1\",\"peaks\":[{\"atom\":0,\"ppm\":12.5}]}\n");
        PeakTable t = load_peaks(path, &pool);
        REQUIRE(t.find("m1") != nullptr);
        CHECK((*t.find("m1"))[0].ppm == 12.5);
    }
    SUBCASE("out-of-range atom index") {
        testutil::write_text(path, "{\"id\":\"m1\",\"peaks\":[{\"atom\":5,\"ppm\":12.5}]}\n");
        CHECK_THROWS_AS(load_peaks(path, &pool), BadAtomIndexError);
    }
    SUBCASE("peak on a non-carbon atom") {
        testutil::write_text(path, "{\"id\":\"m2\",\"peaks\":[{\"atom\":2,\"ppm\":60.0}]}\n");
        CHECK_THROWS_AS(load_peaks(path, &pool), BadAtomIndexError);
    }
    SUBCASE("unknown molecule") {
        testutil::write_text(path, "{\"id\":\"mX\",\"peaks\":[]}\n");
        CHECK_THROWS_AS(load_peaks(path, &pool), UnknownMoleculeError);
    }
    SUBCASE("out-of-range ppm warns but loads") {
        testutil::write_text(path, "{\"id\":\"m1\",\"peaks\":[{\"atom\":0,\"ppm\":300}]}\n");
        std::ostringstream warnings;
        PeakTable t = load_peaks(path, &pool, &warnings);
        CHECK(t.find("m1") != nullptr);
        CHECK(warnings.str().find("300") != std::string::npos);
    }
    SUBCASE("no cross-check without a pool") {
        testutil::write_text(path, "{\"id\":\"mX\",\"peaks\":[{\"atom\":9,\"ppm\":1}]}\n");
        CHECK_NOTHROW(load_peaks(path));
    }
}

namespace {

ModelCheckpoint small_checkpoint(std::uint64_t seed = 5) {
    ModelCheckpoint ckpt;
    ckpt.encoder_config.hidden_dim = 6;
    ckpt.encoder_config.depth = 2;
    ckpt.encoder_config.seed = seed;
    ckpt.params = init_params(ckpt.encoder_config);
    ckpt.train_config.fusion = *fusion_preset("fingerprint");
    ckpt.completed_epochs = 3;
    ckpt.loss_history = {1.5, 1.2, 1.1};
    ckpt.grad_norm_history = {0.4, 0.3, 0.2};
    ckpt.adam.step = 3;
    for (const Matrix* p : {&ckpt.params.w_in, &ckpt.params.w_msg, &ckpt.params.w_node}) {
        Matrix m(p->rows, p->cols, 0.125);
        Matrix v(p->rows, p->cols, 0.5);
        ckpt.adam.m.push_back(m);
        ckpt.adam.v.push_back(v);
    }
    return ckpt;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    testutil::TempDir dir("ckpt");
    ModelCheckpoint ckpt = small_checkpoint();
    std::string path = dir.path("model.gmsl");
    save_checkpoint(ckpt, path);
    ModelCheckpoint loaded = load_checkpoint(path);

    CHECK(loaded.format_version == ckpt.format_version);
    CHECK(loaded.encoder_config.hidden_dim == ckpt.encoder_config.hidden_dim);
    CHECK(loaded.encoder_config.depth == ckpt.encoder_config.depth);
    CHECK(loaded.encoder_config.seed == ckpt.encoder_config.seed);
    CHECK(loaded.params.w_in.data == ckpt.params.w_in.data);
    CHECK(loaded.params.w_msg.data == ckpt.params.w_msg.data);
    CHECK(loaded.params.w_node.data == ckpt.params.w_node.data);
    CHECK(loaded.adam.step == 3);
    REQUIRE(loaded.adam.m.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(loaded.adam.m[static_cast<std::size_t>(i)].data ==
              ckpt.adam.m[static_cast<std::size_t>(i)].data);
        CHECK(loaded.adam.v[static_cast<std::size_t>(i)].data ==
              ckpt.adam.v[static_cast<std::size_t>(i)].data);
    }
    CHECK(loaded.loss_history == ckpt.loss_history);
    CHECK(loaded.grad_norm_history == ckpt.grad_norm_history);
    CHECK(loaded.completed_epochs == 3);
    CHECK(loaded.train_config.fusion.fingerprint == 1.0);

    // Saving the loaded checkpoint reproduces the same bytes.
    std::string path2 = dir.path("model2.gmsl");
    save_checkpoint(loaded, path2);
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("checkpoint error paths") {
    testutil::TempDir dir("ckpterr");
    ModelCheckpoint ckpt = small_checkpoint();
    std::string path = dir.path("model.gmsl");
    save_checkpoint(ckpt, path);
    std::string bytes = read_file(path);

    SUBCASE("wrong magic") {
        testutil::write_text(dir.path("bad.gmsl"), "NOPE" + bytes.substr(4));
        CHECK_THROWS_AS(load_checkpoint(dir.path("bad.gmsl")), MagicError);
    }
    SUBCASE("truncated") {
        testutil::write_text(dir.path("cut.gmsl"), bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(dir.path("cut.gmsl")), CorruptionError);
    }
    SUBCASE("unsupported version") {
        std::string v = bytes;
        v[4] = 99;  // little-endian version field
        testutil::write_text(dir.path("v99.gmsl"), v);
        CHECK_THROWS_AS(load_checkpoint(dir.path("v99.gmsl")), VersionError);
    }
    SUBCASE("trailing bytes") {
        testutil::write_text(dir.path("pad.gmsl"), bytes + "x");
        CHECK_THROWS_AS(load_checkpoint(dir.path("pad.gmsl")), CorruptionError);
    }
}
