// Command-line frontend for the graph multi-similarity learning toolkit.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmsl/gmsl.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

// Every run logs its fully resolved configuration before doing any work.
void log_config(const std::string& subcommand, const json& config) {
    json line = config;
    line["subcommand"] = subcommand;
    std::cerr << "config: " << line.dump() << "\n";
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
}

gmsl::Modality modality_from_name(const std::string& name) {
    if (name == "smiles") return gmsl::Modality::Smiles;
    if (name == "nmr") return gmsl::Modality::Nmr;
    if (name == "image") return gmsl::Modality::Image;
    if (name == "fingerprint") return gmsl::Modality::Fingerprint;
    throw CLI::ValidationError("--modality", "unknown modality '" + name + "'");
}

// --- parse ---------------------------------------------------------------------

struct ParseOpts {
    std::string in;
    bool stats = false;
    bool strict_valence = false;
};

int run_parse(const ParseOpts& opt) {
    log_config("parse", {{"in", opt.in}, {"stats", opt.stats},
                         {"strict_valence", opt.strict_valence}});
    gmsl::SmilesOptions smiles_opts;
    smiles_opts.strict_valence = opt.strict_valence;
    gmsl::MoleculePool pool = gmsl::load_molecules(opt.in, smiles_opts);
    if (opt.stats) {
        for (const auto& rec : pool.molecules)
            std::cout << rec.id << "\t" << rec.graph.atom_count() << "\t"
                      << rec.graph.bond_count() << "\n";
    }
    std::cerr << "parsed " << pool.size() << " molecules\n";
    return kExitOk;
}

// --- fingerprint -----------------------------------------------------------------

struct FingerprintOpts {
    std::string in;
    std::uint32_t radius = 2;
    std::uint32_t bits = 2048;
    std::string out;
};

int run_fingerprint(const FingerprintOpts& opt) {
    log_config("fingerprint",
               {{"in", opt.in}, {"radius", opt.radius}, {"bits", opt.bits}, {"out", opt.out}});
    gmsl::MoleculePool pool = gmsl::load_molecules(opt.in);
    std::vector<std::string> ids;
    std::vector<gmsl::Fingerprint> fps;
    for (const auto& rec : pool.molecules) {
        ids.push_back(rec.id);
        fps.push_back(gmsl::ecfp(rec.graph, opt.radius, opt.bits));
    }
    gmsl::save_fingerprint_cache(opt.out, ids, fps);
    std::cerr << "wrote " << fps.size() << " fingerprints to " << opt.out << "\n";
    return kExitOk;
}

// --- simmatrix ---------------------------------------------------------------------

struct SimmatrixOpts {
    std::string modality;
    std::string embeddings;
    std::string fingerprints;
    std::string out;
    std::string format = "csv";
    bool pair_weight = false;
    std::size_t threads = 1;
};

int run_simmatrix(const SimmatrixOpts& opt) {
    log_config("simmatrix", {{"modality", opt.modality},
                             {"embeddings", opt.embeddings},
                             {"fingerprints", opt.fingerprints},
                             {"out", opt.out},
                             {"format", opt.format},
                             {"pair_weight", opt.pair_weight},
                             {"threads", opt.threads}});
    gmsl::Modality modality = modality_from_name(opt.modality);

    gmsl::SelfSimilarityMatrix self;
    if (modality == gmsl::Modality::Fingerprint) {
        if (opt.fingerprints.empty())
            throw gmsl::DataError("simmatrix: fingerprint modality needs --fingerprints");
        gmsl::FingerprintCache cache = gmsl::load_fingerprint_cache(opt.fingerprints);
        self = gmsl::fingerprint_self_similarity(cache.fps, cache.ids, opt.threads);
    } else {
        if (opt.embeddings.empty())
            throw gmsl::DataError("simmatrix: cosine modalities need --embeddings");
        gmsl::EmbeddingTable table = gmsl::load_embeddings(opt.embeddings, modality);
        std::vector<std::vector<double>> vectors;
        for (const std::string& id : table.ids) vectors.push_back(*table.find(id));
        self = gmsl::cosine_self_similarity(vectors, table.ids, modality, opt.threads);
    }

    const gmsl::Matrix& values =
        opt.pair_weight ? gmsl::pair_weight(self).values : self.values;
    if (opt.format == "csv")
        gmsl::write_matrix_csv(opt.out, self.ids, values);
    else
        gmsl::write_matrix_bin(opt.out, values, static_cast<std::uint8_t>(modality));
    std::cerr << "wrote " << values.rows << "x" << values.cols << " matrix to " << opt.out
              << "\n";
    return kExitOk;
}

// --- fuse ------------------------------------------------------------------------

struct FuseOpts {
    std::string inputs;
    std::string weights;
    std::string preset;
    std::string out;
};

int run_fuse(const FuseOpts& opt) {
    gmsl::FusionWeights weights;
    if (!opt.preset.empty()) {
        auto w = gmsl::fusion_preset(opt.preset);
        if (!w)
            throw CLI::ValidationError("--fusion-preset", "unknown preset '" + opt.preset + "'");
        weights = *w;
    } else if (!opt.weights.empty()) {
        std::vector<std::string> parts = split_commas(opt.weights);
        if (parts.size() != 4)
            throw CLI::ValidationError("--weights", "expected 4 comma-separated values");
        double parsed[4];
        for (int i = 0; i < 4; ++i) {
            try {
                parsed[i] = std::stod(parts[static_cast<std::size_t>(i)]);
            } catch (const std::exception&) {
                throw CLI::ValidationError(
                    "--weights", "bad number '" + parts[static_cast<std::size_t>(i)] + "'");
            }
        }
        weights = {parsed[0], parsed[1], parsed[2], parsed[3]};
        try {
            gmsl::validate_fusion_weights(weights);
        } catch (const gmsl::WeightSumError& e) {
            throw CLI::ValidationError("--weights", e.what());
        }
    } else {
        throw CLI::ValidationError("fuse", "either --weights or --fusion-preset is required");
    }

    log_config("fuse", {{"inputs", opt.inputs},
                        {"weights", weights.as_array()},
                        {"preset", opt.preset},
                        {"out", opt.out}});

    std::vector<std::string> paths = split_commas(opt.inputs);
    if (paths.size() != 4)
        throw gmsl::DataError("fuse: expected 4 input matrices in (smiles, nmr, image, "
                              "fingerprint) order, got " +
                              std::to_string(paths.size()));

    std::vector<gmsl::LoadedMatrix> loaded;
    bool all_have_ids = true;
    for (const std::string& p : paths) {
        loaded.push_back(gmsl::read_matrix_auto(p));
        if (loaded.back().ids.empty()) all_have_ids = false;
        gmsl::check_row_stochastic(loaded.back().values, 1e-9, p);
    }
    std::vector<std::string> ids;
    if (all_have_ids) {
        ids = loaded[0].ids;
    } else {
        for (std::size_t i = 0; i < loaded[0].values.rows; ++i) ids.push_back(std::to_string(i));
    }
    std::vector<gmsl::TargetSimilarityMatrix> mats;
    for (auto& lm : loaded) {
        if (lm.values.rows != loaded[0].values.rows)
            throw gmsl::IdMismatchError("fuse: input matrices have different sizes");
        gmsl::TargetSimilarityMatrix t;
        t.values = std::move(lm.values);
        t.ids = all_have_ids ? lm.ids : ids;
        mats.push_back(std::move(t));
    }
    gmsl::TargetSimilarityMatrix fused = gmsl::fuse(mats, weights);

    bool csv = opt.out.size() >= 4 && opt.out.compare(opt.out.size() - 4, 4, ".csv") == 0;
    if (csv)
        gmsl::write_matrix_csv(opt.out, fused.ids, fused.values);
    else
        gmsl::write_matrix_bin(opt.out, fused.values, gmsl::kFusedMatrixTag);
    std::cerr << "wrote fused " << fused.size() << "x" << fused.size() << " matrix to "
              << opt.out << "\n";
    return kExitOk;
}

// --- pretrain -----------------------------------------------------------------------

struct PretrainOpts {
    std::string mols;
    std::string level = "graph";
    std::string preset = "fingerprint";
    std::string embeddings_smiles, embeddings_nmr, embeddings_image;
    std::string peaks;
    double lr = 0.001;
    std::uint32_t epochs = 200;
    std::uint32_t batch = 256;
    double tau1 = 1.0;
    double tau2 = 1.0;
    std::string latent = "cosine";
    double latent_temp = 0.1;
    std::uint64_t seed = 0;
    std::string out;
    std::string history;
    std::string resume;
    std::uint32_t hidden = 300;
    std::uint32_t depth = 3;
    std::string readout = "mean";
    std::uint32_t fp_radius = 2;
    std::uint32_t fp_bits = 2048;
    bool permissive = false;
};

int run_pretrain(const PretrainOpts& opt) {
    auto preset = gmsl::fusion_preset(opt.preset);
    if (!preset)
        throw CLI::ValidationError("--fusion-preset", "unknown preset '" + opt.preset + "'");

    gmsl::TrainConfig cfg;
    cfg.learning_rate = opt.lr;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.level = opt.level == "graph"  ? gmsl::TrainLevel::Graph
                : opt.level == "node" ? gmsl::TrainLevel::Node
                                      : gmsl::TrainLevel::Bilevel;
    cfg.fusion = *preset;
    cfg.seed = opt.seed;
    cfg.latent.mode =
        opt.latent == "dot" ? gmsl::LatentMode::Dot : gmsl::LatentMode::ScaledCosine;
    cfg.latent.temperature = opt.latent_temp;
    cfg.tau1 = opt.tau1;
    cfg.tau2 = opt.tau2;
    cfg.permissive_modalities = opt.permissive;

    gmsl::EncoderConfig enc;
    enc.hidden_dim = opt.hidden;
    enc.depth = opt.depth;
    enc.readout = opt.readout == "sum" ? gmsl::Readout::Sum : gmsl::Readout::Mean;
    enc.seed = opt.seed;

    std::string history_path = opt.history.empty() ? opt.out + ".history.csv" : opt.history;
    log_config("pretrain",
               {{"mols", opt.mols},
                {"level", opt.level},
                {"fusion", cfg.fusion.as_array()},
                {"embeddings_smiles", opt.embeddings_smiles},
                {"embeddings_nmr", opt.embeddings_nmr},
                {"embeddings_image", opt.embeddings_image},
                {"peaks", opt.peaks},
                {"lr", cfg.learning_rate},
                {"epochs", cfg.epochs},
                {"batch", cfg.batch_size},
                {"tau1", cfg.tau1},
                {"tau2", cfg.tau2},
                {"latent", opt.latent},
                {"latent_temp", cfg.latent.temperature},
                {"seed", cfg.seed},
                {"hidden", opt.hidden},
                {"depth", opt.depth},
                {"readout", opt.readout},
                {"fp_radius", opt.fp_radius},
                {"fp_bits", opt.fp_bits},
                {"permissive", opt.permissive},
                {"resume", opt.resume},
                {"out", opt.out},
                {"history", history_path}});

    gmsl::MoleculePool pool = gmsl::load_molecules(opt.mols);

    std::optional<gmsl::EmbeddingTable> smiles_table, nmr_table, image_table;
    std::optional<gmsl::PeakTable> peak_table;
    if (!opt.embeddings_smiles.empty())
        smiles_table = gmsl::load_embeddings(opt.embeddings_smiles, gmsl::Modality::Smiles);
    if (!opt.embeddings_nmr.empty())
        nmr_table = gmsl::load_embeddings(opt.embeddings_nmr, gmsl::Modality::Nmr);
    if (!opt.embeddings_image.empty())
        image_table = gmsl::load_embeddings(opt.embeddings_image, gmsl::Modality::Image);
    if (!opt.peaks.empty()) peak_table = gmsl::load_peaks(opt.peaks, &pool);

    gmsl::ModalityInputs inputs;
    if (smiles_table) inputs.smiles = &*smiles_table;
    if (nmr_table) inputs.nmr = &*nmr_table;
    if (image_table) inputs.image = &*image_table;
    if (peak_table) inputs.peaks = &*peak_table;
    inputs.fp_radius = opt.fp_radius;
    inputs.fp_bits = opt.fp_bits;

    std::optional<gmsl::ModelCheckpoint> resume;
    if (!opt.resume.empty()) resume = gmsl::load_checkpoint(opt.resume);

    gmsl::ModelCheckpoint ckpt = gmsl::pretrain(pool, inputs, cfg, enc, resume);
    gmsl::save_checkpoint(ckpt, opt.out);
    gmsl::atomic_write_file(history_path, gmsl::history_csv(ckpt));

    double final_loss = ckpt.loss_history.empty() ? 0.0 : ckpt.loss_history.back();
    std::cerr << "trained " << ckpt.completed_epochs << " epochs ("
              << ckpt.loss_history.size() << " steps), final batch loss " << final_loss
              << "; checkpoint " << opt.out << ", history " << history_path << "\n";
    return kExitOk;
}

// --- verify-theorem ---------------------------------------------------------------

struct VerifyOpts {
    std::size_t n = 0;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    std::size_t max_steps = 50000;
    double tol = 1e-3;
};

int run_verify_theorem(const VerifyOpts& opt) {
    log_config("verify-theorem", {{"n", opt.n},
                                  {"trials", opt.trials},
                                  {"seed", opt.seed},
                                  {"max_steps", opt.max_steps},
                                  {"tol", opt.tol}});
    gmsl::TheoremOptions topts;
    topts.max_steps = opt.max_steps;
    try {
        gmsl::TheoremReport r = gmsl::verify_theorem(opt.n, opt.trials, opt.seed, topts);
        json report = {{"n", r.n},
                       {"trials", r.trials},
                       {"max_softmax_deviation", r.max_softmax_deviation},
                       {"ordering_violations", r.ordering_violations},
                       {"total_steps", r.total_steps},
                       {"trial_deviations", r.trial_deviations},
                       {"converged", true}};
        std::cout << report.dump() << "\n";
        if (r.max_softmax_deviation > opt.tol || r.ordering_violations > 0) {
            std::cerr << "theorem verification failed tolerance " << opt.tol << "\n";
            return kExitNumerical;
        }
        return kExitOk;
    } catch (const gmsl::NonConvergenceError& e) {
        json report = {{"n", opt.n},
                       {"trials", opt.trials},
                       {"converged", false},
                       {"achieved_deviation", e.achieved_deviation},
                       {"steps", e.steps},
                       {"error", e.what()}};
        std::cout << report.dump() << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
}

// --- embed -------------------------------------------------------------------------

struct EmbedOpts {
    std::string ckpt;
    std::string mols;
    std::string out;
};

std::vector<std::vector<double>> embed_pool(const gmsl::ModelCheckpoint& ckpt,
                                            const gmsl::MoleculePool& pool) {
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(pool.size());
    for (const auto& rec : pool.molecules)
        embeddings.push_back(
            gmsl::encode_values(gmsl::featurize(rec.graph), ckpt.params, ckpt.encoder_config)
                .graph_embedding);
    return embeddings;
}

int run_embed(const EmbedOpts& opt) {
    log_config("embed", {{"ckpt", opt.ckpt}, {"mols", opt.mols}, {"out", opt.out}});
    gmsl::ModelCheckpoint ckpt = gmsl::load_checkpoint(opt.ckpt);
    gmsl::MoleculePool pool = gmsl::load_molecules(opt.mols);
    std::vector<std::vector<double>> embeddings = embed_pool(ckpt, pool);
    std::string out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        json line = {{"id", pool.molecules[i].id}, {"vector", embeddings[i]}};
        out += line.dump();
        out += '\n';
    }
    gmsl::atomic_write_file(opt.out, out);
    std::cerr << "wrote " << pool.size() << " embeddings to " << opt.out << "\n";
    return kExitOk;
}

// --- probe -------------------------------------------------------------------------

struct ProbeOpts {
    std::string ckpt;
    std::string mols;
    std::string task = "cls";
    std::string split = "0.8,0.1,0.1";
    std::uint64_t seed = 0;
    std::uint32_t label_col = 0;
};

int run_probe(const ProbeOpts& opt) {
    log_config("probe", {{"ckpt", opt.ckpt},
                         {"mols", opt.mols},
                         {"task", opt.task},
                         {"split", opt.split},
                         {"seed", opt.seed},
                         {"label_col", opt.label_col}});
    std::vector<std::string> parts = split_commas(opt.split);
    if (parts.size() != 3) throw CLI::ValidationError("--split", "expected three ratios");
    gmsl::SplitRatios split;
    try {
        split = {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
    } catch (const std::exception&) {
        throw CLI::ValidationError("--split", "ratios must be numbers");
    }

    gmsl::ModelCheckpoint ckpt = gmsl::load_checkpoint(opt.ckpt);
    gmsl::MoleculePool pool = gmsl::load_molecules(opt.mols);
    std::vector<std::vector<double>> all = embed_pool(ckpt, pool);
    std::vector<std::vector<double>> embeddings;
    std::vector<double> labels;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& rec_labels = pool.molecules[i].labels;
        if (opt.label_col < rec_labels.size() && rec_labels[opt.label_col].has_value()) {
            embeddings.push_back(all[i]);
            labels.push_back(*rec_labels[opt.label_col]);
        }
    }
    gmsl::ProbeTask task =
        opt.task == "reg" ? gmsl::ProbeTask::Regression : gmsl::ProbeTask::Classification;
    gmsl::ProbeResult result = gmsl::linear_probe(embeddings, labels, task, split, opt.seed);
    json out = {{"task", opt.task},
                {"metric", task == gmsl::ProbeTask::Regression ? "rmse" : "roc_auc"},
                {"value", result.metric},
                {"seed", result.seed},
                {"split", {split.train, split.val, split.test}},
                {"n_labeled", labels.size()}};
    std::cout << out.dump() << "\n";
    return kExitOk;
}

// --- retrieval-check -----------------------------------------------------------------

struct RetrievalOpts {
    std::string ckpt;
    std::string mols;
    std::uint32_t radius = 2;
    std::uint32_t bits = 2048;
    std::uint64_t seed = 0;
};

int run_retrieval_check(const RetrievalOpts& opt) {
    log_config("retrieval-check", {{"ckpt", opt.ckpt},
                                   {"mols", opt.mols},
                                   {"radius", opt.radius},
                                   {"bits", opt.bits},
                                   {"seed", opt.seed}});
    gmsl::ModelCheckpoint ckpt = gmsl::load_checkpoint(opt.ckpt);
    gmsl::MoleculePool pool = gmsl::load_molecules(opt.mols);
    std::vector<std::vector<double>> embeddings = embed_pool(ckpt, pool);
    std::vector<gmsl::Fingerprint> fps;
    for (const auto& rec : pool.molecules)
        fps.push_back(gmsl::ecfp(rec.graph, opt.radius, opt.bits));
    gmsl::RetrievalReport report = gmsl::retrieval_check(embeddings, fps, opt.seed);
    json out = {{"mean_nn_tanimoto", report.mean_nn_tanimoto},
                {"mean_random_tanimoto", report.mean_random_tanimoto}};
    std::cout << out.dump() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph multi-similarity learning toolkit"};
    app.require_subcommand(1);

    ParseOpts parse_opts;
    CLI::App* parse_cmd = app.add_subcommand("parse", "parse a molecule dataset");
    parse_cmd->add_option("--in", parse_opts.in, "molecule JSON Lines file")->required();
    parse_cmd->add_flag("--stats", parse_opts.stats, "print per-molecule atom/bond counts");
    parse_cmd->add_flag("--strict-valence", parse_opts.strict_valence,
                        "reject over-valent atoms");

    FingerprintOpts fp_opts;
    CLI::App* fp_cmd = app.add_subcommand("fingerprint", "compute circular fingerprints");
    fp_cmd->add_option("--in", fp_opts.in, "molecule JSON Lines file")->required();
    fp_cmd->add_option("--radius", fp_opts.radius, "circular radius")->default_val(2);
    fp_cmd->add_option("--bits", fp_opts.bits, "fingerprint width")->default_val(2048);
    fp_cmd->add_option("--out", fp_opts.out, "fingerprint cache output")->required();

    SimmatrixOpts sim_opts;
    CLI::App* sim_cmd = app.add_subcommand("simmatrix", "build a self-similarity matrix");
    sim_cmd->add_option("--modality", sim_opts.modality, "smiles|nmr|image|fingerprint")
        ->required();
    sim_cmd->add_option("--embeddings", sim_opts.embeddings,
                        "embedding JSON Lines (cosine modalities)");
    sim_cmd->add_option("--fingerprints", sim_opts.fingerprints,
                        "fingerprint cache (fingerprint modality)");
    sim_cmd->add_option("--out", sim_opts.out, "output path")->required();
    sim_cmd->add_option("--format", sim_opts.format, "csv|bin")
        ->default_val("csv")
        ->check(CLI::IsMember({"csv", "bin"}));
    sim_cmd->add_flag("--pair-weight", sim_opts.pair_weight,
                      "emit the softmax pair-weighted target matrix instead of raw "
                      "self-similarities");
    sim_cmd->add_option("--threads", sim_opts.threads, "row-parallel workers")->default_val(1);

    FuseOpts fuse_opts;
    CLI::App* fuse_cmd = app.add_subcommand("fuse", "fuse target similarity matrices");
    fuse_cmd->add_option("--inputs", fuse_opts.inputs,
                         "4 comma-separated matrices (smiles,nmr,image,fingerprint)")
        ->required();
    fuse_cmd->add_option("--weights", fuse_opts.weights,
                         "w_smiles,w_nmr,w_image,w_fingerprint");
    fuse_cmd->add_option("--fusion-preset", fuse_opts.preset, "named weight preset");
    fuse_cmd->add_option("--out", fuse_opts.out, "output path (.csv for CSV, else binary)")
        ->required();

    PretrainOpts pre_opts;
    CLI::App* pre_cmd = app.add_subcommand("pretrain", "pre-train the graph encoder");
    pre_cmd->add_option("--mols", pre_opts.mols, "molecule JSON Lines file")->required();
    pre_cmd->add_option("--level", pre_opts.level, "graph|node|bilevel")
        ->default_val("graph")
        ->check(CLI::IsMember({"graph", "node", "bilevel"}));
    pre_cmd->add_option("--fusion-preset", pre_opts.preset, "named fusion weights")
        ->default_val("fingerprint");
    pre_cmd->add_option("--embeddings-smiles", pre_opts.embeddings_smiles,
                        "smiles embedding JSON Lines");
    pre_cmd->add_option("--embeddings-nmr", pre_opts.embeddings_nmr,
                        "nmr embedding JSON Lines");
    pre_cmd->add_option("--embeddings-image", pre_opts.embeddings_image,
                        "image embedding JSON Lines");
    pre_cmd->add_option("--peaks", pre_opts.peaks, "NMR peak JSON Lines (node levels)");
    pre_cmd->add_option("--lr", pre_opts.lr, "learning rate")->default_val(0.001);
    pre_cmd->add_option("--epochs", pre_opts.epochs, "training epochs")->default_val(200);
    pre_cmd->add_option("--batch", pre_opts.batch, "batch size")->default_val(256);
    pre_cmd->add_option("--tau1", pre_opts.tau1, "ppm similarity tau1")->default_val(1.0);
    pre_cmd->add_option("--tau2", pre_opts.tau2, "ppm similarity tau2")->default_val(1.0);
    pre_cmd->add_option("--latent", pre_opts.latent, "dot|cosine")
        ->default_val("cosine")
        ->check(CLI::IsMember({"dot", "cosine"}));
    pre_cmd->add_option("--latent-temp", pre_opts.latent_temp, "cosine temperature")
        ->default_val(0.1);
    pre_cmd->add_option("--seed", pre_opts.seed, "RNG seed")->default_val(0);
    pre_cmd->add_option("--out", pre_opts.out, "checkpoint output")->required();
    pre_cmd->add_option("--history", pre_opts.history,
                        "loss history CSV (default <out>.history.csv)");
    pre_cmd->add_option("--resume", pre_opts.resume, "checkpoint to continue from");
    pre_cmd->add_option("--hidden", pre_opts.hidden, "encoder width")->default_val(300);
    pre_cmd->add_option("--depth", pre_opts.depth, "message passing steps")->default_val(3);
    pre_cmd->add_option("--readout", pre_opts.readout, "sum|mean")
        ->default_val("mean")
        ->check(CLI::IsMember({"sum", "mean"}));
    pre_cmd->add_option("--fp-radius", pre_opts.fp_radius, "fingerprint radius")
        ->default_val(2);
    pre_cmd->add_option("--fp-bits", pre_opts.fp_bits, "fingerprint width")->default_val(2048);
    pre_cmd->add_flag("--permissive", pre_opts.permissive,
                      "renormalize fusion weights over available modalities");

    VerifyOpts verify_opts;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify-theorem", "numerically verify convergent similarity learning");
    verify_cmd->add_option("--n", verify_opts.n, "pool size")->required();
    verify_cmd->add_option("--trials", verify_opts.trials, "random targets to test")
        ->required();
    verify_cmd->add_option("--seed", verify_opts.seed, "RNG seed")->default_val(0);
    verify_cmd->add_option("--max-steps", verify_opts.max_steps, "optimizer step cap")
        ->default_val(50000);
    verify_cmd->add_option("--tol", verify_opts.tol, "max softmax deviation")
        ->default_val(1e-3);

    EmbedOpts embed_opts;
    CLI::App* embed_cmd = app.add_subcommand("embed", "emit graph embeddings");
    embed_cmd->add_option("--ckpt", embed_opts.ckpt, "model checkpoint")->required();
    embed_cmd->add_option("--mols", embed_opts.mols, "molecule JSON Lines file")->required();
    embed_cmd->add_option("--out", embed_opts.out, "embedding JSON Lines output")->required();

    ProbeOpts probe_opts;
    CLI::App* probe_cmd = app.add_subcommand("probe", "linear probe on frozen embeddings");
    probe_cmd->add_option("--ckpt", probe_opts.ckpt, "model checkpoint")->required();
    probe_cmd->add_option("--mols", probe_opts.mols, "labeled molecule file")->required();
    probe_cmd->add_option("--task", probe_opts.task, "cls|reg")
        ->default_val("cls")
        ->check(CLI::IsMember({"cls", "reg"}));
    probe_cmd->add_option("--split", probe_opts.split, "train,val,test ratios")
        ->default_val("0.8,0.1,0.1");
    probe_cmd->add_option("--seed", probe_opts.seed, "RNG seed")->default_val(0);
    probe_cmd->add_option("--label-col", probe_opts.label_col, "label column index")
        ->default_val(0);

    RetrievalOpts retr_opts;
    CLI::App* retr_cmd =
        app.add_subcommand("retrieval-check", "nearest-neighbor embedding quality probe");
    retr_cmd->add_option("--ckpt", retr_opts.ckpt, "model checkpoint")->required();
    retr_cmd->add_option("--mols", retr_opts.mols, "molecule JSON Lines file")->required();
    retr_cmd->add_option("--radius", retr_opts.radius, "fingerprint radius")->default_val(2);
    retr_cmd->add_option("--bits", retr_opts.bits, "fingerprint width")->default_val(2048);
    retr_cmd->add_option("--seed", retr_opts.seed, "RNG seed")->default_val(0);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(parse_cmd)) return run_parse(parse_opts);
        if (app.got_subcommand(fp_cmd)) return run_fingerprint(fp_opts);
        if (app.got_subcommand(sim_cmd)) return run_simmatrix(sim_opts);
        if (app.got_subcommand(fuse_cmd)) return run_fuse(fuse_opts);
        if (app.got_subcommand(pre_cmd)) return run_pretrain(pre_opts);
        if (app.got_subcommand(verify_cmd)) return run_verify_theorem(verify_opts);
        if (app.got_subcommand(embed_cmd)) return run_embed(embed_opts);
        if (app.got_subcommand(probe_cmd)) return run_probe(probe_opts);
        if (app.got_subcommand(retr_cmd)) return run_retrieval_check(retr_opts);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const gmsl::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const gmsl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
