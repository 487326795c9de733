// tomcap: command-line front end for ingest, stats, inference, training-pair
// generation, evaluation and gap diagnostics.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tomcap/config.hpp"
#include "tomcap/datastore.hpp"
#include "tomcap/decoder.hpp"
#include "tomcap/diagnostics.hpp"
#include "tomcap/error.hpp"
#include "tomcap/formats.hpp"
#include "tomcap/gap_correction.hpp"
#include "tomcap/metrics.hpp"
#include "tomcap/pipeline.hpp"

namespace {

using namespace tomcap;
namespace fs = std::filesystem;

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::string image_stats;
    std::string text_stats;
    std::string decoder;
    std::optional<std::size_t> threads;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--set", sets, "Override a config key, e.g. --set K=8 --set rerank.lambda=0.5");
        cmd->add_option("--image-stats", image_stats, "Image modality stats JSON");
        cmd->add_option("--text-stats", text_stats, "Text modality stats JSON");
        cmd->add_option("--decoder", decoder, "top1 | echo | subprocess:<cmd> | http://host:port");
        cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
        cmd->add_option("--seed", seed, "Master seed");
    }

    // Precedence: defaults < config file < TOMCAP_DECODER < flags.
    PipelineConfig resolve() const {
        PipelineConfig cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
        }
        if (const char* env = std::getenv(kDecoderEnvVar); env != nullptr && *env != '\0') {
            const auto timeout = cfg.decoder.timeout;
            cfg.decoder = DecoderEndpoint::parse(env);
            cfg.decoder.timeout = timeout;
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
            }
            nlohmann::json value;
            try {
                value = nlohmann::json::parse(s.substr(eq + 1));
            } catch (const nlohmann::json::parse_error&) {
                value = s.substr(eq + 1);
            }
            nlohmann::json patch = nlohmann::json::object();
            nlohmann::json* cursor = &patch;
            std::stringstream keys(s.substr(0, eq));
            std::string part;
            std::vector<std::string> parts;
            while (std::getline(keys, part, '.')) parts.push_back(part);
            for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
                cursor = &(*cursor)[parts[i]];
            }
            (*cursor)[parts.back()] = value;
            apply_config_json(cfg, patch);
        }
        if (!image_stats.empty()) cfg.image_stats = image_stats;
        if (!text_stats.empty()) cfg.text_stats = text_stats;
        if (!decoder.empty()) {
            const auto timeout = cfg.decoder.timeout;
            cfg.decoder = DecoderEndpoint::parse(decoder);
            cfg.decoder.timeout = timeout;
        }
        if (threads) cfg.threads = *threads;
        if (seed) cfg.seed = *seed;
        cfg.validate();
        return cfg;
    }
};

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

std::vector<std::size_t> parse_k_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(item)));
        } catch (const std::exception&) {
            throw Error(ErrorCode::ConfigError, "bad k value '" + item + "'");
        }
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval engine for text-only-trained image captioning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Build a datastore from embeddings + captions");
    ConfigFlags ingest_cfg;
    std::string ingest_emb, ingest_caps, ingest_out;
    ingest->add_option("--embeddings", ingest_emb, "Caption embedding file (TOMC)")->required();
    ingest->add_option("--captions", ingest_caps, "Caption JSONL")->required();
    ingest->add_option("--out", ingest_out, "Store file to write")->required();
    ingest_cfg.attach(ingest);

    // stats
    auto* stats = app.add_subcommand("stats", "Per-dimension mean/std of an embedding file");
    std::string stats_emb, stats_tag, stats_out;
    stats->add_option("--embeddings", stats_emb, "Embedding file (TOMC)")->required();
    stats->add_option("--tag", stats_tag, "image | text")->required();
    stats->add_option("--out", stats_out, "Stats JSON to write")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "Caption image embeddings");
    ConfigFlags infer_cfg;
    std::string infer_store, infer_queries, infer_ids, infer_out;
    infer->add_option("--store", infer_store, "Store file")->required();
    infer->add_option("--queries", infer_queries, "Image embedding file (TOMC)")->required();
    infer->add_option("--ids", infer_ids, "JSONL of image ids, one per query row");
    infer->add_option("--out", infer_out, "Captions JSONL to write")->required();
    infer_cfg.attach(infer);

    // train-pairs
    auto* train = app.add_subcommand("train-pairs", "Emit decoder training examples");
    ConfigFlags train_cfg;
    std::string train_store, train_emb, train_caps, train_out;
    train->add_option("--store", train_store, "Store file")->required();
    train->add_option("--text-embeddings", train_emb, "Raw caption embedding file (TOMC)")->required();
    train->add_option("--captions", train_caps, "Caption JSONL aligned with the embedding rows");
    train->add_option("--out", train_out, "Training JSONL to write")->required();
    train_cfg.attach(train);

    // eval
    auto* eval = app.add_subcommand("eval", "BLEU@1, BLEU@4 and CIDEr-D");
    std::string eval_cands, eval_refs, eval_out;
    eval->add_option("--candidates", eval_cands, "JSONL with image_id + caption")->required();
    eval->add_option("--references", eval_refs, "JSONL with image_id + references")->required();
    eval->add_option("--out", eval_out, "Report JSON (stdout if omitted)");

    // diagnose
    auto* diagnose = app.add_subcommand("diagnose", "Modality-gap diagnostics");
    diagnose->require_subcommand(1);
    auto* knor_cmd = diagnose->add_subcommand("knor", "k-NN overlap between paired image/text queries");
    ConfigFlags knor_cfg;
    std::string knor_store, knor_img, knor_txt, knor_out, knor_csv, knor_k = "5,10,15,50,100";
    bool knor_raw = false;
    bool knor_noise = false;
    knor_cmd->add_option("--store", knor_store, "Store file")->required();
    knor_cmd->add_option("--image-queries", knor_img, "Image embeddings (TOMC)")->required();
    knor_cmd->add_option("--text-queries", knor_txt, "Paired caption embeddings (TOMC)")->required();
    knor_cmd->add_option("--k", knor_k, "Comma-separated k values");
    knor_cmd->add_option("--out", knor_out, "Report JSON (stdout if omitted)");
    knor_cmd->add_option("--csv", knor_csv, "Per-k CSV");
    knor_cmd->add_flag("--raw", knor_raw, "Skip the configured correction");
    knor_cmd->add_flag("--noise", knor_noise, "Add L-scaled noise to the text queries");
    knor_cfg.attach(knor_cmd);

    auto* export_cmd = diagnose->add_subcommand("export", "CSV for external projection tools");
    std::vector<std::string> export_inputs;
    std::string export_out;
    export_cmd->add_option("--input", export_inputs, "label=embedding_file (repeatable)")->required();
    export_cmd->add_option("--out", export_out, "CSV to write")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::Fatal);
    }

    try {
        if (ingest->parsed()) {
            const auto cfg = ingest_cfg.resolve();
            const auto summary = run_ingest(ingest_emb, ingest_caps, cfg, ingest_out);
            RunManifest m{"ingest", config_to_json(cfg), {ingest_emb, ingest_caps}, {ingest_out}};
            m.extra["rows"] = summary.rows;
            m.extra["dim"] = summary.dim;
            m.write(manifest_path(ingest_out));
            std::cerr << "ingested " << summary.rows << " rows of dim " << summary.dim << "\n";
            return 0;
        }
        if (stats->parsed()) {
            EmbeddingReader reader(stats_emb);
            StatsAccumulator acc(reader.dim());
            EmbeddingVector row;
            while (reader.next(row)) acc.add(row);
            save_stats(acc.finish(parse_modality(stats_tag)), stats_out);
            return 0;
        }
        if (infer->parsed()) {
            const auto cfg = infer_cfg.resolve();
            const auto store = Datastore::load(infer_store);
            const auto ids = infer_ids.empty() ? std::vector<std::uint64_t>{} : read_query_ids(infer_ids);
            auto decoder = make_decoder(cfg.decoder);
            std::ofstream out(infer_out, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorCode::IoError, "cannot open '" + infer_out + "'");
            const auto summary = run_infer(store, infer_queries, ids, cfg, *decoder, out);
            out.close();
            RunManifest m{"infer", config_to_json(cfg), {infer_store, infer_queries}, {infer_out}};
            if (!infer_ids.empty()) m.inputs.emplace_back(infer_ids);
            m.extra["items"] = summary.items;
            m.extra["failures"] = summary.failures;
            m.write(manifest_path(infer_out));
            if (summary.failures > 0) {
                std::cerr << summary.failures << " of " << summary.items << " items failed\n";
                return static_cast<int>(ExitCode::ItemFailures);
            }
            return 0;
        }
        if (train->parsed()) {
            const auto cfg = train_cfg.resolve();
            const auto store = Datastore::load(train_store);
            std::vector<std::uint64_t> ids;
            if (!train_caps.empty()) {
                for (const auto& c : read_captions(train_caps)) ids.push_back(c.id);
            }
            std::ofstream out(train_out, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorCode::IoError, "cannot open '" + train_out + "'");
            const auto summary = run_train_pairs(store, train_emb, ids, cfg, out);
            out.close();
            RunManifest m{"train-pairs", config_to_json(cfg), {train_store, train_emb}, {train_out}};
            m.extra["items"] = summary.items;
            m.write(manifest_path(train_out));
            return 0;
        }
        if (eval->parsed()) {
            const auto result = run_eval(eval_cands, eval_refs);
            if (!result.unmatched_ids.empty()) {
                std::cerr << "warning: " << result.unmatched_ids.size()
                          << " image ids unmatched and excluded\n";
            }
            auto j = nlohmann::ordered_json::parse(report_to_json(result.report, result.instances));
            j["unmatched_ids"] = result.unmatched_ids;
            if (eval_out.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                write_text(eval_out, j.dump(2));
            }
            return 0;
        }
        if (knor_cmd->parsed()) {
            const auto cfg = knor_cfg.resolve();
            const auto store = Datastore::load(knor_store);
            auto images = read_embedding_file(knor_img);
            auto texts = read_embedding_file(knor_txt);
            if (!knor_raw) {
                const auto img_corr = image_side_corrector(cfg, store.dim());
                const auto txt_corr = text_side_corrector(cfg, store.dim());
                for (std::size_t i = 0; i < images.rows(); ++i) img_corr.apply_in_place(images.row(i));
                for (std::size_t i = 0; i < texts.rows(); ++i) txt_corr.apply_in_place(texts.row(i));
            }
            if (knor_noise && cfg.L > 0.0) {
                for (std::size_t i = 0; i < texts.rows(); ++i) {
                    const NoiseConfig n{cfg.L, cfg.noise_mode, derive_seed(cfg.seed, streams::kQueryNoise, i)};
                    const auto noisy = inject_noise(texts.row(i), n);
                    std::copy(noisy.begin(), noisy.end(), texts.row(i).begin());
                }
            }
            const auto ks = parse_k_list(knor_k);
            const auto report = knor(store, images, texts, ks, cfg.threads);
            if (knor_out.empty()) {
                std::cout << knor_to_json(report) << "\n";
            } else {
                write_text(knor_out, knor_to_json(report));
            }
            if (!knor_csv.empty()) {
                write_text(knor_csv, knor_to_csv(report));
            }
            return 0;
        }
        if (export_cmd->parsed()) {
            std::vector<EmbeddingMatrix> matrices;
            std::vector<std::string> labels;
            for (const auto& item : export_inputs) {
                const auto eq = item.find('=');
                if (eq == std::string::npos) {
                    throw Error(ErrorCode::ConfigError, "--input expects label=path, got '" + item + "'");
                }
                labels.push_back(item.substr(0, eq));
                matrices.push_back(read_embedding_file(item.substr(eq + 1)));
            }
            std::vector<LabeledMatrix> labeled;
            for (std::size_t i = 0; i < matrices.size(); ++i) {
                labeled.push_back({labels[i], &matrices[i]});
            }
            export_projection_input(labeled, export_out);
            return 0;
        }
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::Fatal);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::Fatal);
    }
    return static_cast<int>(ExitCode::Fatal);
}
