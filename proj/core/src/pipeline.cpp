#include "tomcap/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "tomcap/error.hpp"
#include "tomcap/formats.hpp"
#include "tomcap/parallel.hpp"
#include "tomcap/prompt.hpp"
#include "tomcap/rerank.hpp"
#include "tomcap/rng.hpp"

namespace tomcap {

namespace {

using ojson = nlohmann::ordered_json;

ModalityStats require_stats(const std::optional<std::filesystem::path>& path, Modality modality,
                            std::size_t dim) {
    if (!path) {
        throw Error(ErrorCode::ConfigError, std::string("correction needs ") +
                                                std::string(to_string(modality)) +
                                                " stats (stats." + std::string(to_string(modality)) +
                                                " or --" + std::string(to_string(modality)) +
                                                "-stats)");
    }
    auto stats = load_stats(*path);
    if (stats.dim() != dim) {
        throw Error(ErrorCode::DimMismatch, path->string() + " has dim " +
                                                std::to_string(stats.dim()) + ", data has dim " +
                                                std::to_string(dim));
    }
    stats.modality = modality;
    return stats;
}

NoiseConfig noise_for(const PipelineConfig& cfg, double scale, std::uint64_t stream,
                      std::size_t index) {
    return NoiseConfig{scale, cfg.noise_mode, derive_seed(cfg.seed, stream, index)};
}

OrderingPolicy ordering_for(const PipelineConfig& cfg, std::size_t index) {
    OrderingPolicy p = cfg.ordering;
    if (p.kind == OrderingKind::Random) {
        p.seed = derive_seed(cfg.ordering.seed, streams::kOrdering, index);
    }
    return p;
}

// Reads rows in windows of cfg.window, computes lines in parallel, writes them
// in input order.
template <typename Fn>
std::size_t for_each_row_windowed(EmbeddingReader& reader, const PipelineConfig& cfg,
                                  std::ostream& out, Fn&& make_line) {
    std::size_t index = 0;
    std::vector<EmbeddingVector> rows;
    std::vector<std::string> lines;
    EmbeddingVector row;
    bool more = true;
    while (more) {
        rows.clear();
        while (rows.size() < cfg.window && (more = reader.next(row))) {
            rows.push_back(row);
        }
        if (rows.empty()) {
            break;
        }
        lines.assign(rows.size(), std::string{});
        const std::size_t base = index;
        parallel_chunks(rows.size(), resolve_threads(cfg.threads),
                        [&](std::size_t, std::size_t begin, std::size_t end) {
                            for (std::size_t i = begin; i < end; ++i) {
                                lines[i] = make_line(base + i, rows[i]);
                            }
                        });
        for (const auto& l : lines) {
            out << l << '\n';
        }
        index += rows.size();
    }
    return index;
}

} // namespace

GapCorrector text_side_corrector(const PipelineConfig& cfg, std::size_t dim) {
    if (cfg.correction_mode == CorrectionMode::None ||
        cfg.correction_direction != CorrectionDirection::TextToImage) {
        return GapCorrector::identity(dim);
    }
    return GapCorrector(require_stats(cfg.text_stats, Modality::Text, dim),
                        require_stats(cfg.image_stats, Modality::Image, dim), cfg.correction_mode,
                        cfg.epsilon_floor);
}

GapCorrector image_side_corrector(const PipelineConfig& cfg, std::size_t dim) {
    if (cfg.correction_mode == CorrectionMode::None ||
        cfg.correction_direction != CorrectionDirection::ImageToText) {
        return GapCorrector::identity(dim);
    }
    return GapCorrector(require_stats(cfg.image_stats, Modality::Image, dim),
                        require_stats(cfg.text_stats, Modality::Text, dim), cfg.correction_mode,
                        cfg.epsilon_floor);
}

IngestSummary run_ingest(const std::filesystem::path& embeddings_path,
                         const std::filesystem::path& captions_path, const PipelineConfig& cfg,
                         const std::filesystem::path& out_store) {
    cfg.validate();
    EmbeddingReader reader(embeddings_path);
    auto captions = read_captions(captions_path);
    if (captions.size() != reader.count()) {
        throw Error(ErrorCode::BuildError, embeddings_path.string() + " has " +
                                               std::to_string(reader.count()) + " rows but " +
                                               captions_path.string() + " has " +
                                               std::to_string(captions.size()) + " captions");
    }
    const auto corrector = text_side_corrector(cfg, reader.dim());
    const bool noisy = cfg.noise.datastore && cfg.L > 0.0;

    DatastoreBuilder builder(reader.dim(), cfg.metric);
    builder.reserve(captions.size());
    EmbeddingVector row;
    std::size_t i = 0;
    while (reader.next(row)) {
        corrector.apply_in_place(row);
        if (noisy) {
            row = inject_noise(row, noise_for(cfg, cfg.L, streams::kDatastoreNoise, i));
        }
        builder.add(row, std::move(captions[i]));
        ++i;
    }
    const auto store = std::move(builder).finish();
    store.save(out_store);
    return {store.size(), store.dim()};
}

std::string CaptionRecordOut::to_jsonl() const {
    ojson j;
    j["image_id"] = image_id;
    if (ok) {
        j["caption"] = caption;
        j["prompt"] = prompt;
        j["neighbor_ids"] = neighbor_ids;
    } else {
        j["error"] = {{"code", to_string(error_code)},
                      {"message", error_message},
                      {"request_id", request_id}};
        j["neighbor_ids"] = neighbor_ids;
    }
    return j.dump();
}

DecoderRequest prepare_inference_request(const Datastore& store, std::span<const double> raw_query,
                                         std::size_t index, const GapCorrector& image_corrector,
                                         const PipelineConfig& cfg,
                                         std::vector<std::uint64_t>* neighbor_ids) {
    DecoderRequest req;
    req.request_id = "q" + std::to_string(index);

    EmbeddingVector query = image_corrector.apply(raw_query);
    if (cfg.noise.query_infer && cfg.L > 0.0) {
        query = inject_noise(query, noise_for(cfg, cfg.L, streams::kQueryNoise, index));
    }

    // Selected results in rank order (similarity rank, or MMR selection order).
    std::vector<SearchResult> selected;
    if (cfg.rerank) {
        const auto pool = store.search(query, std::max(cfg.rerank->pool_size, cfg.K));
        std::vector<MmrCandidate> candidates;
        candidates.reserve(pool.size());
        for (const auto& r : pool) {
            candidates.push_back({store.record(r.row), store.row_vector(r.row)});
        }
        MmrConfig mmr = *cfg.rerank;
        mmr.select_count = cfg.K;
        for (std::size_t pick : mmr_select(query, candidates, mmr)) {
            selected.push_back(pool[pick]);
        }
    } else {
        selected = store.search(query, cfg.K);
    }

    for (const auto& r : selected) {
        req.ranked_captions.push_back(store.record(r.row).text);
    }
    const auto ordered = order_captions(selected, ordering_for(cfg, index));

    std::vector<std::string> texts;
    req.neighbor_embeddings = EmbeddingMatrix(store.dim());
    for (const auto& r : ordered) {
        texts.push_back(store.record(r.row).text);
        req.neighbor_embeddings.append(store.row_vector(r.row));
        if (neighbor_ids != nullptr) {
            neighbor_ids->push_back(r.id);
        }
    }
    req.prompt = build_prompt(texts);
    req.input_embedding = std::move(query);

    if (cfg.noise.decoder && cfg.B > 0.0) {
        const auto noise = noise_for(cfg, cfg.B, streams::kDecoderNoise, index);
        Rng rng(noise.seed);
        req.input_embedding = inject_noise(req.input_embedding, noise, rng);
        for (std::size_t i = 0; i < req.neighbor_embeddings.rows(); ++i) {
            const auto noisy = inject_noise(req.neighbor_embeddings.row(i), noise, rng);
            std::copy(noisy.begin(), noisy.end(), req.neighbor_embeddings.row(i).begin());
        }
    }
    return req;
}

InferSummary run_infer(const Datastore& store, const std::filesystem::path& queries_path,
                       const std::vector<std::uint64_t>& image_ids, const PipelineConfig& cfg,
                       Decoder& decoder, std::ostream& out) {
    cfg.validate();
    EmbeddingReader reader(queries_path);
    if (reader.dim() != store.dim()) {
        throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(reader.dim()) +
                                                " != store dim " + std::to_string(store.dim()));
    }
    if (!image_ids.empty() && image_ids.size() != reader.count()) {
        throw Error(ErrorCode::ConfigError, std::to_string(image_ids.size()) + " image ids for " +
                                                std::to_string(reader.count()) + " queries");
    }
    const auto corrector = image_side_corrector(cfg, store.dim());

    std::atomic<std::size_t> failures{0};
    const auto items = for_each_row_windowed(reader, cfg, out, [&](std::size_t index,
                                                                  const EmbeddingVector& row) {
        CaptionRecordOut rec;
        rec.image_id = image_ids.empty() ? index : image_ids[index];
        rec.request_id = "q" + std::to_string(index);
        try {
            auto req = prepare_inference_request(store, row, index, corrector, cfg, &rec.neighbor_ids);
            auto resp = decoder_call(decoder, req);
            rec.ok = true;
            rec.caption = std::move(resp.caption);
            rec.prompt = std::move(req.prompt);
        } catch (const DecoderError& e) {
            rec.error_code = e.code();
            rec.error_message = e.what();
            rec.request_id = e.request_id();
        } catch (const Error& e) {
            rec.error_code = e.code();
            rec.error_message = e.what();
        }
        if (!rec.ok) {
            ++failures;
        }
        return rec.to_jsonl();
    });
    return {items, failures.load()};
}

TrainPairsSummary run_train_pairs(const Datastore& store, const std::filesystem::path& text_embeddings,
                                  const std::vector<std::uint64_t>& caption_ids,
                                  const PipelineConfig& cfg, std::ostream& out) {
    cfg.validate();
    EmbeddingReader reader(text_embeddings);
    if (reader.dim() != store.dim()) {
        throw Error(ErrorCode::DimMismatch, "text embedding dim " + std::to_string(reader.dim()) +
                                                " != store dim " + std::to_string(store.dim()));
    }
    if (cfg.exclude_self_in_training && caption_ids.size() != reader.count()) {
        throw Error(ErrorCode::ConfigError,
                    "training.exclude_self needs one caption id per text embedding row");
    }
    const auto corrector = text_side_corrector(cfg, store.dim());
    const std::size_t k = cfg.train_k();

    const auto items = for_each_row_windowed(reader, cfg, out, [&](std::size_t index,
                                                                  const EmbeddingVector& row) {
        EmbeddingVector query = corrector.apply(row);
        if (cfg.noise.query_train && cfg.L > 0.0) {
            query = inject_noise(query, noise_for(cfg, cfg.L, streams::kQueryNoise, index));
        }
        SearchOptions options;
        if (cfg.exclude_self_in_training) {
            options.exclude_id = caption_ids[index];
        }
        const auto bundle = retrieve_for_training(store, query, k, options);
        const auto ordered = order_captions(bundle.prompt_captions, ordering_for(cfg, index));

        std::vector<std::string> texts;
        std::vector<std::uint64_t> ids;
        for (const auto& c : ordered) {
            texts.push_back(c.text);
            ids.push_back(c.id);
        }
        ojson j;
        j["input_embedding_ref"] = index;
        if (!caption_ids.empty()) {
            j["caption_id"] = caption_ids[index];
        }
        j["prompt"] = build_prompt(texts);
        j["target"] = bundle.target->text;
        j["target_id"] = bundle.target->id;
        j["neighbor_ids"] = ids;
        return j.dump();
    });
    return {items};
}

EvalResult run_eval(const std::filesystem::path& candidates_path,
                    const std::filesystem::path& references_path) {
    std::map<std::uint64_t, std::vector<std::string>> refs;
    {
        std::ifstream in(references_path, std::ios::binary);
        if (!in) {
            throw FormatError(0, "cannot open '" + references_path.string() + "'");
        }
        std::string line;
        std::uint64_t offset = 0;
        while (std::getline(in, line)) {
            const auto start = offset;
            offset += line.size() + 1;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                auto list = j.at("references").get<std::vector<std::string>>();
                if (list.empty()) {
                    throw FormatError(start, "instance has no references");
                }
                auto& slot = refs[j.at("image_id").get<std::uint64_t>()];
                slot.insert(slot.end(), list.begin(), list.end());
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(start, std::string("malformed reference line: ") + e.what());
            }
        }
    }

    EvalResult result;
    std::set<std::uint64_t> used;
    std::ifstream in(candidates_path, std::ios::binary);
    if (!in) {
        throw FormatError(0, "cannot open '" + candidates_path.string() + "'");
    }
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const auto start = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto id = j.at("image_id").get<std::uint64_t>();
            std::optional<std::string> caption;
            if (j.contains("caption")) caption = j.at("caption").get<std::string>();
            else if (j.contains("candidate")) caption = j.at("candidate").get<std::string>();
            const auto it = refs.find(id);
            if (!caption || it == refs.end() || used.contains(id)) {
                result.unmatched_ids.push_back(id);
                continue;
            }
            used.insert(id);
            result.instances.push_back(EvalInstance{id, *caption, it->second});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(start, std::string("malformed candidate line: ") + e.what());
        }
    }
    for (const auto& [id, list] : refs) {
        if (!used.contains(id)) {
            result.unmatched_ids.push_back(id);
        }
    }
    if (result.instances.empty()) {
        throw Error(ErrorCode::ConfigError, "no candidate matched a reference image_id");
    }
    result.report = evaluate(result.instances);
    return result;
}

std::vector<std::uint64_t> read_query_ids(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(0, "cannot open '" + path.string() + "'");
    }
    std::vector<std::uint64_t> ids;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const auto start = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ids.push_back(j.contains("image_id") ? j.at("image_id").get<std::uint64_t>()
                                                 : j.at("id").get<std::uint64_t>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(start, std::string("malformed id line: ") + e.what());
        }
    }
    return ids;
}

ojson RunManifest::to_json() const {
    const auto describe = [](const std::filesystem::path& p) {
        ojson f;
        f["path"] = p.string();
        std::error_code ec;
        const auto size = std::filesystem::file_size(p, ec);
        if (ec) {
            f["missing"] = true;
            return f;
        }
        char crc[9];
        std::snprintf(crc, sizeof(crc), "%08x", file_crc32(p));
        f["bytes"] = size;
        f["crc32"] = crc;
        return f;
    };
    ojson j;
    j["tool"] = "tomcap";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["config"] = config;
    if (config.contains("seed")) {
        j["seeds"] = {{"master", config["seed"]},
                      {"ordering", config.contains("ordering") ? config["ordering"]["seed"] : ojson(0)}};
    }
    j["inputs"] = ojson::array();
    for (const auto& p : inputs) j["inputs"].push_back(describe(p));
    j["outputs"] = ojson::array();
    for (const auto& p : outputs) j["outputs"].push_back(describe(p));
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    out << to_json().dump(2) << '\n';
}

} // namespace tomcap
