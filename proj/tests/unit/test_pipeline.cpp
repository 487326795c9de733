#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tomcap/error.hpp"
#include "tomcap/pipeline.hpp"

using namespace tomcap;
using json = nlohmann::json;
using tomcap::testing::read_file;
using tomcap::testing::TempDir;
using tomcap::testing::write_file;

namespace {

constexpr std::size_t kToy = 12;

std::vector<CaptionRecord> toy_records() {
    std::vector<CaptionRecord> r;
    for (std::size_t i = 0; i < kToy; ++i) r.push_back({100 + i, "caption " + std::to_string(i), "toy"});
    return r;
}

EmbeddingMatrix one_hot(std::size_t n) {
    EmbeddingMatrix m(n, kToy);
    for (std::size_t i = 0; i < n; ++i) m.row(i)[i] = 1.0;
    return m;
}

Datastore toy_store() { return Datastore::build(one_hot(kToy), toy_records()); }

// Deterministic, noise-free settings: the query for row i retrieves row i first.
PipelineConfig plain() {
    PipelineConfig cfg;
    cfg.correction_mode = CorrectionMode::None;
    cfg.L = 0;
    cfg.B = 0;
    return cfg;
}

std::string infer_text(const Datastore& store, const std::filesystem::path& queries, const PipelineConfig& cfg,
                       InferSummary* summary = nullptr, const std::vector<std::uint64_t>& ids = {}) {
    auto decoder = make_decoder(cfg.decoder);
    std::ostringstream out;
    const auto s = run_infer(store, queries, ids, cfg, *decoder, out);
    if (summary) *summary = s;
    return out.str();
}

std::vector<json> lines_of(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) out.push_back(json::parse(line));
    return out;
}

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + TOMCAP_CLI + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(PrepareRequest, RanksNeighborsAndBuildsPrompt) {
    const auto store = toy_store();
    auto cfg = plain();
    cfg.K = 3;
    EmbeddingVector q(kToy, 0.0);
    q[5] = 1.0;
    q[6] = 0.5;
    q[7] = 0.25;
    std::vector<std::uint64_t> ids;
    const auto req = prepare_inference_request(store, q, 9, GapCorrector::identity(kToy), cfg, &ids);
    EXPECT_EQ(req.request_id, "q9");
    EXPECT_EQ(ids, (std::vector<std::uint64_t>{105, 106, 107}));
    EXPECT_EQ(req.ranked_captions, (std::vector<std::string>{"caption 5", "caption 6", "caption 7"}));
    EXPECT_EQ(req.prompt, "Similar images have the following captions: caption 5 caption 6 caption 7.\n\n"
                          "Write a caption for this image:");
    EXPECT_EQ(req.input_embedding, q);
    ASSERT_EQ(req.neighbor_embeddings.rows(), 3u);
    EXPECT_EQ(req.neighbor_embeddings.row(0)[5], 1.0);
    EXPECT_EQ(req.neighbor_embeddings.row(2)[7], 1.0);

    cfg.ordering.kind = OrderingKind::Increasing;
    ids.clear();
    const auto inc = prepare_inference_request(store, q, 9, GapCorrector::identity(kToy), cfg, &ids);
    EXPECT_EQ(ids, (std::vector<std::uint64_t>{107, 106, 105}));
    EXPECT_EQ(inc.ranked_captions, req.ranked_captions);
    EXPECT_EQ(inc.neighbor_embeddings.row(0)[7], 1.0);
}

TEST(PrepareRequest, DecoderNoiseIsSeededPerItem) {
    const auto store = toy_store();
    auto cfg = plain();
    cfg.B = 0.125;
    EmbeddingVector q(kToy, 0.0);
    q[2] = 1.0;
    const auto id = GapCorrector::identity(kToy);
    const auto a = prepare_inference_request(store, q, 0, id, cfg, nullptr);
    const auto b = prepare_inference_request(store, q, 0, id, cfg, nullptr);
    const auto c = prepare_inference_request(store, q, 1, id, cfg, nullptr);
    EXPECT_EQ(a.input_embedding, b.input_embedding);
    EXPECT_EQ(a.neighbor_embeddings, b.neighbor_embeddings);
    EXPECT_NE(a.input_embedding, q);
    EXPECT_NE(a.input_embedding, c.input_embedding);
    // Retrieval itself is untouched by decoder-side noise.
    EXPECT_EQ(a.prompt, c.prompt);

    cfg.noise.decoder = false;
    EXPECT_EQ(prepare_inference_request(store, q, 0, id, cfg, nullptr).input_embedding, q);
}

TEST(PrepareRequest, RerankWithZeroLambdaKeepsSimilarityOrder) {
    const auto store = toy_store();
    auto cfg = plain();
    cfg.K = 3;
    EmbeddingVector q(kToy, 0.0);
    q[1] = 1.0;
    q[4] = 0.6;
    q[9] = 0.3;
    std::vector<std::uint64_t> plain_ids, mmr_ids;
    const auto id = GapCorrector::identity(kToy);
    prepare_inference_request(store, q, 0, id, cfg, &plain_ids);
    cfg.rerank = MmrConfig{0.0, 8, 3};
    prepare_inference_request(store, q, 0, id, cfg, &mmr_ids);
    EXPECT_EQ(plain_ids, mmr_ids);
}

TEST(Infer, SelfQueriesReturnTheirOwnCaption) {
    TempDir dir;
    const auto store = toy_store();
    write_embedding_file(dir / "q.tomc", one_hot(kToy));
    auto cfg = plain();
    cfg.K = 1;
    InferSummary s;
    const auto lines = lines_of(infer_text(store, dir / "q.tomc", cfg, &s));
    EXPECT_EQ(s.items, kToy);
    EXPECT_EQ(s.failures, 0u);
    ASSERT_EQ(lines.size(), kToy);
    for (std::size_t i = 0; i < kToy; ++i) {
        EXPECT_EQ(lines[i].at("image_id"), i);
        EXPECT_EQ(lines[i].at("caption"), "caption " + std::to_string(i));
        EXPECT_EQ(lines[i].at("neighbor_ids"), json::array({100 + i}));
    }
}

TEST(Infer, OutputIsIndependentOfThreadsAndWindow) {
    TempDir dir;
    Rng rng(71);
    const auto store = Datastore::build(tomcap::testing::random_matrix(rng, 300, 16),
                                        tomcap::testing::numbered_records(300));
    write_embedding_file(dir / "q.tomc", tomcap::testing::random_matrix(rng, 97, 16));
    PipelineConfig cfg;
    cfg.correction_mode = CorrectionMode::None;
    cfg.noise.query_infer = true;
    cfg.ordering = {OrderingKind::Random, 13};
    cfg.decoder = DecoderEndpoint::parse("echo");
    cfg.seed = 5;
    const auto base = infer_text(store, dir / "q.tomc", cfg);
    for (std::size_t threads : {2u, 4u, 8u}) {
        for (std::size_t window : {1u, 7u, 256u}) {
            auto c = cfg;
            c.threads = threads;
            c.window = window;
            EXPECT_EQ(infer_text(store, dir / "q.tomc", c), base) << threads << "/" << window;
        }
    }
    auto other_seed = cfg;
    other_seed.seed = 6;
    EXPECT_NE(infer_text(store, dir / "q.tomc", other_seed), base);
}

TEST(Infer, ItemFailuresAreRecordedAndDoNotStopTheRun) {
    TempDir dir;
    const auto store = toy_store();
    write_embedding_file(dir / "q.tomc", one_hot(6));
    auto cfg = plain();
    cfg.decoder.kind = DecoderEndpoint::Kind::Subprocess;
    cfg.decoder.target = std::string(TOMCAP_FAKE_DECODER) + " flaky";
    cfg.decoder.timeout = std::chrono::milliseconds(3000);
    InferSummary s;
    const auto lines = lines_of(infer_text(store, dir / "q.tomc", cfg, &s, {10, 11, 12, 13, 14, 15}));
    EXPECT_EQ(s.items, 6u);
    EXPECT_EQ(s.failures, 3u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(lines[i].at("image_id"), 10 + i);
        if (i % 2 == 0) {
            EXPECT_TRUE(lines[i].contains("caption"));
        } else {
            EXPECT_EQ(lines[i].at("error").at("code"), "NonzeroExit");
            EXPECT_EQ(lines[i].at("error").at("request_id"), "q" + std::to_string(i));
        }
    }
}

TEST(Infer, InputErrors) {
    TempDir dir;
    const auto store = toy_store();
    write_embedding_file(dir / "small.tomc", EmbeddingMatrix(2, 5));
    write_embedding_file(dir / "q.tomc", one_hot(3));
    auto cfg = plain();
    auto top1 = make_decoder(cfg.decoder);
    std::ostringstream out;
    try {
        run_infer(store, dir / "small.tomc", {}, cfg, *top1, out);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    }
    EXPECT_THROW(run_infer(store, dir / "q.tomc", {1, 2}, cfg, *top1, out), Error);

    // Correction enabled without stats files.
    PipelineConfig corrected;
    try {
        run_infer(store, dir / "q.tomc", {}, corrected, *top1, out);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    }
}

TEST(Ingest, StoresRowsAndAppliesTextSideCorrection) {
    TempDir dir;
    const auto rows = one_hot(kToy);
    write_embedding_file(dir / "e.tomc", rows);
    write_captions(dir / "c.jsonl", toy_records());
    auto cfg = plain();
    const auto s = run_ingest(dir / "e.tomc", dir / "c.jsonl", cfg, dir / "s.toms");
    EXPECT_EQ(s.rows, kToy);
    EXPECT_EQ(s.dim, kToy);
    const auto store = Datastore::load(dir / "s.toms");
    const auto stored = store.records();
    EXPECT_EQ(std::vector<CaptionRecord>(stored.begin(), stored.end()), toy_records());
    EXPECT_EQ(store.row_vector(3), EmbeddingVector(rows.row(3).begin(), rows.row(3).end()));

    // text_to_image moves rows by (e - mu_t) + mu_i under MeanOnly.
    ModalityStats img{EmbeddingVector(kToy, 2.0), EmbeddingVector(kToy, 1.0), 10, Modality::Image};
    ModalityStats txt{EmbeddingVector(kToy, 0.5), EmbeddingVector(kToy, 1.0), 10, Modality::Text};
    save_stats(img, dir / "img.json");
    save_stats(txt, dir / "txt.json");
    cfg.correction_mode = CorrectionMode::MeanOnly;
    cfg.correction_direction = CorrectionDirection::TextToImage;
    cfg.image_stats = dir / "img.json";
    cfg.text_stats = dir / "txt.json";
    run_ingest(dir / "e.tomc", dir / "c.jsonl", cfg, dir / "moved.toms");
    const auto moved = Datastore::load(dir / "moved.toms");
    EXPECT_EQ(moved.row_vector(3)[3], 2.5);
    EXPECT_EQ(moved.row_vector(3)[4], 1.5);

    auto three = toy_records();
    three.resize(3);
    write_captions(dir / "short.jsonl", three);
    EXPECT_THROW(run_ingest(dir / "e.tomc", dir / "short.jsonl", plain(), dir / "x.toms"), Error);
}

TEST(TrainPairs, TargetIsNearestAndSelfCanBeExcluded) {
    TempDir dir;
    const auto store = toy_store();
    write_embedding_file(dir / "t.tomc", one_hot(kToy));
    auto cfg = plain();
    cfg.K_train = 2;
    std::ostringstream out;
    EXPECT_EQ(run_train_pairs(store, dir / "t.tomc", {}, cfg, out).items, kToy);
    auto lines = lines_of(out.str());
    EXPECT_EQ(lines[4].at("target_id"), 104);
    EXPECT_EQ(lines[4].at("target"), "caption 4");
    EXPECT_EQ(lines[4].at("neighbor_ids").size(), 2u);
    EXPECT_EQ(lines[4].at("input_embedding_ref"), 4);

    std::vector<std::uint64_t> caption_ids;
    for (std::size_t i = 0; i < kToy; ++i) caption_ids.push_back(100 + i);
    cfg.exclude_self_in_training = true;
    std::ostringstream out2;
    run_train_pairs(store, dir / "t.tomc", caption_ids, cfg, out2);
    lines = lines_of(out2.str());
    for (std::size_t i = 0; i < kToy; ++i) {
        EXPECT_NE(lines[i].at("target_id"), 100 + i);
        for (const auto& n : lines[i].at("neighbor_ids")) EXPECT_NE(n, 100 + i);
    }
    std::ostringstream sink;
    EXPECT_THROW(run_train_pairs(store, dir / "t.tomc", {}, cfg, sink), Error);
}

TEST(Eval, JoinsOnImageIdAndReportsUnmatched) {
    TempDir dir;
    write_file(dir / "cand.jsonl", "{\"image_id\":1,\"caption\":\"a dog runs\"}\n"
                                   "{\"image_id\":2,\"candidate\":\"two cats\"}\n"
                                   "{\"image_id\":9,\"caption\":\"orphan\"}\n");
    write_file(dir / "refs.jsonl", "{\"image_id\":1,\"references\":[\"a dog runs\"]}\n"
                                   "{\"image_id\":2,\"references\":[\"two cats\"]}\n"
                                   "{\"image_id\":3,\"references\":[\"a red bus\"]}\n");
    const auto r = run_eval(dir / "cand.jsonl", dir / "refs.jsonl");
    EXPECT_EQ(r.instances.size(), 2u);
    EXPECT_EQ(r.unmatched_ids, (std::vector<std::uint64_t>{9, 3}));
    EXPECT_DOUBLE_EQ(r.report.bleu1, 1.0);

    write_file(dir / "bad.jsonl", "{\"image_id\":1,\"references\":[\"x\"]}\nnot json\n");
    try {
        run_eval(dir / "cand.jsonl", dir / "bad.jsonl");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 34u);
    }
}

TEST(Manifest, RecordsConfigSeedsAndFileChecksums) {
    TempDir dir;
    write_file(dir / "in.bin", "123456789");
    RunManifest m;
    m.command = "infer";
    PipelineConfig cfg;
    cfg.seed = 77;
    m.config = config_to_json(cfg);
    m.inputs = {dir / "in.bin"};
    m.outputs = {dir / "missing.jsonl"};
    m.write(dir / "m.json");
    const auto j = json::parse(read_file(dir / "m.json"));
    EXPECT_EQ(j.at("tool"), "tomcap");
    EXPECT_EQ(j.at("seeds").at("master"), 77);
    EXPECT_EQ(j.at("config").at("K"), 4);
    // CRC-32 check value of "123456789".
    EXPECT_EQ(j.at("inputs")[0].at("crc32"), "cbf43926");
    EXPECT_EQ(j.at("inputs")[0].at("bytes"), 9);
    EXPECT_TRUE(j.at("outputs")[0].at("missing").get<bool>());
}

TEST(Cli, EndToEndAndDecoderPrecedence) {
    TempDir dir;
    write_embedding_file(dir / "e.tomc", one_hot(kToy));
    write_captions(dir / "c.jsonl", toy_records());
    const auto d = dir.path().string() + "/";
    const std::string plain_flags = " --set correction.mode=\\\"none\\\" --set L=0 --set B=0 --set K=1";
    ASSERT_EQ(run_cli("ingest --embeddings " + d + "e.tomc --captions " + d + "c.jsonl --out " + d + "s.toms" +
                      plain_flags),
              0);
    ASSERT_EQ(run_cli("infer --store " + d + "s.toms --queries " + d + "e.tomc --out " + d + "a.jsonl" + plain_flags),
              0);
    const auto a = lines_of(read_file(dir / "a.jsonl"));
    ASSERT_EQ(a.size(), kToy);
    EXPECT_EQ(a[5].at("caption"), "caption 5");
    EXPECT_TRUE(std::filesystem::exists(dir / "a.jsonl.manifest.json"));

    // The environment overrides the config file; the flag overrides both.
    write_file(dir / "cfg.json", R"({"decoder": "top1"})");
    ASSERT_EQ(run_cli("infer --config " + d + "cfg.json --store " + d + "s.toms --queries " + d + "e.tomc --out " + d +
                          "b.jsonl" + plain_flags,
                      "TOMCAP_DECODER=echo"),
              0);
    EXPECT_EQ(lines_of(read_file(dir / "b.jsonl"))[0].at("caption"), lines_of(read_file(dir / "b.jsonl"))[0].at("prompt"));
    ASSERT_EQ(run_cli("infer --config " + d + "cfg.json --decoder top1 --store " + d + "s.toms --queries " + d +
                          "e.tomc --out " + d + "c.jsonl.out" + plain_flags,
                      "TOMCAP_DECODER=echo"),
              0);
    EXPECT_EQ(lines_of(read_file(dir / "c.jsonl.out"))[0].at("caption"), "caption 0");

    EXPECT_EQ(run_cli("infer --store " + d + "s.toms --queries " + d + "e.tomc --out " + d + "f.jsonl" + plain_flags +
                      " --decoder subprocess:/bin/false"),
              1);
    EXPECT_EQ(run_cli("infer --store " + d + "missing.toms --queries " + d + "e.tomc --out " + d + "g.jsonl"), 2);
    EXPECT_EQ(run_cli("infer --bogus-flag"), 2);
}
