#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"
#include "tomcap/datastore.hpp"
#include "tomcap/error.hpp"
#include "tomcap/formats.hpp"

using namespace tomcap;
using tomcap::testing::fixture_path;
using tomcap::testing::numbered_records;
using tomcap::testing::random_matrix;
using tomcap::testing::random_vector;
using tomcap::testing::TempDir;

namespace {

std::vector<std::vector<float>> float_rows(const EmbeddingMatrix& m) {
    std::vector<std::vector<float>> out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::vector<float> r;
        for (double v : m.row(i)) r.push_back(static_cast<float>(v));
        out.push_back(r);
    }
    return out;
}

std::vector<std::uint64_t> ids_of(const std::vector<SearchResult>& rs) {
    std::vector<std::uint64_t> out;
    for (const auto& r : rs) out.push_back(r.id);
    return out;
}

oracle::Metric to_oracle(Metric m) { return m == Metric::L2 ? oracle::Metric::L2 : oracle::Metric::Cosine; }

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::ConfigError;
}

template <typename Fn>
std::uint64_t format_offset(Fn&& fn) {
    try {
        fn();
    } catch (const FormatError& e) {
        return e.offset();
    }
    ADD_FAILURE() << "no FormatError thrown";
    return ~std::uint64_t{0};
}

Datastore three_record_store() {
    EmbeddingMatrix m(3);
    m.append(std::vector<double>{1, 0, 0});
    m.append(std::vector<double>{0, 1, 0});
    m.append(std::vector<double>{0, 0, 1});
    return Datastore::build(m,
                            {{10, "a dog runs", "coco"}, {11, "two cats", "coco"}, {12, "a red bus", "cc3m"}},
                            Metric::L2);
}

} // namespace

TEST(Build, ValidatesInput) {
    Rng rng(1);
    const auto m = random_matrix(rng, 3, 4);
    EXPECT_EQ(code_of([&] { Datastore::build(m, numbered_records(2)); }), ErrorCode::BuildError);
    auto dup = numbered_records(3);
    dup[2].id = 0;
    EXPECT_EQ(code_of([&] { Datastore::build(m, dup); }), ErrorCode::DuplicateId);
    auto empty_text = numbered_records(3);
    empty_text[1].text = "";
    EXPECT_EQ(code_of([&] { Datastore::build(m, empty_text); }), ErrorCode::BuildError);
    auto nan = m;
    nan.row(1)[2] = std::nan("");
    EXPECT_EQ(code_of([&] { Datastore::build(nan, numbered_records(3)); }), ErrorCode::BuildError);

    DatastoreBuilder b(4, Metric::L2);
    EXPECT_EQ(code_of([&] { b.add(std::vector<double>{1, 2}, {0, "x", ""}); }), ErrorCode::BuildError);
}

TEST(Search, SelfMatchHasZeroDistance) {
    Rng rng(2);
    const auto m = random_matrix(rng, 40, 6);
    const auto store = Datastore::build(m, numbered_records(40, 100));
    for (std::size_t j : {0u, 17u, 39u}) {
        const auto q = store.row_vector(j);
        const auto res = store.search(q, 3);
        EXPECT_EQ(res[0].id, 100 + j);
        EXPECT_EQ(res[0].score, 0.0);
        EXPECT_EQ(res[0].rank, 0u);
        EXPECT_EQ(res[0].row, j);
    }
}

TEST(Search, ClampsKToStoreSize) {
    const auto store = three_record_store();
    const auto res = store.search(EmbeddingVector{1, 1, 1}, 10);
    ASSERT_EQ(res.size(), 3u);
    // Equidistant rows come back in ascending id order.
    EXPECT_EQ(ids_of(res), (std::vector<std::uint64_t>{10, 11, 12}));
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(res[r].rank, r);
}

TEST(Search, Errors) {
    const auto store = three_record_store();
    EXPECT_EQ(code_of([&] { store.search(EmbeddingVector{1, 2}, 1); }), ErrorCode::DimMismatch);
    EXPECT_EQ(code_of([&] { store.search(EmbeddingVector{1, 2, 3}, 0); }), ErrorCode::InvalidK);
    const auto empty = Datastore::build(EmbeddingMatrix(3), {});
    EXPECT_EQ(code_of([&] { empty.search(EmbeddingVector{1, 2, 3}, 1); }), ErrorCode::EmptyStore);
}

TEST(Search, MatchesFullSortOracle) {
    Rng rng(3);
    const auto m = random_matrix(rng, 64, 8);
    for (Metric metric : {Metric::L2, Metric::Cosine}) {
        const auto store = Datastore::build(m, numbered_records(64), metric);
        std::vector<std::uint64_t> ids(64);
        for (std::size_t i = 0; i < 64; ++i) ids[i] = i;
        for (int q = 0; q < 16; ++q) {
            const auto query = random_vector(rng, 8);
            EXPECT_EQ(ids_of(store.search(query, 5)),
                      oracle::knn(float_rows(m), ids, query, 5, to_oracle(metric)));
        }
    }
}

TEST(SearchProperty, TiesOnQuantizedDataBreakByAscendingId) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 50 + rng.uniform_index(200);
        EmbeddingMatrix m(n, 3);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : m.row(i)) v = static_cast<double>(rng.uniform_index(3));
        }
        // Shuffled ids so row order and id order disagree.
        std::vector<std::uint64_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = 1000 + i * 7;
        for (std::size_t i = n - 1; i > 0; --i) std::swap(ids[i], ids[rng.uniform_index(i + 1)]);
        std::vector<CaptionRecord> recs;
        for (auto id : ids) recs.push_back({id, "c" + std::to_string(id), ""});
        for (Metric metric : {Metric::L2, Metric::Cosine}) {
            const auto store = Datastore::build(m, recs, metric);
            EmbeddingVector q{static_cast<double>(rng.uniform_index(3)), 1.0, 2.0};
            const std::size_t k = 1 + rng.uniform_index(n);
            EXPECT_EQ(ids_of(store.search(q, k)), oracle::knn(float_rows(m), ids, q, k, to_oracle(metric)));
        }
    }
}

TEST(SearchProperty, ScoresMonotoneAndThreadIndependent) {
    Rng rng(5);
    const auto m = random_matrix(rng, 3000, 16);
    for (Metric metric : {Metric::L2, Metric::Cosine}) {
        const auto store = Datastore::build(m, numbered_records(3000), metric);
        for (int q = 0; q < 5; ++q) {
            const auto query = random_vector(rng, 16);
            const auto one = store.search(query, 25, {1, std::nullopt});
            const auto many = store.search(query, 25, {7, std::nullopt});
            EXPECT_EQ(one, many);
            for (std::size_t i = 1; i < one.size(); ++i) {
                if (metric == Metric::L2) EXPECT_LE(one[i - 1].score, one[i].score);
                else EXPECT_GE(one[i - 1].score, one[i].score);
            }
        }
    }
}

TEST(SearchProperty, L2AndCosineAgreeOnUnitVectors) {
    Rng rng(6);
    auto m = random_matrix(rng, 500, 10);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double n = norm(m.row(i));
        for (auto& v : m.row(i)) v /= n;
    }
    const auto l2 = Datastore::build(m, numbered_records(500), Metric::L2);
    const auto cos = Datastore::build(m, numbered_records(500), Metric::Cosine);
    for (int q = 0; q < 20; ++q) {
        auto query = random_vector(rng, 10);
        const double n = norm(query);
        for (auto& v : query) v /= n;
        const auto a = l2.search(query, 10);
        const auto b = cos.search(query, 10);
        EXPECT_EQ(ids_of(a), ids_of(b));
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i].score, 2 - 2 * b[i].score, 1e-6);
    }
}

TEST(Search, ExcludeIdSkipsRow) {
    Rng rng(7);
    const auto m = random_matrix(rng, 20, 4);
    const auto store = Datastore::build(m, numbered_records(20));
    const auto q = store.row_vector(5);
    SearchOptions opt;
    opt.exclude_id = 5;
    const auto res = store.search(q, 19, opt);
    EXPECT_EQ(res.size(), 19u);
    for (const auto& r : res) EXPECT_NE(r.id, 5u);
    EXPECT_EQ(res[0].id, store.search(q, 2)[1].id);
}

TEST(Retrieve, InferenceBundle) {
    Rng rng(8);
    const auto m = random_matrix(rng, 30, 5);
    const auto store = Datastore::build(m, numbered_records(30));
    const auto q = random_vector(rng, 5);
    const auto b = retrieve_for_inference(store, q, 4);
    EXPECT_FALSE(b.target.has_value());
    ASSERT_EQ(b.prompt_captions.size(), 4u);
    ASSERT_EQ(b.neighbor_embeddings.rows(), 4u);
    const auto raw = store.search(q, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(b.prompt_captions[i].id, raw[i].id);
        EXPECT_EQ(b.neighbor_embeddings.row(i)[0], static_cast<double>(store.row(raw[i].row)[0]));
    }
}

TEST(Retrieve, TrainingWithExactlyKPlusOneRecords) {
    Rng rng(9);
    const auto m = random_matrix(rng, 5, 3);
    const auto store = Datastore::build(m, numbered_records(5));
    const auto q = random_vector(rng, 3);
    const auto b = retrieve_for_training(store, q, 4);
    const auto all = store.search(q, 5);
    ASSERT_TRUE(b.target.has_value());
    EXPECT_EQ(b.target->id, all[0].id);
    ASSERT_EQ(b.prompt_captions.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.prompt_captions[i].id, all[i + 1].id);
    EXPECT_EQ(code_of([&] { retrieve_for_training(store, q, 5); }), ErrorCode::InsufficientStore);
    SearchOptions opt;
    opt.exclude_id = all[0].id;
    EXPECT_EQ(code_of([&] { retrieve_for_training(store, q, 4, opt); }), ErrorCode::InsufficientStore);
}

TEST(Retrieve, ExcludedSelfMakesSecondNearestTheTarget) {
    Rng rng(10);
    const auto m = random_matrix(rng, 25, 4);
    const auto store = Datastore::build(m, numbered_records(25));
    const auto q = store.row_vector(11);
    SearchOptions opt;
    opt.exclude_id = 11;
    const auto b = retrieve_for_training(store, q, 3, opt);
    EXPECT_EQ(b.target->id, store.search(q, 2)[1].id);
}

TEST(Retrieve, TrainingPartitionMatchesOracle) {
    Rng rng(11);
    const auto m = random_matrix(rng, 100, 6);
    const auto store = Datastore::build(m, numbered_records(100));
    std::vector<std::uint64_t> ids(100);
    for (std::size_t i = 0; i < 100; ++i) ids[i] = i;
    for (int q = 0; q < 10; ++q) {
        const auto query = random_vector(rng, 6);
        const auto want = oracle::knn(float_rows(m), ids, query, 5, oracle::Metric::L2);
        const auto b = retrieve_for_training(store, query, 4);
        EXPECT_EQ(b.target->id, want[0]);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.prompt_captions[i].id, want[i + 1]);
    }
}

TEST(StoreFile, RoundTripIsBitIdentical) {
    TempDir dir;
    const auto store = three_record_store();
    store.save(dir / "s.toms");
    const auto back = Datastore::load(dir / "s.toms");
    EXPECT_EQ(back, store);
    EXPECT_EQ(back.metric(), Metric::L2);
    EXPECT_EQ(back.record(2).source, "cc3m");

    Rng rng(12);
    const auto big = Datastore::build(random_matrix(rng, 1000, 12), numbered_records(1000), Metric::Cosine);
    big.save(dir / "a.toms");
    big.save(dir / "b.toms");
    EXPECT_EQ(file_crc32(dir / "a.toms"), file_crc32(dir / "b.toms"));
    EXPECT_EQ(tomcap::testing::read_file(dir / "a.toms"), tomcap::testing::read_file(dir / "b.toms"));
    const auto reloaded = Datastore::load(dir / "a.toms");
    EXPECT_EQ(reloaded, big);
    for (std::size_t i = 0; i < reloaded.size(); ++i) {
        ASSERT_EQ(std::memcmp(reloaded.row(i).data(), big.row(i).data(), 12 * sizeof(float)), 0);
    }
}

TEST(StoreFile, GoldenFixtureBytesAreStable) {
    TempDir dir;
    three_record_store().save(dir / "s.toms");
    EXPECT_EQ(tomcap::testing::read_file(dir / "s.toms"),
              tomcap::testing::read_file(fixture_path("store_3rec.toms")));
    EXPECT_EQ(Datastore::load(fixture_path("store_3rec.toms")), three_record_store());
}

TEST(StoreFile, CorruptedFixturesReportByteOffsets) {
    const auto golden_size = std::filesystem::file_size(fixture_path("store_3rec.toms"));
    const struct {
        const char* file;
        std::uint64_t offset;
    } cases[] = {
        {"corrupt_magic.toms", 0},
        {"corrupt_version.toms", 4},
        {"corrupt_metric.toms", 8},
        {"corrupt_inner_magic.toms", 12},
        {"corrupt_inner_version.toms", 16},
        {"corrupt_dtype.toms", 20},
        {"corrupt_dim.toms", 24},
        {"truncated_header.toms", 30},
        {"truncated_rows.toms", 50},
        {"corrupt_crc.toms", golden_size - 4},
    };
    for (const auto& c : cases) {
        EXPECT_EQ(format_offset([&] { Datastore::load(fixture_path(c.file)); }), c.offset) << c.file;
    }
}

TEST(StoreFile, MutationsAreDetected) {
    TempDir dir;
    const auto golden = tomcap::testing::read_file(fixture_path("store_3rec.toms"));
    // Flip one bit of the first float: CRC must catch it.
    auto flipped = golden;
    flipped[36] = static_cast<char>(flipped[36] ^ 0x01);
    tomcap::testing::write_file(dir / "f.toms", flipped);
    EXPECT_EQ(format_offset([&] { Datastore::load(dir / "f.toms"); }), golden.size() - 4);
    // Trailing garbage.
    tomcap::testing::write_file(dir / "t.toms", golden + "x");
    EXPECT_EQ(format_offset([&] { Datastore::load(dir / "t.toms"); }), golden.size());
    // Every strict prefix fails with a FormatError.
    for (std::size_t len = 0; len < golden.size(); ++len) {
        tomcap::testing::write_file(dir / "p.toms", golden.substr(0, len));
        EXPECT_THROW(Datastore::load(dir / "p.toms"), FormatError) << len;
    }
    EXPECT_THROW(Datastore::load(""), FormatError);
    EXPECT_THROW(Datastore::load(dir / "missing.toms"), FormatError);
}

TEST(EmbeddingFile, RoundTripAndHeader) {
    TempDir dir;
    Rng rng(13);
    const auto m = tomcap::testing::as_float32(random_matrix(rng, 17, 5));
    write_embedding_file(dir / "e.tomc", m);
    EXPECT_EQ(read_embedding_file(dir / "e.tomc"), m);
    EXPECT_EQ(std::filesystem::file_size(dir / "e.tomc"), kEmbeddingHeaderSize + 17 * 5 * 4);

    EmbeddingReader reader(dir / "e.tomc");
    EXPECT_EQ(reader.dim(), 5u);
    EXPECT_EQ(reader.count(), 17u);

    EmbeddingWriter w(dir / "w.tomc", 5);
    for (std::size_t i = 0; i < m.rows(); ++i) w.write(m.row(i));
    w.close();
    EXPECT_EQ(tomcap::testing::read_file(dir / "w.tomc"), tomcap::testing::read_file(dir / "e.tomc"));
}

TEST(EmbeddingFile, GoldenFixtureParses) {
    const auto m = read_embedding_file(fixture_path("embeddings_2x3.tomc"));
    ASSERT_EQ(m.rows(), 2u);
    ASSERT_EQ(m.dim(), 3u);
    EXPECT_EQ(m.row(0)[0], 1.0);
    EXPECT_EQ(m.row(0)[1], -2.5);
    EXPECT_EQ(m.row(0)[2], 0.25);
    EXPECT_EQ(m.row(1)[0], 1e-3f);
    EXPECT_EQ(m.row(1)[1], 0.0);
    EXPECT_EQ(m.row(1)[2], 3.0);
}

TEST(EmbeddingFile, CorruptionOffsets) {
    TempDir dir;
    const auto golden = tomcap::testing::read_file(fixture_path("embeddings_2x3.tomc"));
    auto with = [&](std::size_t pos, char byte) {
        auto b = golden;
        b[pos] = byte;
        tomcap::testing::write_file(dir / "c.tomc", b);
        return format_offset([&] { read_embedding_file(dir / "c.tomc"); });
    };
    EXPECT_EQ(with(0, 'X'), 0u);
    EXPECT_EQ(with(4, 9), 4u);
    EXPECT_EQ(with(8, 1), 8u);
    tomcap::testing::write_file(dir / "t.tomc", golden.substr(0, golden.size() - 2));
    EXPECT_EQ(format_offset([&] { read_embedding_file(dir / "t.tomc"); }), golden.size() - 2);
}

TEST(CaptionFile, ReadWriteAndErrors) {
    TempDir dir;
    const std::vector<CaptionRecord> recs{{3, "a man on a horse", "coco"}, {9, "snow \"quoted\" é", ""}};
    write_captions(dir / "c.jsonl", recs);
    EXPECT_EQ(read_captions(dir / "c.jsonl"), recs);

    tomcap::testing::write_file(dir / "bad.jsonl",
                                "{\"id\":1,\"text\":\"ok\",\"source\":\"x\"}\n{\"id\":2,\"text\":}\n");
    EXPECT_EQ(format_offset([&] { read_captions(dir / "bad.jsonl"); }), 34u);
    tomcap::testing::write_file(dir / "empty.jsonl", "{\"id\":1,\"text\":\"\"}\n");
    EXPECT_EQ(format_offset([&] { read_captions(dir / "empty.jsonl"); }), 0u);
}
