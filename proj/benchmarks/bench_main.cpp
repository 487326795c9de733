#include <benchmark/benchmark.h>

#include "tomcap/datastore.hpp"
#include "tomcap/gap_correction.hpp"
#include "tomcap/metrics.hpp"
#include "tomcap/rerank.hpp"
#include "tomcap/rng.hpp"

using namespace tomcap;

namespace {

EmbeddingMatrix gaussian(Rng& rng, std::size_t rows, std::size_t dim) {
    EmbeddingMatrix m(rows, dim);
    for (std::size_t i = 0; i < rows; ++i) {
        for (auto& v : m.row(i)) v = rng.normal();
    }
    return m;
}

std::vector<CaptionRecord> records(std::size_t n) {
    std::vector<CaptionRecord> r;
    r.reserve(n);
    for (std::size_t i = 0; i < n; ++i) r.push_back({i, "caption " + std::to_string(i), "bench"});
    return r;
}

// args: rows, dim, threads
void BM_KnnSearch(benchmark::State& state) {
    Rng rng(1);
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto dim = static_cast<std::size_t>(state.range(1));
    const auto store = Datastore::build(gaussian(rng, rows, dim), records(rows));
    const auto queries = gaussian(rng, 64, dim);
    SearchOptions opt;
    opt.threads = static_cast<std::size_t>(state.range(2));
    std::size_t q = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(store.search(queries.row(q++ % queries.rows()), 4, opt));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_KnnSearch)->Args({10000, 512, 1})->Args({100000, 512, 1})->Args({100000, 512, 4});

void BM_Correct(benchmark::State& state) {
    Rng rng(2);
    const auto dim = static_cast<std::size_t>(state.range(0));
    const auto m = gaussian(rng, 256, dim);
    const auto s = compute_stats(m, Modality::Image);
    auto t = s;
    for (auto& v : t.mean) v += 1.0;
    const GapCorrector corr(s, t, CorrectionMode::MeanStd);
    EmbeddingVector row(m.row(0).begin(), m.row(0).end());
    for (auto _ : state) {
        corr.apply_in_place(row);
        benchmark::DoNotOptimize(row.data());
    }
}
BENCHMARK(BM_Correct)->Arg(512)->Arg(768);

void BM_MmrRerank(benchmark::State& state) {
    Rng rng(3);
    const auto pool = gaussian(rng, 16, 512);
    std::vector<MmrCandidate> cands;
    for (std::size_t i = 0; i < pool.rows(); ++i) {
        cands.push_back({{i, "c", ""}, EmbeddingVector(pool.row(i).begin(), pool.row(i).end())});
    }
    const auto q = gaussian(rng, 1, 512);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mmr_select(q.row(0), cands, MmrConfig{0.5, 16, 4}));
    }
}
BENCHMARK(BM_MmrRerank);

void BM_CiderD(benchmark::State& state) {
    Rng rng(4);
    const char* words[] = {"a", "man", "dog", "riding", "on", "the", "street", "red", "bus", "two",
                           "cat", "sitting", "table", "with", "of", "plate", "food", "wave", "in", "snow"};
    auto sentence = [&] {
        std::string s;
        const auto len = 6 + rng.uniform_index(8);
        for (std::uint64_t i = 0; i < len; ++i) s += std::string(i ? " " : "") + words[rng.uniform_index(20)];
        return s;
    };
    std::vector<EvalInstance> corpus;
    for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(state.range(0)); ++i) {
        EvalInstance inst{i, sentence(), {}};
        for (int r = 0; r < 5; ++r) inst.references.push_back(sentence());
        corpus.push_back(std::move(inst));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(cider_d(corpus));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CiderD)->Arg(1000)->Arg(5000);

} // namespace

BENCHMARK_MAIN();
