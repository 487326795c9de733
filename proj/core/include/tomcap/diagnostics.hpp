#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tomcap/datastore.hpp"
#include "tomcap/embedding.hpp"

namespace tomcap {

struct KnorReport {
    std::vector<std::size_t> k_values;
    /// scores[i] belongs to k_values[i]; each in [0, 1].
    std::vector<double> scores;
    std::size_t pair_count = 0;
};

/// k-nearest-neighbor overlap ratio: for each pair i and each k, the fraction
/// of ids shared by the top-k neighbors of image_i and of text_i, averaged
/// over pairs. Queries are used as given; apply any correction or noise first.
///
/// Throws PairMismatch when row counts differ and InvalidK when a k is zero
/// or exceeds the store size.
KnorReport knor(const Datastore& store, const EmbeddingMatrix& paired_image_queries,
                const EmbeddingMatrix& paired_text_queries, std::span<const std::size_t> k_values,
                std::size_t threads = 1);

std::string knor_to_json(const KnorReport& report);
/// "k,score" rows.
std::string knor_to_csv(const KnorReport& report);

struct LabeledMatrix {
    std::string label;
    const EmbeddingMatrix* matrix = nullptr;
};

/// CSV with header "label,row_index,v0,...,v{dim-1}". Values use the shortest
/// decimal form that parses back to the same double.
void export_projection_input(std::span<const LabeledMatrix> matrices,
                             const std::filesystem::path& path);

} // namespace tomcap
