#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tomcap {

/// A single embedding. Arithmetic is done in double; files store float32.
using EmbeddingVector = std::vector<double>;

/// Dense row-major matrix of embeddings, one row per item.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    explicit EmbeddingMatrix(std::size_t dim);
    EmbeddingMatrix(std::size_t rows, std::size_t dim);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const double> row(std::size_t i) const;
    std::span<double> row(std::size_t i);

    /// Appends a row. The first append fixes dim() on a default-constructed
    /// matrix; later rows must match it (DimMismatch otherwise).
    void append(std::span<const double> values);

    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Throws InvalidEmbedding if any value is NaN or infinite, or if `values` is empty.
void require_finite(std::span<const double> values);

double squared_l2(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

} // namespace tomcap
