#include "tomcap/embedding.hpp"

#include <cmath>
#include <string>

#include "tomcap/error.hpp"

namespace tomcap {

EmbeddingMatrix::EmbeddingMatrix(std::size_t dim) : dim_(dim) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim)
    : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {}

std::span<const double> EmbeddingMatrix::row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * dim_, dim_);
}

std::span<double> EmbeddingMatrix::row(std::size_t i) {
    return std::span<double>(data_).subspan(i * dim_, dim_);
}

void EmbeddingMatrix::append(std::span<const double> values) {
    if (rows_ == 0 && dim_ == 0) {
        dim_ = values.size();
    }
    if (values.size() != dim_) {
        throw Error(ErrorCode::DimMismatch, "row has dim " + std::to_string(values.size()) +
                                                ", matrix has dim " + std::to_string(dim_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

void require_finite(std::span<const double> values) {
    if (values.empty()) {
        throw Error(ErrorCode::InvalidEmbedding, "embedding has zero dimensions");
    }
    for (std::size_t d = 0; d < values.size(); ++d) {
        if (!std::isfinite(values[d])) {
            throw Error(ErrorCode::InvalidEmbedding,
                        "non-finite value at dimension " + std::to_string(d));
        }
    }
}

double squared_l2(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        const double diff = a[d] - b[d];
        acc += diff * diff;
    }
    return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        acc += a[d] * b[d];
    }
    return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot(a, b) / (na * nb);
}

} // namespace tomcap
