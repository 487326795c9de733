#include "tomcap/prompt.hpp"

#include <algorithm>
#include <numeric>

#include "tomcap/error.hpp"

namespace tomcap {

namespace {

std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\v\f";
    const auto first = s.find_first_not_of(ws);
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(ws);
    return s.substr(first, last - first + 1);
}

} // namespace

std::string_view to_string(OrderingKind k) {
    switch (k) {
    case OrderingKind::Decreasing: return "decreasing";
    case OrderingKind::Increasing: return "increasing";
    case OrderingKind::Random: return "random";
    }
    return "decreasing";
}

OrderingKind parse_ordering(std::string_view s) {
    if (s == "decreasing") return OrderingKind::Decreasing;
    if (s == "increasing") return OrderingKind::Increasing;
    if (s == "random") return OrderingKind::Random;
    throw Error(ErrorCode::ConfigError, "unknown ordering '" + std::string(s) + "'");
}

std::vector<std::size_t> ordering_permutation(std::size_t n, const OrderingPolicy& policy) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    switch (policy.kind) {
    case OrderingKind::Decreasing:
        break;
    case OrderingKind::Increasing:
        std::reverse(perm.begin(), perm.end());
        break;
    case OrderingKind::Random: {
        Rng rng(policy.seed);
        for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_index(i));
            std::swap(perm[i - 1], perm[j]);
        }
        break;
    }
    }
    return perm;
}

std::string build_prompt(std::span<const std::string> captions) {
    if (captions.empty()) {
        throw Error(ErrorCode::EmptyPrompt, "prompt needs at least one caption");
    }
    std::string out(kPromptPrefix);
    for (const auto& c : captions) {
        out += ' ';
        out += trim(c);
    }
    out += ".\n\n";
    out += kPromptInstruction;
    return out;
}

} // namespace tomcap
