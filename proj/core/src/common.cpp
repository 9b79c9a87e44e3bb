#include "sfs/common.hpp"

#include <algorithm>

namespace sfs {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t m) {
    if (m > n) throw std::invalid_argument("sample_indices: m > n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // partial Fisher-Yates: the first m slots end up holding the sample
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace sfs
