#include "sflc/stats.hpp"

#include <bit>
#include <cmath>

#include <boost/math/special_functions/gamma.hpp>

namespace sflc::stats {

double chi2_sf(double statistic, double degrees_of_freedom) {
    if (statistic <= 0)
        return 1.0;
    return boost::math::gamma_q(degrees_of_freedom / 2.0, statistic / 2.0);
}

void ByteBattery::add(std::span<const uint8_t> data) {
    for (uint8_t b : data) {
        ++histogram_[b];
        ones_ += std::popcount(b);
    }
    total_ += data.size();
}

double ByteBattery::monobit_p() const {
    if (total_ == 0)
        return 1.0;
    const double n = static_cast<double>(total_) * 8.0;
    const double s = std::fabs(2.0 * static_cast<double>(ones_) - n) / std::sqrt(n);
    return std::erfc(s / std::sqrt(2.0));
}

double ByteBattery::byte_chi2_p() const {
    if (total_ == 0)
        return 1.0;
    const double expected = static_cast<double>(total_) / 256.0;
    double stat = 0;
    for (uint64_t count : histogram_) {
        const double d = static_cast<double>(count) - expected;
        stat += d * d / expected;
    }
    return chi2_sf(stat, 255.0);
}

double two_sample_chi2_p(std::span<const uint64_t> a, std::span<const uint64_t> b) {
    const size_t bins = std::min(a.size(), b.size());
    double total_a = 0, total_b = 0;
    for (size_t i = 0; i < bins; ++i) {
        total_a += static_cast<double>(a[i]);
        total_b += static_cast<double>(b[i]);
    }
    if (total_a == 0 || total_b == 0)
        return 1.0;

    // Merge adjacent bins until each pooled bin expects at least 5 samples.
    struct Pooled {
        double a = 0, b = 0;
    };
    std::vector<Pooled> pooled;
    Pooled cur;
    const double min_expected = 5.0;
    for (size_t i = 0; i < bins; ++i) {
        cur.a += static_cast<double>(a[i]);
        cur.b += static_cast<double>(b[i]);
        const double pooled_total = (cur.a + cur.b) * std::min(total_a, total_b) /
                                    (total_a + total_b);
        if (pooled_total >= min_expected) {
            pooled.push_back(cur);
            cur = Pooled{};
        }
    }
    if (cur.a + cur.b > 0) {
        if (pooled.empty())
            pooled.push_back(cur);
        else {
            pooled.back().a += cur.a;
            pooled.back().b += cur.b;
        }
    }
    if (pooled.size() < 2)
        return 1.0;

    double stat = 0;
    const double k_a = std::sqrt(total_b / total_a);
    const double k_b = std::sqrt(total_a / total_b);
    for (const auto& bin : pooled) {
        const double d = k_a * bin.a - k_b * bin.b;
        stat += d * d / (bin.a + bin.b);
    }
    return chi2_sf(stat, static_cast<double>(pooled.size() - 1));
}

double uniform_chi2_p(std::span<const uint64_t> counts) {
    if (counts.empty())
        return 1.0;
    double total = 0;
    for (uint64_t c : counts)
        total += static_cast<double>(c);
    if (total == 0)
        return 1.0;
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0;
    for (uint64_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return chi2_sf(stat, static_cast<double>(counts.size() - 1));
}

}  // namespace sflc::stats
