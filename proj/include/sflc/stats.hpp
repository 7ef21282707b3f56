#pragma once

// Statistical checks used by the analysis harness and the test suites:
// monobit frequency test, 256-bin byte-histogram chi-square, and a pooled
// two-sample chi-square for occupancy histograms.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace sflc::stats {

// Survival function of the chi-square distribution (upper tail).
double chi2_sf(double statistic, double degrees_of_freedom);

// Streaming accumulator over byte data.
class ByteBattery {
public:
    void add(std::span<const uint8_t> data);
    uint64_t bytes() const { return total_; }

    // p-value of the monobit frequency test over all accumulated bits.
    double monobit_p() const;
    // p-value of the 255-df chi-square over the byte histogram.
    double byte_chi2_p() const;

private:
    std::array<uint64_t, 256> histogram_{};
    uint64_t ones_ = 0;
    uint64_t total_ = 0;
};

// Two-sample chi-square homogeneity test. Bins with small pooled expectation
// are merged; returns 1.0 when nothing is left to compare.
double two_sample_chi2_p(std::span<const uint64_t> a, std::span<const uint64_t> b);

// One-sample uniformity test against equal expected counts.
double uniform_chi2_p(std::span<const uint64_t> counts);

}  // namespace sflc::stats
