#pragma once

// Benchmark harness: engine throughput, a plain single-key CTR baseline with
// no indirection layer, and the synthetic fragmentation workload.

#include <cstdint>
#include <string>
#include <vector>

#include "sflc/crypto.hpp"

namespace sflc::bench {

enum class Pattern { seqwrite, seqread, randwrite, randread };

struct Throughput {
    double mb_per_s = 0;
    uint64_t bytes = 0;
    double seconds = 0;
};

// Formats the image (skipping the random prefill) and drives the pattern
// through the indirection engine. `io_mib` is the amount of data moved.
Throughput run_engine(const std::string& image_path, Pattern pattern, uint64_t io_mib,
                      uint64_t seed, const KdfCost& kdf);

// Same pattern against a flat file encrypted with one AES-CTR key and
// per-block IVs derived from the block index; no slices, no IV storage.
Throughput run_baseline(const std::string& file_path, Pattern pattern, uint64_t io_mib,
                        uint64_t seed);

struct FragPoint {
    double occupancy = 0;   // distinct logical blocks written / logical capacity
    double efficiency = 0;  // distinct blocks written / (allocated slices * S_L)
};

// Fills one volume and samples (occupancy, efficiency) every 5%. The mixed
// workload simulates file extents: mostly next-fit sequential placement with
// occasional jumps to a fresh slice boundary and periodic metadata rewrites.
std::vector<FragPoint> run_frag(const std::string& image_path, uint64_t total_blocks,
                                bool sequential, uint64_t seed, const KdfCost& kdf,
                                double max_occupancy = 0.90);

}  // namespace sflc::bench
