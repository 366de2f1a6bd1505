#pragma once

#include <cstdint>
#include <string>

#include "subkal/subspace.hpp"
#include "subkal/types.hpp"

namespace subkal {

// FNV-1a 64-bit over a byte string; used for content-addressing artifacts
// and hashing per-step filter means in run records.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string hash_hex(std::uint64_t h);
std::string hash_vector(const Vec& v);

// Atomic file replace: writes to <path>.tmp and renames.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);

// Snapshot CSV: header "dim=<d>, n=<N>, mesh=ring", then one snapshot per
// record (row), full round-trip precision.
void save_snapshots(const std::string& path, const SnapshotSet& snaps);
SnapshotSet load_snapshots(const std::string& path);

// Self-describing basis file (JSON): P, eigenvalues, offset, source tag,
// generating config hash, and the full-spectrum cumulative energy curve.
void save_basis(const std::string& path, const SubspaceBasis& basis,
                const Vec& energy_curve, int k_smooth,
                const std::string& config_hash);
SubspaceBasis load_basis(const std::string& path);

// Truth/observation artifact (binary, little-endian doubles).
struct TruthData {
  Mat truth;                     // d x n_obs states at observation times
  Mat obs;                       // m x n_obs observations
  std::vector<int> obs_indices;  // observed components (empty for dense H)
  double clim_std = 0.0;         // climatological std of the truth trajectory
};

void save_truth(const std::string& path, const TruthData& data);
TruthData load_truth(const std::string& path);

// Shortest round-trip double formatting used by all text emitters.
std::string format_double(double v);

}  // namespace subkal
