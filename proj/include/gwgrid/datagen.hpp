#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "gwgrid/counters.hpp"
#include "gwgrid/types.hpp"

namespace gwgrid {

// ---------------------------------------------------------------------------
// Deterministic synthetic datasets.
//
// Reproducibility contract: a dataset is a pure function of its GenSpec.
// Every consumer of randomness owns an independent mt19937_64 engine seeded
// with splitmix64(seed ^ tag), so regenerating any one file never shifts the
// others.  Tags: kinship 1, fixed predictors 2, variants 3, traits 4,
// h2 5, sigma2 6.  Matrix draws are column-major (row index fastest).  The
// kinship engine draws the n*n gaussian deviates for the orthogonal factor
// first, then the n-2 interior spectrum values.  Normal deviates come from
// the inverse normal CDF applied to ((bits >> 12) + 0.5) * 2^-52, which net
// of engine equality makes files byte-identical across platforms.
// ---------------------------------------------------------------------------

enum class KinshipModel {
  identity,    // no relatedness: the identity matrix
  diagonal,    // known spectrum: diag(1, 2, ..., n) exactly
  random_spd,  // Q diag(lambda) Q^T with a random orthogonal Q and a
               // log-uniform spectrum pinned to [1, condition]
};

const char* kinship_model_name(KinshipModel model);
KinshipModel parse_kinship_model(const std::string& name);

struct GenSpec {
  ProblemDims dims;
  std::uint64_t seed = 1;
  KinshipModel kinship = KinshipModel::random_spd;
  double condition = 100.0;  // random_spd only: largest/smallest eigenvalue
  double h2_min = 0.2;       // heritability range, subset of [0, 1)
  double h2_max = 0.8;
  double sigma2_min = 0.5;   // scale range, strictly positive
  double sigma2_max = 2.0;

  void validate() const;  // throws DimensionError
};

// Seed and deviate plumbing, exposed so tests can pin the exact values.
std::uint64_t splitmix64(std::uint64_t x);
// Maps raw engine bits to a uniform deviate in the open interval (0, 1).
double uniform_from_bits(std::uint64_t bits);
// Inverse of the standard normal CDF, accurate to a few ulp (rational
// initial guess plus one Halley correction).  p must lie in (0, 1).
double standard_normal_quantile(double p);

// The in-memory form of a full dataset, for tests and small problems.
struct Dataset {
  Eigen::MatrixXd kinship;  // n x n symmetric positive definite
  Eigen::MatrixXd xl;       // n x (p-1) fixed predictors
  Eigen::MatrixXd snps;     // n x m variant columns
  Eigen::MatrixXd traits;   // n x t trait columns
  Eigen::VectorXd h2;       // t heritabilities
  Eigen::VectorXd sigma2;   // t scales
};

Eigen::MatrixXd generate_kinship(const GenSpec& spec);
Dataset generate_in_memory(const GenSpec& spec);

// File layout of a generated dataset directory.
struct DatasetPaths {
  std::filesystem::path kinship;
  std::filesystem::path xl;
  std::filesystem::path snps;
  std::filesystem::path traits;
  std::filesystem::path manifest;

  static DatasetPaths in_dir(const std::filesystem::path& dir);
};

// Writes kinship.gwg, xl.gwg, snps.gwg, traits.gwg and a key=value
// manifest.txt into dir (created if missing).  Variant and trait payloads
// are streamed in bounded slabs, so m and t can exceed memory.  The
// manifest is written last; its presence marks a complete dataset.
DatasetPaths generate_dataset(const GenSpec& spec,
                              const std::filesystem::path& dir,
                              RunCounters* counters = nullptr);

struct DatasetManifest {
  GenSpec spec;
  DatasetPaths paths;  // resolved relative to the manifest's directory
};

DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace gwgrid
