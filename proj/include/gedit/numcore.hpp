#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gedit/error.hpp"

namespace gedit::numcore {

// Dense row-major matrix of doubles. Vectors are stored as n x 1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool is_vector() const { return rows_ == 1 || cols_ == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void add_scaled(const Matrix& o, double s);
  bool all_finite() const;

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// y = M x  (x has M.cols() entries, y has M.rows()).
std::vector<double> matvec(const Matrix& m, std::span<const double> x);
// y = M^T x  (x has M.rows() entries, y has M.cols()).
std::vector<double> matvec_t(const Matrix& m, std::span<const double> x);
// grad += u v^T (outer product accumulate).
void add_outer(Matrix& grad, std::span<const double> u, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

// Deterministic RNG. All draws go through explicit mappings of the raw
// mt19937_64 stream so results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t integer(std::uint64_t n) { return gen_() % n; }

 private:
  std::mt19937_64 gen_;
};

using GradMap = std::map<std::string, Matrix>;

// Named parameter tensors. Initialization is a pure function of
// (name, shape, seed): matrices draw uniformly from +-sqrt(6/(fan_in+fan_out)),
// vectors (biases, CRF start/end) start at zero.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Matrix& add(const std::string& name, std::size_t rows, std::size_t cols);
  // Replaces or creates an entry, e.g. when loading a checkpoint.
  void assign(const std::string& name, Matrix m);

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  const std::map<std::string, Matrix>& entries() const { return entries_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Matrix> entries_;
};

void accumulate(GradMap& into, const GradMap& grads);
Matrix& grad_slot(GradMap& grads, const std::string& name, std::size_t rows,
                  std::size_t cols);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Standard Adam with bias correction. Moments are created lazily per
// parameter name and mirror the parameter shape.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  void step(ParamStore& params, const GradMap& grads);
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;  // name -> (m, v)
};

// Central finite differences against analytic gradients. Returns the max
// relative error over all coordinates of all entries in `analytic`, where
// relative error uses denominator max(|a|, |g|, 1e-8).
double finite_diff_check(const std::function<double(ParamStore&)>& loss,
                         ParamStore& params, const GradMap& analytic, double eps);

// Binary checkpoint: "GEDT" magic, u32 format version, u64 header length,
// JSON header bytes, u32 entry count, then per entry: u32 name length, name,
// u64 rows, u64 cols, rows*cols little-endian f64 values. Entries are sorted
// by name so identical stores serialize byte-identically.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::string& header_json);

struct Checkpoint {
  std::string header_json;
  std::map<std::string, Matrix> params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gedit::numcore
