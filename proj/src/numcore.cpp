#include "gedit/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gedit::numcore {

void Matrix::add_scaled(const Matrix& o, double s) {
  if (!same_shape(o)) throw ValidationError("add_scaled: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw ValidationError("matvec: shape mismatch");
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.data() + r * m.cols();
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

std::vector<double> matvec_t(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.rows()) throw ValidationError("matvec_t: shape mismatch");
  std::vector<double> y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * x[r];
  }
  return y;
}

void add_outer(Matrix& grad, std::span<const double> u, std::span<const double> v) {
  if (u.size() != grad.rows() || v.size() != grad.cols())
    throw ValidationError("add_outer: shape mismatch");
  for (std::size_t r = 0; r < u.size(); ++r) {
    double* row = grad.data() + r * grad.cols();
    for (std::size_t c = 0; c < v.size(); ++c) row[c] += u[r] * v[c];
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2);
  return a;
}

}  // namespace

Matrix& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
  if (entries_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  if (rows == 0 || cols == 0)
    throw ValidationError("parameter " + name + " has a zero dimension");
  Matrix m(rows, cols);
  if (!m.is_vector()) {
    Rng rng(mix(mix(seed_, fnv1a(name)), rows * 2654435761ull + cols));
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data()[i] = rng.uniform(-bound, bound);
  }
  auto [it, ok] = entries_.emplace(name, std::move(m));
  (void)ok;
  return it->second;
}

void ParamStore::assign(const std::string& name, Matrix m) {
  entries_[name] = std::move(m);
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second;
}

void accumulate(GradMap& into, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    auto it = into.find(name);
    if (it == into.end())
      into.emplace(name, g);
    else
      it->second.add_scaled(g, 1.0);
  }
}

Matrix& grad_slot(GradMap& grads, const std::string& name, std::size_t rows,
                  std::size_t cols) {
  auto it = grads.find(name);
  if (it == grads.end()) it = grads.emplace(name, Matrix(rows, cols)).first;
  return it->second;
}

void AdamState::step(ParamStore& params, const GradMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    if (!p.same_shape(g))
      throw ValidationError("adam_step: gradient shape mismatch for " + name);
    auto it = moments_.find(name);
    if (it == moments_.end())
      it = moments_
               .emplace(name, std::make_pair(Matrix(p.rows(), p.cols()),
                                             Matrix(p.rows(), p.cols())))
               .first;
    Matrix& m = it->second.first;
    Matrix& v = it->second.second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = config_.beta1 * m.data()[i] + (1.0 - config_.beta1) * gi;
      v.data()[i] = config_.beta2 * v.data()[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      p.data()[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

double finite_diff_check(const std::function<double(ParamStore&)>& loss,
                         ParamStore& params, const GradMap& analytic, double eps) {
  if (eps <= 0.0) throw ValidationError("finite_diff_check: eps must be positive");
  double max_rel = 0.0;
  for (const auto& [name, grad] : analytic) {
    Matrix& p = params.at(name);
    if (!p.same_shape(grad))
      throw ValidationError("finite_diff_check: shape mismatch for " + name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double lp = loss(params);
      p.data()[i] = saved - eps;
      const double lm = loss(params);
      p.data()[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericalError("finite_diff_check: non-finite loss at " + name);
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = grad.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ValidationError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::string& header_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open checkpoint for writing: " + path.string());
  os.write("GEDT", 4);
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint64_t>(os, header_json.size());
  os.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& [name, m] : params.entries()) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(os, m.rows());
    write_pod<std::uint64_t>(os, m.cols());
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw ValidationError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GEDT", 4) != 0)
    throw ValidationError("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(is);
  Checkpoint ckpt;
  ckpt.header_json.resize(header_len);
  is.read(ckpt.header_json.data(), static_cast<std::streamsize>(header_len));
  const auto count = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rows = read_pod<std::uint64_t>(is);
    const auto cols = read_pod<std::uint64_t>(is);
    Matrix m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw ValidationError("checkpoint: truncated tensor " + name);
    ckpt.params.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace gedit::numcore
