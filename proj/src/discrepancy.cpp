#include "nuq/discrepancy.hpp"

#include "nuq/error.hpp"

#include <algorithm>
#include <cmath>

namespace nuq {

void ExactSum::add(double x) {
  std::size_t used = 0;
  for (double y : partials_) {
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[used++] = lo;
    x = hi;
  }
  partials_.resize(used);
  partials_.push_back(x);
}

double ExactSum::value() const {
  if (partials_.empty()) return 0.0;
  auto k = partials_.size() - 1;
  double hi = partials_[k];
  double lo = 0.0;
  while (k > 0) {
    const double x = hi;
    const double y = partials_[--k];
    hi = x + y;
    const double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  // Round-half-even correction when the remaining partials push past a tie.
  if (k > 0 && ((lo < 0.0 && partials_[k - 1] < 0.0) || (lo > 0.0 && partials_[k - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

std::string to_string(KernelKind k) {
  switch (k) {
  case KernelKind::linear: return "linear";
  case KernelKind::polynomial: return "polynomial";
  case KernelKind::rbf: return "rbf";
  }
  return "unknown";
}

KernelKind parse_kernel_kind(const std::string &name) {
  if (name == "linear") return KernelKind::linear;
  if (name == "polynomial" || name == "poly") return KernelKind::polynomial;
  if (name == "rbf" || name == "gaussian") return KernelKind::rbf;
  throw ContractError("unknown kernel '" + name + "' (expected linear, polynomial or rbf)");
}

void KernelSpec::check() const {
  if (kind == KernelKind::polynomial && degree < 2)
    throw ContractError("polynomial kernel degree must be >= 2");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ContractError("kernel scale must be positive");
  if (!std::isfinite(offset)) throw ContractError("kernel offset must be finite");
}

SampleSet::SampleSet(Eigen::MatrixXd columns, Provenance provenance)
    : samples_(std::move(columns)), provenance_(std::move(provenance)) {
  if (samples_.cols() < 1 || samples_.rows() < 1) throw ContractError("empty sample set");
  if (!samples_.allFinite()) throw ContractError("sample set contains non-finite values");
}

SampleSet SampleSet::scalars(std::span<const double> values, Provenance provenance) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
  return SampleSet(std::move(m), std::move(provenance));
}

namespace {

double dot(const double *x, const double *y, std::size_t p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p; ++i) s += x[i] * y[i];
  return s;
}

double squared_distance(const double *x, const double *y, std::size_t p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double t = x[i] - y[i];
    s += t * t;
  }
  return s;
}

double kernel_raw(const KernelSpec &k, const double *x, const double *y, std::size_t p) {
  switch (k.kind) {
  case KernelKind::linear: return dot(x, y, p);
  case KernelKind::polynomial: return std::pow(dot(x, y, p) / k.scale + k.offset, k.degree);
  case KernelKind::rbf: return std::exp(-squared_distance(x, y, p) / (2.0 * k.scale * k.scale));
  }
  return 0.0;
}

} // namespace

double kernel_eval(const KernelSpec &k, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("kernel arguments differ in dimension");
  k.check();
  KernelSpec resolved = k;
  if (resolved.scale == 0.0)
    resolved.scale = k.kind == KernelKind::polynomial ? static_cast<double>(x.size()) : 1.0;
  return kernel_raw(resolved, x.data(), y.data(), x.size());
}

Bandwidth median_heuristic_bandwidth(const SampleSet &X, const SampleSet &Y) {
  if (X.size() + Y.size() < 2) throw ContractError("median heuristic needs at least two points");
  if (X.dimension() != Y.dimension()) throw ContractError("sample sets differ in dimension");
  const std::size_t p = X.dimension();
  std::vector<const double *> pooled;
  for (std::size_t i = 0; i < X.size(); ++i) pooled.push_back(X.samples().col(static_cast<Eigen::Index>(i)).data());
  for (std::size_t i = 0; i < Y.size(); ++i) pooled.push_back(Y.samples().col(static_cast<Eigen::Index>(i)).data());

  std::vector<double> dist;
  dist.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j)
      dist.push_back(std::sqrt(squared_distance(pooled[i], pooled[j], p)));

  std::sort(dist.begin(), dist.end());
  const std::size_t mid = dist.size() / 2;
  const double median = dist.size() % 2 ? dist[mid] : 0.5 * (dist[mid - 1] + dist[mid]);
  if (!(median > 0.0)) return {1.0, true};
  return {median, false};
}

KernelSpec resolve_kernel(const KernelSpec &k, const SampleSet &X, const SampleSet &Y) {
  k.check();
  KernelSpec out = k;
  if (out.scale == 0.0) {
    switch (k.kind) {
    case KernelKind::linear: out.scale = 1.0; break;
    case KernelKind::polynomial: out.scale = static_cast<double>(X.dimension()); break;
    case KernelKind::rbf: out.scale = median_heuristic_bandwidth(X, Y).value; break;
    }
  }
  return out;
}

double mmd_squared(const SampleSet &X, const SampleSet &Y, const KernelSpec &k_in) {
  if (X.dimension() != Y.dimension()) throw ContractError("sample sets differ in dimension");
  const std::size_t p = X.dimension();
  const std::size_t m = X.size();
  const std::size_t l = Y.size();
  const double dm = static_cast<double>(m);
  const double dl = static_cast<double>(l);

  if (k_in.kind == KernelKind::linear) {
    // The linear-kernel V-statistic collapses to |mean X - mean Y|^2.
    ExactSum total;
    for (std::size_t i = 0; i < p; ++i) {
      ExactSum sx, sy;
      for (std::size_t a = 0; a < m; ++a) sx.add(X.samples()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)));
      for (std::size_t b = 0; b < l; ++b) sy.add(Y.samples()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)));
      const double diff = sx.value() / dm - sy.value() / dl;
      total.add(diff * diff);
    }
    return std::max(0.0, total.value());
  }

  const KernelSpec k = resolve_kernel(k_in, X, Y);
  const auto col = [](const SampleSet &s, std::size_t i) {
    return s.samples().col(static_cast<Eigen::Index>(i)).data();
  };

  // Within-set sums use the symmetry of the Gram matrix.
  const auto within = [&](const SampleSet &s) {
    ExactSum sum;
    for (std::size_t a = 0; a < s.size(); ++a) {
      sum.add(kernel_raw(k, col(s, a), col(s, a), p));
      for (std::size_t b = a + 1; b < s.size(); ++b) sum.add(2.0 * kernel_raw(k, col(s, a), col(s, b), p));
    }
    return sum.value();
  };
  ExactSum cross;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < l; ++b) cross.add(kernel_raw(k, col(X, a), col(Y, b), p));

  ExactSum total;
  total.add(within(X) / (dm * dm));
  total.add(within(Y) / (dl * dl));
  total.add(-2.0 * cross.value() / (dm * dl));
  return std::max(0.0, total.value());
}

double wasserstein_1d(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("wasserstein_1d needs equal sample counts");
  if (x.empty()) throw ContractError("wasserstein_1d needs at least one sample");
  std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  ExactSum sum;
  for (std::size_t i = 0; i < xs.size(); ++i) sum.add(std::abs(xs[i] - ys[i]));
  return sum.value() / static_cast<double>(xs.size());
}

} // namespace nuq
