#include "driftlab/energy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace driftlab::energy {
namespace {

constexpr Eigen::Index kBlock = 64;

inline double euclid(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    double t = a[k] - b[k];
    s += t * t;
  }
  return std::sqrt(s);
}

double cross_block_sum(const RowMatrix& x, const RowMatrix& y, Eigen::Index row_begin,
                       Eigen::Index row_end) {
  const Eigen::Index d = x.cols();
  double total = 0.0;
  for (Eigen::Index ib = row_begin; ib < row_end; ib += kBlock) {
    const Eigen::Index ie = std::min(ib + kBlock, row_end);
    for (Eigen::Index jb = 0; jb < y.rows(); jb += kBlock) {
      const Eigen::Index je = std::min(jb + kBlock, y.rows());
      double block = 0.0;
      for (Eigen::Index i = ib; i < ie; ++i) {
        const double* xi = x.row(i).data();
        for (Eigen::Index j = jb; j < je; ++j) block += euclid(xi, y.row(j).data(), d);
      }
      total += block;
    }
  }
  return total;
}

double within_block_sum(const RowMatrix& x, Eigen::Index row_begin, Eigen::Index row_end) {
  const Eigen::Index d = x.cols();
  double total = 0.0;
  for (Eigen::Index ib = row_begin; ib < row_end; ib += kBlock) {
    const Eigen::Index ie = std::min(ib + kBlock, row_end);
    for (Eigen::Index jb = ib; jb < x.rows(); jb += kBlock) {
      const Eigen::Index je = std::min(jb + kBlock, x.rows());
      double block = 0.0;
      for (Eigen::Index i = ib; i < ie; ++i) {
        const double* xi = x.row(i).data();
        for (Eigen::Index j = std::max(jb, i + 1); j < je; ++j) {
          block += euclid(xi, x.row(j).data(), d);
        }
      }
      total += block;
    }
  }
  return total;
}

// Splits rows across hardware threads once the pair count is large enough to
// amortize thread start-up.
template <typename Fn>
double parallel_rows(Eigen::Index rows, double pair_count, Fn&& fn) {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads == 1 || pair_count < 4e6 || rows < 2 * kBlock) return fn(0, rows);
  threads = std::min<unsigned>(threads, static_cast<unsigned>(rows / kBlock));
  std::vector<double> partial(threads, 0.0);
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (rows + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const Eigen::Index b = t * chunk;
    const Eigen::Index e = std::min(rows, b + chunk);
    pool.emplace_back([&, t, b, e] { partial[t] = b < e ? fn(b, e) : 0.0; });
  }
  for (auto& th : pool) th.join();
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

RowMatrix subsample(const RowMatrix& x, std::size_t cap, std::uint64_t seed) {
  if (static_cast<std::size_t>(x.rows()) <= cap) return x;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cap));
  RowMatrix out(static_cast<Eigen::Index>(cap), x.cols());
  for (std::size_t i = 0; i < cap; ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::map<ComponentId, std::vector<Eigen::Index>> group_rows(const ClusteredSamples& s) {
  std::map<ComponentId, std::vector<Eigen::Index>> out;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    out[s.labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

RowMatrix take_rows(const RowMatrix& x, const std::vector<Eigen::Index>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

void check_samples(const ClusteredSamples& s, const char* what) {
  if (static_cast<std::size_t>(s.points.rows()) != s.labels.size()) {
    throw PreconditionError(std::string(what) + ": label count does not match point count");
  }
}

// Strict weak order on matrices: row count, then lexicographic values.
bool precedes(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double within_pair_sum(const RowMatrix& x) {
  const double pairs = 0.5 * static_cast<double>(x.rows()) * static_cast<double>(x.rows());
  return 2.0 * parallel_rows(x.rows(), pairs, [&](Eigen::Index b, Eigen::Index e) {
           return within_block_sum(x, b, e);
         });
}

double cross_pair_sum(const RowMatrix& x, const RowMatrix& y) {
  const double pairs = static_cast<double>(x.rows()) * static_cast<double>(y.rows());
  return parallel_rows(x.rows(), pairs, [&](Eigen::Index b, Eigen::Index e) {
    return cross_block_sum(x, y, b, e);
  });
}

double normalized_distance(double between_mean, double within_x_mean, double within_y_mean) {
  if (between_mean <= 0.0) return 0.0;
  double d = (2.0 * between_mean - within_x_mean - within_y_mean) / (2.0 * between_mean);
  return std::clamp(d, 0.0, 1.0);
}

EnergyResult energy_distance(const RowMatrix& x, const RowMatrix& y) {
  if (x.rows() == 0 || y.rows() == 0) throw PreconditionError("energy_distance: empty sample set");
  if (x.cols() != y.cols()) throw PreconditionError("energy_distance: dimension mismatch");

  // Evaluate in a canonical argument order so that swapping x and y gives a
  // bitwise-identical distance.
  const bool swapped = precedes(y, x);
  const RowMatrix& a = swapped ? y : x;
  const RowMatrix& b = swapped ? x : y;

  const double n = static_cast<double>(a.rows());
  const double m = static_cast<double>(b.rows());
  const double between = cross_pair_sum(a, b) / (n * m);
  const double within_a = within_pair_sum(a) / (n * n);
  const double within_b = within_pair_sum(b) / (m * m);

  EnergyResult r;
  r.between_mean = between;
  r.within_x_mean = swapped ? within_b : within_a;
  r.within_y_mean = swapped ? within_a : within_b;
  r.distance = normalized_distance(between, within_a, within_b);
  return r;
}

std::optional<DriftBody> drift_degree(const ClusteredSamples& window,
                                      const ClusteredSamples& training,
                                      const DriftOptions& options) {
  check_samples(window, "window");
  check_samples(training, "training");
  if (window.size() == 0) return std::nullopt;

  const auto window_groups = group_rows(window);
  const auto training_groups = group_rows(training);
  const double total = static_cast<double>(window.size());

  DriftBody body;
  for (const auto& [cluster, rows] : window_groups) {
    ClusterDrift cd;
    cd.weight_fraction = static_cast<double>(rows.size()) / total;
    auto it = training_groups.find(cluster);
    if (it == training_groups.end()) {
      cd.distance = 1.0;
    } else {
      const std::uint64_t seed = options.seed ^ (static_cast<std::uint64_t>(cluster) * 0x9e3779b97f4a7c15ULL);
      RowMatrix xw = subsample(take_rows(window.points, rows), options.subsample_cap, seed);
      RowMatrix xt = subsample(take_rows(training.points, it->second), options.subsample_cap, seed + 1);
      cd.distance = energy_distance(xw, xt).distance;
    }
    body.overall += cd.weight_fraction * cd.distance;
    body.per_cluster.emplace(cluster, cd);
  }
  return body;
}

std::map<std::string, double> drift_per_feature(const ClusteredSamples& window,
                                                const ClusteredSamples& training,
                                                std::span<const std::string> feature_names,
                                                const DriftOptions& options) {
  std::map<std::string, double> out;
  if (window.size() == 0) return out;
  if (static_cast<std::size_t>(window.points.cols()) != feature_names.size()) {
    throw PreconditionError("drift_per_feature: feature name count does not match dimension");
  }
  for (std::size_t f = 0; f < feature_names.size(); ++f) {
    const auto col = static_cast<Eigen::Index>(f);
    ClusteredSamples w{window.points.col(col), window.labels};
    ClusteredSamples t{training.points.rows() > 0 ? RowMatrix(training.points.col(col))
                                                  : RowMatrix(0, 1),
                       training.labels};
    out[feature_names[f]] = drift_degree(w, t, options)->overall;
  }
  return out;
}

// ---------------------------------------------------------------------------
// IncrementalDrift

namespace {

double sum_to_all(const std::vector<double>& flat, std::size_t dim, std::span<const double> x) {
  double s = 0.0;
  const std::size_t count = flat.size() / dim;
  for (std::size_t i = 0; i < count; ++i) {
    s += euclid(flat.data() + i * dim, x.data(), static_cast<Eigen::Index>(dim));
  }
  return s;
}

}  // namespace

void IncrementalDrift::reset(const ClusteredSamples& training) {
  check_samples(training, "training");
  if (training.points.rows() > 0) dim_ = static_cast<std::size_t>(training.points.cols());
  if (dim_ == 0) throw PreconditionError("IncrementalDrift: unknown dimension");
  clusters_.clear();
  where_.clear();
  for (std::size_t i = 0; i < training.size(); ++i) {
    auto& c = clusters_[training.labels[i]];
    const double* p = training.points.row(static_cast<Eigen::Index>(i)).data();
    c.training.insert(c.training.end(), p, p + dim_);
  }
  for (auto& [id, c] : clusters_) {
    Eigen::Map<const RowMatrix> m(c.training.data(), static_cast<Eigen::Index>(c.training_count(dim_)),
                                  static_cast<Eigen::Index>(dim_));
    c.training_within = within_pair_sum(RowMatrix(m));
  }
}

void IncrementalDrift::add(SampleId id, std::span<const double> x, ComponentId label) {
  if (x.size() != dim_) throw PreconditionError("IncrementalDrift: dimension mismatch");
  if (where_.contains(id)) throw PreconditionError("IncrementalDrift: duplicate id");
  auto& c = clusters_[label];
  c.window_within += 2.0 * sum_to_all(c.window, dim_, x);
  c.cross += sum_to_all(c.training, dim_, x);
  where_[id] = {label, c.window_ids.size()};
  c.window.insert(c.window.end(), x.begin(), x.end());
  c.window_ids.push_back(id);
}

void IncrementalDrift::remove(SampleId id) {
  auto it = where_.find(id);
  if (it == where_.end()) throw NotFoundError("IncrementalDrift: unknown id");
  auto [label, slot] = it->second;
  where_.erase(it);
  auto& c = clusters_.at(label);

  std::vector<double> x(c.window.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
                        c.window.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
  const std::size_t last = c.window_ids.size() - 1;
  if (slot != last) {
    std::copy(c.window.begin() + static_cast<std::ptrdiff_t>(last * dim_), c.window.end(),
              c.window.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
    c.window_ids[slot] = c.window_ids[last];
    where_[c.window_ids[slot]].second = slot;
  }
  c.window.resize(last * dim_);
  c.window_ids.pop_back();

  // x's self-distance is 0, so the remaining-window sum equals the full one.
  c.window_within -= 2.0 * sum_to_all(c.window, dim_, x);
  c.cross -= sum_to_all(c.training, dim_, x);
  if (c.window_ids.empty()) {
    c.window_within = 0.0;
    c.cross = 0.0;
  }
}

void IncrementalDrift::relabel(SampleId id, ComponentId label) {
  auto it = where_.find(id);
  if (it == where_.end()) throw NotFoundError("IncrementalDrift: unknown id");
  if (it->second.first == label) return;
  auto& c = clusters_.at(it->second.first);
  const std::size_t slot = it->second.second;
  std::vector<double> x(c.window.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
                        c.window.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
  remove(id);
  add(id, x, label);
}

std::optional<DriftBody> IncrementalDrift::current() const {
  const std::size_t total = where_.size();
  if (total == 0) return std::nullopt;
  DriftBody body;
  for (const auto& [label, c] : clusters_) {
    const std::size_t n = c.window_count();
    if (n == 0) continue;
    ClusterDrift cd;
    cd.weight_fraction = static_cast<double>(n) / static_cast<double>(total);
    const std::size_t m = c.training_count(dim_);
    if (m == 0) {
      cd.distance = 1.0;
    } else {
      const double nn = static_cast<double>(n);
      const double mm = static_cast<double>(m);
      cd.distance = normalized_distance(c.cross / (nn * mm), c.window_within / (nn * nn),
                                        c.training_within / (mm * mm));
    }
    body.overall += cd.weight_fraction * cd.distance;
    body.per_cluster.emplace(label, cd);
  }
  return body;
}

void IncrementalDrift::recompute() {
  for (auto& [label, c] : clusters_) {
    const auto d = static_cast<Eigen::Index>(dim_);
    RowMatrix w = Eigen::Map<const RowMatrix>(c.window.data(), static_cast<Eigen::Index>(c.window_count()), d);
    RowMatrix t = Eigen::Map<const RowMatrix>(c.training.data(), static_cast<Eigen::Index>(c.training_count(dim_)), d);
    c.window_within = within_pair_sum(w);
    c.cross = cross_pair_sum(w, t);
    c.training_within = within_pair_sum(t);
  }
}

}  // namespace driftlab::energy
