#include "driftlab/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

namespace driftlab::gmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

Eigen::MatrixXd regularize(const Eigen::MatrixXd& cov, double floor) {
  Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < floor) {
    sym.diagonal().array() += floor;
  }
  return sym;
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> chol;
  double log_det = 0.0;

  Gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) : mean(mu), chol(cov) {
    log_det = 2.0 * chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  double log_density(const double* x) const {
    const auto d = mean.size();
    Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(x, d) - mean;
    chol.matrixL().solveInPlace(diff);
    return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + diff.squaredNorm());
  }

  /// Log densities of every row of x.
  Eigen::VectorXd log_densities(const RowMatrix& x) const {
    Eigen::MatrixXd diff = (x.rowwise() - mean.transpose()).transpose();
    chol.matrixL().solveInPlace(diff);
    const double c = static_cast<double>(mean.size()) * kLog2Pi + log_det;
    return (-0.5 * (diff.colwise().squaredNorm().array() + c)).transpose();
  }
};

std::vector<Eigen::VectorXd> kmeans_pp(const RowMatrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  std::vector<Eigen::VectorXd> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(x.row(first(rng)).transpose());
  Eigen::VectorXd d2 = (x.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = first(rng);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      double acc = 0.0;
      for (pick = 0; pick < n - 1; ++pick) {
        acc += d2[pick];
        if (acc >= target) break;
      }
    }
    centers.push_back(x.row(pick).transpose());
    d2 = d2.cwiseMin((x.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
  }
  return centers;
}

// One EM run from a k-means++ seeding. Returns nullopt if a component loses
// all responsibility mass.
std::optional<EmFit> em_once(const RowMatrix& x, int k, const FitOptions& options, double floor,
                             std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  auto centers = kmeans_pp(x, k, rng);

  // Initial responsibilities: nearest seed.
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      double dd = (x.row(i).transpose() - centers[static_cast<std::size_t>(c)]).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    resp(i, best) = 1.0;
  }

  EmFit fit;
  fit.means.assign(static_cast<std::size_t>(k), Eigen::VectorXd::Zero(d));
  fit.covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Identity(d, d));
  fit.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  double previous_ll = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    // M-step.
    Eigen::VectorXd nk = resp.colwise().sum().transpose();
    for (int c = 0; c < k; ++c) {
      if (nk[c] < 1e-10) return std::nullopt;
      const auto cc = static_cast<std::size_t>(c);
      fit.means[cc] = (x.transpose() * resp.col(c)) / nk[c];
      RowMatrix centered = x.rowwise() - fit.means[cc].transpose();
      RowMatrix weighted = centered.array().colwise() * resp.col(c).array();
      Eigen::MatrixXd cov = (centered.transpose() * weighted) / nk[c];
      fit.covariances[cc] = regularize(cov, floor);
      fit.weights[c] = nk[c] / static_cast<double>(n);
    }

    // E-step.
    std::vector<Gaussian> gs;
    gs.reserve(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      gs.emplace_back(fit.means[static_cast<std::size_t>(c)], fit.covariances[static_cast<std::size_t>(c)]);
    }
    Eigen::MatrixXd logp(n, k);
    for (int c = 0; c < k; ++c) {
      logp.col(c) = gs[static_cast<std::size_t>(c)].log_densities(x).array() + std::log(fit.weights[c]);
    }
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logp.row(i).maxCoeff();
      const double lse = m + std::log((logp.row(i).array() - m).exp().sum());
      ll += lse;
      resp.row(i) = (logp.row(i).array() - lse).exp();
    }
    if (!std::isfinite(ll)) return std::nullopt;
    fit.log_likelihood = ll;
    fit.iterations = iter + 1;
    if (std::isfinite(previous_ll) &&
        std::abs(ll - previous_ll) <= options.relative_tolerance * std::abs(ll)) {
      break;
    }
    previous_ll = ll;
  }

  fit.hard_labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best;
    resp.row(i).maxCoeff(&best);
    fit.hard_labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return fit;
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianComponent

GaussianComponent::GaussianComponent(ComponentId id, Eigen::VectorXd mean,
                                     Eigen::MatrixXd covariance, std::vector<SampleId> members,
                                     Tick created_tick, double floor)
    : id_(id),
      mean_(std::move(mean)),
      covariance_(std::move(covariance)),
      members_(std::move(members)),
      created_tick_(created_tick),
      floor_(floor) {
  refresh();
}

void GaussianComponent::set_floor(double floor) {
  floor_ = floor;
  refresh();
}

void GaussianComponent::refresh() {
  regularized_ = regularize(covariance_, floor_);
  chol_.compute(regularized_);
  log_det_ = 2.0 * chol_.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double GaussianComponent::mahalanobis_squared(std::span<const double> x) const {
  Eigen::VectorXd diff =
      Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())) - mean_;
  chol_.matrixL().solveInPlace(diff);
  return diff.squaredNorm();
}

double GaussianComponent::log_density(std::span<const double> x) const {
  return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + log_det_ + mahalanobis_squared(x));
}

double GaussianComponent::entropy() const {
  return 0.5 * log_det_ + 0.5 * static_cast<double>(mean_.size()) * (1.0 + kLog2Pi);
}

void GaussianComponent::absorb(SampleId id, std::span<const double> x) {
  const double n = static_cast<double>(members_.size());
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  if (members_.empty()) {
    mean_ = xv;
    covariance_.setZero(xv.size(), xv.size());
  } else {
    Eigen::VectorXd delta = xv - mean_;
    mean_ += delta / (n + 1.0);
    Eigen::VectorXd delta_after = xv - mean_;
    covariance_ = (n * covariance_ + delta * delta_after.transpose()) / (n + 1.0);
    covariance_ = 0.5 * (covariance_ + covariance_.transpose());
  }
  members_.push_back(id);
  refresh();
}

GaussianComponent GaussianComponent::pooled(ComponentId id,
                                            std::span<const GaussianComponent* const> parts,
                                            double floor) {
  double total = 0.0;
  const auto d = parts.front()->mean().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Tick created = parts.front()->created_tick();
  std::vector<SampleId> members;
  for (const auto* p : parts) {
    const double w = static_cast<double>(p->member_count());
    total += w;
    mean += w * p->mean();
    created = std::min(created, p->created_tick());
    members.insert(members.end(), p->member_ids().begin(), p->member_ids().end());
  }
  if (total > 0.0) mean /= total;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  if (total > 0.0) {
    for (const auto* p : parts) {
      const double w = static_cast<double>(p->member_count());
      Eigen::VectorXd shift = p->mean() - mean;
      cov += w * (p->raw_covariance() + shift * shift.transpose());
    }
    cov /= total;
  }
  return GaussianComponent(id, std::move(mean), std::move(cov), std::move(members), created, floor);
}

// ---------------------------------------------------------------------------
// EM and model selection

double regularization_floor(const RowMatrix& x) {
  if (x.rows() < 2) return 1e-6;
  RowMatrix centered = x.rowwise() - x.colwise().mean();
  const double mean_var = centered.array().square().colwise().sum().mean() / static_cast<double>(x.rows());
  return mean_var > 0.0 ? 1e-6 * mean_var : 1e-6;
}

double parameter_count(int k, int d) {
  return (k - 1) + k * d + k * d * (d + 1) / 2.0;
}

double bic(double log_likelihood, int k, int d, std::size_t n) {
  return parameter_count(k, d) * std::log(static_cast<double>(n)) - 2.0 * log_likelihood;
}

std::optional<EmFit> fit_em(const RowMatrix& x, int k, const FitOptions& options, double floor) {
  if (k < 1 || x.rows() < k) return std::nullopt;
  std::mt19937_64 rng(options.seed + static_cast<std::uint64_t>(k) * 7919);
  std::optional<EmFit> best;
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    auto fit = em_once(x, k, options, floor, rng);
    if (fit && (!best || fit->log_likelihood > best->log_likelihood)) best = std::move(fit);
  }
  return best;
}

namespace {

struct Selection {
  std::optional<EmFit> fit;
  std::map<int, double> bics;
};

Selection select_k(const RowMatrix& x, const FitOptions& options, double floor) {
  Selection s;
  double best_bic = std::numeric_limits<double>::infinity();
  const int k_hi = std::min<int>(options.k_max, static_cast<int>(x.rows()));
  for (int k = std::max(1, options.k_min); k <= k_hi; ++k) {
    auto fit = fit_em(x, k, options, floor);
    if (!fit) {
      s.bics[k] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double b = bic(fit->log_likelihood, k, static_cast<int>(x.cols()),
                         static_cast<std::size_t>(x.rows()));
    s.bics[k] = b;
    if (b < best_bic) {
      best_bic = b;
      s.fit = std::move(fit);
    }
  }
  return s;
}

// Turns an EM fit into components carrying hard assignments and exact moments.
std::vector<GaussianComponent> components_from_fit(const RowMatrix& x, std::span<const SampleId> ids,
                                                   const EmFit& fit, ComponentId first_id,
                                                   Tick tick, double floor) {
  const int k = static_cast<int>(fit.means.size());
  std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < fit.hard_labels.size(); ++i) {
    rows[static_cast<std::size_t>(fit.hard_labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  std::vector<GaussianComponent> out;
  ComponentId next = first_id;
  for (int c = 0; c < k; ++c) {
    const auto& r = rows[static_cast<std::size_t>(c)];
    if (r.empty()) continue;
    RowMatrix members(static_cast<Eigen::Index>(r.size()), x.cols());
    std::vector<SampleId> member_ids;
    for (std::size_t i = 0; i < r.size(); ++i) {
      members.row(static_cast<Eigen::Index>(i)) = x.row(r[i]);
      member_ids.push_back(ids[static_cast<std::size_t>(r[i])]);
    }
    Eigen::VectorXd mean = members.colwise().mean().transpose();
    RowMatrix centered = members.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(r.size());
    out.emplace_back(next++, std::move(mean), std::move(cov), std::move(member_ids), tick, floor);
  }
  return out;
}

}  // namespace

std::map<int, double> bic_scan(const RowMatrix& x, const FitOptions& options) {
  return select_k(x, options, options.floor.value_or(regularization_floor(x))).bics;
}

GmmState offline_fit(const RowMatrix& x, std::span<const SampleId> ids, const FitOptions& options,
                     const GmmConfig& config, Tick tick) {
  if (static_cast<std::size_t>(x.rows()) != ids.size()) {
    throw PreconditionError("offline_fit: id count does not match sample count");
  }
  if (x.rows() == 0) throw PreconditionError("offline_fit: no samples");
  if (options.k_min < 1 || options.k_max < options.k_min) {
    throw PreconditionError("offline_fit: invalid k range");
  }
  if (x.rows() < options.k_max) {
    throw PreconditionError("offline_fit: fewer samples than the largest k");
  }
  const double floor = options.floor.value_or(regularization_floor(x));
  auto selection = select_k(x, options, floor);
  if (!selection.fit) throw Error("offline_fit: EM failed for every k");

  auto components = components_from_fit(x, ids, *selection.fit, 0, tick, floor);
  GmmState state(std::move(components), config, floor, static_cast<std::size_t>(x.cols()));
  return state;
}

// ---------------------------------------------------------------------------
// GmmState

GmmState::GmmState(std::vector<GaussianComponent> components, GmmConfig config, double floor,
                   std::size_t dim)
    : components_(std::move(components)), config_(config), floor_(floor), dim_(dim) {
  for (const auto& c : components_) next_id_ = std::max(next_id_, c.id() + 1);
  configure_threshold();
  rebuild_index();
}

GmmState GmmState::restore(std::vector<GaussianComponent> components,
                           std::vector<PendingSample> pending,
                           std::map<ComponentId, ComponentId> aliases, GmmConfig config,
                           double floor, std::size_t dim, ComponentId next_id) {
  GmmState s(std::move(components), config, floor, dim);
  s.pending_ = std::move(pending);
  s.aliases_ = std::move(aliases);
  s.next_id_ = std::max(s.next_id_, next_id);
  s.rebuild_index();
  return s;
}

void GmmState::configure_threshold() {
  if (!(config_.assign_confidence > 0.0 && config_.assign_confidence < 1.0)) {
    throw PreconditionError("assign_confidence must lie in (0, 1)");
  }
  if (dim_ == 0) return;
  boost::math::chi_squared dist(static_cast<double>(dim_));
  chi2_threshold_ = boost::math::quantile(dist, config_.assign_confidence);
}

void GmmState::rebuild_index() {
  assignments_.clear();
  for (const auto& c : components_) {
    for (SampleId id : c.member_ids()) assignments_[id] = {c.id(), true};
  }
  for (const auto& p : pending_) assignments_[p.id] = {p.provisional, false};
}

std::size_t GmmState::buffer_threshold() const {
  if (config_.buffer_threshold) return std::max<std::size_t>(1, *config_.buffer_threshold);
  if (components_.empty()) return 1;
  std::size_t total = 0;
  for (const auto& c : components_) total += c.member_count();
  const std::size_t avg_half = total / components_.size() / 2;
  return std::max<std::size_t>(1, avg_half);
}

std::size_t GmmState::index_of(ComponentId id) const {
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (components_[i].id() == id) return i;
  }
  throw NotFoundError("unknown component id " + std::to_string(id));
}

bool GmmState::has_component(ComponentId id) const {
  return std::any_of(components_.begin(), components_.end(),
                     [&](const auto& c) { return c.id() == id; });
}

const GaussianComponent& GmmState::component(ComponentId id) const {
  return components_[index_of(id)];
}

std::optional<Assignment> GmmState::assignment(SampleId id) const {
  auto it = assignments_.find(id);
  if (it == assignments_.end()) return std::nullopt;
  return it->second;
}

ComponentId GmmState::resolve(ComponentId id) const {
  auto it = aliases_.find(id);
  while (it != aliases_.end()) {
    id = it->second;
    it = aliases_.find(id);
  }
  return id;
}

std::optional<ComponentId> GmmState::best_component(std::span<const double> x,
                                                    bool inside_only) const {
  std::optional<ComponentId> best;
  double best_density = -std::numeric_limits<double>::infinity();
  for (const auto& c : components_) {
    if (inside_only && c.mahalanobis_squared(x) > chi2_threshold_) continue;
    const double ld = c.log_density(x);
    if (!best || ld > best_density) {
      best = c.id();
      best_density = ld;
    }
  }
  return best;
}

AssignmentOutcome GmmState::online_assign(SampleId id, std::span<const double> x, Tick tick) {
  if (components_.empty()) throw PreconditionError("online_assign: no components");
  if (x.size() != dim_) throw PreconditionError("online_assign: dimension mismatch");
  if (assignments_.contains(id)) throw PreconditionError("online_assign: sample already assigned");

  AssignmentOutcome out;
  if (auto inside = best_component(x, true)) {
    components_[index_of(*inside)].absorb(id, x);
    assignments_[id] = {*inside, true};
    out.component = *inside;
    out.firm = true;
    return out;
  }

  const ComponentId provisional = *best_component(x, false);
  pending_.push_back({id, std::vector<double>(x.begin(), x.end()), provisional});
  assignments_[id] = {provisional, false};
  out.component = provisional;
  out.firm = false;

  if (pending_.size() >= buffer_threshold()) {
    auto created = flush_pending(tick);
    for (const auto& [sid, cid] : created.reassigned) {
      if (sid == id) {
        out.component = cid;
        out.firm = true;
      }
    }
    out.created = std::move(created);
  }
  return out;
}

NewComponentsCreated GmmState::flush_pending(Tick tick) {
  RowMatrix x(static_cast<Eigen::Index>(pending_.size()), static_cast<Eigen::Index>(dim_));
  std::vector<SampleId> ids;
  for (std::size_t i = 0; i < pending_.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(pending_[i].point.data(), static_cast<Eigen::Index>(dim_));
    ids.push_back(pending_[i].id);
  }
  FitOptions options;
  options.k_min = 1;
  options.k_max = std::min<int>(config_.buffer_k_max, static_cast<int>(pending_.size()));
  options.floor = floor_;
  options.seed = static_cast<std::uint64_t>(next_id_) * 104729 + 17;
  auto selection = select_k(x, options, floor_);
  if (!selection.fit) throw Error("online_assign: EM failed on the pending buffer");

  auto fresh = components_from_fit(x, ids, *selection.fit, next_id_, tick, floor_);
  NewComponentsCreated event;
  for (auto& c : fresh) {
    event.component_ids.push_back(c.id());
    for (SampleId sid : c.member_ids()) {
      assignments_[sid] = {c.id(), true};
      event.reassigned.emplace_back(sid, c.id());
    }
    next_id_ = std::max(next_id_, c.id() + 1);
    components_.push_back(std::move(c));
  }
  pending_.clear();
  return event;
}

MergeOutcome GmmState::merge_components(std::span<const ComponentId> ids) {
  if (ids.size() < 2) throw PreconditionError("merge_components: need at least two component ids");
  std::set<ComponentId> resolved;
  for (ComponentId id : ids) {
    const ComponentId r = resolve(id);
    if (!has_component(r)) throw NotFoundError("unknown component id " + std::to_string(id));
    resolved.insert(r);
  }
  MergeOutcome out;
  out.merged_id = *resolved.begin();
  if (resolved.size() == 1) return out;

  std::vector<const GaussianComponent*> parts;
  for (ComponentId id : resolved) parts.push_back(&components_[index_of(id)]);
  GaussianComponent merged = GaussianComponent::pooled(out.merged_id, parts, floor_);

  std::vector<GaussianComponent> kept;
  for (auto& c : components_) {
    if (resolved.contains(c.id())) {
      if (c.id() != out.merged_id) {
        aliases_[c.id()] = out.merged_id;
        for (SampleId sid : c.member_ids()) {
          assignments_[sid] = {out.merged_id, true};
          out.changed.emplace_back(sid, Assignment{out.merged_id, true});
        }
      }
      if (c.id() == out.merged_id) kept.push_back(std::move(merged));
    } else {
      kept.push_back(std::move(c));
    }
  }
  components_ = std::move(kept);

  // Re-evaluate provisional samples against the new component set without
  // growing the buffer.
  std::vector<PendingSample> still_pending;
  for (auto& p : pending_) {
    if (auto inside = best_component(p.point, true)) {
      components_[index_of(*inside)].absorb(p.id, p.point);
      assignments_[p.id] = {*inside, true};
      out.changed.emplace_back(p.id, Assignment{*inside, true});
      continue;
    }
    const ComponentId best = *best_component(p.point, false);
    if (best != p.provisional) {
      p.provisional = best;
      out.changed.emplace_back(p.id, Assignment{best, false});
    }
    assignments_[p.id] = {best, false};
    still_pending.push_back(std::move(p));
  }
  pending_ = std::move(still_pending);
  return out;
}

}  // namespace driftlab::gmm
