// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "driftlab/bench.hpp"
#include "driftlab/codec.hpp"
#include "driftlab/density.hpp"
#include "driftlab/energy.hpp"
#include "driftlab/ensemble.hpp"
#include "driftlab/gmm.hpp"
#include "driftlab/projection.hpp"
#include "driftlab/service.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

// After Eigen: httplib pulls in <resolv.h>.
#include <httplib.h>

using namespace driftlab;
using codec::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome out;
  try {
    out = check();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  if (!out.pass) ++failures;
  std::printf("%s  %-34s %s\n", out.pass ? "PASS" : "FAIL", name.c_str(), out.detail.c_str());
  std::fflush(stdout);
}

template <typename... Args>
std::string fmt(const char* format, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

RowMatrix uniform_matrix(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::vector<SampleId> iota_ids(Eigen::Index n, SampleId start = 0) {
  std::vector<SampleId> ids(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = start + static_cast<SampleId>(i);
  return ids;
}

RowMatrix stack(const RowMatrix& a, const RowMatrix& b) {
  RowMatrix out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Energy distance and drift degree

Outcome energy_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 200);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0.0;
  for (int c = 0; c < 200; ++c) {
    const int d = dim(rng);
    const RowMatrix x = uniform_matrix(rng, size(rng), d, -3.0, 3.0);
    const RowMatrix y = uniform_matrix(rng, size(rng), d, -2.0, 4.0);
    worst = std::max(worst, std::abs(energy::energy_distance(x, y).distance - oracle::energy(x, y)));
  }
  RowMatrix zero(1, 1), one(1, 1), a(2, 1), b(2, 1);
  zero << 0.0;
  one << 1.0;
  a << 0.0, 2.0;
  b << 1.0, 3.0;
  const double h1 = std::abs(energy::energy_distance(zero, one).distance - 1.0);
  const double h2 = std::abs(energy::energy_distance(a, b).distance - 1.0 / 3.0);
  const double elapsed = seconds_since(start);
  return {worst <= 1e-10 && h1 <= 1e-12 && h2 <= 1e-12 && elapsed < 5.0,
          fmt("max diff %.2e (<=1e-10), hand %.1e/%.1e (<=1e-12), %.2fs (<5s)", worst, h1, h2, elapsed)};
}

Outcome drift_consistency() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> clusters(1, 5);
  std::uniform_int_distribution<int> size(1, 120);
  double worst_sum = 0.0;
  double worst_oracle = 0.0;
  for (int w = 0; w < 1000; ++w) {
    const int k = clusters(rng);
    const int d = 1 + w % 4;
    energy::ClusteredSamples window, training;
    window.points = uniform_matrix(rng, size(rng), d, -1.0, 1.0);
    training.points = uniform_matrix(rng, size(rng), d, -1.5, 1.0);
    std::uniform_int_distribution<ComponentId> label(0, k - 1);
    for (Eigen::Index i = 0; i < window.points.rows(); ++i) window.labels.push_back(label(rng));
    // Training never holds the last label, so that rule is exercised too.
    std::uniform_int_distribution<ComponentId> train_label(0, std::max(0, k - 2));
    for (Eigen::Index i = 0; i < training.points.rows(); ++i) training.labels.push_back(train_label(rng));
    const auto body = energy::drift_degree(window, training);
    DriftPoint p;
    p.overall = body->overall;
    p.per_cluster = body->per_cluster;
    worst_sum = std::max(worst_sum, std::abs(p.overall - p.recomputed_overall()));
    worst_oracle = std::max(
        worst_oracle, std::abs(p.overall - oracle::drift(window.points, window.labels, training.points, training.labels)));
  }
  energy::ClusteredSamples window, training;
  window.points = RowMatrix::Zero(3, 2);
  window.labels = {9, 9, 9};
  training.points = RowMatrix::Ones(4, 2);
  training.labels = {0, 0, 0, 0};
  const auto empty = energy::drift_degree(window, training);
  const bool exact_one = empty->overall == 1.0 && empty->per_cluster.at(9).distance == 1.0;
  return {worst_sum <= 1e-9 && worst_oracle <= 1e-9 && exact_one,
          fmt("weighted-sum diff %.2e, oracle diff %.2e (<=1e-9), empty cluster %s", worst_sum, worst_oracle,
              exact_one ? "exactly 1" : "NOT 1")};
}

// ---------------------------------------------------------------------------
// Benchmark

Outcome benchmark(bench::DriftKind kind, double magnitude, double threshold, double min_detected,
                  std::optional<double> max_false, std::optional<double> max_missed) {
  bench::SyntheticSpec spec;
  spec.kind = kind;
  spec.magnitude = magnitude;
  bench::DetectorConfig detector;
  detector.alert_threshold = threshold;
  const auto r = bench::run_benchmark(spec, detector, 10);
  const double slowest = *std::max_element(r.run_seconds.begin(), r.run_seconds.end());
  bool pass = r.detected >= min_detected && slowest <= 120.0;
  if (max_false) pass = pass && r.false_alarms <= *max_false;
  if (max_missed) pass = pass && r.missed <= *max_missed;
  return {pass, fmt("detected %.1f late %.1f missed %.1f false %.1f over %zu runs, slowest run %.1fs", r.detected,
                    r.late, r.missed, r.false_alarms, r.runs, slowest)};
}

// ---------------------------------------------------------------------------
// Mixture

Outcome bic_selection() {
  int correct = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    const double t = angle(rng);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd b(2);
    b << 6.0 * std::cos(t), 6.0 * std::sin(t);
    const RowMatrix x = stack(oracle::gaussian_blob(rng, 200, a, 1.0), oracle::gaussian_blob(rng, 200, b, 1.0));
    gmm::FitOptions options;
    options.seed = seed;
    if (gmm::offline_fit(x, iota_ids(x.rows()), options).components().size() == 2) ++correct;
  }
  return {correct >= 48, fmt("k=2 chosen for %d/50 seeds at 6 sigma (need >=95%%)", correct)};
}

Outcome incremental_moments() {
  std::mt19937_64 rng(4);
  Eigen::VectorXd mu(3);
  mu << 1.0, -2.0, 0.5;
  const RowMatrix x = oracle::gaussian_blob(rng, 1002, mu, 2.0);
  const auto [m0, c0] = oracle::batch_moments(x.topRows(2));
  gmm::GaussianComponent comp(0, m0, c0, {0, 1}, 0, 1e-9);
  for (Eigen::Index i = 2; i < x.rows(); ++i) {
    comp.absorb(i, std::span<const double>(x.row(i).data(), 3));
  }
  const auto [m, c] = oracle::batch_moments(x);
  const double dm = (comp.mean() - m).cwiseAbs().maxCoeff();
  const double dc = (comp.raw_covariance() - c).cwiseAbs().maxCoeff();
  return {dm <= 1e-8 && dc <= 1e-8, fmt("1000 updates: mean diff %.2e, covariance diff %.2e (<=1e-8)", dm, dc)};
}

Outcome online_assignment() {
  std::mt19937_64 rng(31);
  Eigen::VectorXd a(2), b(2);
  a << 0.0, 0.0;
  b << 12.0, 0.0;
  const RowMatrix training = stack(oracle::gaussian_blob(rng, 500, a, 1.0), oracle::gaussian_blob(rng, 500, b, 1.0));
  const gmm::GmmState fitted = gmm::offline_fit(training, iota_ids(training.rows()), gmm::FitOptions{});
  if (fitted.components().size() != 2) return {false, "training fit did not find two components"};

  // Samples drawn from the first component's own Gaussian.
  gmm::GmmState state = fitted;
  const auto& target = state.components()[0];
  const ComponentId target_id = target.id();
  const Eigen::VectorXd mean = target.mean();
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(target.covariance()).matrixL();
  std::normal_distribution<double> g(0.0, 1.0);
  int firm_to_target = 0;
  int inside_region = 0;
  const int n = 10'000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d z(g(rng), g(rng));
    const Eigen::VectorXd x = mean + chol * z;
    if (fitted.components()[0].mahalanobis_squared(std::span<const double>(x.data(), 2)) <= fitted.region_threshold()) {
      ++inside_region;
    }
    const auto out = state.online_assign(100'000 + i, std::span<const double>(x.data(), 2), 1);
    if (out.firm && state.resolve(out.component) == target_id) ++firm_to_target;
  }
  const double rate = static_cast<double>(firm_to_target) / n;

  // A far cluster of exactly buffer_threshold samples.
  gmm::GmmState fresh = fitted;
  const std::size_t threshold = fresh.buffer_threshold();
  Eigen::VectorXd far(2);
  far << 60.0, 60.0;
  const RowMatrix cluster = oracle::gaussian_blob(rng, static_cast<int>(threshold), far, 0.5);
  int events = 0;
  for (Eigen::Index i = 0; i < cluster.rows(); ++i) {
    if (fresh.online_assign(200'000 + i, std::span<const double>(cluster.row(i).data(), 2), 2).created) ++events;
  }
  return {rate >= 0.99 && events == 1,
          fmt("firm to source component %.4f of %d (need >=0.99), inside its %.2f region %.4f; far cluster of %zu "
              "gave %d event(s)",
              rate, n, fitted.config().assign_confidence, static_cast<double>(inside_region) / n, threshold, events)};
}

// ---------------------------------------------------------------------------
// Projection

std::vector<Eigen::VectorXd> corners(double s) {
  std::vector<Eigen::VectorXd> c(4, Eigen::VectorXd::Zero(3));
  c[1] << s, 0, 0;
  c[2] << 0, s, 0;
  c[3] << s, s, s / 2;
  return c;
}

projection::ProjectionProblem blob_problem(std::mt19937_64& rng, int per, const std::vector<Eigen::VectorXd>& centers) {
  projection::ProjectionProblem p;
  const int k = static_cast<int>(centers.size());
  p.high_dim.resize(per * k, centers[0].size());
  for (int c = 0; c < k; ++c) {
    p.high_dim.middleRows(c * per, per) = oracle::gaussian_blob(rng, per, centers[static_cast<std::size_t>(c)], 1.0);
    for (int i = 0; i < per; ++i) {
      p.labels.push_back(c);
      p.ids.push_back(c * per + i);
    }
    p.shrink[c] = 0.6 + 0.1 * c;
  }
  return p;
}

Outcome projection_checks() {
  using namespace projection;
  // Gradient of the full objective (all three terms active).
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    ProjectionProblem p = blob_problem(rng, 5, corners(3.0));
    p.original_count = 16;
    RowMatrix prev(16, 2);
    for (Eigen::Index i = 0; i < 16; ++i) prev.row(i) << g(rng), g(rng);
    p.previous_coords = prev;
    for (ComponentId c = 0; c < 4; ++c) {
      CenterConstraint cc;
      cc.component = c;
      cc.high_center = p.high_dim.middleRows(c * 5, 5).colwise().mean().transpose();
      cc.previous_low << g(rng), g(rng);
      cc.weight = 1.0 + c;
      p.centers.push_back(cc);
    }
    for (std::size_t a = 0; a < 10; ++a) p.anchors.push_back({a, prev.row(static_cast<Eigen::Index>(a)).transpose()});
    ProjectionConfig cfg;
    cfg.perplexity = 5;
    const PreparedProblem pr = prepare(p, cfg);
    if (pr.weight_center <= 0.0 || pr.weight_anchor <= 0.0) return {false, "constraint terms inactive"};
    RowMatrix y(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) y.row(i) << g(rng), g(rng);
    RowMatrix grad;
    evaluate(pr, y, &grad);
    RowMatrix fd(20, 2);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 20; ++i) {
      for (int c = 0; c < 2; ++c) {
        RowMatrix yp = y, ym = y;
        yp(i, c) += h;
        ym(i, c) -= h;
        fd(i, c) = (evaluate(pr, yp, nullptr).total - evaluate(pr, ym, nullptr).total) / (2 * h);
      }
    }
    worst = std::max(worst, (grad - fd).norm() / fd.norm());
  }

  // Objective trace after exaggeration.
  ProjectionProblem p = blob_problem(rng, 30, corners(6.0));
  ProjectionConfig cfg;
  cfg.max_iterations = 250;
  const auto sol = solve(p, cfg);
  double worst_rise = 0.0;
  for (std::size_t i = static_cast<std::size_t>(sol.exaggeration_end) + 1; i < sol.objective_trace.size(); ++i) {
    worst_rise = std::max(worst_rise, sol.objective_trace[i] - sol.objective_trace[i - 1]);
  }

  // Shrink factor bounds on random covariances.
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  int violations = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const double alpha = u(rng);
    const double beta = u(rng) * 0.99;
    const int d = 1 + trial % 5;
    std::vector<gmm::GaussianComponent> comps;
    for (int k = 0; k < 1 + trial % 6; ++k) {
      Eigen::MatrixXd m(d, d);
      for (int i = 0; i < d * d; ++i) m.data()[i] = n01(rng);
      const Eigen::MatrixXd cov = (m * m.transpose() + 0.05 * Eigen::MatrixXd::Identity(d, d)) * std::pow(10.0, u(rng) * 4 - 2);
      comps.emplace_back(k, Eigen::VectorXd::Zero(d), cov, std::vector<SampleId>{k}, 0, 1e-12);
    }
    for (const auto& [id, a] : shrink_factors(comps, alpha, beta, 1e-3)) {
      if (a < alpha * (1 - beta) - 1e-15 || a > alpha + 1e-15) ++violations;
    }
  }
  return {worst <= 1e-4 && worst_rise <= 0.0 && violations == 0,
          fmt("gradient rel err %.2e (<=1e-4), max trace rise %.2e, alpha bound violations %d", worst, worst_rise,
              violations)};
}

Outcome projection_stability() {
  using namespace projection;
  std::mt19937_64 rng(200);
  // Fixed 200-point fixture.
  ProjectionProblem base = blob_problem(rng, 50, corners(6.0));
  ProjectionConfig defaults;
  const ProjectionSolution first = solve(base, defaults);

  // Re-solve after 40 new samples arrive as a fifth component.
  ProjectionProblem next = base;
  Eigen::VectorXd fresh(3);
  fresh << 3.0, 3.0, -3.0;
  const RowMatrix added = oracle::gaussian_blob(rng, 40, fresh, 1.0);
  next.high_dim.conservativeResize(240, Eigen::NoChange);
  next.high_dim.bottomRows(40) = added;
  for (int i = 0; i < 40; ++i) {
    next.labels.push_back(4);
    next.ids.push_back(200 + i);
  }
  next.shrink[4] = 0.8;
  next.original_count = 200;
  next.previous_coords = first.coords;

  ProjectionProblem unconstrained = next;
  ProjectionConfig baseline = defaults;
  baseline.lambda = 1.0;
  baseline.phi = 0.0;

  ProjectionProblem constrained = next;
  for (ComponentId c = 0; c < 4; ++c) {
    CenterConstraint cc;
    cc.component = c;
    cc.high_center = base.high_dim.middleRows(c * 50, 50).colwise().mean().transpose();
    cc.previous_low = first.coords.middleRows(c * 50, 50).colwise().mean().transpose();
    cc.weight = std::sqrt(50.0);
    constrained.centers.push_back(cc);
  }
  for (std::size_t i = 0; i < 200; ++i) {
    constrained.anchors.push_back({i, first.coords.row(static_cast<Eigen::Index>(i)).transpose()});
  }

  auto displacement = [&](const ProjectionSolution& s) {
    std::vector<double> moved;
    for (Eigen::Index i = 0; i < 200; ++i) moved.push_back((s.coords.row(i) - first.coords.row(i)).norm());
    return median(moved);
  };
  const double with = displacement(solve(constrained, defaults));
  const double without = displacement(solve(unconstrained, baseline));
  return {with <= 0.5 * without,
          fmt("median anchor displacement %.3f constrained vs %.3f unconstrained (ratio %.3f, need <=0.5)", with,
              without, with / without)};
}

// ---------------------------------------------------------------------------
// Density

Outcome density_pipeline() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  bool conserved = true;
  for (int n : {1, 2, 3, 7, 97, 1000, 4321}) {
    RowMatrix p(n, 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = g(rng);
    const auto grid = density::rasterize(p, density::union_extent(p, p), 40, 40);
    conserved = conserved && grid.counts.sum() == n;
    for (Eigen::Index i = 0; i < grid.values.size(); ++i) {
      conserved = conserved && grid.values.data()[i] == static_cast<double>(grid.counts.data()[i]) / n;
    }
  }

  density::DensityGrid unit;
  unit.rows = unit.cols = 9;
  unit.values = Eigen::MatrixXd::Zero(9, 9);
  unit.counts = Eigen::MatrixXi::Zero(9, 9);
  unit.values(4, 4) = 1.0;
  unit.counts(4, 4) = 1;
  unit.sample_count = 1;
  const auto smooth = density::halo_smooth(unit);
  bool halo = smooth.values(4, 4) == 0.7;
  int ring = 0;
  for (int r = 2; r <= 6; ++r) {
    for (int c = 2; c <= 6; ++c) {
      if (r == 4 && c == 4) continue;
      halo = halo && std::abs(smooth.values(r, c) - 0.0125) <= 1e-17;
      ++ring;
    }
  }
  halo = halo && ring == 24 && smooth.values(1, 4) == 0.0;

  RowMatrix a(300, 2), b(250, 2);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 0.7 + g(rng);
  const auto extent = density::union_extent(a, b);
  const auto ga = density::halo_smooth(density::rasterize(a, extent, 40, 40));
  const auto gb = density::halo_smooth(density::rasterize(b, extent, 40, 40));
  const bool antisymmetric = density::density_diff(ga, gb).values == -density::density_diff(gb, ga).values;
  return {conserved && halo && antisymmetric,
          fmt("conservation %s, halo 0.7 + 24x0.0125 %s, antisymmetry %s", conserved ? "exact" : "broken",
              halo ? "exact" : "wrong", antisymmetric ? "exact" : "broken")};
}

// ---------------------------------------------------------------------------
// Ensemble

Outcome dwm() {
  const auto [frozen, adapted] = fixture::dwm_adaptation(2024);

  ensemble::LearnerSet set;
  for (int id = 0; id < 2; ++id) {
    ensemble::BaseLearner l;
    l.id = id;
    l.training_ids = {0};
    l.model = ensemble::LogisticModel::restore({id == 0 ? 1 : 0}, Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1),
                                               Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
    set.add(l);
  }
  ensemble::EnsembleModel e;
  e.members = {{0, 0.5}, {1, 0.5}};
  RowMatrix x(3, 2);
  x << 0, 0, 1, 1, 2, 2;
  const std::vector<int> labels{0, 0, 0};
  const auto raw = ensemble::decayed_weights(e, set, x, labels);
  const bool decay = raw[0] / 0.5 == 0.125 && raw[1] == 0.5;
  const double gain = 100.0 * (adapted - frozen);
  return {gain >= 10.0 && decay,
          fmt("accuracy %.1f%% adapted vs %.1f%% frozen (+%.1f points, need >=10); decay %s", 100 * adapted,
              100 * frozen, gain, decay ? "0.125 exact" : "wrong")};
}

// ---------------------------------------------------------------------------
// Categorizer

Outcome categorizer() {
  using bench::categorize;
  int failed = 0;
  auto expect = [&](bool ok) { failed += ok ? 0 : 1; };
  {
    const auto r = categorize({110}, {100}, 10);  // delta == w
    expect(r.late == 1 && r.detected == 0);
  }
  expect(categorize({109}, {100}, 10).detected == 1);
  expect(categorize({100}, {100}, 10).detected == 1);
  {
    const auto r = categorize({105, 105}, {100}, 10);  // duplicate
    expect(r.detected == 1 && r.false_alarms == 1);
  }
  {
    const auto r = categorize({50, 99}, {100}, 10);  // before the first drift
    expect(r.false_alarms == 2 && r.missed == 1);
  }
  {
    const auto r = categorize({200}, {100, 200}, 10);  // belongs to the next interval
    expect(r.missed == 1 && r.detected == 1);
  }
  {
    const auto r = categorize({115}, {100, 200}, 10);
    expect(r.late == 1 && r.missed == 1);
  }
  {
    const auto r = categorize({}, {10, 20, 30}, 5);
    expect(r.missed == 3 && r.false_alarms == 0);
  }
  {
    const auto r = categorize({10, 101, 102, 250, 260, 399, 400, 405, 900}, {100, 200, 300, 400}, 20);
    expect(r.detected == 2 && r.late == 2 && r.missed == 0 && r.false_alarms == 5);
  }
  {
    bench::SyntheticSpec spec;
    spec.total_points = 6000;
    spec.n_drifts = 2;
    bench::DetectorConfig d;
    d.window = 300;
    d.alert_threshold = 1.5;
    const auto r = bench::run_benchmark(spec, d, 1);
    expect(r.detected == 0 && r.false_alarms == 0 && r.missed == 2);
  }
  return {failed == 0, fmt("%d boundary case(s) failed of 10", failed)};
}

// ---------------------------------------------------------------------------
// Service

Outcome service_round_trip() {
  const auto dir = std::filesystem::temp_directory_path() / "driftlab_acceptance_service";
  std::filesystem::remove_all(dir);
  service::Service svc(service::ServiceOptions{dir, std::nullopt});
  httplib::Server server;
  svc.register_routes(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(300, 0);

  std::string failure;
  auto call = [&](const httplib::Result& r, int status) -> json {
    if (!r) throw Error("request failed");
    if (r->status != status) throw Error(fmt("status %d: %s", r->status, r->body.c_str()));
    return json::parse(r->body);
  };
  Outcome out;
  try {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    std::ostringstream csv;
    csv.precision(17);
    csv << "t,f1,f2\n";
    for (int i = 0; i < 200; ++i) csv << "0," << g(rng) << "," << g(rng) << "\n" << "0," << 9 + g(rng) << "," << g(rng) << "\n";
    const json created = call(client.Post("/v1/sessions", json{{"csv", csv.str()}, {"config", {{"window_length", 10}}}}.dump(),
                                          "application/json"),
                              201);
    const std::string id = created.at("id");
    const std::string base = "/v1/sessions/" + id;
    for (int t = 1; t <= 100; ++t) {
      json rows = json::array();
      const double shift = t > 50 ? 3.0 : 0.0;
      for (int j = 0; j < 5; ++j) {
        rows.push_back({{"t", t}, {"features", {g(rng) + shift, g(rng)}}});
        rows.push_back({{"t", t}, {"features", {9 + g(rng), g(rng)}}});
      }
      call(client.Post(base + "/stream", json{{"rows", rows}}.dump(), "application/json"), 200);
    }
    const std::string drift = client.Get(base + "/drift?features=f1,f2")->body;
    const std::string comps = client.Get(base + "/components")->body;
    call(client.Post(base + "/save", "", "application/json"), 200);
    call(client.Delete(base), 200);
    call(client.Post(base + "/load", "", "application/json"), 200);
    const std::string drift2 = client.Get(base + "/drift?features=f1,f2")->body;
    const std::string comps2 = client.Get(base + "/components")->body;
    const auto points = json::parse(drift).at("points").size();
    out = {drift == drift2 && comps == comps2 && points == 100,
           fmt("%zu drift points; drift series %s, components %s after save/load", points,
               drift == drift2 ? "identical" : "DIFFER", comps == comps2 ? "identical" : "DIFFER")};
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  server.stop();
  thread.join();
  svc.drain();
  std::filesystem::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  const auto start = Clock::now();
  report("energy oracle equivalence", energy_oracle);
  report("drift degree consistency", drift_consistency);
  report("BIC model selection", bic_selection);
  report("incremental moments", incremental_moments);
  report("online assignment", online_assignment);
  report("projection gradient and trace", projection_checks);
  report("projection stability", projection_stability);
  report("density pipeline", density_pipeline);
  report("DWM adaptation", dwm);
  report("evaluation categorizer", categorizer);
  report("service round-trip", service_round_trip);
  report("benchmark D1 mean shift", [] {
    return benchmark(bench::DriftKind::MeanShift, 2.0, 0.15, 90.0, 5.0, 3.0);
  });
  report("benchmark D2 variance shift", [] {
    return benchmark(bench::DriftKind::VarianceShift, 1.0, 0.03, 65.0, std::nullopt, std::nullopt);
  });
  std::printf("%d criterion(s) failed, %.0fs total\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
