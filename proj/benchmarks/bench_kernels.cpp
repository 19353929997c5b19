// Microbenchmarks for the numerical kernels on the hot path of a fit:
// quadrature-rule construction, the closed-form augmentation vector, a full
// estimating-function sweep, the complete-case solve, and the analytic
// observation-probability integral.

#include <benchmark/benchmark.h>

#include <cencov/estimators.hpp>
#include <cencov/numerics.hpp>
#include <cencov/simulation.hpp>

using namespace cencov;

namespace {

Scenario bench_scenario(int n) {
  Scenario sc;
  sc.name = "bench";
  sc.n = n;
  sc.replications = 1;
  sc.master_seed = 12345;
  sc.theta_true.beta = Eigen::Vector3d(1.0, 3.0, 2.0);
  sc.theta_true.sigma = 1.0;
  sc.mean.form = MeanForm::TimeToEvent;
  sc.mean.age_column = 0;
  sc.dependence = Dependence::Independent;
  sc.mvn_mean = Eigen::Vector3d::Zero();
  sc.mvn_cov.resize(3, 3);
  sc.mvn_cov << 1, 0.25, 0.5, 0.25, 4, 0.5, 0.5, 0.5, 1;
  return sc;
}

}  // namespace

static void BM_GaussHermiteLookup(benchmark::State& state) {
  const int nodes = static_cast<int>(state.range(0));
  // Rules are cached after first use, so this measures the lookup cost paid
  // on every quadrature call in a fit.
  gauss_hermite(nodes);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gauss_hermite(nodes));
  }
}
BENCHMARK(BM_GaussHermiteLookup)->Arg(20)->Arg(60)->Arg(120);

static void BM_PsiClosed(benchmark::State& state) {
  Scenario sc = bench_scenario(100);
  GeneratedData gd = generate_dataset(sc, 0);
  NuisanceBundle b = known_bundle(sc);
  const Theta t = sc.theta_true;
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& o = gd.data.records[i++ % gd.data.records.size()];
    benchmark::DoNotOptimize(psi_closed(t, o.y, o.z, b.x_given_z, sc.mean));
  }
}
BENCHMARK(BM_PsiClosed);

static void BM_PhiSweepACC(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Scenario sc = bench_scenario(n);
  GeneratedData gd = generate_dataset(sc, 0);
  NuisanceBundle b = known_bundle(sc);
  EstimatorSpec spec;
  spec.kind = EstimatorKind::ACC;
  spec.mean = sc.mean;
  spec.psi_mode = PsiMode::Closed;
  std::vector<RecordPi> pis;
  for (const auto& o : gd.data.records)
    pis.push_back(compute_record_pi(spec, o, b));
  const Theta t = sc.theta_true;
  for (auto _ : state) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(t.dim());
    for (int i = 0; i < gd.data.n(); ++i)
      acc += phi_contribution(spec, gd.data.records[i], t, b, pis[i]);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_PhiSweepACC)->Arg(1000)->Arg(10000);

static void BM_CompleteCaseFit(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Scenario sc = bench_scenario(n);
  GeneratedData gd = generate_dataset(sc, 0);
  NuisanceConfig nc;
  nc.known = known_bundle(sc);
  EstimatorSpec spec;
  spec.kind = EstimatorKind::CC;
  spec.mean = sc.mean;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_estimator(spec, gd.data, nc));
  }
}
BENCHMARK(BM_CompleteCaseFit)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

static void BM_ObservationProbabilityYZ(benchmark::State& state) {
  Scenario sc = bench_scenario(100);
  GeneratedData gd = generate_dataset(sc, 0);
  NuisanceBundle b = known_bundle(sc);
  const Theta t = sc.theta_true;
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& o = gd.data.records[i++ % gd.data.records.size()];
    benchmark::DoNotOptimize(prob_observed_yz(t, o.y, o.z, b.x_given_z,
                                              b.c_cond, Dependence::Independent,
                                              sc.mean));
  }
}
BENCHMARK(BM_ObservationProbabilityYZ);

BENCHMARK_MAIN();
