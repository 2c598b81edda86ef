#include <doctest.h>

#include <cmath>

#include "protosphere/manifold.hpp"
#include "protosphere/numerics.hpp"

using namespace proto;

namespace {

UfmState nc_state(int K, int n, int d, double tau, std::uint64_t seed) {
  RandomSource rng(seed);
  const EtfFrame frame = simplex_etf(K, d, rng);
  UfmState state;
  state.prototypes = frame.directions;
  state.features.resize(K * n, d);
  state.labels.resize(K * n);
  for (int c = 0; c < K; ++c) {
    for (int j = 0; j < n; ++j) {
      state.features.row(c * n + j) = frame.directions.row(c);
      state.labels[c * n + j] = c;
    }
  }
  state.tau = tau;
  return state;
}

Matrix random_orthogonal(RandomSource& rng, int d) {
  Matrix g = gaussian_matrix(rng, d, d);
  for (int j = 0; j < d; ++j) {
    for (int p = 0; p < j; ++p) g.col(j) -= g.col(p).dot(g.col(j)) * g.col(p);
    g.col(j).normalize();
  }
  return g;
}

} // namespace

TEST_CASE("tangent_project") {
  Vector p(2);
  p << 1.0, 0.0;
  Vector parallel = 3.0 * p;
  CHECK(tangent_project(parallel, p).norm() == doctest::Approx(0.0));

  Vector ortho(2);
  ortho << 0.0, 2.0;
  CHECK((tangent_project(ortho, p) - ortho).norm() == doctest::Approx(0.0));

  Vector g(2);
  g << 1.0, 1.0;
  const Vector t = tangent_project(g, p);
  CHECK(t[0] == doctest::Approx(0.0));
  CHECK(t[1] == doctest::Approx(1.0));
  CHECK(std::abs(t.dot(p)) < 1e-12);
}

TEST_CASE("retract") {
  Vector p(2);
  p << 1.0, 0.0;
  CHECK((retract(p, Vector::Zero(2)) - p).norm() == doctest::Approx(0.0));

  Vector step(2);
  step << 0.0, -1.0;
  const Vector r = retract(p, step);
  CHECK(r[0] == doctest::Approx(std::sqrt(2.0) / 2.0));
  CHECK(r[1] == doctest::Approx(std::sqrt(2.0) / 2.0));

  // step = 2p lands exactly on the antipode.
  const Vector anti = retract(p, Vector(2.0 * p));
  CHECK(anti[0] == doctest::Approx(-1.0));
  CHECK(anti[1] == doctest::Approx(0.0));

  CHECK_THROWS_AS(retract(p, Vector(p)), std::runtime_error);
}

TEST_CASE("cosine_schedule") {
  const double eta0 = 0.5;
  const double eta_min = 0.0005;
  CHECK(cosine_schedule(0, 100, eta0, eta_min) ==
        doctest::Approx(eta0).epsilon(1e-14));
  CHECK(cosine_schedule(100, 100, eta0, eta_min) ==
        doctest::Approx(eta_min).epsilon(1e-14));
  CHECK(cosine_schedule(50, 100, eta0, eta_min) ==
        doctest::Approx((eta0 + eta_min) / 2.0).epsilon(1e-14));
  // Exact formula agreement at an arbitrary interior point.
  const double expected =
      eta_min + 0.5 * (eta0 - eta_min) * (1.0 + std::cos(M_PI * 37.0 / 100.0));
  CHECK(cosine_schedule(37, 100, eta0, eta_min) == expected);
  CHECK_THROWS_AS(cosine_schedule(101, 100, eta0, eta_min),
                  std::invalid_argument);
}

TEST_CASE("warmup_then_cosine") {
  OptimConfig config;
  config.steps = 1000;
  config.base_lr = 0.4;
  config.min_lr_factor = 0.001;
  config.warmup_steps = 100;
  config.warmup_start_lr = 0.04;
  CHECK(warmup_then_cosine(0, config) == doctest::Approx(0.04));
  CHECK(warmup_then_cosine(100, config) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(warmup_then_cosine(1000, config) ==
        doctest::Approx(0.4 * 0.001).epsilon(1e-12));
  // Boundary continuity: the ramp end meets the cosine start.
  CHECK(warmup_then_cosine(99, config) ==
        doctest::Approx(0.04 + (0.4 - 0.04) * 0.99).epsilon(1e-12));
  CHECK(std::abs(warmup_then_cosine(100, config) -
                 warmup_then_cosine(99, config)) < 0.01);
}

TEST_CASE("random_ufm_state is balanced, unit, deterministic") {
  const UfmState a = random_ufm_state(4, 3, 6, 0.2, 9);
  const UfmState b = random_ufm_state(4, 3, 6, 0.2, 9);
  CHECK(a.features == b.features);
  CHECK(a.prototypes == b.prototypes);
  CHECK(a.features.rows() == 12);
  for (Index i = 0; i < a.features.rows(); ++i) {
    CHECK(a.features.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::vector<int> counts(4, 0);
  for (int y : a.labels) ++counts[y];
  for (int c : counts) CHECK(c == 3);
}

TEST_CASE("exact NC is a critical point of every normalized loss") {
  const UfmState state = nc_state(6, 4, 8, 0.5, 3);
  for (LossKind kind : {LossKind::normface, LossKind::ntce, LossKind::nonl,
                        LossKind::scl, LossKind::proto_softmax}) {
    const LossEval eval = evaluate_ufm_loss(kind, state);
    double max_tangent = 0.0;
    for (Index i = 0; i < state.features.rows(); ++i) {
      max_tangent = std::max(
          max_tangent,
          tangent_project(eval.grad_features.row(i).transpose(),
                          state.features.row(i).transpose())
              .norm());
    }
    if (eval.grad_prototypes) {
      for (Index c = 0; c < state.prototypes.rows(); ++c) {
        max_tangent = std::max(
            max_tangent,
            tangent_project(eval.grad_prototypes->row(c).transpose(),
                            state.prototypes.row(c).transpose())
                .norm());
      }
    }
    CAPTURE(to_string(kind));
    CHECK(max_tangent <= 1e-8);
  }

  // Descent from exact NC stays put.
  OptimConfig config;
  config.loss_kind = LossKind::nonl;
  config.steps = 100;
  config.base_lr = 0.5;
  config.eval_every = 100;
  UfmResult run = ufm_optimize(config, state);
  CHECK((run.state.features - state.features).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((run.state.prototypes - state.prototypes).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ufm_optimize is deterministic per seed") {
  OptimConfig config;
  config.loss_kind = LossKind::ntce;
  config.steps = 200;
  config.base_lr = 0.5;
  config.eval_every = 50;
  config.seed = 5;
  const UfmState init = random_ufm_state(4, 5, 6, 0.3, config.seed);
  const UfmResult a = ufm_optimize(config, init);
  const UfmResult b = ufm_optimize(config, init);
  CHECK(a.state.features == b.state.features);
  CHECK(a.state.prototypes == b.state.prototypes);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  CHECK(a.trace.records.size() == 5);  // 0, 50, 100, 150, 200
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    CHECK(a.trace.records[i].loss == b.trace.records[i].loss);
    CHECK(a.trace.records[i].iteration == b.trace.records[i].iteration);
  }
}

TEST_CASE("row norms stay unit through optimization") {
  OptimConfig config;
  config.loss_kind = LossKind::normface;
  config.steps = 500;
  config.base_lr = 2.0;
  config.eval_every = 100;
  UfmResult run = ufm_optimize(config, random_ufm_state(5, 4, 7, 0.2, 11));
  for (Index i = 0; i < run.state.features.rows(); ++i) {
    CHECK(std::abs(run.state.features.row(i).norm() - 1.0) < 1e-9);
  }
  for (Index c = 0; c < run.state.prototypes.rows(); ++c) {
    CHECK(std::abs(run.state.prototypes.row(c).norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("descent sanity: loss non-increasing at small fixed lr") {
  for (LossKind kind : {LossKind::normface, LossKind::ntce, LossKind::nonl,
                        LossKind::scl, LossKind::proto_softmax}) {
    OptimConfig config;
    config.loss_kind = kind;
    config.steps = 300;
    config.base_lr = 1e-3;
    config.min_lr_factor = 1.0;  // constant rate
    config.eval_every = 1;
    UfmResult run = ufm_optimize(config, random_ufm_state(4, 5, 6, 0.5, 17));
    const auto& rec = run.trace.records;
    CAPTURE(to_string(kind));
    for (std::size_t k = 0; k + 50 < rec.size(); k += 10) {
      CHECK(rec[k + 50].loss <= rec[k].loss + 1e-9);
    }
  }
}

TEST_CASE("rotation equivariance of the optimization trace") {
  OptimConfig config;
  config.loss_kind = LossKind::nonl;
  config.steps = 200;
  config.base_lr = 0.5;
  config.eval_every = 20;
  const UfmState init = random_ufm_state(4, 5, 8, 0.3, 23);

  RandomSource rng(29);
  const Matrix Q = random_orthogonal(rng, 8);
  UfmState rotated = init;
  rotated.features = init.features * Q;
  rotated.prototypes = init.prototypes * Q;

  const UfmResult a = ufm_optimize(config, init);
  const UfmResult b = ufm_optimize(config, rotated);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    CHECK(a.trace.records[i].loss ==
          doctest::Approx(b.trace.records[i].loss).epsilon(1e-9));
  }
}

TEST_CASE("ce path trains raw features with bias") {
  OptimConfig config;
  config.loss_kind = LossKind::ce;
  config.steps = 2000;
  config.base_lr = 0.5;
  config.eval_every = 500;
  UfmState init = random_ufm_state(3, 6, 5, 1.0, 31);
  UfmResult run = ufm_optimize(config, init);
  CHECK(run.trace.records.back().report.train_accuracy == 1.0);
  CHECK(run.trace.records.back().loss < run.trace.records.front().loss);
  CHECK(run.state.bias.size() == 3);
  // Raw features are not constrained to the sphere.
  bool any_off_sphere = false;
  for (Index i = 0; i < run.state.features.rows(); ++i) {
    if (std::abs(run.state.features.row(i).norm() - 1.0) > 1e-6) {
      any_off_sphere = true;
    }
  }
  CHECK(any_off_sphere);
}

TEST_CASE("loss errors carry the iteration index") {
  UfmState bad;
  bad.features = Matrix::Ones(3, 4) / 2.0;
  bad.prototypes = Matrix::Identity(1, 4);
  bad.labels = {0, 0, 0};
  bad.tau = 0.5;
  OptimConfig config;
  config.loss_kind = LossKind::nonl;
  config.steps = 10;
  config.eval_every = 1;
  CHECK_THROWS_WITH_AS(ufm_optimize(config, bad),
                       "ufm step 0: no negatives for anchor",
                       std::runtime_error);
}

TEST_CASE("loss kind round trip") {
  for (LossKind kind : {LossKind::ce, LossKind::normface, LossKind::ntce,
                        LossKind::nonl, LossKind::scl, LossKind::proto_softmax}) {
    CHECK(loss_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(loss_kind_from_string("bogus"), std::invalid_argument);
}
