#include <catch2/catch_amalgamated.hpp>

#include "invnets/networks.hpp"
#include "test_support.hpp"

using namespace invnets;
using num::Cplx;
using num::RMat;
using num::RVec;

TEST_CASE("zrelu passes the first and third closed quadrants") {
  CHECK(net::zrelu({1.0, 1.0}) == Cplx{1.0, 1.0});    // theta = pi/4
  CHECK(net::zrelu({-1.0, 1.0}) == Cplx{0.0, 0.0});   // theta = 3pi/4
  CHECK(net::zrelu({0.0, 0.0}) == Cplx{0.0, 0.0});
  CHECK(net::zrelu({-1.0, -1.0}) == Cplx{-1.0, -1.0});  // theta = 5pi/4
  // boundaries are inclusive
  CHECK(net::zrelu({1.0, 0.0}) == Cplx{1.0, 0.0});
  CHECK(net::zrelu({0.0, 1.0}) == Cplx{0.0, 1.0});
  CHECK(net::zrelu({0.0, -1.0}) == Cplx{0.0, -1.0});
}

TEST_CASE("zrelu is homogeneous over real scalars and idempotent") {
  auto stream = rng::Stream(31);
  for (int i = 0; i < 1000; ++i) {
    Cplx z{stream.normal(), stream.normal()};
    double alpha = stream.uniform(-5.0, 5.0);
    Cplx lhs = net::zrelu(alpha * z);
    Cplx rhs = alpha * net::zrelu(z);
    REQUIRE(std::abs(lhs - rhs) <= 1e-12);
    REQUIRE(net::zrelu(net::zrelu(z)) == net::zrelu(z));
  }
}

TEST_CASE("forward evaluations match hand-computed values") {
  SECTION("CVNN identity chain") {
    auto stream = rng::Stream(1);
    net::CVNN cvnn = net::CVNN::init(1, 1, stream);
    cvnn.v_re << 1.0;
    cvnn.v_im << 0.0;
    cvnn.b_re << 0.0;
    cvnn.b_im << 0.0;
    cvnn.w_re << 1.0;
    cvnn.w_im << 0.0;
    cvnn.a_re = 0.0;
    RVec x(1);
    x << 1.0;
    CHECK(cvnn.forward(x) == Catch::Approx(1.0));
  }
  SECTION("CNN1D sliding dot products") {
    auto stream = rng::Stream(2);
    net::CNN1D cnn = net::CNN1D::init(3, 2, stream);
    cnn.filter << 1.0, 1.0;
    RVec x(3);
    x << 1.0, 2.0, 3.0;
    RVec c = cnn.conv(x);
    REQUIRE(c.size() == 2);
    CHECK(c[0] == Catch::Approx(3.0));
    CHECK(c[1] == Catch::Approx(5.0));
  }
  SECTION("FCN with zero output weights returns the bias") {
    auto stream = rng::Stream(3);
    net::FCN fcn = net::FCN::init(4, 8, stream);
    fcn.w.setZero();
    fcn.a = 2.5;
    for (int rep = 0; rep < 5; ++rep) {
      RVec x = test_support::random_vec(4, stream);
      CHECK(fcn.forward(x) == Catch::Approx(2.5));
    }
  }
}

TEST_CASE("param_count counting oracles") {
  auto stream = rng::Stream(4);
  CHECK(net::CVNN::init(10, 150, stream).param_count() == 3602);
  CHECK(net::FCN::init(10, 150, stream).param_count() == 1801);
  CHECK(net::CNN1D::init(10, 3, stream, net::Pooling::mean).param_count() == 5);
  CHECK(net::CNN1D::init(10, 3, stream, net::Pooling::none).param_count() == 3 + 8 + 1);
}

TEST_CASE("CVNN positive homogeneity with zero biases") {
  auto stream = rng::Stream(5);
  net::CVNN cvnn = net::CVNN::init(3, 8, stream);
  cvnn.b_re.setZero();
  cvnn.b_im.setZero();
  cvnn.a_re = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    RVec x = test_support::random_vec(3, stream);
    double alpha = stream.uniform(0.1, 3.0);
    REQUIRE(std::abs(cvnn.forward(alpha * x) - alpha * cvnn.forward(x)) <=
            1e-10 * std::max(1.0, std::abs(cvnn.forward(x))));
  }
}

TEST_CASE("circular mean-pool CNN is invariant to every circular shift") {
  auto stream = rng::Stream(6);
  const int d = 16;
  net::CNN1D cnn =
      net::CNN1D::init(d, 5, stream, net::Pooling::mean, /*circular=*/true, net::Activation::relu);
  for (int rep = 0; rep < 50; ++rep) {
    RVec x = test_support::random_vec(d, stream);
    double base = cnn.forward(x);
    for (int s = 1; s < d; ++s) {
      RVec xs(d);
      for (int j = 0; j < d; ++j) xs[j] = x[(j + s) % d];
      REQUIRE(std::abs(cnn.forward(xs) - base) <= 1e-12);
    }
  }
}

TEST_CASE("gradients match finite differences") {
  auto stream = rng::Stream(7);
  net::RealBatch batch;
  batch.x = RMat(8, 3);
  for (Eigen::Index i = 0; i < batch.x.size(); ++i) batch.x.data()[i] = stream.normal();
  batch.y = test_support::random_vec(8, stream);

  auto check_grad = [&](auto& model) {
    RVec theta = model.pack();
    RVec grad = model.grad(batch);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      RVec up = theta, dn = theta;
      up[k] += h;
      dn[k] -= h;
      model.unpack(up);
      double lu = model.loss(batch);
      model.unpack(dn);
      double ld = model.loss(batch);
      model.unpack(theta);
      double fd = (lu - ld) / (2.0 * h);
      REQUIRE(grad[k] == Catch::Approx(fd).margin(1e-5));
    }
  };

  net::FCN fcn = net::FCN::init(3, 4, stream, net::Activation::tanh);
  check_grad(fcn);
  net::CVNN cvnn = net::CVNN::init(3, 4, stream);
  check_grad(cvnn);
  net::CNN1D cnn =
      net::CNN1D::init(3, 2, stream, net::Pooling::mean, true, net::Activation::relu);
  check_grad(cnn);

  net::CplxBatch cbatch;
  cbatch.x_re = batch.x;
  cbatch.x_im = RMat(8, 3);
  for (Eigen::Index i = 0; i < cbatch.x_im.size(); ++i) cbatch.x_im.data()[i] = stream.normal();
  cbatch.y_re = batch.y;
  cbatch.y_im = test_support::random_vec(8, stream);
  net::CplxForecaster fore = net::CplxForecaster::init(3, 4, stream);
  RVec theta = fore.pack();
  RVec grad = fore.grad(cbatch);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    RVec up = theta, dn = theta;
    up[k] += h;
    dn[k] -= h;
    fore.unpack(up);
    double lu = fore.loss(cbatch);
    fore.unpack(dn);
    double ld = fore.loss(cbatch);
    fore.unpack(theta);
    REQUIRE(grad[k] == Catch::Approx((lu - ld) / (2.0 * h)).margin(1e-5));
  }
}

TEST_CASE("training contracts") {
  auto stream = rng::Stream(8);
  SECTION("a bias absorbs a constant target") {
    net::RealBatch batch;
    batch.x = RMat::Zero(32, 4);
    for (Eigen::Index i = 0; i < batch.x.size(); ++i) batch.x.data()[i] = stream.normal();
    batch.y = RVec::Constant(32, 1.7);
    net::FCN fcn = net::FCN::init(4, 4, stream);
    net::TrainConfig cfg;
    cfg.max_epochs = 4000;
    auto res = net::train(fcn, batch, cfg);
    CHECK(res.final_loss <= 1e-6);
    CHECK(res.final_loss <= res.loss_curve.front());
  }
  SECTION("identity-activation FCN solves a linear target to least-squares accuracy") {
    net::RealBatch batch;
    batch.x = RMat(64, 3);
    for (Eigen::Index i = 0; i < batch.x.size(); ++i) batch.x.data()[i] = stream.normal();
    RVec w_true(3);
    w_true << 0.5, -1.0, 2.0;
    batch.y = batch.x * w_true;
    net::FCN fcn = net::FCN::init(3, 4, stream, net::Activation::identity);
    net::TrainConfig cfg;
    cfg.max_epochs = 6000;
    auto res = net::train(fcn, batch, cfg);
    CHECK(res.final_loss <= 1e-6);
  }
  SECTION("loss curve is monotone nonincreasing") {
    auto target = tgt::RadialTarget::alternating(4, 1.0, 2);
    auto data_stream = rng::Stream(9);
    auto batch = net::make_radial_dataset(target, 128, data_stream);
    net::CVNN cvnn = net::CVNN::init(4, 8, data_stream);
    net::TrainConfig cfg;
    cfg.max_epochs = 200;
    auto res = net::train(cvnn, batch, cfg);
    for (std::size_t i = 1; i < res.loss_curve.size(); ++i)
      REQUIRE(res.loss_curve[i] <= res.loss_curve[i - 1]);
  }
  SECTION("wider CVNN reaches a lower paired-seed loss on a radial target") {
    auto target = tgt::RadialTarget::alternating(4, 1.0, 4);
    auto data_stream = rng::Stream(10);
    auto batch = net::make_radial_dataset(target, 512, data_stream);
    net::TrainConfig cfg;
    cfg.max_epochs = 600;
    auto s1 = rng::Stream(11);
    net::CVNN small = net::CVNN::init(4, 8, s1);
    auto r1 = net::train(small, batch, cfg);
    auto s2 = rng::Stream(11);
    net::CVNN big = net::CVNN::init(4, 64, s2);
    auto r2 = net::train(big, batch, cfg);
    CHECK(r2.final_loss < r1.final_loss);
  }
  SECTION("empty datasets and non-finite targets are rejected") {
    net::FCN fcn = net::FCN::init(2, 2, stream);
    net::RealBatch empty;
    empty.x = RMat(0, 2);
    empty.y = RVec(0);
    CHECK_THROWS_AS(net::train(fcn, empty, net::TrainConfig{}), ContractError);
    net::RealBatch bad;
    bad.x = RMat::Ones(2, 2);
    bad.y = RVec(2);
    bad.y << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(net::train(fcn, bad, net::TrainConfig{}), ContractError);
  }
  SECTION("non-finite initial loss raises a divergence error with the epoch") {
    net::FCN fcn = net::FCN::init(2, 2, stream);
    fcn.a = std::numeric_limits<double>::infinity();
    net::RealBatch batch;
    batch.x = RMat::Ones(4, 2);
    batch.y = RVec::Ones(4);
    try {
      net::train(fcn, batch, net::TrainConfig{});
      FAIL("expected TrainingDivergence");
    } catch (const net::TrainingDivergence& e) {
      CHECK(e.epoch == 0);
    }
  }
}

TEST_CASE("matched FCN widths land within one unit of the CVNN parameter count") {
  for (int m : {8, 16, 32, 64}) {
    int fcn_w = net::matched_fcn_width(4, m);
    long cvnn_params = 2L * ((4 + 2) * m + 1);
    long fcn_params = (4 + 2) * static_cast<long>(fcn_w) + 1;
    CHECK(std::abs(cvnn_params - fcn_params) <= (4 + 2) / 2 + 1);
  }
}

TEST_CASE("width_sweep validates its preconditions and shapes its table") {
  auto target = tgt::RadialTarget::alternating(4, 1.0, 2);
  net::SweepConfig cfg;
  cfg.n_train = 64;
  cfg.n_test = 64;
  cfg.train.max_epochs = 5;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  CHECK_THROWS_AS(net::width_sweep(target, net::Arch::cvnn, {4, 8}, seeds, cfg), ContractError);
  CHECK_THROWS_AS(net::width_sweep(target, net::Arch::cvnn, {8, 4, 16}, seeds, cfg),
                  ContractError);
  auto sweep = net::width_sweep(target, net::Arch::cvnn, {4, 6, 8}, seeds, cfg);
  CHECK(sweep.cells.size() == 9);
  CHECK(sweep.median_test_mse.size() == 3);
  std::string csv = net::sweep_to_csv(sweep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);  // header + 9 cells
}
