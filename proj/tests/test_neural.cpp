#include "sdfsur/neural_core.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"

using namespace sdfsur;

namespace {

// Oracle evaluator: plain nested loops over std::vector copies of the
// parameters, no shared code with mlp_forward.
std::vector<double> oracle_forward(const Mlp& net, const std::vector<double>& input) {
    std::vector<double> cur = input;
    for (size_t l = 0; l < net.weights.size(); l++) {
        std::vector<double> next(net.layer_dims[l + 1], 0.0);
        for (size_t r = 0; r < next.size(); r++) {
            double acc = net.biases[l][static_cast<int>(r)];
            for (size_t c = 0; c < cur.size(); c++)
                acc += net.weights[l](static_cast<int>(r), static_cast<int>(c)) * cur[c];
            next[r] = acc;
        }
        if (l + 1 < net.weights.size()) {
            for (double& v : next) {
                switch (net.activation) {
                    case Activation::Gelu:
                        v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
                        break;
                    case Activation::Tanh:
                        v = std::tanh(v);
                        break;
                    case Activation::Relu:
                        v = v > 0 ? v : 0.0;
                        break;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

double objective_value(Mlp& net, const Eigen::VectorXd& theta, const Eigen::MatrixXd& input,
                       const Eigen::MatrixXd& cot) {
    net.unflatten(theta);
    return (mlp_forward(net, input).cwiseProduct(cot)).sum();
}

bool grad_close(double analytic, double fd) {
    return std::abs(analytic - fd) <= std::max(1e-10, 1e-5 * std::max(std::abs(analytic), std::abs(fd)));
}

}  // namespace

TEST_CASE("forward: degenerate nets") {
    Rng rng(1);
    Mlp zero = Mlp::create({2, 4, 1}, Activation::Gelu, rng);
    for (auto& W : zero.weights) W.setZero();
    Eigen::MatrixXd in(2, 3);
    in << 1, -2, 0.5, 3, 0.1, -7;
    CHECK(mlp_forward(zero, in).cwiseAbs().maxCoeff() == 0.0);

    Mlp ident = Mlp::create({3, 3}, Activation::Relu, rng);
    ident.weights[0] = Eigen::MatrixXd::Identity(3, 3);
    ident.biases[0].setZero();
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
    CHECK((mlp_forward(ident, x) - x).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(mlp_forward(ident, Eigen::MatrixXd::Zero(2, 1)), std::invalid_argument);
}

TEST_CASE("forward matches the loop-based oracle") {
    for (Activation act : {Activation::Gelu, Activation::Tanh, Activation::Relu}) {
        Rng rng(7 + static_cast<int>(act));
        Mlp net = Mlp::create({2, 8, 1}, act, rng);
        for (auto& b : net.biases)
            for (int i = 0; i < b.size(); i++) b[i] = rng.uniform(-0.5, 0.5);
        for (int trial = 0; trial < 50; trial++) {
            std::vector<double> x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
            Eigen::MatrixXd in(2, 1);
            in << x[0], x[1];
            double got = mlp_forward(net, in)(0, 0);
            double want = oracle_forward(net, x)[0];
            CHECK(std::abs(got - want) < 1e-12);
        }
    }
}

TEST_CASE("backward: linear-layer closed forms") {
    Rng rng(3);
    Mlp net = Mlp::create({3, 2}, Activation::Gelu, rng);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 1);
    Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 1);
    ForwardCache cache;
    mlp_forward(net, x, &cache);
    Eigen::VectorXd pg = Eigen::VectorXd::Zero(net.param_count());
    Eigen::MatrixXd xg = mlp_backward(net, cache, c, pg);

    Eigen::MatrixXd dW = c * x.transpose();
    int at = 0;
    for (int r = 0; r < 2; r++)
        for (int col = 0; col < 3; col++) CHECK(pg[at++] == doctest::Approx(dW(r, col)).epsilon(1e-14));
    for (int r = 0; r < 2; r++) CHECK(pg[at++] == doctest::Approx(c(r, 0)).epsilon(1e-14));
    Eigen::MatrixXd dx = net.weights[0].transpose() * c;
    CHECK((xg - dx).cwiseAbs().maxCoeff() < 1e-14);

    pg.setZero();
    Eigen::MatrixXd zg = mlp_backward(net, cache, Eigen::MatrixXd::Zero(2, 1), pg);
    CHECK(pg.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zg.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches central finite differences") {
    for (Activation act : {Activation::Gelu, Activation::Tanh}) {
        Rng rng(11 + static_cast<int>(act));
        Mlp net = Mlp::create({3, 16, 8, 1}, act, rng);
        Eigen::MatrixXd input(3, 4);
        for (int i = 0; i < input.size(); i++) input.data()[i] = rng.uniform(-1, 1);
        Eigen::MatrixXd cot(1, 4);
        for (int i = 0; i < cot.size(); i++) cot.data()[i] = rng.uniform(-1, 1);

        ForwardCache cache;
        mlp_forward(net, input, &cache);
        Eigen::VectorXd pg = Eigen::VectorXd::Zero(net.param_count());
        Eigen::MatrixXd ig = mlp_backward(net, cache, cot, pg);

        Eigen::VectorXd theta = net.flatten();
        const double h = 1e-6;
        for (int i = 0; i < theta.size(); i++) {
            Eigen::VectorXd tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            double fd =
                (objective_value(net, tp, input, cot) - objective_value(net, tm, input, cot)) /
                (2 * h);
            CHECK(grad_close(pg[i], fd));
        }
        net.unflatten(theta);
        for (int c = 0; c < input.cols(); c++)
            for (int r = 0; r < input.rows(); r++) {
                Eigen::MatrixXd ip = input, im = input;
                ip(r, c) += h;
                im(r, c) -= h;
                double fd = ((mlp_forward(net, ip).cwiseProduct(cot)).sum() -
                             (mlp_forward(net, im).cwiseProduct(cot)).sum()) /
                            (2 * h);
                CHECK(grad_close(ig(r, c), fd));
            }
    }
}

TEST_CASE("batched backward equals summed per-sample gradients") {
    Rng rng(21);
    Mlp net = Mlp::create({4, 10, 2}, Activation::Gelu, rng);
    Eigen::MatrixXd input = Eigen::MatrixXd::Random(4, 6);
    Eigen::MatrixXd cot = Eigen::MatrixXd::Random(2, 6);

    ForwardCache cache;
    mlp_forward(net, input, &cache);
    Eigen::VectorXd batched = Eigen::VectorXd::Zero(net.param_count());
    Eigen::MatrixXd ig = mlp_backward(net, cache, cot, batched);

    Eigen::VectorXd summed = Eigen::VectorXd::Zero(net.param_count());
    for (int c = 0; c < 6; c++) {
        ForwardCache single;
        mlp_forward(net, input.col(c), &single);
        Eigen::MatrixXd one = mlp_backward(net, single, cot.col(c), summed);
        CHECK((one - ig.col(c)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK((batched - summed).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("flatten round-trip and parameter count") {
    Rng rng(5);
    Mlp net = Mlp::create({5, 32, 32, 32, 32, 1}, Activation::Gelu, rng);
    int expect = 0;
    for (size_t l = 0; l + 1 < net.layer_dims.size(); l++)
        expect += net.layer_dims[l] * net.layer_dims[l + 1] + net.layer_dims[l + 1];
    CHECK(net.param_count() == expect);

    Eigen::VectorXd theta = net.flatten();
    Mlp copy = net;
    for (auto& W : copy.weights) W.setZero();
    copy.unflatten(theta);
    for (size_t l = 0; l < net.weights.size(); l++) {
        CHECK((copy.weights[l] - net.weights[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((copy.biases[l] - net.biases[l]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS_AS(copy.unflatten(theta.head(10)), std::invalid_argument);
}

TEST_CASE("glorot initialization bounds and zero biases") {
    Rng rng(9);
    Mlp net = Mlp::create({10, 20, 3}, Activation::Tanh, rng);
    double a0 = std::sqrt(6.0 / 30);
    CHECK(net.weights[0].cwiseAbs().maxCoeff() <= a0);
    CHECK(net.weights[0].cwiseAbs().maxCoeff() > 0.5 * a0);  // not degenerate
    CHECK(net.biases[0].cwiseAbs().maxCoeff() == 0.0);
    Rng rng2(9);
    Mlp net2 = Mlp::create({10, 20, 3}, Activation::Tanh, rng2);
    CHECK((net.weights[0] - net2.weights[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fourier features") {
    Rng rng(13);
    FourierMap map = FourierMap::create(8, 2, 10.0, rng);
    CHECK(map.m() == 8);
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 1);
    Eigen::MatrixXd feat = fourier_features(map, zero);
    REQUIRE(feat.rows() == 16);
    for (int i = 0; i < 8; i++) CHECK(feat(i, 0) == 1.0);
    for (int i = 8; i < 16; i++) CHECK(feat(i, 0) == 0.0);

    for (int trial = 0; trial < 20; trial++) {
        Eigen::MatrixXd x(2, 1);
        x << rng.uniform(-1, 1), rng.uniform(-1, 1);
        double n2 = fourier_features(map, x).squaredNorm();
        CHECK(n2 == doctest::Approx(8.0).epsilon(1e-12));
    }
}

TEST_CASE("normalizer endpoints, round trip, degenerate widening") {
    Normalizer nm(Eigen::Vector2d(-2.0, 0.0), Eigen::Vector2d(4.0, 1.0));
    CHECK(nm.normalize(0, -2.0) == -1.0);
    CHECK(nm.normalize(0, 4.0) == 1.0);
    CHECK(nm.normalize(0, 1.0) == doctest::Approx(0.0));
    Rng rng(17);
    for (int i = 0; i < 100; i++) {
        double v = rng.uniform(-5, 5);
        CHECK(std::abs(nm.denormalize(1, nm.normalize(1, v)) - v) < 1e-12);
    }
    CHECK_THROWS_AS(Normalizer(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)),
                    std::invalid_argument);

    Eigen::MatrixXd data(2, 4);
    data << 1, 2, 3, 4, 7, 7, 7, 7;  // second variable constant
    Normalizer fd = Normalizer::from_data(data);
    CHECK(fd.lo[1] == 6.5);
    CHECK(fd.hi[1] == 7.5);
    CHECK(fd.normalize(1, 7.0) == doctest::Approx(0.0));

    Eigen::MatrixXd normed = fd.normalize_cols(data);
    CHECK(normed(0, 0) == -1.0);
    CHECK(normed(0, 3) == 1.0);
    Eigen::MatrixXd back = fd.denormalize_cols(normed);
    CHECK((back - data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam: zero grad, quadratic convergence, first-step magnitude") {
    Eigen::VectorXd p(3);
    p << 1.0, -2.0, 0.5;
    AdamState st(3);
    Eigen::VectorXd p0 = p;
    adam_step(st, p, Eigen::VectorXd::Zero(3), 0.1);
    CHECK((p - p0).cwiseAbs().maxCoeff() == 0.0);

    Eigen::VectorXd x(1);
    x << 1.0;
    AdamState qst(1);
    for (int i = 0; i < 500; i++) {
        Eigen::VectorXd g(1);
        g << 2.0 * x[0];
        adam_step(qst, x, g, 0.1);
    }
    CHECK(std::abs(x[0]) < 1e-3);

    Eigen::VectorXd y(2);
    y << 0.3, -0.7;
    Eigen::VectorXd g(2);
    g << 2.5, -0.4;
    AdamState fst(2);
    Eigen::VectorXd before = y;
    adam_step(fst, y, g, 1e-3);
    CHECK(std::abs((y[0] - before[0]) + 1e-3) < 1e-8);  // -lr * sign(+)
    CHECK(std::abs((y[1] - before[1]) - 1e-3) < 1e-8);  // -lr * sign(-)

    Eigen::VectorXd bad(2);
    bad << std::nan(""), 0.0;
    CHECK_THROWS_AS(adam_step(fst, y, bad, 1e-3), std::runtime_error);
}

TEST_CASE("lbfgs: SPD quadratic reaches the direct solution") {
    const int n = 10;
    Rng rng(23);
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < M.size(); i++) M.data()[i] = rng.uniform(-1, 1);
    Eigen::MatrixXd A = M.transpose() * M + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; i++) b[i] = rng.uniform(-1, 1);

    Objective obj = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = A * x - b;
        return 0.5 * x.dot(A * x) - b.dot(x);
    };
    LbfgsResult res = lbfgs_minimize(obj, Eigen::VectorXd::Zero(n), 10, 1e-12, 2000);
    Eigen::VectorXd exact = A.ldlt().solve(b);
    CHECK((A * res.x - b).norm() < 1e-8);
    CHECK((res.x - exact).norm() < 1e-7);
    CHECK(res.converged);

    LbfgsResult at_opt = lbfgs_minimize(obj, exact, 10, 1e-12, 2000);
    CHECK(at_opt.iterations <= 2);
}

TEST_CASE("lbfgs: rosenbrock benchmark") {
    Objective rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        double a = 1.0 - x[0];
        double b = x[1] - x[0] * x[0];
        g.resize(2);
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    LbfgsResult res = lbfgs_minimize(rosen, x0, 10, 1e-14, 200);
    CHECK(res.f < 1e-10);
    CHECK(std::abs(res.x[0] - 1.0) < 1e-4);
    CHECK(std::abs(res.x[1] - 1.0) < 1e-4);

    // best-seen contract: result is never worse than the starting point
    Eigen::VectorXd g0(2);
    CHECK(res.f <= rosen(x0, g0));
}

TEST_CASE("checkpoint round-trips byte-identically") {
    Rng rng(31);
    Mlp net = Mlp::create({6, 12, 12, 1}, Activation::Tanh, rng);
    FourierMap map = FourierMap::create(4, 2, 3.0, rng);

    std::ostringstream out;
    write_mlp_checkpoint(out, net, &map);
    std::string first = out.str();

    std::istringstream in(first);
    std::optional<FourierMap> back_map;
    Mlp back = read_mlp_checkpoint(in, back_map);
    REQUIRE(back_map.has_value());
    CHECK(back.activation == Activation::Tanh);
    CHECK(back.layer_dims == net.layer_dims);
    CHECK((back_map->B - map.B).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back_map->sigma == 3.0);
    for (size_t l = 0; l < net.weights.size(); l++)
        CHECK((back.weights[l] - net.weights[l]).cwiseAbs().maxCoeff() == 0.0);

    std::ostringstream out2;
    write_mlp_checkpoint(out2, back, &*back_map);
    CHECK(out2.str() == first);

    // without fourier block
    std::ostringstream out3;
    write_mlp_checkpoint(out3, net, nullptr);
    std::istringstream in3(out3.str());
    std::optional<FourierMap> no_map;
    Mlp plain = read_mlp_checkpoint(in3, no_map);
    CHECK(!no_map.has_value());
    Eigen::MatrixXd probe = Eigen::MatrixXd::Random(6, 3);
    CHECK((mlp_forward(plain, probe) - mlp_forward(net, probe)).cwiseAbs().maxCoeff() == 0.0);
}
