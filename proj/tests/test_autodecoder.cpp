#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "sdfsur/autodecoder.hpp"
#include "sdfsur/geometry.hpp"
#include "sdfsur/io_util.hpp"
#include "sdfsur/sdf_dataset.hpp"

using namespace sdfsur;

namespace {

ShapeFamilySpec circle_family(uint64_t seed) {
    ShapeFamilySpec spec;
    spec.family = ShapeFamily::BlobFourier;
    spec.seed = seed;
    spec.harmonics = 0;  // pure circles: center and radius only
    spec.blob_radius = {0.25, 0.45};
    spec.blob_center = {-0.2, 0.2};
    return spec;
}

std::vector<SdfDataset> circle_datasets(int count, int n_boundary, int n_grid, uint64_t seed,
                                        std::vector<Shape>* shapes_out = nullptr) {
    const ShapeFamilySpec spec = circle_family(seed);
    const auto noise = std::make_pair(std::sqrt(0.033), std::sqrt(0.0033));
    std::vector<SdfDataset> out;
    for (int i = 0; i < count; ++i) {
        Shape s = sample_shape(spec, i);
        out.push_back(build_sdf_dataset(s, n_boundary, n_grid, noise, derive_seed(seed, 100 + i)));
        if (shapes_out) shapes_out->push_back(std::move(s));
    }
    return out;
}

bool same_bits(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

// Trained once, shared by the post-training test cases below. Eight circles
// in the training set, two held out.
struct Fixture {
    std::vector<Shape> shapes;
    std::vector<SdfDataset> datasets;
    std::vector<SdfDataset> train;
    SdfTrainOptions opt;
    TrainedSdfModel model;
    SdfTrainReport report;
};

const Fixture& trained_circles() {
    static const Fixture fx = [] {
        Fixture f;
        f.datasets = circle_datasets(10, 200, 16, 777, &f.shapes);
        f.train.assign(f.datasets.begin(), f.datasets.begin() + 8);
        f.opt.k = 3;
        f.opt.hidden = {24, 24};
        f.opt.loss.kind = SdfLossKind::L1;
        f.opt.schedule.adam_epochs = 120;
        f.opt.schedule.batch_shapes = 8;
        f.opt.schedule.lbfgs_max_iters = 500;
        f.opt.seed = 42;
        f.model = train_sdf(f.train, f.opt, &f.report);
        return f;
    }();
    return fx;
}

}  // namespace

TEST_CASE("per-sample loss matches the closed forms") {
    SdfLossSpec spec;
    for (auto kind : {SdfLossKind::L1, SdfLossKind::SmoothClampL1, SdfLossKind::HardClampL1}) {
        spec.kind = kind;
        for (double s : {-3.0, -0.07, 0.0, 0.02, 5.0}) CHECK(sdf_loss(s, s, spec) == 0.0);
    }

    spec.kind = SdfLossKind::L1;
    CHECK(sdf_loss(0.4, -0.1, spec) == doctest::Approx(0.5).epsilon(1e-15));

    // both arguments deep in saturation: the transformed values sit at +-beta
    spec.kind = SdfLossKind::SmoothClampL1;
    spec.beta = 0.1;
    CHECK(std::abs(sdf_loss(10.0, -10.0, spec) - 0.2) < 1e-8);

    spec.kind = SdfLossKind::HardClampL1;
    CHECK(sdf_loss(0.05, 0.02, spec) == doctest::Approx(0.03).epsilon(1e-13));
    CHECK(sdf_loss(10.0, -10.0, spec) == 0.2);
    CHECK(sdf_loss(0.5, 0.2, spec) == 0.0);  // both clipped to the same value

    for (auto kind : {SdfLossKind::L1, SdfLossKind::SmoothClampL1, SdfLossKind::HardClampL1}) {
        spec.kind = kind;
        CHECK(sdf_loss(0.3, -0.8, spec) == sdf_loss(-0.8, 0.3, spec));
    }
}

TEST_CASE("smooth clamp converges to the plain loss as beta grows") {
    // Taylor bound: |b*tanh(v/b) - v| <= |v|^3/(3 b^2), so on |v| <= 2 the
    // loss difference is below 2*8/(3 b^2): 5.4e-6 at b=1e3, 5.4e-8 at b=1e4.
    SdfLossSpec plain;
    plain.kind = SdfLossKind::L1;
    SdfLossSpec smooth;
    smooth.kind = SdfLossKind::SmoothClampL1;
    for (double s = -2.0; s <= 2.0; s += 0.25) {
        for (double t = -2.0; t <= 2.0; t += 0.25) {
            smooth.beta = 1e3;
            CHECK(std::abs(sdf_loss(s, t, smooth) - sdf_loss(s, t, plain)) < 6e-6);
            smooth.beta = 1e4;
            CHECK(std::abs(sdf_loss(s, t, smooth) - sdf_loss(s, t, plain)) < 1e-6);
        }
    }
}

TEST_CASE("hard clamp is flat outside the band while smooth clamp keeps slope") {
    SdfLossSpec hard;
    hard.kind = SdfLossKind::HardClampL1;
    hard.beta = 0.1;
    // moving a saturated prediction changes nothing under the hard clamp
    CHECK(sdf_loss(0.0, 0.5, hard) == sdf_loss(0.0, 0.6, hard));
    CHECK(sdf_loss(0.0, 0.5, hard) == 0.1);

    SdfLossSpec smooth = hard;
    smooth.kind = SdfLossKind::SmoothClampL1;
    CHECK(sdf_loss(0.0, 0.5, smooth) != sdf_loss(0.0, 0.6, smooth));
}

TEST_CASE("training rejects invalid configurations") {
    auto ds = circle_datasets(1, 20, 4, 11);
    SdfTrainOptions opt;
    opt.schedule.adam_epochs = 0;
    opt.schedule.lbfgs_max_iters = 0;

    CHECK_THROWS_AS(train_sdf({}, opt), std::invalid_argument);

    SdfTrainOptions bad = opt;
    bad.k = 0;
    CHECK_THROWS_AS(train_sdf(ds, bad), std::invalid_argument);

    bad = opt;
    bad.loss.sigma = 0.0;
    CHECK_THROWS_AS(train_sdf(ds, bad), std::invalid_argument);

    bad = opt;
    bad.loss.kind = SdfLossKind::SmoothClampL1;
    bad.loss.beta = -0.1;
    CHECK_THROWS_AS(train_sdf(ds, bad), std::invalid_argument);

    bad = opt;
    bad.loss.kind = SdfLossKind::L1;
    bad.loss.beta = 0.0;  // beta unused by the plain loss
    CHECK_NOTHROW(train_sdf(ds, bad));

    std::vector<SdfDataset> with_empty = ds;
    with_empty.push_back(SdfDataset{99, {}, {}});
    CHECK_THROWS_AS(train_sdf(with_empty, opt), std::invalid_argument);
}

TEST_CASE("zero-step schedule returns the initialization unchanged") {
    const uint64_t seed = 31;
    auto ds = circle_datasets(60, 10, 3, 402);
    SdfTrainOptions opt;
    opt.k = 4;
    opt.hidden = {16, 16};
    opt.seed = seed;
    opt.schedule.adam_epochs = 0;
    opt.schedule.lbfgs_max_iters = 0;
    SdfTrainReport report;
    TrainedSdfModel model = train_sdf(ds, opt, &report);

    REQUIRE(static_cast<int>(model.codes.size()) == 60);
    CHECK(report.lbfgs_iterations == 0);
    CHECK(report.final_objective == report.adam_end_objective);

    // decoder equals a fresh draw from the decoder stream
    Rng dr(derive_seed(seed, 0));
    Mlp fresh = Mlp::create({2 + 4, 16, 16, 1}, Activation::Gelu, dr);
    CHECK(same_bits(model.decoder.flatten(), fresh.flatten()));

    // codes equal a replay of the code stream, entry by entry
    Rng cr(derive_seed(seed, 1));
    const double sd = std::sqrt(1.0 / 4.0);
    double mean = 0.0, m2 = 0.0;
    int n_entries = 0;
    for (const auto& c : model.codes) {
        REQUIRE(c.z.size() == 4);
        for (int j = 0; j < 4; ++j) {
            CHECK(c.z[j] == cr.normal(0.0, sd));
            n_entries++;
            const double d = c.z[j] - mean;
            mean += d / n_entries;
            m2 += d * (c.z[j] - mean);
        }
    }
    const double var = m2 / (n_entries - 1);
    CHECK(var > 0.8 * 0.25);
    CHECK(var < 1.2 * 0.25);
    CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("single-shape training beats predicting zero everywhere") {
    auto ds = circle_datasets(1, 150, 10, 55);
    double baseline = 0.0;  // objective of the zero predictor with z = 0
    for (const auto& s : ds[0].samples) baseline += std::abs(s.sdf);

    SdfTrainOptions opt;
    opt.k = 1;
    opt.hidden = {16, 16};
    opt.loss.kind = SdfLossKind::L1;
    opt.loss.sigma = 1e2;
    opt.schedule.adam_epochs = 150;
    opt.schedule.lbfgs_max_iters = 300;
    opt.seed = 7;
    SdfTrainReport report;
    train_sdf(ds, opt, &report);

    CHECK(report.final_objective < baseline);
    CHECK(report.final_objective <= report.adam_end_objective);
}

TEST_CASE("tight code regularization shrinks the trained codes") {
    auto ds = circle_datasets(4, 80, 8, 90);
    SdfTrainOptions opt;
    opt.k = 2;
    opt.hidden = {16, 16};
    opt.loss.kind = SdfLossKind::L1;
    opt.schedule.adam_epochs = 50;
    opt.schedule.lbfgs_max_iters = 300;
    opt.seed = 3;

    auto mean_norm = [](const TrainedSdfModel& m) {
        double total = 0.0;
        for (const auto& c : m.codes) total += c.z.norm();
        return total / m.codes.size();
    };

    opt.loss.sigma = 1e2;
    const double loose = mean_norm(train_sdf(ds, opt));
    opt.loss.sigma = 1e-3;
    const double tight = mean_norm(train_sdf(ds, opt));

    CHECK(loose >= 10.0 * tight);
}

TEST_CASE("trained circle model reproduces boundaries") {
    const Fixture& fx = trained_circles();
    // 5x the 201-point reconstruction grid spacing over [-1.1, 1.1]^2
    const double tol = 5.0 * 2.2 / 200.0;
    for (int i = 0; i < 8; ++i) {
        const auto pts = sample_boundary(fx.shapes[i], GammaSelector::All, 256, nullptr);
        const auto vals = predict_sdf(fx.model, fx.model.codes[i].z, pts);
        double mean_abs = 0.0;
        for (double v : vals) mean_abs += std::abs(v);
        mean_abs /= vals.size();
        INFO("shape ", i, " mean boundary |sdf| = ", mean_abs);
        CHECK(mean_abs < tol);
    }
}

TEST_CASE("latent objective gradient matches finite differences") {
    const Fixture& fx = trained_circles();
    const SdfDataset& ds = fx.train[1];
    Rng rng(1234);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd z(fx.model.k);
        for (int j = 0; j < fx.model.k; ++j)
            z[j] = fx.model.code_stats.mean[j] + 0.3 * rng.normal();
        Eigen::VectorXd grad;
        code_objective_grad(fx.model, ds, z, grad);
        Eigen::VectorXd fd(fx.model.k);
        const double h = 1e-6;
        for (int j = 0; j < fx.model.k; ++j) {
            Eigen::VectorXd zp = z, zm = z;
            zp[j] += h;
            zm[j] -= h;
            fd[j] = (code_objective(fx.model, ds, zp) - code_objective(fx.model, ds, zm)) / (2 * h);
        }
        CHECK((grad - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    }
}

TEST_CASE("objective bookkeeping splits into data term and regularizer") {
    const Fixture& fx = trained_circles();
    const SdfTrainReport& rep = fx.report;
    CHECK(rep.final_objective <= rep.adam_end_objective);
    CHECK(std::abs(rep.final_objective - (rep.final_data_term + rep.final_regularizer)) <= 1e-10);

    // independent recomputation through the public prediction path
    double data = 0.0, reg = 0.0;
    const double inv_s2 = 1.0 / (fx.opt.loss.sigma * fx.opt.loss.sigma);
    for (int i = 0; i < 8; ++i) {
        const auto& ds = fx.train[i];
        std::vector<Vec2> pts(ds.samples.size());
        for (size_t j = 0; j < pts.size(); ++j) pts[j] = ds.samples[j].point;
        const auto pred = predict_sdf(fx.model, fx.model.codes[i].z, pts);
        for (size_t j = 0; j < pts.size(); ++j)
            data += sdf_loss(ds.samples[j].sdf, pred[j], fx.opt.loss);
        reg += inv_s2 * fx.model.codes[i].z.squaredNorm();
    }
    CHECK(std::abs(rep.final_objective - (data + reg)) <= 1e-10);
}

TEST_CASE("code statistics are the empirical moments of the trained codes") {
    const Fixture& fx = trained_circles();
    REQUIRE(fx.model.codes.size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(fx.model.codes[i].shape_id == fx.train[i].shape_id);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
    for (const auto& c : fx.model.codes) mean += c.z;
    mean /= 8.0;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3, 3);
    for (const auto& c : fx.model.codes) cov += (c.z - mean) * (c.z - mean).transpose();
    cov /= 7.0;
    CHECK((fx.model.code_stats.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fx.model.code_stats.covariance - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inferring a training shape recovers its trained objective") {
    const Fixture& fx = trained_circles();
    const SdfDataset& ds = fx.train[2];
    const double trained_obj = code_objective(fx.model, ds, fx.model.codes[2].z);
    const InferResult res = infer_code(fx.model, ds, 5, 909);
    CHECK(res.failed_restarts == 0);
    CHECK(res.code.shape_id == ds.shape_id);
    CHECK(res.objective <= 1.05 * trained_obj);
}

TEST_CASE("more inference restarts never give a worse objective") {
    const Fixture& fx = trained_circles();
    const SdfDataset& held_out = fx.datasets[8];
    const InferResult one = infer_code(fx.model, held_out, 1, 4242);
    const InferResult five = infer_code(fx.model, held_out, 5, 4242);
    CHECK(std::isfinite(one.objective));
    CHECK(five.objective <= one.objective);
}

TEST_CASE("inference rejects an empty dataset") {
    const Fixture& fx = trained_circles();
    SdfDataset empty;
    empty.shape_id = 99;
    CHECK_THROWS_AS(infer_code(fx.model, empty, 3, 1), std::invalid_argument);
}

TEST_CASE("prediction is pure and stays finite on untrained models") {
    const Fixture& fx = trained_circles();
    const std::vector<Vec2> pts = {{0.1, -0.3}, {0.0, 0.0}, {0.9, 0.9}};
    const auto a = predict_sdf(fx.model, fx.model.codes[0].z, pts);
    const auto b = predict_sdf(fx.model, fx.model.codes[0].z, pts);
    CHECK(a == b);

    auto ds = circle_datasets(2, 10, 3, 12);
    SdfTrainOptions opt;
    opt.k = 3;
    opt.schedule.adam_epochs = 0;
    opt.schedule.lbfgs_max_iters = 0;
    const TrainedSdfModel raw = train_sdf(ds, opt);
    const auto vals = predict_sdf(raw, Eigen::VectorXd::Zero(3), pts);
    for (double v : vals) CHECK(std::isfinite(v));

    CHECK_THROWS_AS(predict_sdf(fx.model, Eigen::VectorXd::Zero(5), pts), std::invalid_argument);
}

TEST_CASE("centralization shifts coordinates before the decoder sees them") {
    auto ds = circle_datasets(2, 10, 3, 21);
    SdfTrainOptions opt;
    opt.k = 2;
    opt.centralize = true;
    opt.schedule.adam_epochs = 0;
    opt.schedule.lbfgs_max_iters = 0;
    const TrainedSdfModel model = train_sdf(ds, opt);

    const Eigen::VectorXd z = model.codes[0].z;
    const Vec2 c{0.3, -0.2};
    const Vec2 zero{0.0, 0.0};
    const Vec2 p{0.5, 0.4};
    const auto shifted = predict_sdf(model, z, {p}, &c);
    const auto direct = predict_sdf(model, z, {p - c}, &zero);
    CHECK(shifted == direct);

    CHECK_THROWS_AS(predict_sdf(model, z, {p}), std::invalid_argument);
}

TEST_CASE("model file round-trips byte-identically") {
    const Fixture& fx = trained_circles();
    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "sdfsur_model_test.ckpt").string();

    write_sdf_model(path, fx.model);
    const std::string first = read_file(path);
    const TrainedSdfModel back = read_sdf_model(path);
    write_sdf_model(path, back);
    CHECK(read_file(path) == first);

    CHECK(back.k == fx.model.k);
    CHECK(back.centralize == fx.model.centralize);
    CHECK(back.loss.kind == fx.model.loss.kind);
    CHECK(back.loss.beta == fx.model.loss.beta);
    CHECK(back.loss.sigma == fx.model.loss.sigma);
    REQUIRE(back.codes.size() == fx.model.codes.size());
    for (size_t i = 0; i < back.codes.size(); ++i) {
        CHECK(back.codes[i].shape_id == fx.model.codes[i].shape_id);
        CHECK(same_bits(back.codes[i].z, fx.model.codes[i].z));
    }
    CHECK(same_bits(back.code_stats.mean, fx.model.code_stats.mean));
    CHECK(same_bits(back.code_stats.covariance, fx.model.code_stats.covariance));

    const std::vector<Vec2> pts = {{0.2, 0.1}, {-0.4, 0.6}};
    CHECK(predict_sdf(back, back.codes[1].z, pts) ==
          predict_sdf(fx.model, fx.model.codes[1].z, pts));
}

TEST_CASE("random feature map is drawn once and never updated") {
    auto ds = circle_datasets(3, 30, 4, 66);
    SdfTrainOptions opt;
    opt.k = 2;
    opt.hidden = {12};
    opt.fourier_m = 4;
    opt.fourier_sigma = 3.0;
    opt.seed = 5;
    opt.schedule.adam_epochs = 0;
    opt.schedule.lbfgs_max_iters = 0;
    const TrainedSdfModel before = train_sdf(ds, opt);

    opt.schedule.adam_epochs = 3;
    opt.schedule.lbfgs_max_iters = 5;
    const TrainedSdfModel after = train_sdf(ds, opt);

    REQUIRE(before.fourier.has_value());
    REQUIRE(after.fourier.has_value());
    CHECK(same_bits(before.fourier->B, after.fourier->B));

    Rng fr(derive_seed(5, 3));
    const FourierMap replay = FourierMap::create(4, 2, 3.0, fr);
    CHECK(same_bits(after.fourier->B, replay.B));
    CHECK(after.decoder.layer_dims.front() == 2 * 4 + 2);

    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "sdfsur_model_fourier_test.ckpt").string();
    write_sdf_model(path, after);
    const TrainedSdfModel back = read_sdf_model(path);
    REQUIRE(back.fourier.has_value());
    CHECK(same_bits(back.fourier->B, after.fourier->B));
    const std::vector<Vec2> pts = {{0.15, -0.25}};
    CHECK(predict_sdf(back, back.codes[0].z, pts) == predict_sdf(after, after.codes[0].z, pts));
}

TEST_CASE("training is bitwise deterministic") {
    auto ds = circle_datasets(3, 60, 8, 14);
    SdfTrainOptions opt;
    opt.k = 2;
    opt.hidden = {12};
    opt.schedule.adam_epochs = 10;
    opt.schedule.subsample_per_shape = 50;  // exercises the subsample stream
    opt.schedule.lbfgs_max_iters = 20;
    opt.seed = 77;

    SdfTrainReport r1, r2;
    const TrainedSdfModel m1 = train_sdf(ds, opt, &r1);
    const TrainedSdfModel m2 = train_sdf(ds, opt, &r2);

    CHECK(same_bits(m1.decoder.flatten(), m2.decoder.flatten()));
    REQUIRE(m1.codes.size() == m2.codes.size());
    for (size_t i = 0; i < m1.codes.size(); ++i) CHECK(same_bits(m1.codes[i].z, m2.codes[i].z));
    CHECK(r1.final_objective == r2.final_objective);
    CHECK(r1.adam_end_objective == r2.adam_end_objective);
}
