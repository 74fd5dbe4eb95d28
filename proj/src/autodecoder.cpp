#include "sdfsur/autodecoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

namespace {

double clamp_transform(double v, const SdfLossSpec& spec) {
    switch (spec.kind) {
        case SdfLossKind::L1:
            return v;
        case SdfLossKind::SmoothClampL1:
            return spec.beta * std::tanh(v / spec.beta);
        case SdfLossKind::HardClampL1:
            return std::min(spec.beta, std::max(-spec.beta, v));
    }
    throw std::logic_error("unknown loss kind");
}

// d/dv of clamp_transform; the hard clamp is flat outside the band.
double clamp_deriv(double v, const SdfLossSpec& spec) {
    switch (spec.kind) {
        case SdfLossKind::L1:
            return 1.0;
        case SdfLossKind::SmoothClampL1: {
            const double th = std::tanh(v / spec.beta);
            return 1.0 - th * th;
        }
        case SdfLossKind::HardClampL1:
            return std::abs(v) < spec.beta ? 1.0 : 0.0;
    }
    throw std::logic_error("unknown loss kind");
}

// subgradient 0 at the kink
double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Eigen::MatrixXd feature_matrix(const std::vector<Vec2>& pts, const std::optional<FourierMap>& fmap,
                               bool centralize, Vec2 centroid) {
    const int n = static_cast<int>(pts.size());
    Eigen::MatrixXd raw(2, n);
    for (int j = 0; j < n; ++j) {
        const Vec2 p = centralize ? pts[j] - centroid : pts[j];
        raw(0, j) = p.x;
        raw(1, j) = p.y;
    }
    if (fmap) return fourier_features(*fmap, raw);
    return raw;
}

// Per-shape working set: decoder input with the feature rows filled once and
// the bottom k rows rewritten with the current code, plus the
// clamp-transformed labels (precomputed; the loss compares in clamp space).
struct ShapeBatch {
    int shape_id = 0;
    Eigen::MatrixXd input;   // (d_feat + k) x K
    Eigen::VectorXd target;  // length K
};

ShapeBatch make_shape_batch(const SdfDataset& ds, const std::optional<FourierMap>& fmap,
                            bool centralize, int k, const SdfLossSpec& loss) {
    const int n = static_cast<int>(ds.samples.size());
    if (n == 0) throw std::invalid_argument("empty dataset for shape " + std::to_string(ds.shape_id));
    std::vector<Vec2> pts(n);
    ShapeBatch sb;
    sb.shape_id = ds.shape_id;
    sb.target.resize(n);
    for (int j = 0; j < n; ++j) {
        pts[j] = ds.samples[j].point;
        sb.target[j] = clamp_transform(ds.samples[j].sdf, loss);
    }
    const Eigen::MatrixXd feats = feature_matrix(pts, fmap, centralize, ds.centroid);
    sb.input.resize(feats.rows() + k, n);
    sb.input.topRows(feats.rows()) = feats;
    return sb;
}

// Data term + cotangent for one shape; input must already hold the code.
double shape_data_term(const Mlp& net, ShapeBatch& sb, const SdfLossSpec& loss, ForwardCache* cache,
                       Eigen::MatrixXd* cot) {
    const Eigen::MatrixXd out = mlp_forward(net, sb.input, cache);
    const int n = static_cast<int>(sb.target.size());
    if (cot) cot->resize(1, n);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
        const double pred = out(0, j);
        const double diff = clamp_transform(pred, loss) - sb.target[j];
        total += std::abs(diff);
        if (cot) (*cot)(0, j) = sign0(diff) * clamp_deriv(pred, loss);
    }
    return total;
}

void validate_loss_spec(const SdfLossSpec& spec) {
    if (!(spec.sigma > 0.0)) throw std::invalid_argument("sdf loss: sigma must be positive");
    if (spec.kind != SdfLossKind::L1 && !(spec.beta > 0.0))
        throw std::invalid_argument("sdf loss: beta must be positive for clamped variants");
}

CodePrior empirical_code_stats(const std::vector<LatentCode>& codes, int k) {
    CodePrior stats;
    stats.mean = Eigen::VectorXd::Zero(k);
    stats.covariance = Eigen::MatrixXd::Zero(k, k);
    const int n = static_cast<int>(codes.size());
    if (n == 0) return stats;
    for (const auto& c : codes) stats.mean += c.z;
    stats.mean /= n;
    if (n > 1) {
        for (const auto& c : codes) {
            const Eigen::VectorXd d = c.z - stats.mean;
            stats.covariance += d * d.transpose();
        }
        stats.covariance /= n - 1;
    }
    return stats;
}

// Frozen-decoder objective over a latent code on one dataset.
class CodeObjectiveEval {
public:
    CodeObjectiveEval(const TrainedSdfModel& model, const SdfDataset& dataset)
        : model_(model),
          batch_(make_shape_batch(dataset, model.fourier, model.centralize, model.k, model.loss)),
          param_grad_(Eigen::VectorXd::Zero(model.decoder.param_count())) {}

    double operator()(const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
        if (static_cast<int>(z.size()) != model_.k)
            throw std::invalid_argument("latent code size mismatch");
        batch_.input.bottomRows(model_.k).colwise() = z;
        const double inv_s2 = 1.0 / (model_.loss.sigma * model_.loss.sigma);
        if (!grad) return shape_data_term(model_.decoder, batch_, model_.loss, nullptr, nullptr) +
                          inv_s2 * z.squaredNorm();
        const double data = shape_data_term(model_.decoder, batch_, model_.loss, &cache_, &cot_);
        param_grad_.setZero();
        const Eigen::MatrixXd in_grad = mlp_backward(model_.decoder, cache_, cot_, param_grad_);
        *grad = in_grad.bottomRows(model_.k).rowwise().sum() + (2.0 * inv_s2) * z;
        return data + inv_s2 * z.squaredNorm();
    }

private:
    const TrainedSdfModel& model_;
    ShapeBatch batch_;
    ForwardCache cache_;
    Eigen::MatrixXd cot_;
    Eigen::VectorXd param_grad_;  // required by the backward pass, discarded
};

}  // namespace

std::string loss_kind_to_string(SdfLossKind kind) {
    switch (kind) {
        case SdfLossKind::L1:
            return "L1";
        case SdfLossKind::SmoothClampL1:
            return "SMOOTH_CLAMP_L1";
        case SdfLossKind::HardClampL1:
            return "HARD_CLAMP_L1";
    }
    throw std::logic_error("unknown loss kind");
}

SdfLossKind loss_kind_from_string(const std::string& s) {
    if (s == "L1") return SdfLossKind::L1;
    if (s == "SMOOTH_CLAMP_L1") return SdfLossKind::SmoothClampL1;
    if (s == "HARD_CLAMP_L1") return SdfLossKind::HardClampL1;
    throw std::invalid_argument("unknown loss kind: " + s);
}

double sdf_loss(double s_ref, double s_pred, const SdfLossSpec& spec) {
    return std::abs(clamp_transform(s_pred, spec) - clamp_transform(s_ref, spec));
}

TrainedSdfModel train_sdf(const std::vector<SdfDataset>& datasets, const SdfTrainOptions& opt,
                          SdfTrainReport* report) {
    if (datasets.empty()) throw std::invalid_argument("train_sdf: no datasets");
    if (opt.k < 1) throw std::invalid_argument("train_sdf: latent dimension must be positive");
    if (opt.fourier_m < 0) throw std::invalid_argument("train_sdf: negative fourier size");
    validate_loss_spec(opt.loss);
    const int n_shapes = static_cast<int>(datasets.size());
    const int k = opt.k;
    const auto& sched = opt.schedule;

    TrainedSdfModel model;
    model.k = k;
    model.loss = opt.loss;
    model.centralize = opt.centralize;
    if (opt.fourier_m > 0) {
        Rng fr(derive_seed(opt.seed, 3));
        model.fourier = FourierMap::create(opt.fourier_m, 2, opt.fourier_sigma, fr);
    }
    const int d_feat = model.fourier ? 2 * opt.fourier_m : 2;

    std::vector<int> dims;
    dims.push_back(d_feat + k);
    dims.insert(dims.end(), opt.hidden.begin(), opt.hidden.end());
    dims.push_back(1);
    Rng dr(derive_seed(opt.seed, 0));
    model.decoder = Mlp::create(dims, opt.activation, dr);
    const int n_params = model.decoder.param_count();

    // codes start from N(0, (1/k) I)
    Rng cr(derive_seed(opt.seed, 1));
    const double code_sd = std::sqrt(1.0 / k);
    model.codes.resize(n_shapes);
    for (int i = 0; i < n_shapes; ++i) {
        model.codes[i].shape_id = datasets[i].shape_id;
        model.codes[i].z.resize(k);
        for (int j = 0; j < k; ++j) model.codes[i].z[j] = cr.normal(0.0, code_sd);
    }

    std::vector<ShapeBatch> shapes;
    shapes.reserve(n_shapes);
    for (const auto& ds : datasets)
        shapes.push_back(make_shape_batch(ds, model.fourier, opt.centralize, k, opt.loss));

    const double inv_s2 = 1.0 / (opt.loss.sigma * opt.loss.sigma);
    Eigen::VectorXd theta = model.decoder.flatten();
    Eigen::VectorXd param_grad(n_params);
    ForwardCache cache;
    Eigen::MatrixXd cot;

    // --- stage 1: Adam over shape minibatches with point subsampling ---
    if (sched.adam_epochs > 0) {
        Rng ar(derive_seed(opt.seed, 2));
        AdamState decoder_state(n_params);
        std::vector<AdamState> code_states(n_shapes, AdamState(k));
        const int batch = std::max(1, std::min(sched.batch_shapes, n_shapes));
        std::vector<int> order(n_shapes);
        std::iota(order.begin(), order.end(), 0);
        std::vector<int> pool;
        ShapeBatch sub;

        for (int epoch = 0; epoch < sched.adam_epochs; ++epoch) {
            for (int i = n_shapes - 1; i > 0; --i) {
                const int j = ar.randint(i + 1);
                std::swap(order[i], order[j]);
            }
            for (int start = 0; start < n_shapes; start += batch) {
                const int realized = std::min(start + batch, n_shapes) - start;
                const double code_lr = sched.code_lr_unit * realized;
                param_grad.setZero();
                for (int b = 0; b < realized; ++b) {
                    const int i = order[start + b];
                    ShapeBatch& full = shapes[i];
                    const int n_pts = static_cast<int>(full.target.size());
                    const int n_sub = std::min(sched.subsample_per_shape, n_pts);
                    ShapeBatch* active = &full;
                    if (n_sub < n_pts) {
                        pool.resize(n_pts);
                        std::iota(pool.begin(), pool.end(), 0);
                        for (int t = 0; t < n_sub; ++t)
                            std::swap(pool[t], pool[t + ar.randint(n_pts - t)]);
                        sub.shape_id = full.shape_id;
                        sub.input.resize(full.input.rows(), n_sub);
                        sub.target.resize(n_sub);
                        for (int t = 0; t < n_sub; ++t) {
                            sub.input.col(t) = full.input.col(pool[t]);
                            sub.target[t] = full.target[pool[t]];
                        }
                        active = &sub;
                    }
                    Eigen::VectorXd& z = model.codes[i].z;
                    active->input.bottomRows(k).colwise() = z;
                    const double data = shape_data_term(model.decoder, *active, opt.loss, &cache, &cot);
                    if (!std::isfinite(data))
                        throw std::runtime_error("train_sdf: non-finite loss at shape " +
                                                 std::to_string(full.shape_id));
                    const Eigen::MatrixXd in_grad =
                        mlp_backward(model.decoder, cache, cot, param_grad);
                    const Eigen::VectorXd code_grad =
                        in_grad.bottomRows(k).rowwise().sum() + (2.0 * inv_s2) * z;
                    adam_step(code_states[i], z, code_grad, code_lr);
                }
                adam_step(decoder_state, theta, param_grad, sched.decoder_lr);
                model.decoder.unflatten(theta);
            }
        }
    }

    // --- stage 2: full-batch L-BFGS over decoder parameters and all codes ---
    Eigen::VectorXd x(n_params + n_shapes * k);
    x.head(n_params) = theta;
    for (int i = 0; i < n_shapes; ++i) x.segment(n_params + i * k, k) = model.codes[i].z;

    const auto joint = [&](const Eigen::VectorXd& xv, Eigen::VectorXd& grad) -> double {
        model.decoder.unflatten(xv.head(n_params));
        grad.resize(xv.size());
        param_grad.setZero();
        double total = 0.0;
        for (int i = 0; i < n_shapes; ++i) {
            ShapeBatch& sb = shapes[i];
            const auto z = xv.segment(n_params + i * k, k);
            sb.input.bottomRows(k).colwise() = z;
            total += shape_data_term(model.decoder, sb, opt.loss, &cache, &cot);
            const Eigen::MatrixXd in_grad = mlp_backward(model.decoder, cache, cot, param_grad);
            grad.segment(n_params + i * k, k) =
                in_grad.bottomRows(k).rowwise().sum() + (2.0 * inv_s2) * z;
            total += inv_s2 * z.squaredNorm();
        }
        grad.head(n_params) = param_grad;
        return total;
    };

    Eigen::VectorXd g0(x.size());
    const double adam_end = joint(x, g0);
    const LbfgsResult res =
        lbfgs_minimize(joint, x, 10, sched.lbfgs_tol, sched.lbfgs_max_iters);

    model.decoder.unflatten(res.x.head(n_params));
    double reg = 0.0;
    for (int i = 0; i < n_shapes; ++i) {
        model.codes[i].z = res.x.segment(n_params + i * k, k);
        reg += inv_s2 * model.codes[i].z.squaredNorm();
    }
    model.code_stats = empirical_code_stats(model.codes, k);

    if (report) {
        double data = 0.0;
        for (int i = 0; i < n_shapes; ++i) {
            shapes[i].input.bottomRows(k).colwise() = model.codes[i].z;
            data += shape_data_term(model.decoder, shapes[i], opt.loss, nullptr, nullptr);
        }
        report->adam_end_objective = adam_end;
        report->final_objective = res.f;
        report->final_data_term = data;
        report->final_regularizer = reg;
        report->lbfgs_iterations = res.iterations;
        report->lbfgs_converged = res.converged;
    }
    log_info("train_sdf: shapes=" + std::to_string(n_shapes) + " adam_obj=" + fmt17(adam_end) +
             " final_obj=" + fmt17(res.f) + " lbfgs_iters=" + std::to_string(res.iterations));
    return model;
}

InferResult infer_code(const TrainedSdfModel& model, const SdfDataset& dataset, int restarts,
                       uint64_t seed, int lbfgs_max_iters, double lbfgs_tol) {
    if (restarts < 1) throw std::invalid_argument("infer_code: need at least one restart");
    CodeObjectiveEval eval(model, dataset);
    const Objective obj = [&eval](const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
        return eval(z, &grad);
    };

    const int k = model.k;
    const Eigen::MatrixXd cov =
        model.code_stats.covariance + 1e-9 * Eigen::MatrixXd::Identity(k, k);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("infer_code: code covariance is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    InferResult best;
    bool found = false;
    for (int r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, r));
        Eigen::VectorXd g(k);
        for (int j = 0; j < k; ++j) g[j] = rng.normal();
        const Eigen::VectorXd z0 = model.code_stats.mean + chol * g;
        try {
            const LbfgsResult res = lbfgs_minimize(obj, z0, 10, lbfgs_tol, lbfgs_max_iters);
            if (!std::isfinite(res.f)) {
                best.failed_restarts++;
                continue;
            }
            if (!found || res.f < best.objective) {
                best.code.z = res.x;
                best.objective = res.f;
                found = true;
            }
        } catch (const std::exception&) {
            best.failed_restarts++;
        }
    }
    if (!found) throw std::runtime_error("infer_code: all restarts failed for shape " +
                                         std::to_string(dataset.shape_id));
    best.code.shape_id = dataset.shape_id;
    return best;
}

std::vector<double> predict_sdf(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                const std::vector<Vec2>& points, const Vec2* centroid) {
    if (static_cast<int>(z.size()) != model.k)
        throw std::invalid_argument("predict_sdf: latent code size mismatch");
    if (model.centralize && centroid == nullptr)
        throw std::invalid_argument("predict_sdf: centralized model needs a centroid");
    const Vec2 c = centroid ? *centroid : Vec2{};
    const Eigen::MatrixXd feats = feature_matrix(points, model.fourier, model.centralize, c);
    Eigen::MatrixXd input(feats.rows() + model.k, feats.cols());
    input.topRows(feats.rows()) = feats;
    input.bottomRows(model.k).colwise() = z;
    const Eigen::MatrixXd out = mlp_forward(model.decoder, input);
    std::vector<double> values(points.size());
    for (size_t j = 0; j < points.size(); ++j) values[j] = out(0, static_cast<int>(j));
    return values;
}

double code_objective(const TrainedSdfModel& model, const SdfDataset& dataset,
                      const Eigen::VectorXd& z) {
    CodeObjectiveEval eval(model, dataset);
    return eval(z, nullptr);
}

double code_objective_grad(const TrainedSdfModel& model, const SdfDataset& dataset,
                           const Eigen::VectorXd& z, Eigen::VectorXd& grad) {
    CodeObjectiveEval eval(model, dataset);
    return eval(z, &grad);
}

void write_sdf_model(const std::string& path, const TrainedSdfModel& model) {
    std::ostringstream out;
    write_mlp_checkpoint(out, model.decoder, model.fourier ? &*model.fourier : nullptr);
    out << "loss " << loss_kind_to_string(model.loss.kind) << " " << fmt17(model.loss.beta) << " "
        << fmt17(model.loss.sigma) << "\n";
    out << "centralize " << (model.centralize ? 1 : 0) << "\n";
    out << "codes " << model.codes.size() << " " << model.k << "\n";
    for (const auto& c : model.codes) {
        out << c.shape_id;
        for (int j = 0; j < model.k; ++j) out << " " << fmt17(c.z[j]);
        out << "\n";
    }
    out << "code_stats\nmu";
    for (int j = 0; j < model.k; ++j) out << " " << fmt17(model.code_stats.mean[j]);
    out << "\ncov";
    for (int r = 0; r < model.k; ++r)
        for (int c = 0; c < model.k; ++c) out << " " << fmt17(model.code_stats.covariance(r, c));
    out << "\n";
    write_file(path, out.str());
}

TrainedSdfModel read_sdf_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    TrainedSdfModel model;
    std::optional<FourierMap> fm;
    model.decoder = read_mlp_checkpoint(in, fm);
    model.fourier = std::move(fm);

    std::string tag;
    if (!(in >> tag) || tag != "loss") throw std::runtime_error("model file: expected loss");
    std::string kind;
    if (!(in >> kind >> model.loss.beta >> model.loss.sigma))
        throw std::runtime_error("model file: bad loss line");
    model.loss.kind = loss_kind_from_string(kind);

    int flag = 0;
    if (!(in >> tag >> flag) || tag != "centralize")
        throw std::runtime_error("model file: expected centralize");
    model.centralize = flag != 0;

    int n = 0;
    if (!(in >> tag >> n >> model.k) || tag != "codes" || n < 0 || model.k < 1)
        throw std::runtime_error("model file: bad codes header");
    model.codes.resize(n);
    for (auto& c : model.codes) {
        c.z.resize(model.k);
        if (!(in >> c.shape_id)) throw std::runtime_error("model file: bad code row");
        for (int j = 0; j < model.k; ++j)
            if (!(in >> c.z[j])) throw std::runtime_error("model file: bad code row");
    }

    if (!(in >> tag) || tag != "code_stats")
        throw std::runtime_error("model file: expected code_stats");
    if (!(in >> tag) || tag != "mu") throw std::runtime_error("model file: expected mu");
    model.code_stats.mean.resize(model.k);
    for (int j = 0; j < model.k; ++j)
        if (!(in >> model.code_stats.mean[j])) throw std::runtime_error("model file: bad mu");
    if (!(in >> tag) || tag != "cov") throw std::runtime_error("model file: expected cov");
    model.code_stats.covariance.resize(model.k, model.k);
    for (int r = 0; r < model.k; ++r)
        for (int c = 0; c < model.k; ++c)
            if (!(in >> model.code_stats.covariance(r, c)))
                throw std::runtime_error("model file: bad cov");
    return model;
}

}  // namespace sdfsur
