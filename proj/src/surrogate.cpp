#include "sdfsur/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct SetRange {
    int shape_id = 0;
    long start = 0;
    long count = 0;
};

Eigen::MatrixXd assemble_features(const FeatureSpec& fs, const std::vector<Vec2>& pts,
                                  const std::vector<double>& df, const Eigen::VectorXd& code,
                                  const Vec2* centroid) {
    const long n = static_cast<long>(pts.size());
    Eigen::MatrixXd x(fs.input_width(), n);
    for (long j = 0; j < n; ++j) {
        long r = 0;
        x(r++, j) = pts[j].x;
        x(r++, j) = pts[j].y;
        for (int c = 0; c < fs.code_len; ++c) x(r++, j) = code[c];
        if (fs.use_df) x(r++, j) = df[j];
        if (fs.use_centroid) {
            x(r++, j) = centroid->x;
            x(r++, j) = centroid->y;
        }
    }
    return x;
}

[[noreturn]] void throw_nonfinite(const Eigen::MatrixXd& residual,
                                  const std::vector<SetRange>& ranges) {
    for (long j = 0; j < residual.cols(); ++j) {
        if (residual.col(j).allFinite()) continue;
        for (const auto& r : ranges) {
            if (j >= r.start && j < r.start + r.count) {
                throw std::runtime_error("train_phys: non-finite loss at shape " +
                                         std::to_string(r.shape_id) + " point " +
                                         std::to_string(j - r.start));
            }
        }
    }
    throw std::runtime_error("train_phys: non-finite loss");
}

}  // namespace

std::string encoder_to_string(ShapeEncoder e) {
    return e == ShapeEncoder::ShapeCodes ? "SHAPE_CODES" : "EXPLICIT_PARAMS";
}

ShapeEncoder encoder_from_string(const std::string& s) {
    if (s == "SHAPE_CODES") return ShapeEncoder::ShapeCodes;
    if (s == "EXPLICIT_PARAMS") return ShapeEncoder::ExplicitParams;
    throw std::invalid_argument("unknown shape encoder: " + s);
}

std::string gamma_to_string(GammaSelector g) {
    return g == GammaSelector::All ? "ALL" : "WALLS_ONLY";
}

GammaSelector gamma_from_string(const std::string& s) {
    if (s == "ALL") return GammaSelector::All;
    if (s == "WALLS_ONLY") return GammaSelector::WallsOnly;
    throw std::invalid_argument("unknown boundary selector: " + s);
}

Surrogate train_phys(const std::vector<PhysTrainingSet>& sets, FeatureSpec features,
                     GammaSelector gamma, const std::vector<int>& hidden,
                     const PhysTrainSchedule& schedule, uint64_t seed, PhysTrainReport* report,
                     const std::string& sdf_model_ref) {
    if (sets.empty()) throw std::invalid_argument("train_phys: no training sets");
    if (schedule.lr <= 0.0 || schedule.adam_epochs < 0 || schedule.lbfgs_max_iters < 0 ||
        schedule.lbfgs_tol <= 0.0) {
        throw std::invalid_argument("train_phys: invalid schedule");
    }
    const int code_len = static_cast<int>(sets.front().code.size());
    if (features.code_len == 0) features.code_len = code_len;
    if (features.code_len != code_len) {
        throw std::invalid_argument("train_phys: feature spec expects code length " +
                                    std::to_string(features.code_len) + ", data has " +
                                    std::to_string(code_len));
    }

    int d_u = -1;
    long total = 0;
    for (const auto& set : sets) {
        if (set.samples.empty()) {
            throw std::invalid_argument("train_phys: empty sample list for shape " +
                                        std::to_string(set.shape_id));
        }
        if (static_cast<int>(set.code.size()) != code_len) {
            throw std::invalid_argument("train_phys: code length mismatch for shape " +
                                        std::to_string(set.shape_id));
        }
        if (!set.code.allFinite()) {
            throw std::runtime_error("train_phys: non-finite code for shape " +
                                     std::to_string(set.shape_id));
        }
        if (features.use_centroid && !set.centroid) {
            throw std::invalid_argument("train_phys: missing centroid for shape " +
                                        std::to_string(set.shape_id));
        }
        for (size_t j = 0; j < set.samples.size(); ++j) {
            const PhysSample& s = set.samples[j];
            if (d_u < 0) d_u = static_cast<int>(s.u.size());
            if (static_cast<int>(s.u.size()) != d_u) {
                throw std::invalid_argument("train_phys: value width mismatch for shape " +
                                            std::to_string(set.shape_id));
            }
            bool finite = std::isfinite(s.point.x) && std::isfinite(s.point.y) &&
                          std::isfinite(s.df);
            for (double v : s.u) finite = finite && std::isfinite(v);
            if (!finite) {
                throw std::runtime_error("train_phys: non-finite value at shape " +
                                         std::to_string(set.shape_id) + " point " +
                                         std::to_string(j));
            }
        }
        total += static_cast<long>(set.samples.size());
    }
    if (d_u < 1) throw std::invalid_argument("train_phys: empty solution values");

    const int width = features.input_width();
    Eigen::MatrixXd x_all(width, total);
    Eigen::MatrixXd y_all(d_u, total);
    std::vector<SetRange> ranges;
    long col = 0;
    for (const auto& set : sets) {
        const long n = static_cast<long>(set.samples.size());
        std::vector<Vec2> pts(set.samples.size());
        std::vector<double> df(set.samples.size());
        for (size_t j = 0; j < set.samples.size(); ++j) {
            pts[j] = set.samples[j].point;
            df[j] = set.samples[j].df;
            for (int c = 0; c < d_u; ++c) y_all(c, col + static_cast<long>(j)) = set.samples[j].u[c];
        }
        const Vec2* cen = set.centroid ? &*set.centroid : nullptr;
        x_all.middleCols(col, n) = assemble_features(features, pts, df, set.code, cen);
        ranges.push_back({set.shape_id, col, n});
        col += n;
    }

    Rng init_rng(derive_seed(seed, 0));
    std::vector<int> dims;
    dims.push_back(width);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(d_u);
    Mlp net = Mlp::create(dims, Activation::Tanh, init_rng);

    Normalizer in_norm = Normalizer::from_data(x_all);
    Normalizer out_norm = Normalizer::from_data(y_all);
    const Eigen::MatrixXd xn = in_norm.normalize_cols(x_all);
    const Eigen::MatrixXd yn = out_norm.normalize_cols(y_all);

    // Summed squared error in normalized coordinates over every point.
    auto eval = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) -> double {
        net.unflatten(theta);
        ForwardCache cache;
        Eigen::MatrixXd out = mlp_forward(net, xn, grad ? &cache : nullptr);
        Eigen::MatrixXd residual = out - yn;
        double loss = residual.squaredNorm();
        if (!std::isfinite(loss)) throw_nonfinite(residual, ranges);
        if (grad) {
            grad->setZero();
            mlp_backward(net, cache, 2.0 * residual, *grad);
        }
        return loss;
    };

    Eigen::VectorXd theta = net.flatten();
    Eigen::VectorXd grad(net.param_count());
    AdamState adam(net.param_count());
    for (int epoch = 0; epoch < schedule.adam_epochs; ++epoch) {
        eval(theta, &grad);
        adam_step(adam, theta, grad, schedule.lr);
    }

    const double adam_end = eval(theta, nullptr);
    LbfgsResult res;
    res.x = theta;
    res.f = adam_end;
    if (schedule.lbfgs_max_iters > 0) {
        res = lbfgs_minimize(
            [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return eval(x, &g); }, theta, 10,
            schedule.lbfgs_tol, schedule.lbfgs_max_iters);
    }
    net.unflatten(res.x);

    Surrogate out{net, features, gamma, in_norm, out_norm, sdf_model_ref};
    if (report) {
        report->adam_end_loss = adam_end;
        report->final_loss = res.f;
        report->lbfgs_iterations = res.iterations;
        report->lbfgs_converged = res.converged;
        report->per_shape_rel_l2.clear();
        Eigen::MatrixXd pred = out_norm.denormalize_cols(mlp_forward(net, xn));
        for (const auto& r : ranges) {
            double err2 = (pred.middleCols(r.start, r.count) - y_all.middleCols(r.start, r.count))
                              .squaredNorm();
            double ref2 = y_all.middleCols(r.start, r.count).squaredNorm();
            report->per_shape_rel_l2.push_back(ref2 > 0.0 ? std::sqrt(err2 / ref2) : kNan);
        }
    }
    log_info("train_phys: points=" + std::to_string(total) +
             " adam_end=" + fmt17(adam_end) + " final=" + fmt17(res.f) +
             " lbfgs_iters=" + std::to_string(res.iterations) +
             (res.converged ? " converged" : ""));
    return out;
}

std::vector<std::vector<double>> predict(const Surrogate& s, const Eigen::VectorXd& code,
                                         const Shape& shape, const std::vector<Vec2>& points,
                                         const Vec2* centroid) {
    const FeatureSpec& fs = s.feature_spec;
    if (static_cast<int>(code.size()) != fs.code_len) {
        throw std::invalid_argument("predict: code length " + std::to_string(code.size()) +
                                    " does not match feature width " +
                                    std::to_string(fs.code_len));
    }
    if (fs.use_centroid && centroid == nullptr) {
        throw std::invalid_argument("predict: centroid required by feature spec");
    }
    if (points.empty()) return {};
    std::vector<double> df(points.size(), 0.0);
    for (size_t j = 0; j < points.size(); ++j) {
        if (!contains(shape, points[j])) {
            throw std::invalid_argument("predict: point " + std::to_string(j) +
                                        " outside shape " + std::to_string(shape.shape_id));
        }
        if (fs.use_df) df[j] = distance_to_boundary(shape, points[j], s.gamma);
    }
    Eigen::MatrixXd x = assemble_features(fs, points, df, code, centroid);
    Eigen::MatrixXd pred = s.output_norm.denormalize_cols(
        mlp_forward(s.phys_net, s.input_norm.normalize_cols(x)));
    std::vector<std::vector<double>> result(points.size());
    for (size_t j = 0; j < points.size(); ++j) {
        result[j].assign(pred.col(static_cast<long>(j)).data(),
                         pred.col(static_cast<long>(j)).data() + pred.rows());
    }
    return result;
}

void RelL2Accum::add(const std::vector<double>& pred, const std::vector<double>& ref) {
    if (pred.size() != ref.size()) {
        throw std::invalid_argument("relative_l2: value width mismatch");
    }
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - ref[i];
        err2 += d * d;
        ref2 += ref[i] * ref[i];
    }
}

double RelL2Accum::value() const {
    if (ref2 <= 0.0) throw std::invalid_argument("relative_l2: zero reference norm");
    return std::sqrt(err2 / ref2);
}

double relative_l2(const std::vector<std::vector<double>>& pred,
                   const std::vector<std::vector<double>>& ref) {
    if (pred.size() != ref.size()) {
        throw std::invalid_argument("relative_l2: prediction count " + std::to_string(pred.size()) +
                                    " != reference count " + std::to_string(ref.size()));
    }
    RelL2Accum acc;
    for (size_t k = 0; k < pred.size(); ++k) acc.add(pred[k], ref[k]);
    return acc.value();
}

OnlineReport run_online(const TrainedSdfModel& sdf_model, const Surrogate& surrogate,
                        const std::vector<Shape>& new_shapes, const OnlineEvalConfig& cfg) {
    OnlineReport report;
    report.shapes.resize(new_shapes.size());
    parallel_for(static_cast<int>(new_shapes.size()), cfg.jobs, [&](int i) {
        const Shape& shape = new_shapes[static_cast<size_t>(i)];
        ShapeEvalResult& r = report.shapes[static_cast<size_t>(i)];
        r.shape_id = shape.shape_id;
        r.rel_l2 = kNan;
        r.code_objective = kNan;
        const uint64_t shape_seed = derive_seed(cfg.seed, static_cast<uint64_t>(shape.shape_id));
        try {
            Eigen::VectorXd code;
            Vec2 centroid = shape_centroid(shape, cfg.exclude_outer_boundary);
            if (surrogate.feature_spec.encoder == ShapeEncoder::ShapeCodes) {
                SdfDataset ds =
                    build_sdf_dataset(shape, cfg.n_boundary, cfg.n_grid, cfg.noise_sds,
                                      derive_seed(shape_seed, 0), cfg.exclude_outer_boundary);
                centroid = ds.centroid;
                InferResult infer =
                    infer_code(sdf_model, ds, cfg.restarts, derive_seed(shape_seed, 1));
                code = infer.code.z;
                r.code_objective = infer.objective;
            } else {
                if (static_cast<int>(shape.params.size()) != surrogate.feature_spec.code_len) {
                    throw std::runtime_error("parameter length " +
                                             std::to_string(shape.params.size()) +
                                             " does not match feature width " +
                                             std::to_string(surrogate.feature_spec.code_len));
                }
                code = Eigen::Map<const Eigen::VectorXd>(
                    shape.params.data(), static_cast<long>(shape.params.size()));
            }
            FomField field = solve_fom(shape, cfg.problem, cfg.h);
            std::vector<PhysSample> samples =
                build_phys_points(shape, fom_field_fn(field), cfg.n_eval_points, surrogate.gamma,
                                  derive_seed(shape_seed, 2));
            std::vector<Vec2> pts(samples.size());
            for (size_t j = 0; j < samples.size(); ++j) pts[j] = samples[j].point;
            const Vec2* cen = surrogate.feature_spec.use_centroid ? &centroid : nullptr;
            auto pred = predict(surrogate, code, shape, pts, cen);
            RelL2Accum acc;
            for (size_t j = 0; j < samples.size(); ++j) acc.add(pred[j], samples[j].u);
            r.n_points = static_cast<int>(samples.size());
            r.rel_l2 = acc.value();
            r.err2 = acc.err2;
            r.ref2 = acc.ref2;
            r.points = std::move(pts);
            r.u_ref.resize(samples.size());
            r.u_pred.resize(samples.size());
            for (size_t j = 0; j < samples.size(); ++j) {
                r.u_ref[j] = samples[j].u[0];
                r.u_pred[j] = pred[j][0];
            }
            r.code = std::move(code);
            r.centroid = centroid;
            r.ref_field = std::move(field);
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
            log_info("eval: shape " + std::to_string(r.shape_id) + " failed: " + r.error);
        }
    });
    RelL2Accum agg;
    for (const ShapeEvalResult& r : report.shapes) {
        if (r.failed) {
            report.failed_count += 1;
            continue;
        }
        agg.err2 += r.err2;
        agg.ref2 += r.ref2;
    }
    report.aggregate_rel_l2 = agg.ref2 > 0.0 ? agg.value() : kNan;
    return report;
}

void write_phys_model(const std::string& path, const Surrogate& s) {
    std::ostringstream out;
    write_mlp_checkpoint(out, s.phys_net, nullptr);
    out << "features " << encoder_to_string(s.feature_spec.encoder) << ' '
        << (s.feature_spec.use_df ? 1 : 0) << ' ' << (s.feature_spec.use_centroid ? 1 : 0) << ' '
        << s.feature_spec.code_len << '\n';
    out << "gamma " << gamma_to_string(s.gamma) << '\n';
    auto bounds_line = [&out](const char* tag, const Eigen::VectorXd& v) {
        out << tag;
        for (long i = 0; i < v.size(); ++i) out << ' ' << fmt17(v[i]);
        out << '\n';
    };
    bounds_line("input_lo", s.input_norm.lo);
    bounds_line("input_hi", s.input_norm.hi);
    bounds_line("output_lo", s.output_norm.lo);
    bounds_line("output_hi", s.output_norm.hi);
    out << "sdf_ref " << (s.sdf_model_ref.empty() ? "-" : s.sdf_model_ref) << '\n';
    write_file(path, out.str());
}

Surrogate read_phys_model(const std::string& path) {
    std::istringstream in(read_file(path));
    Surrogate s;
    std::optional<FourierMap> fourier;
    s.phys_net = read_mlp_checkpoint(in, fourier);
    if (fourier) {
        throw std::runtime_error("read_phys_model: unexpected fourier block in " + path);
    }
    auto expect = [&](const char* tag) {
        std::string tok;
        in >> tok;
        if (!in || tok != tag) {
            throw std::runtime_error("read_phys_model: expected '" + std::string(tag) + "' in " +
                                     path);
        }
    };
    expect("features");
    std::string enc;
    int use_df = 0, use_centroid = 0;
    in >> enc >> use_df >> use_centroid >> s.feature_spec.code_len;
    s.feature_spec.encoder = encoder_from_string(enc);
    s.feature_spec.use_df = use_df != 0;
    s.feature_spec.use_centroid = use_centroid != 0;
    expect("gamma");
    std::string g;
    in >> g;
    s.gamma = gamma_from_string(g);
    const int width = s.feature_spec.input_width();
    if (s.phys_net.layer_dims.front() != width) {
        throw std::runtime_error("read_phys_model: input width mismatch in " + path);
    }
    auto read_bounds = [&](const char* tag, int n) {
        expect(tag);
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) in >> v[i];
        return v;
    };
    const int d_u = s.phys_net.layer_dims.back();
    Eigen::VectorXd in_lo = read_bounds("input_lo", width);
    Eigen::VectorXd in_hi = read_bounds("input_hi", width);
    Eigen::VectorXd out_lo = read_bounds("output_lo", d_u);
    Eigen::VectorXd out_hi = read_bounds("output_hi", d_u);
    expect("sdf_ref");
    std::string ref_line;
    std::getline(in, ref_line);
    if (!in) throw std::runtime_error("read_phys_model: truncated file " + path);
    const size_t pos = ref_line.find_first_not_of(" \t");
    s.sdf_model_ref = pos == std::string::npos ? std::string() : ref_line.substr(pos);
    if (s.sdf_model_ref == "-") s.sdf_model_ref.clear();
    s.input_norm = Normalizer(std::move(in_lo), std::move(in_hi));
    s.output_norm = Normalizer(std::move(out_lo), std::move(out_hi));
    return s;
}

}  // namespace sdfsur
