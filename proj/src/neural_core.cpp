#include "sdfsur/neural_core.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_deriv(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z, Activation act) {
    switch (act) {
        case Activation::Gelu:
            return z.unaryExpr([](double v) { return gelu(v); });
        case Activation::Tanh:
            return z.array().tanh().matrix();
        case Activation::Relu:
            return z.cwiseMax(0.0);
    }
    throw std::logic_error("unreachable");
}

Eigen::MatrixXd activation_deriv(const Eigen::MatrixXd& z, Activation act) {
    switch (act) {
        case Activation::Gelu:
            return z.unaryExpr([](double v) { return gelu_deriv(v); });
        case Activation::Tanh: {
            Eigen::ArrayXXd t = z.array().tanh();
            return (1.0 - t * t).matrix();
        }
        case Activation::Relu:
            return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    }
    throw std::logic_error("unreachable");
}

}  // namespace

std::string activation_to_string(Activation a) {
    switch (a) {
        case Activation::Gelu: return "gelu";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    throw std::logic_error("unreachable");
}

Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw std::runtime_error("unknown activation: " + s);
}

Mlp Mlp::create(const std::vector<int>& dims, Activation act, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
    for (int d : dims)
        if (d < 1) throw std::invalid_argument("non-positive layer width");
    Mlp net;
    net.layer_dims = dims;
    net.activation = act;
    for (size_t l = 0; l + 1 < dims.size(); l++) {
        int fan_in = dims[l], fan_out = dims[l + 1];
        double a = std::sqrt(6.0 / (fan_in + fan_out));
        Eigen::MatrixXd W(fan_out, fan_in);
        for (int r = 0; r < fan_out; r++)
            for (int c = 0; c < fan_in; c++) W(r, c) = rng.uniform(-a, a);
        net.weights.push_back(std::move(W));
        net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    return net;
}

int Mlp::param_count() const {
    int n = 0;
    for (size_t l = 0; l < weights.size(); l++)
        n += static_cast<int>(weights[l].size() + biases[l].size());
    return n;
}

Eigen::VectorXd Mlp::flatten() const {
    Eigen::VectorXd theta(param_count());
    int at = 0;
    for (size_t l = 0; l < weights.size(); l++) {
        const Eigen::MatrixXd& W = weights[l];
        for (int r = 0; r < W.rows(); r++)
            for (int c = 0; c < W.cols(); c++) theta[at++] = W(r, c);
        for (int r = 0; r < biases[l].size(); r++) theta[at++] = biases[l][r];
    }
    return theta;
}

void Mlp::unflatten(const Eigen::VectorXd& theta) {
    if (theta.size() != param_count()) throw std::invalid_argument("parameter length mismatch");
    int at = 0;
    for (size_t l = 0; l < weights.size(); l++) {
        Eigen::MatrixXd& W = weights[l];
        for (int r = 0; r < W.rows(); r++)
            for (int c = 0; c < W.cols(); c++) W(r, c) = theta[at++];
        for (int r = 0; r < biases[l].size(); r++) biases[l][r] = theta[at++];
    }
}

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& input, ForwardCache* cache) {
    if (input.rows() != net.layer_dims.front())
        throw std::invalid_argument("mlp_forward: input dimension mismatch");
    if (cache) {
        cache->pre.clear();
        cache->post.clear();
        cache->post.push_back(input);
    }
    Eigen::MatrixXd cur = input;
    size_t L = net.weights.size();
    for (size_t l = 0; l < L; l++) {
        Eigen::MatrixXd z = (net.weights[l] * cur).colwise() + net.biases[l];
        if (l + 1 < L) {
            cur = apply_activation(z, net.activation);
        } else {
            cur = z;
        }
        if (cache) {
            cache->pre.push_back(std::move(z));
            cache->post.push_back(cur);
        }
    }
    return cur;
}

Eigen::MatrixXd mlp_backward(const Mlp& net, const ForwardCache& cache,
                             const Eigen::MatrixXd& out_cotangent, Eigen::VectorXd& param_grad) {
    size_t L = net.weights.size();
    if (cache.pre.size() != L) throw std::invalid_argument("mlp_backward: stale cache");
    if (param_grad.size() != net.param_count())
        throw std::invalid_argument("mlp_backward: param_grad size mismatch");

    // offsets of each layer's block in the flattened layout
    std::vector<int> offset(L);
    int at = 0;
    for (size_t l = 0; l < L; l++) {
        offset[l] = at;
        at += static_cast<int>(net.weights[l].size() + net.biases[l].size());
    }

    Eigen::MatrixXd delta = out_cotangent;  // cotangent wrt pre[L-1] (linear output)
    Eigen::MatrixXd input_cot;
    for (size_t li = L; li-- > 0;) {
        Eigen::MatrixXd gW = delta * cache.post[li].transpose();
        Eigen::VectorXd gb = delta.rowwise().sum();
        int pos = offset[li];
        const Eigen::MatrixXd& W = net.weights[li];
        for (int r = 0; r < gW.rows(); r++)
            for (int c = 0; c < gW.cols(); c++) param_grad[pos++] += gW(r, c);
        for (int r = 0; r < gb.size(); r++) param_grad[pos++] += gb[r];
        input_cot = W.transpose() * delta;
        if (li > 0) delta = input_cot.cwiseProduct(activation_deriv(cache.pre[li - 1], net.activation));
    }
    return input_cot;
}

FourierMap FourierMap::create(int m, int d, double sigma, Rng& rng) {
    if (m < 1 || d < 1) throw std::invalid_argument("FourierMap: m and d must be positive");
    if (sigma <= 0) throw std::invalid_argument("FourierMap: sigma must be positive");
    FourierMap map;
    map.sigma = sigma;
    map.B.resize(m, d);
    for (int r = 0; r < m; r++)
        for (int c = 0; c < d; c++) map.B(r, c) = rng.normal(0.0, sigma);
    return map;
}

Eigen::MatrixXd fourier_features(const FourierMap& map, const Eigen::MatrixXd& x) {
    if (x.rows() != map.d()) throw std::invalid_argument("fourier_features: dimension mismatch");
    Eigen::MatrixXd proj = 2.0 * M_PI * (map.B * x);
    Eigen::MatrixXd out(2 * map.m(), x.cols());
    out.topRows(map.m()) = proj.array().cos().matrix();
    out.bottomRows(map.m()) = proj.array().sin().matrix();
    return out;
}

Normalizer::Normalizer(Eigen::VectorXd lo_, Eigen::VectorXd hi_)
    : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("Normalizer: bound size mismatch");
    for (int i = 0; i < lo.size(); i++)
        if (!(hi[i] > lo[i])) throw std::invalid_argument("Normalizer: max must exceed min");
}

Normalizer Normalizer::from_data(const Eigen::MatrixXd& samples) {
    if (samples.cols() == 0) throw std::invalid_argument("Normalizer: no samples");
    Eigen::VectorXd lo = samples.rowwise().minCoeff();
    Eigen::VectorXd hi = samples.rowwise().maxCoeff();
    for (int i = 0; i < lo.size(); i++)
        if (hi[i] <= lo[i]) {
            lo[i] -= 0.5;
            hi[i] += 0.5;
        }
    return Normalizer(lo, hi);
}

Eigen::MatrixXd Normalizer::normalize_cols(const Eigen::MatrixXd& samples) const {
    if (samples.rows() != vars()) throw std::invalid_argument("normalize_cols: dim mismatch");
    Eigen::ArrayXd span = (hi - lo).array();
    return ((2.0 * (samples.colwise() - lo).array()).colwise() / span - 1.0).matrix();
}

Eigen::MatrixXd Normalizer::denormalize_cols(const Eigen::MatrixXd& samples) const {
    if (samples.rows() != vars()) throw std::invalid_argument("denormalize_cols: dim mismatch");
    Eigen::ArrayXd span = 0.5 * (hi - lo).array();
    return (((samples.array() + 1.0).colwise() * span).colwise() + lo.array()).matrix();
}

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    if (params.size() != grad.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    if (!grad.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.t++;
    state.m = b1 * state.m + (1.0 - b1) * grad;
    state.v = b2 * state.v + (1.0 - b2) * grad.cwiseProduct(grad);
    double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    Eigen::ArrayXd mhat = state.m.array() / c1;
    Eigen::ArrayXd vhat = state.v.array() / c2;
    params.array() -= lr * mhat / (vhat.sqrt() + eps);
}

namespace {

struct LinePoint {
    double a;     // step length
    double phi;   // f(x + a p)
    double dphi;  // directional derivative
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& objective, const Eigen::VectorXd& x0, int memory,
                           double tol, int max_iters) {
    const double c1 = 1e-4, c2 = 0.9;
    const int n = static_cast<int>(x0.size());

    Eigen::VectorXd x = x0;
    Eigen::VectorXd g(n);
    double f = objective(x, g);
    if (!std::isfinite(f)) throw std::runtime_error("lbfgs: non-finite objective at start");

    LbfgsResult result;
    result.x = x;
    result.f = f;

    std::vector<Eigen::VectorXd> s_hist, y_hist;
    std::vector<double> rho_hist;

    Eigen::VectorXd g_trial(n);
    Eigen::VectorXd g_accept(n);
    auto eval_line = [&](const Eigen::VectorXd& p, double a, LinePoint& out) {
        Eigen::VectorXd xt = x + a * p;
        out.a = a;
        out.phi = objective(xt, g_trial);
        out.dphi = g_trial.dot(p);
    };

    for (int iter = 0; iter < max_iters; iter++) {
        // two-loop recursion for the search direction
        Eigen::VectorXd q = g;
        int h = static_cast<int>(s_hist.size());
        std::vector<double> alpha(h);
        for (int i = h - 1; i >= 0; i--) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (h > 0) {
            double gamma = s_hist[h - 1].dot(y_hist[h - 1]) / y_hist[h - 1].squaredNorm();
            q *= gamma;
        }
        for (int i = 0; i < h; i++) {
            double beta = rho_hist[i] * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        Eigen::VectorXd p = -q;
        double dphi0 = g.dot(p);
        if (!(dphi0 < 0)) {
            p = -g;
            dphi0 = g.dot(p);
            if (!(dphi0 < 0)) break;  // gradient is zero: done
        }

        // strong Wolfe line search (bracket + bisection zoom)
        bool found = false;
        LinePoint accepted{};
        auto accept = [&](const LinePoint& lp) {
            accepted = lp;
            g_accept = g_trial;
            found = true;
        };
        LinePoint prev{0.0, f, dphi0};
        double a_cur = 1.0;
        const double a_max = 1e8;
        // Secant refinement of the step length. phi' is linear in the step
        // for quadratic objectives, so one secant step lands on the exact
        // line minimum there, restoring the CG-like termination behavior
        // that a loose c2=0.9 acceptance would otherwise destroy.
        auto polish = [&](LinePoint from, LinePoint cur) {
            for (int it = 0; it < 2; it++) {
                if (std::abs(cur.dphi) <= 0.01 * (-dphi0) || cur.dphi == from.dphi) return;
                double a_hat = cur.a - cur.dphi * (cur.a - from.a) / (cur.dphi - from.dphi);
                if (!std::isfinite(a_hat) || a_hat <= 0.0 || a_hat >= a_max) return;
                LinePoint pol;
                eval_line(p, a_hat, pol);
                if (!std::isfinite(pol.phi) || pol.phi > f + c1 * pol.a * dphi0 ||
                    pol.phi >= cur.phi)
                    return;
                accept(pol);
                from = cur;
                cur = pol;
            }
        };
        auto zoom = [&](LinePoint lo, LinePoint hi) {
            for (int z = 0; z < 40; z++) {
                LinePoint mid;
                eval_line(p, 0.5 * (lo.a + hi.a), mid);
                if (mid.phi > f + c1 * mid.a * dphi0 || mid.phi >= lo.phi) {
                    hi = mid;
                } else {
                    if (std::abs(mid.dphi) <= -c2 * dphi0) {
                        accept(mid);
                        polish(lo, mid);
                        return;
                    }
                    if (mid.dphi * (hi.a - lo.a) >= 0) hi = lo;
                    lo = mid;
                }
                if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
            }
        };
        for (int ls = 0; ls < 30 && !found; ls++) {
            LinePoint cur;
            eval_line(p, a_cur, cur);
            if (!std::isfinite(cur.phi)) {  // overshot into bad territory
                LinePoint bad{cur.a, std::numeric_limits<double>::infinity(), 0.0};
                zoom(prev, bad);
                break;
            }
            if (cur.phi > f + c1 * cur.a * dphi0 || (ls > 0 && cur.phi >= prev.phi)) {
                zoom(prev, cur);
                break;
            }
            if (std::abs(cur.dphi) <= -c2 * dphi0) {
                accept(cur);
                polish(prev, cur);
                break;
            }
            if (cur.dphi >= 0) {
                zoom(cur, prev);
                break;
            }
            prev = cur;
            a_cur = std::min(2.0 * a_cur, a_max);
            if (a_cur >= a_max) break;
        }

        if (!found) {
            // steepest-descent fallback with simple backtracking
            result.line_search_failures++;
            Eigen::VectorXd d = -g;
            double dd = g.squaredNorm();
            if (dd == 0.0) break;
            double a_bt = 1.0 / std::max(1.0, std::sqrt(dd));
            for (int bt = 0; bt < 60 && !found; bt++) {
                LinePoint cur;
                eval_line(d, a_bt, cur);
                if (std::isfinite(cur.phi) && cur.phi < f) {
                    accept(cur);
                    p = d;
                } else {
                    a_bt *= 0.5;
                }
            }
            if (!found) break;  // no progress possible
            s_hist.clear();     // curvature history no longer trustworthy
            y_hist.clear();
            rho_hist.clear();
        }

        Eigen::VectorXd x_new = x + accepted.a * p;
        // g_accept was captured at the accepted evaluation, so no extra
        // objective call is needed here
        Eigen::VectorXd g_new = g_accept;
        double f_new = accepted.phi;

        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
        }

        double f_prev = f;
        x = std::move(x_new);
        g = std::move(g_new);
        f = f_new;
        result.iterations = iter + 1;
        if (f < result.f) {
            result.f = f;
            result.x = x;
        }
        if (std::abs(f_prev - f) < tol) {
            result.converged = true;
            break;
        }
    }
    return result;
}

void write_mlp_checkpoint(std::ostream& out, const Mlp& net, const FourierMap* fourier) {
    out << "layer_dims";
    for (int d : net.layer_dims) out << " " << d;
    out << "\nactivation " << activation_to_string(net.activation) << "\n";
    if (fourier) {
        out << "fourier " << fourier->m() << " " << fourier->d() << " " << fmt17(fourier->sigma)
            << "\n";
        for (int r = 0; r < fourier->B.rows(); r++)
            for (int c = 0; c < fourier->B.cols(); c++) out << fmt17(fourier->B(r, c)) << "\n";
    }
    Eigen::VectorXd theta = net.flatten();
    out << "params " << theta.size() << "\n";
    for (int i = 0; i < theta.size(); i++) out << fmt17(theta[i]) << "\n";
}

Mlp read_mlp_checkpoint(std::istream& in, std::optional<FourierMap>& fourier) {
    fourier.reset();
    std::string tag;
    if (!(in >> tag) || tag != "layer_dims")
        throw std::runtime_error("checkpoint: expected layer_dims");
    std::vector<int> dims;
    {
        std::string rest;
        std::getline(in, rest);
        std::istringstream ds(rest);
        int d;
        while (ds >> d) dims.push_back(d);
    }
    if (!(in >> tag) || tag != "activation")
        throw std::runtime_error("checkpoint: expected activation");
    std::string act_name;
    in >> act_name;

    Mlp net;
    net.layer_dims = dims;
    net.activation = activation_from_string(act_name);
    for (size_t l = 0; l + 1 < dims.size(); l++) {
        net.weights.push_back(Eigen::MatrixXd::Zero(dims[l + 1], dims[l]));
        net.biases.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
    }

    if (!(in >> tag)) throw std::runtime_error("checkpoint: truncated");
    if (tag == "fourier") {
        int m, d;
        double sigma;
        if (!(in >> m >> d >> sigma)) throw std::runtime_error("checkpoint: bad fourier header");
        FourierMap map;
        map.sigma = sigma;
        map.B.resize(m, d);
        for (int r = 0; r < m; r++)
            for (int c = 0; c < d; c++)
                if (!(in >> map.B(r, c))) throw std::runtime_error("checkpoint: bad fourier row");
        fourier = std::move(map);
        if (!(in >> tag)) throw std::runtime_error("checkpoint: truncated after fourier");
    }
    if (tag != "params") throw std::runtime_error("checkpoint: expected params");
    long count;
    if (!(in >> count) || count != net.param_count())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    Eigen::VectorXd theta(count);
    for (long i = 0; i < count; i++)
        if (!(in >> theta[i])) throw std::runtime_error("checkpoint: truncated params");
    net.unflatten(theta);
    return net;
}

}  // namespace sdfsur
