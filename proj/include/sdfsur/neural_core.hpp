#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sdfsur/rng.hpp"

namespace sdfsur {

enum class Activation { Gelu, Tanh, Relu };

std::string activation_to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Fully connected net. Hidden layers use `activation`, the output layer is
// linear. Parameter vector layout: W0 row-major, b0, W1, b1, ...
struct Mlp {
    std::vector<int> layer_dims;           // input, hidden..., output widths
    std::vector<Eigen::MatrixXd> weights;  // weights[l] is dims[l+1] x dims[l]
    std::vector<Eigen::VectorXd> biases;
    Activation activation = Activation::Gelu;

    // Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
    static Mlp create(const std::vector<int>& dims, Activation act, Rng& rng);

    int param_count() const;
    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& theta);
};

// Intermediate activations kept for the backward pass. post[0] is the input;
// pre[l] the affine output of layer l; post[l+1] its activated value.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> post;
};

// Batched evaluation, one sample per column.
Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& input,
                            ForwardCache* cache = nullptr);

// Reverse-mode gradients of sum_j <cotangent_j, output_j>. Adds parameter
// gradients into param_grad (flatten layout; must be pre-sized) and returns
// the gradient with respect to the input matrix — needed to train latent
// codes through the decoder.
Eigen::MatrixXd mlp_backward(const Mlp& net, const ForwardCache& cache,
                             const Eigen::MatrixXd& out_cotangent, Eigen::VectorXd& param_grad);

// Frozen random sinusoidal embedding gamma(x) = [cos(2 pi B x); sin(2 pi B x)].
struct FourierMap {
    Eigen::MatrixXd B;  // m x d, entries ~ N(0, sigma^2)
    double sigma = 1.0;

    static FourierMap create(int m, int d, double sigma, Rng& rng);
    int m() const { return static_cast<int>(B.rows()); }
    int d() const { return static_cast<int>(B.cols()); }
};

// columns of x are points; output is 2m x n
Eigen::MatrixXd fourier_features(const FourierMap& map, const Eigen::MatrixXd& x);

// Per-variable affine map onto [-1, 1].
struct Normalizer {
    Eigen::VectorXd lo, hi;

    Normalizer() = default;
    Normalizer(Eigen::VectorXd lo_, Eigen::VectorXd hi_);

    // Bounds from data columns (one sample per column). Degenerate variables
    // (max == min) are widened by +-0.5 so the map stays invertible.
    static Normalizer from_data(const Eigen::MatrixXd& samples);

    int vars() const { return static_cast<int>(lo.size()); }
    double normalize(int var, double v) const {
        return 2.0 * (v - lo[var]) / (hi[var] - lo[var]) - 1.0;
    }
    double denormalize(int var, double v) const {
        return lo[var] + (v + 1.0) * 0.5 * (hi[var] - lo[var]);
    }
    Eigen::MatrixXd normalize_cols(const Eigen::MatrixXd& samples) const;
    Eigen::MatrixXd denormalize_cols(const Eigen::MatrixXd& samples) const;
};

// Adam with beta1=0.9, beta2=0.999, eps=1e-8 and bias-corrected moments.
struct AdamState {
    Eigen::VectorXd m, v;
    long t = 0;

    explicit AdamState(int n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// Throws std::runtime_error on non-finite gradient entries.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

// Objective fills grad and returns the value; must be deterministic across
// calls at the same point (full batch).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsResult {
    Eigen::VectorXd x;  // best-seen point
    double f = 0.0;
    int iterations = 0;
    bool converged = false;  // stopped by the |f_prev - f_curr| < tol rule
    int line_search_failures = 0;
};

// Two-loop-recursion L-BFGS with a strong Wolfe line search (c1=1e-4,
// c2=0.9). Falls back to a backtracking steepest-descent step when the line
// search fails. Returns the best point seen.
LbfgsResult lbfgs_minimize(const Objective& objective, const Eigen::VectorXd& x0, int memory = 10,
                           double tol = 1e-8, int max_iters = 2000);

// Text checkpoint: layer_dims / activation / optional fourier block /
// params count followed by one value per line, 17 significant digits.
void write_mlp_checkpoint(std::ostream& out, const Mlp& net, const FourierMap* fourier);
Mlp read_mlp_checkpoint(std::istream& in, std::optional<FourierMap>& fourier);

}  // namespace sdfsur
