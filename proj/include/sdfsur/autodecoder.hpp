#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdfsur/neural_core.hpp"
#include "sdfsur/sdf_dataset.hpp"

namespace sdfsur {

enum class SdfLossKind { L1, SmoothClampL1, HardClampL1 };

std::string loss_kind_to_string(SdfLossKind kind);
SdfLossKind loss_kind_from_string(const std::string& s);

struct SdfLossSpec {
    SdfLossKind kind = SdfLossKind::SmoothClampL1;
    double beta = 0.1;     // truncation distance for the clamped variants
    double sigma = 100.0;  // code-regularization scale (1/sigma^2 weight)
};

// Per-sample loss: L1 on raw values, or L1 on beta*tanh(s/beta) /
// min-max-clipped values for the smooth / hard clamped variants.
double sdf_loss(double s_ref, double s_pred, const SdfLossSpec& spec);

struct LatentCode {
    int shape_id = 0;
    Eigen::VectorXd z;
};

struct CodePrior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

struct TrainedSdfModel {
    Mlp decoder;  // input = [features(x), z]
    std::optional<FourierMap> fourier;
    std::vector<LatentCode> codes;
    int k = 0;
    SdfLossSpec loss;
    bool centralize = false;
    CodePrior code_stats;  // empirical stats over the trained codes
};

struct SdfTrainSchedule {
    int adam_epochs = 1000;
    double decoder_lr = 1e-3;
    // code learning rate is code_lr_unit * realized batch size
    double code_lr_unit = 1e-5;
    int batch_shapes = 32;
    int subsample_per_shape = 625;
    int lbfgs_max_iters = 2000;
    double lbfgs_tol = 1e-8;
};

struct SdfTrainOptions {
    int k = 3;
    std::vector<int> hidden = {32, 32, 32, 32};
    Activation activation = Activation::Gelu;
    SdfLossSpec loss;
    bool centralize = false;
    int fourier_m = 0;  // 0 disables the Fourier mapping
    double fourier_sigma = 1.0;
    SdfTrainSchedule schedule;
    uint64_t seed = 0;
};

struct SdfTrainReport {
    double adam_end_objective = 0.0;  // full-batch objective entering L-BFGS
    double final_objective = 0.0;     // best-seen full-batch objective
    double final_data_term = 0.0;
    double final_regularizer = 0.0;
    int lbfgs_iterations = 0;
    bool lbfgs_converged = false;
};

// Joint optimization of decoder parameters and one latent code per dataset:
// codes start from N(0, (1/k) I), Adam runs over shape minibatches with
// per-shape point subsampling, then full-batch L-BFGS over (theta, all
// codes) until the loss-difference tolerance.
TrainedSdfModel train_sdf(const std::vector<SdfDataset>& datasets, const SdfTrainOptions& opt,
                          SdfTrainReport* report = nullptr);

struct InferResult {
    LatentCode code;
    double objective = 0.0;
    int failed_restarts = 0;
};

// Decoder-frozen code inference: each restart starts from a draw of
// N(mean, cov + 1e-9 I) over the trained-code statistics and minimizes the
// data + regularizer objective over z alone; best restart wins.
InferResult infer_code(const TrainedSdfModel& model, const SdfDataset& dataset, int restarts,
                       uint64_t seed, int lbfgs_max_iters = 2000, double lbfgs_tol = 1e-8);

// Pure decoder evaluation at points. centroid is required iff the model was
// trained with centralization.
std::vector<double> predict_sdf(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                const std::vector<Vec2>& points, const Vec2* centroid = nullptr);

// Data + regularizer objective of a code on a dataset (decoder frozen);
// the value minimized by infer_code.
double code_objective(const TrainedSdfModel& model, const SdfDataset& dataset,
                      const Eigen::VectorXd& z);
double code_objective_grad(const TrainedSdfModel& model, const SdfDataset& dataset,
                           const Eigen::VectorXd& z, Eigen::VectorXd& grad);

// sdf_model.ckpt: neural_core checkpoint plus loss spec, centralize flag,
// codes block and empirical code statistics.
void write_sdf_model(const std::string& path, const TrainedSdfModel& model);
TrainedSdfModel read_sdf_model(const std::string& path);

}  // namespace sdfsur
