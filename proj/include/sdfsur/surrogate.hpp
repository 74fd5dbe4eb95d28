#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdfsur/autodecoder.hpp"
#include "sdfsur/fom.hpp"
#include "sdfsur/neural_core.hpp"
#include "sdfsur/sdf_dataset.hpp"

namespace sdfsur {

enum class ShapeEncoder { ShapeCodes, ExplicitParams };

std::string encoder_to_string(ShapeEncoder e);
ShapeEncoder encoder_from_string(const std::string& s);

std::string gamma_to_string(GammaSelector g);
GammaSelector gamma_from_string(const std::string& s);

// Input layout per point: (x, y, encoder vector, df when enabled, centroid
// when enabled). code_len is resolved from the training data.
struct FeatureSpec {
    bool use_df = true;
    ShapeEncoder encoder = ShapeEncoder::ShapeCodes;
    bool use_centroid = false;
    int code_len = 0;

    int input_width() const { return 2 + code_len + (use_df ? 1 : 0) + (use_centroid ? 2 : 0); }
};

// One shape's supervised points plus its conditioning vector (latent code
// or explicit family parameters, frozen during training).
struct PhysTrainingSet {
    int shape_id = 0;
    std::vector<PhysSample> samples;
    Eigen::VectorXd code;
    std::optional<Vec2> centroid;
};

struct Surrogate {
    Mlp phys_net;  // tanh hidden activations
    FeatureSpec feature_spec;
    GammaSelector gamma = GammaSelector::All;  // boundary subset for df
    Normalizer input_norm;
    Normalizer output_norm;
    std::string sdf_model_ref;  // identifier of the paired shape model
};

struct PhysTrainSchedule {
    int adam_epochs = 200;  // full-batch steps
    double lr = 1e-3;
    int lbfgs_max_iters = 2000;
    double lbfgs_tol = 1e-8;
};

struct PhysTrainReport {
    double adam_end_loss = 0.0;  // summed squared error, normalized space
    double final_loss = 0.0;
    int lbfgs_iterations = 0;
    bool lbfgs_converged = false;
    std::vector<double> per_shape_rel_l2;  // physical space, training points
};

// Sum of squared errors over all points in normalized coordinates: Adam
// warm start then full-batch L-BFGS over the network parameters alone.
Surrogate train_phys(const std::vector<PhysTrainingSet>& sets, FeatureSpec features,
                     GammaSelector gamma, const std::vector<int>& hidden,
                     const PhysTrainSchedule& schedule, uint64_t seed,
                     PhysTrainReport* report = nullptr, const std::string& sdf_model_ref = "");

// Pointwise field prediction: df recomputed against the recorded boundary
// subset, features normalized, forward pass, outputs denormalized. Points
// must lie inside the shape.
std::vector<std::vector<double>> predict(const Surrogate& s, const Eigen::VectorXd& code,
                                         const Shape& shape, const std::vector<Vec2>& points,
                                         const Vec2* centroid = nullptr);

// Accumulates sum |pred - ref|^2 and sum |ref|^2 across shapes; the ratio is
// taken once at the end.
struct RelL2Accum {
    double err2 = 0.0;
    double ref2 = 0.0;

    void add(const std::vector<double>& pred, const std::vector<double>& ref);
    double value() const;  // throws on zero reference norm
};

double relative_l2(const std::vector<std::vector<double>>& pred,
                   const std::vector<std::vector<double>>& ref);

struct OnlineEvalConfig {
    int n_boundary = 800;
    int n_grid = 30;
    std::pair<double, double> noise_sds = {std::sqrt(0.033), std::sqrt(0.0033)};
    bool exclude_outer_boundary = false;
    int restarts = 5;
    int n_eval_points = 1000;
    FomProblem problem = FomProblem::PoissonUnitSource;
    double h = 1.0 / 128.0;
    uint64_t seed = 0;
    int jobs = 1;
};

struct ShapeEvalResult {
    int shape_id = 0;
    int n_points = 0;
    double rel_l2 = 0.0;
    double code_objective = 0.0;
    bool failed = false;
    std::string error;
    std::vector<Vec2> points;
    std::vector<double> u_ref;
    std::vector<double> u_pred;
    double err2 = 0.0;  // summed squared error / reference norm, pooled
    double ref2 = 0.0;  // into the aggregate before the ratio
    // Inputs of record for downstream dumps (raster error fields etc.).
    Eigen::VectorXd code;
    Vec2 centroid;
    FomField ref_field;
};

struct OnlineReport {
    std::vector<ShapeEvalResult> shapes;
    double aggregate_rel_l2 = 0.0;  // nan when no shape succeeded
    int failed_count = 0;
};

// Per new shape: sample an SDF dataset, infer the code (skipped for the
// explicit-parameter encoder), solve the reference problem, draw evaluation
// points, predict, and score. Failures are recorded per shape.
OnlineReport run_online(const TrainedSdfModel& sdf_model, const Surrogate& surrogate,
                        const std::vector<Shape>& new_shapes, const OnlineEvalConfig& cfg);

void write_phys_model(const std::string& path, const Surrogate& s);
Surrogate read_phys_model(const std::string& path);

}  // namespace sdfsur
