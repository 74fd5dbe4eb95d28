#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sdfsur/autodecoder.hpp"
#include "sdfsur/fom.hpp"
#include "sdfsur/geometry.hpp"
#include "sdfsur/reconstruction.hpp"
#include "sdfsur/surrogate.hpp"

namespace sdfsur {

std::string family_to_string(ShapeFamily f);
ShapeFamily family_from_string(const std::string& s);

// Every tunable of every stage, resolved from a flat `key = value` file with
// one [section] per stage. Stage seeds are derived from `seed`; the family
// seed inside `family` is filled at run time and is not a config key.
struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";
    int jobs = 1;

    ShapeFamilySpec family;
    int n_train = 10;
    int n_phys = 0;  // shapes with reference solves; 0 means all of n_train
    int n_test = 4;

    int n_boundary = 800;
    int n_grid = 30;
    double noise_sd1 = std::sqrt(0.033);
    double noise_sd2 = std::sqrt(0.0033);
    bool exclude_outer = false;

    SdfTrainOptions sdf;

    int infer_restarts = 5;
    int infer_lbfgs_max_iters = 2000;
    double infer_lbfgs_tol = 1e-8;

    FomProblem problem = FomProblem::PoissonUnitSource;
    double h = 1.0 / 128.0;

    std::vector<int> phys_hidden = {20, 15, 10, 5};
    FeatureSpec phys_features;
    GammaSelector gamma = GammaSelector::All;
    int phys_points = 200;
    PhysTrainSchedule phys_schedule;

    int eval_points = 1000;

    int recon_grid_n = 201;
    double recon_lo = -1.1;
    double recon_hi = 1.1;
    int recon_reference = 4000;

    std::string sweep_key;
    std::vector<std::string> sweep_values;
};

// Unknown or malformed keys raise with the offending key name.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical rendering with every default filled in; written beside the
// outputs of every stage as config_resolved.txt.
std::string resolved_config_text(const RunConfig& cfg);

// Sweep keys: k, m, centralize, optimizer (adam | adam+lbfgs), activation,
// loss, depth_width (e.g. 4x32).
void apply_sweep_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Artifact ledger (manifest.txt): each produced file records its own hash
// and the hashes of the files it was built from. Stages refuse to run when
// a prerequisite is absent, modified, or built from since-changed inputs.
struct Manifest {
    struct Entry {
        std::string hash;
        std::vector<std::pair<std::string, std::string>> inputs;
    };
    std::map<std::string, Entry> entries;

    static Manifest load(const std::string& dir);
    void save(const std::string& dir) const;
    void record(const std::string& dir, const std::string& name,
                const std::vector<std::string>& inputs);
    void require(const std::string& dir, const std::vector<std::string>& names) const;
};

// 8-bit binary grayscale; values clipped to [0,1], row 0 at the top.
void write_pgm(const std::string& path, const Eigen::MatrixXd& values01);

// Pipeline stages. Each writes its artifacts plus config_resolved.txt and
// manifest.txt under cfg.out_dir, prints a one-line `metric=value` summary
// to stdout, and returns 0 only if every requested shape succeeded
// (failures are enumerated on stderr).
int cmd_gen(const RunConfig& cfg);
int cmd_train_sdf(const RunConfig& cfg);
int cmd_infer_codes(const RunConfig& cfg);
int cmd_train_phys(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_reconstruct(const RunConfig& cfg);
int cmd_sweep(const RunConfig& cfg);

}  // namespace sdfsur
