#pragma once

#include <string>
#include <vector>

#include "sdfsur/autodecoder.hpp"
#include "sdfsur/geometry.hpp"

namespace sdfsur {

// Uniform node grid; node (ix, iy) sits at origin + spacing * (ix, iy).
struct LevelSetGrid {
    int n_x = 0, n_y = 0;
    Vec2 origin;
    double spacing = 0.0;
    Eigen::MatrixXd values;  // indexed (ix, iy)
};

// Geometry of the reconstruction grid; defaults cover the sampling box
// [-1.1, 1.1]^2 with 201 nodes per axis.
struct GridSpec {
    Vec2 origin{-1.1, -1.1};
    double spacing = 2.2 / 200.0;
    int n_x = 201;
    int n_y = 201;
};

using PointSet = std::vector<Vec2>;

// Decoder predictions on every node, one batched forward pass.
LevelSetGrid make_level_set_grid(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                 const GridSpec& spec, const Vec2* centroid = nullptr);

// Zero-crossing point cloud of the iso level: one linearly interpolated
// point per grid edge whose endpoint values straddle iso, plus nodes that
// hit iso exactly. Throws when the level set is empty (collapsed field).
PointSet marching_squares(const LevelSetGrid& grid, double iso = 0.0);

// Symmetric mean of squared nearest-neighbor distances.
double chamfer_distance(const PointSet& s1, const PointSet& s2);

struct ReconResult {
    double cd = 0.0;
    PointSet points;
};

// Grid fill + crossing extraction + Chamfer score against a reference
// boundary sampling. Propagates the empty-level-set error.
ReconResult evaluate_reconstruction(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                    const PointSet& reference_boundary, const GridSpec& spec,
                                    const Vec2* centroid = nullptr);

// recon_{id}.csv: x,y rows.
void write_point_set_csv(const std::string& path, const PointSet& points);

struct CdReportRow {
    int shape_id = 0;
    double cd = 0.0;
    bool failed = false;
};

// cd_report.csv: shape_id,cd,failed rows; failed reconstructions carry nan.
void write_cd_report(const std::string& path, const std::vector<CdReportRow>& rows);

}  // namespace sdfsur
