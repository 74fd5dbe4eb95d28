#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdfsur/geometry.hpp"
#include "sdfsur/kdtree.hpp"

namespace sdfsur {

struct SdfSample {
    Vec2 point;
    double sdf = 0.0;
};

// Per-shape training pairs plus the centroid used for centralization.
struct SdfDataset {
    int shape_id = 0;
    std::vector<SdfSample> samples;
    Vec2 centroid;
};

// Interior point with its distance-to-boundary feature and solution values.
struct PhysSample {
    Vec2 point;
    double df = 0.0;
    std::vector<double> u;
};

// Boundary-perturbed plus uniform-grid samples labeled with the exact SDF.
// The first n_boundary samples come from the boundary: points drawn uniform
// by arc length, the first half perturbed with noise_sds.first, the second
// half with noise_sds.second. The remaining n_grid_per_axis^2 samples form a
// uniform grid over [-1.1, 1.1]^2. When exclude_outer_boundary is set the
// outer loop is dropped from both sampling and labeling (hole boundaries
// only, negative inside holes) and the centroid switches to the hole region.
SdfDataset build_sdf_dataset(const Shape& shape, int n_boundary, int n_grid_per_axis,
                             std::pair<double, double> noise_sds, uint64_t seed,
                             bool exclude_outer_boundary = false);

// Exact nearest-neighbor distance from query to a boundary point cloud.
double nearest_boundary_distance(const KdTree2& boundary, Vec2 query);
double nearest_boundary_distance(const std::vector<Vec2>& boundary, Vec2 query);

// Solution field sampler: values at p, or nullopt where the field is not
// defined (triggers a resample).
using FieldFn = std::function<std::optional<std::vector<double>>(Vec2)>;

// n_points interior points by rejection sampling from the outer-loop
// bounding box; df measured against the gamma-selected boundary subset.
// Throws after 100 consecutive rejected candidates.
std::vector<PhysSample> build_phys_points(const Shape& shape, const FieldFn& field, int n_points,
                                          GammaSelector gamma, uint64_t seed);

// sdf_train.csv: header shape_id,x,y,sdf. Read back with centroids zeroed
// (they are re-derived from shapes.txt by the caller).
void write_sdf_csv(const std::string& path, const std::vector<SdfDataset>& datasets);
std::vector<SdfDataset> read_sdf_csv(const std::string& path);

// phys_train.csv: header shape_id,x,y,df,u1[,u2,...]
void write_phys_csv(const std::string& path,
                    const std::vector<std::pair<int, std::vector<PhysSample>>>& sets);
std::vector<std::pair<int, std::vector<PhysSample>>> read_phys_csv(const std::string& path);

}  // namespace sdfsur
