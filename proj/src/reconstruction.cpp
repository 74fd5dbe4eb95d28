#include "sdfsur/reconstruction.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"
#include "sdfsur/kdtree.hpp"

namespace sdfsur {

namespace {

void validate_grid(const LevelSetGrid& grid) {
    if (grid.n_x < 2 || grid.n_y < 2)
        throw std::invalid_argument("level-set grid needs at least 2 nodes per axis");
    if (!(grid.spacing > 0.0)) throw std::invalid_argument("level-set grid spacing must be positive");
    if (grid.values.rows() != grid.n_x || grid.values.cols() != grid.n_y)
        throw std::invalid_argument("level-set grid value shape mismatch");
    if (!grid.values.allFinite())
        throw std::invalid_argument("level-set grid holds non-finite values");
}

}  // namespace

LevelSetGrid make_level_set_grid(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                 const GridSpec& spec, const Vec2* centroid) {
    if (spec.n_x < 2 || spec.n_y < 2 || !(spec.spacing > 0.0))
        throw std::invalid_argument("bad reconstruction grid spec");
    LevelSetGrid grid;
    grid.n_x = spec.n_x;
    grid.n_y = spec.n_y;
    grid.origin = spec.origin;
    grid.spacing = spec.spacing;

    std::vector<Vec2> nodes;
    nodes.reserve(static_cast<size_t>(spec.n_x) * spec.n_y);
    for (int iy = 0; iy < spec.n_y; ++iy)
        for (int ix = 0; ix < spec.n_x; ++ix)
            nodes.push_back({spec.origin.x + spec.spacing * ix, spec.origin.y + spec.spacing * iy});
    const std::vector<double> pred = predict_sdf(model, z, nodes, centroid);

    grid.values.resize(spec.n_x, spec.n_y);
    size_t at = 0;
    for (int iy = 0; iy < spec.n_y; ++iy)
        for (int ix = 0; ix < spec.n_x; ++ix) grid.values(ix, iy) = pred[at++];
    return grid;
}

PointSet marching_squares(const LevelSetGrid& grid, double iso) {
    validate_grid(grid);
    const double h = grid.spacing;
    PointSet out;

    const auto node_x = [&](int ix) { return grid.origin.x + h * ix; };
    const auto node_y = [&](int iy) { return grid.origin.y + h * iy; };

    // nodes sitting exactly on the level
    for (int iy = 0; iy < grid.n_y; ++iy)
        for (int ix = 0; ix < grid.n_x; ++ix)
            if (grid.values(ix, iy) == iso) out.push_back({node_x(ix), node_y(iy)});

    // horizontal edges
    for (int iy = 0; iy < grid.n_y; ++iy) {
        for (int ix = 0; ix + 1 < grid.n_x; ++ix) {
            const double a = grid.values(ix, iy) - iso;
            const double b = grid.values(ix + 1, iy) - iso;
            if ((a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)) {
                const double t = a / (a - b);
                out.push_back({node_x(ix) + t * h, node_y(iy)});
            }
        }
    }
    // vertical edges
    for (int iy = 0; iy + 1 < grid.n_y; ++iy) {
        for (int ix = 0; ix < grid.n_x; ++ix) {
            const double a = grid.values(ix, iy) - iso;
            const double b = grid.values(ix, iy + 1) - iso;
            if ((a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)) {
                const double t = a / (a - b);
                out.push_back({node_x(ix), node_y(iy) + t * h});
            }
        }
    }

    if (out.empty()) throw std::runtime_error("marching squares: level set has no crossings");
    return out;
}

double chamfer_distance(const PointSet& s1, const PointSet& s2) {
    if (s1.empty() || s2.empty())
        throw std::invalid_argument("chamfer distance needs nonempty point sets");
    const KdTree2 t1(s1), t2(s2);
    double acc1 = 0.0, acc2 = 0.0;
    for (const Vec2& p : s1) acc1 += t2.nearest_distance2(p);
    for (const Vec2& p : s2) acc2 += t1.nearest_distance2(p);
    return acc1 / static_cast<double>(s1.size()) + acc2 / static_cast<double>(s2.size());
}

ReconResult evaluate_reconstruction(const TrainedSdfModel& model, const Eigen::VectorXd& z,
                                    const PointSet& reference_boundary, const GridSpec& spec,
                                    const Vec2* centroid) {
    if (reference_boundary.empty())
        throw std::invalid_argument("evaluate_reconstruction: empty reference boundary");
    const LevelSetGrid grid = make_level_set_grid(model, z, spec, centroid);
    ReconResult res;
    res.points = marching_squares(grid);
    res.cd = chamfer_distance(res.points, reference_boundary);
    return res;
}

void write_point_set_csv(const std::string& path, const PointSet& points) {
    std::ostringstream out;
    out << "x,y\n";
    for (const Vec2& p : points) out << fmt17(p.x) << "," << fmt17(p.y) << "\n";
    write_file(path, out.str());
}

void write_cd_report(const std::string& path, const std::vector<CdReportRow>& rows) {
    std::ostringstream out;
    out << "shape_id,cd,failed\n";
    for (const auto& r : rows)
        out << r.shape_id << "," << fmt17(r.cd) << "," << (r.failed ? 1 : 0) << "\n";
    write_file(path, out.str());
}

}  // namespace sdfsur
