#include "sdfsur/sdf_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

SdfDataset build_sdf_dataset(const Shape& shape, int n_boundary, int n_grid_per_axis,
                             std::pair<double, double> noise_sds, uint64_t seed,
                             bool exclude_outer_boundary) {
    if (n_boundary % 2 != 0) throw std::invalid_argument("n_boundary must be even");
    if (noise_sds.first < 0 || noise_sds.second < 0)
        throw std::invalid_argument("negative noise sd");

    SdfDataset ds;
    ds.shape_id = shape.shape_id;
    ds.centroid = shape_centroid(shape, exclude_outer_boundary);
    auto label = [&](Vec2 p) {
        return exclude_outer_boundary ? exact_sdf_holes(shape, p) : exact_sdf(shape, p);
    };

    Rng rng(seed);
    std::vector<Vec2> pts = exclude_outer_boundary
                                ? sample_hole_boundary(shape, n_boundary, &rng)
                                : sample_boundary(shape, GammaSelector::All, n_boundary, &rng);
    ds.samples.reserve(n_boundary + n_grid_per_axis * n_grid_per_axis);
    for (int i = 0; i < n_boundary; i++) {
        double sd = i < n_boundary / 2 ? noise_sds.first : noise_sds.second;
        Vec2 p = pts[i] + Vec2{rng.normal(0.0, sd), rng.normal(0.0, sd)};
        ds.samples.push_back({p, label(p)});
    }

    const double lo = -1.1, hi = 1.1;
    int n = n_grid_per_axis;
    for (int iy = 0; iy < n; iy++) {
        double y = n > 1 ? lo + (hi - lo) * iy / (n - 1) : 0.0;
        for (int ix = 0; ix < n; ix++) {
            double x = n > 1 ? lo + (hi - lo) * ix / (n - 1) : 0.0;
            Vec2 p{x, y};
            ds.samples.push_back({p, label(p)});
        }
    }
    return ds;
}

double nearest_boundary_distance(const KdTree2& boundary, Vec2 query) {
    return boundary.nearest_distance(query);
}

double nearest_boundary_distance(const std::vector<Vec2>& boundary, Vec2 query) {
    return KdTree2(boundary).nearest_distance(query);
}

std::vector<PhysSample> build_phys_points(const Shape& shape, const FieldFn& field, int n_points,
                                          GammaSelector gamma, uint64_t seed) {
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const Vec2& v : shape.outer_loop) {
        xlo = std::min(xlo, v.x);
        xhi = std::max(xhi, v.x);
        ylo = std::min(ylo, v.y);
        yhi = std::max(yhi, v.y);
    }
    Rng rng(seed);
    std::vector<PhysSample> out;
    out.reserve(n_points);
    int consecutive_failures = 0;
    while (static_cast<int>(out.size()) < n_points) {
        Vec2 p{rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)};
        std::optional<std::vector<double>> u;
        if (contains(shape, p)) u = field(p);
        if (!u) {
            if (++consecutive_failures >= 100)
                throw std::runtime_error("build_phys_points: 100 consecutive rejected points for shape " +
                                         std::to_string(shape.shape_id));
            continue;
        }
        consecutive_failures = 0;
        out.push_back({p, distance_to_boundary(shape, p, gamma), std::move(*u)});
    }
    return out;
}

void write_sdf_csv(const std::string& path, const std::vector<SdfDataset>& datasets) {
    std::ostringstream out;
    out << "shape_id,x,y,sdf\n";
    for (const SdfDataset& ds : datasets)
        for (const SdfSample& s : ds.samples)
            out << ds.shape_id << "," << fmt17(s.point.x) << "," << fmt17(s.point.y) << ","
                << fmt17(s.sdf) << "\n";
    write_file(path, out.str());
}

std::vector<SdfDataset> read_sdf_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "shape_id,x,y,sdf")
        throw std::runtime_error("bad sdf csv header in " + path);
    std::vector<SdfDataset> out;
    std::map<int, size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f = split(line, ',');
        if (f.size() != 4) throw std::runtime_error("bad sdf csv row: " + line);
        int id = static_cast<int>(parse_long(f[0]));
        auto it = index.find(id);
        if (it == index.end()) {
            index[id] = out.size();
            out.push_back({id, {}, {}});
            it = index.find(id);
        }
        out[it->second].samples.push_back(
            {{parse_double(f[1]), parse_double(f[2])}, parse_double(f[3])});
    }
    return out;
}

void write_phys_csv(const std::string& path,
                    const std::vector<std::pair<int, std::vector<PhysSample>>>& sets) {
    size_t du = 0;
    for (const auto& [id, samples] : sets)
        if (!samples.empty()) du = samples.front().u.size();
    std::ostringstream out;
    out << "shape_id,x,y,df";
    for (size_t c = 0; c < du; c++) out << ",u" << (c + 1);
    out << "\n";
    for (const auto& [id, samples] : sets)
        for (const PhysSample& s : samples) {
            out << id << "," << fmt17(s.point.x) << "," << fmt17(s.point.y) << ","
                << fmt17(s.df);
            for (double v : s.u) out << "," << fmt17(v);
            out << "\n";
        }
    write_file(path, out.str());
}

std::vector<std::pair<int, std::vector<PhysSample>>> read_phys_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty phys csv " + path);
    std::vector<std::string> header = split(line, ',');
    if (header.size() < 5 || header[0] != "shape_id" || header[3] != "df")
        throw std::runtime_error("bad phys csv header in " + path);
    size_t du = header.size() - 4;
    std::vector<std::pair<int, std::vector<PhysSample>>> out;
    std::map<int, size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f = split(line, ',');
        if (f.size() != 4 + du) throw std::runtime_error("bad phys csv row: " + line);
        int id = static_cast<int>(parse_long(f[0]));
        auto it = index.find(id);
        if (it == index.end()) {
            index[id] = out.size();
            out.push_back({id, {}});
            it = index.find(id);
        }
        PhysSample s;
        s.point = {parse_double(f[1]), parse_double(f[2])};
        s.df = parse_double(f[3]);
        for (size_t c = 0; c < du; c++) s.u.push_back(parse_double(f[4 + c]));
        out[it->second].second.push_back(std::move(s));
    }
    return out;
}

}  // namespace sdfsur
