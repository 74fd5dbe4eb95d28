#include "sdfsur/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

namespace {

constexpr double kBoundaryTol = 1e-12;
constexpr int kResampleLimit = 100;

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    Vec2 ab = b - a;
    double len2 = dot(ab, ab);
    if (len2 == 0.0) return norm(p - a);
    double t = dot(p - a, ab) / len2;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + t * ab));
}

int orientation(Vec2 a, Vec2 b, Vec2 c) {
    double v = cross(b - a, c - a);
    if (v > 0) return 1;
    if (v < 0) return -1;
    return 0;
}

bool on_segment_collinear(Vec2 a, Vec2 b, Vec2 p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
    int o1 = orientation(a, b, c);
    int o2 = orientation(a, b, d);
    int o3 = orientation(c, d, a);
    int o4 = orientation(c, d, b);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment_collinear(a, b, c)) return true;
    if (o2 == 0 && on_segment_collinear(a, b, d)) return true;
    if (o3 == 0 && on_segment_collinear(c, d, a)) return true;
    if (o4 == 0 && on_segment_collinear(c, d, b)) return true;
    return false;
}

bool loop_self_intersects(const Loop& loop) {
    int n = static_cast<int>(loop.size());
    for (int i = 0; i < n; i++) {
        for (int j = i + 1; j < n; j++) {
            // skip segments sharing an endpoint
            if (j == i || j == (i + 1) % n || (j + 1) % n == i) continue;
            if (segments_intersect(loop[i], loop[(i + 1) % n], loop[j], loop[(j + 1) % n]))
                return true;
        }
    }
    return false;
}

bool loops_intersect(const Loop& a, const Loop& b) {
    int na = static_cast<int>(a.size());
    int nb = static_cast<int>(b.size());
    for (int i = 0; i < na; i++)
        for (int j = 0; j < nb; j++)
            if (segments_intersect(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb])) return true;
    return false;
}

// Even-odd crossing count for a horizontal ray from p towards +x. The ray
// ordinate is nudged by 1e-9 (repeatedly if needed) whenever it passes
// exactly through a vertex.
bool even_odd_inside(const std::vector<const Loop*>& loops, Vec2 p) {
    double py = p.y;
    for (int attempt = 0; attempt < 16; attempt++) {
        bool hit_vertex = false;
        for (const Loop* loop : loops)
            for (const Vec2& v : *loop)
                if (v.y == py) hit_vertex = true;
        if (!hit_vertex) break;
        py += 1e-9;
    }
    int crossings = 0;
    for (const Loop* loop : loops) {
        int n = static_cast<int>(loop->size());
        for (int i = 0; i < n; i++) {
            Vec2 a = (*loop)[i];
            Vec2 b = (*loop)[(i + 1) % n];
            if ((a.y > py) != (b.y > py)) {
                double x_int = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
                if (x_int > p.x) crossings++;
            }
        }
    }
    return (crossings % 2) == 1;
}

double min_distance_to_loop(const Loop& loop, Vec2 p) {
    double best = std::numeric_limits<double>::infinity();
    int n = static_cast<int>(loop.size());
    for (int i = 0; i < n; i++)
        best = std::min(best, point_segment_distance(p, loop[i], loop[(i + 1) % n]));
    return best;
}

Loop make_circle(Vec2 center, double radius, int vertices) {
    Loop loop(vertices);
    for (int i = 0; i < vertices; i++) {
        double phi = 2.0 * M_PI * i / vertices;
        loop[i] = {center.x + radius * std::cos(phi), center.y + radius * std::sin(phi)};
    }
    return loop;
}

Loop square_outer() {
    return {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
}

bool angle_in_arc(double phi, double lo, double hi) {
    auto wrap = [](double a) {
        a = std::fmod(a, 2.0 * M_PI);
        return a < 0 ? a + 2.0 * M_PI : a;
    };
    phi = wrap(phi);
    lo = wrap(lo);
    hi = wrap(hi);
    if (lo <= hi) return phi >= lo && phi <= hi;
    return phi >= lo || phi <= hi;
}

Shape build_plate(const ShapeFamilySpec& spec, const std::vector<double>& params, int shape_id) {
    // params: x1,y1,R1,...,xN,yN,RN,N
    if (params.empty()) throw std::invalid_argument("plate params empty");
    int n_holes = static_cast<int>(std::lround(params.back()));
    if (static_cast<int>(params.size()) != 3 * n_holes + 1)
        throw std::invalid_argument("plate params length mismatch");
    Shape s;
    s.shape_id = shape_id;
    s.outer_loop = square_outer();
    for (int h = 0; h < n_holes; h++) {
        Vec2 c{params[3 * h], params[3 * h + 1]};
        double r = params[3 * h + 2];
        s.hole_loops.push_back(make_circle(c, r, spec.circle_vertices));
    }
    s.params = params;
    return s;
}

Shape build_blob(const ShapeFamilySpec& spec, const std::vector<double>& params, int shape_id) {
    // params: cx, cy, r0, a_1..a_H, b_1..b_H
    int H = spec.harmonics;
    if (static_cast<int>(params.size()) != 3 + 2 * H)
        throw std::invalid_argument("blob params length mismatch");
    Vec2 center{params[0], params[1]};
    double r0 = params[2];
    Shape s;
    s.shape_id = shape_id;
    int V = spec.circle_vertices;
    s.outer_loop.resize(V);
    for (int v = 0; v < V; v++) {
        double phi = 2.0 * M_PI * v / V;
        double r = r0;
        for (int n = 1; n <= H; n++)
            r += params[2 + n] * std::cos(n * phi) + params[2 + H + n] * std::sin(n * phi);
        if (r <= 0.0) throw std::invalid_argument("blob radius non-positive");
        s.outer_loop[v] = {center.x + r * std::cos(phi), center.y + r * std::sin(phi)};
    }
    for (int v = 0; v < V; v++) {
        double mid = 2.0 * M_PI * (v + 0.5) / V;
        for (const auto& [lo, hi] : spec.tagged_arcs)
            if (angle_in_arc(mid, lo, hi)) {
                s.non_wall_segments.push_back(v);
                break;
            }
    }
    s.params = params;
    return s;
}

std::vector<double> draw_plate_params(const ShapeFamilySpec& spec, Rng& rng) {
    int count = spec.hole_count_choices[rng.randint(static_cast<int>(spec.hole_count_choices.size()))];
    std::vector<double> p;
    for (int h = 0; h < count; h++) {
        p.push_back(rng.uniform(spec.hole_center.lo, spec.hole_center.hi));
        p.push_back(rng.uniform(spec.hole_center.lo, spec.hole_center.hi));
        p.push_back(rng.uniform(spec.hole_radius.lo, spec.hole_radius.hi));
    }
    p.push_back(static_cast<double>(count));
    return p;
}

bool plate_params_admissible(const ShapeFamilySpec& spec, const std::vector<double>& p) {
    int count = static_cast<int>(std::lround(p.back()));
    for (int i = 0; i < count; i++) {
        Vec2 ci{p[3 * i], p[3 * i + 1]};
        double ri = p[3 * i + 2];
        if (std::max(std::abs(ci.x), std::abs(ci.y)) + ri >= 1.0 - 1e-3) return false;
        for (int j = i + 1; j < count; j++) {
            Vec2 cj{p[3 * j], p[3 * j + 1]};
            double rj = p[3 * j + 2];
            if (norm(ci - cj) <= ri + rj + spec.hole_clearance) return false;
        }
    }
    return true;
}

std::vector<double> draw_blob_params(const ShapeFamilySpec& spec, Rng& rng) {
    std::vector<double> p;
    p.push_back(rng.uniform(spec.blob_center.lo, spec.blob_center.hi));
    p.push_back(rng.uniform(spec.blob_center.lo, spec.blob_center.hi));
    p.push_back(rng.uniform(spec.blob_radius.lo, spec.blob_radius.hi));
    for (int n = 1; n <= spec.harmonics; n++)
        p.push_back(rng.uniform(-spec.harmonic_amp / n, spec.harmonic_amp / n));
    for (int n = 1; n <= spec.harmonics; n++)
        p.push_back(rng.uniform(-spec.harmonic_amp / n, spec.harmonic_amp / n));
    return p;
}

void check_ranges(const ShapeFamilySpec& spec) {
    auto bad = [](ParamRange r) { return r.lo > r.hi; };
    if (bad(spec.hole_radius) || bad(spec.hole_center) || bad(spec.blob_radius) ||
        bad(spec.blob_center))
        throw std::invalid_argument("shape family spec has inverted ranges");
    if (spec.hole_count_choices.empty()) throw std::invalid_argument("empty hole_count_choices");
    if (spec.circle_vertices < 3) throw std::invalid_argument("circle_vertices < 3");
}

}  // namespace

std::string validate_shape(const Shape& shape) {
    if (shape.outer_loop.size() < 3) return "outer loop has fewer than 3 vertices";
    if (loop_self_intersects(shape.outer_loop)) return "outer loop self-intersects";
    for (size_t h = 0; h < shape.hole_loops.size(); h++) {
        const Loop& hole = shape.hole_loops[h];
        if (hole.size() < 3) return "hole loop has fewer than 3 vertices";
        if (loop_self_intersects(hole)) return "hole loop self-intersects";
        if (loops_intersect(shape.outer_loop, hole)) return "hole touches outer loop";
        std::vector<const Loop*> outer{&shape.outer_loop};
        for (const Vec2& v : hole) {
            if (!even_odd_inside(outer, v)) return "hole vertex outside outer loop";
            if (min_distance_to_loop(shape.outer_loop, v) <= kBoundaryTol)
                return "hole vertex on outer loop";
        }
        for (size_t g = h + 1; g < shape.hole_loops.size(); g++) {
            const Loop& other = shape.hole_loops[g];
            if (loops_intersect(hole, other)) return "hole loops intersect";
            std::vector<const Loop*> hl{&hole};
            std::vector<const Loop*> ol{&other};
            if (even_odd_inside(hl, other[0]) || even_odd_inside(ol, hole[0]))
                return "hole loop nested in another hole";
        }
    }
    return "";
}

Shape shape_from_params(const ShapeFamilySpec& spec, const std::vector<double>& params,
                        int shape_id) {
    return spec.family == ShapeFamily::PlateWithHoles ? build_plate(spec, params, shape_id)
                                                      : build_blob(spec, params, shape_id);
}

Shape sample_shape(const ShapeFamilySpec& spec, int index) {
    check_ranges(spec);
    if (index < 0) throw std::invalid_argument("negative shape index");
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(index)));
    for (int attempt = 0; attempt < kResampleLimit; attempt++) {
        std::vector<double> params;
        if (spec.family == ShapeFamily::PlateWithHoles) {
            params = draw_plate_params(spec, rng);
            if (!plate_params_admissible(spec, params)) continue;
        } else {
            params = draw_blob_params(spec, rng);
        }
        Shape s;
        try {
            s = shape_from_params(spec, params, index);
        } catch (const std::invalid_argument&) {
            continue;  // e.g. blob radius dipped below zero
        }
        if (!validate_shape(s).empty()) continue;
        return s;
    }
    throw std::runtime_error("resample limit exceeded for shape index " + std::to_string(index) +
                             " (ranges too tight?)");
}

bool contains(const Shape& shape, Vec2 p) {
    double d = min_distance_to_loop(shape.outer_loop, p);
    for (const Loop& hole : shape.hole_loops) d = std::min(d, min_distance_to_loop(hole, p));
    if (d <= kBoundaryTol) return true;
    std::vector<const Loop*> loops{&shape.outer_loop};
    for (const Loop& hole : shape.hole_loops) loops.push_back(&hole);
    return even_odd_inside(loops, p);
}

double exact_sdf(const Shape& shape, Vec2 p) {
    double d = min_distance_to_loop(shape.outer_loop, p);
    for (const Loop& hole : shape.hole_loops) d = std::min(d, min_distance_to_loop(hole, p));
    return contains(shape, p) ? d : -d;
}

double exact_sdf_holes(const Shape& shape, Vec2 p) {
    if (shape.hole_loops.empty())
        throw std::invalid_argument("exact_sdf_holes: shape has no hole loops");
    double d = std::numeric_limits<double>::infinity();
    bool in_hole = false;
    for (const Loop& hole : shape.hole_loops) {
        d = std::min(d, min_distance_to_loop(hole, p));
        std::vector<const Loop*> hl{&hole};
        if (even_odd_inside(hl, p)) in_hole = true;
    }
    if (d <= kBoundaryTol) return 0.0;
    return in_hole ? -d : d;
}

double distance_to_boundary(const Shape& shape, Vec2 p, GammaSelector gamma) {
    double best = std::numeric_limits<double>::infinity();
    int n = static_cast<int>(shape.outer_loop.size());
    for (int i = 0; i < n; i++) {
        if (gamma == GammaSelector::WallsOnly &&
            std::find(shape.non_wall_segments.begin(), shape.non_wall_segments.end(), i) !=
                shape.non_wall_segments.end())
            continue;
        best = std::min(best,
                        point_segment_distance(p, shape.outer_loop[i], shape.outer_loop[(i + 1) % n]));
    }
    for (const Loop& hole : shape.hole_loops) best = std::min(best, min_distance_to_loop(hole, p));
    return best;
}

double loop_area(const Loop& loop) {
    double a = 0.0;
    int n = static_cast<int>(loop.size());
    for (int i = 0; i < n; i++) a += cross(loop[i], loop[(i + 1) % n]);
    return 0.5 * a;
}

Vec2 loop_centroid(const Loop& loop) {
    double a = loop_area(loop);
    if (a == 0.0) throw std::invalid_argument("degenerate loop");
    double cx = 0.0, cy = 0.0;
    int n = static_cast<int>(loop.size());
    for (int i = 0; i < n; i++) {
        Vec2 p = loop[i], q = loop[(i + 1) % n];
        double w = cross(p, q);
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    return {cx / (6.0 * a), cy / (6.0 * a)};
}

Vec2 shape_centroid(const Shape& shape, bool holes_only) {
    if (!holes_only) return loop_centroid(shape.outer_loop);
    if (shape.hole_loops.empty())
        throw std::invalid_argument("shape_centroid: no hole loops");
    double total = 0.0;
    Vec2 acc{0, 0};
    for (const Loop& hole : shape.hole_loops) {
        double a = std::abs(loop_area(hole));
        Vec2 c = loop_centroid(hole);
        acc = acc + a * c;
        total += a;
    }
    return {acc.x / total, acc.y / total};
}

namespace {

struct Segment {
    Vec2 a, b;
};

std::vector<Segment> selected_segments(const Shape& shape, GammaSelector gamma, bool holes_only) {
    std::vector<Segment> segs;
    if (!holes_only) {
        int n = static_cast<int>(shape.outer_loop.size());
        for (int i = 0; i < n; i++) {
            if (gamma == GammaSelector::WallsOnly &&
                std::find(shape.non_wall_segments.begin(), shape.non_wall_segments.end(), i) !=
                    shape.non_wall_segments.end())
                continue;
            segs.push_back({shape.outer_loop[i], shape.outer_loop[(i + 1) % n]});
        }
    }
    for (const Loop& hole : shape.hole_loops) {
        int n = static_cast<int>(hole.size());
        for (int i = 0; i < n; i++) segs.push_back({hole[i], hole[(i + 1) % n]});
    }
    return segs;
}

std::vector<Vec2> sample_segments(const std::vector<Segment>& segs, int n, Rng* rng) {
    std::vector<double> cum;
    double total = 0.0;
    for (const Segment& s : segs) {
        total += norm(s.b - s.a);
        cum.push_back(total);
    }
    if (total <= 0.0) throw std::invalid_argument("empty boundary");
    std::vector<Vec2> pts;
    pts.reserve(n);
    for (int i = 0; i < n; i++) {
        double t = rng ? rng->uniform(0.0, total) : (i + 0.5) * total / n;
        auto it = std::lower_bound(cum.begin(), cum.end(), t);
        size_t idx = std::min(static_cast<size_t>(it - cum.begin()), segs.size() - 1);
        double prev = idx == 0 ? 0.0 : cum[idx - 1];
        double local = (t - prev) / (cum[idx] - prev);
        const Segment& s = segs[idx];
        pts.push_back(s.a + local * (s.b - s.a));
    }
    return pts;
}

}  // namespace

double boundary_length(const Shape& shape, GammaSelector gamma) {
    double total = 0.0;
    for (const Segment& s : selected_segments(shape, gamma, false)) total += norm(s.b - s.a);
    return total;
}

std::vector<Vec2> sample_boundary(const Shape& shape, GammaSelector gamma, int n, Rng* rng) {
    return sample_segments(selected_segments(shape, gamma, false), n, rng);
}

std::vector<Vec2> sample_hole_boundary(const Shape& shape, int n, Rng* rng) {
    return sample_segments(selected_segments(shape, GammaSelector::All, true), n, rng);
}

std::string shape_to_record(const Shape& shape) {
    std::ostringstream out;
    out << shape.shape_id << ";";
    if (shape.params.empty()) {
        out << "-";
    } else {
        for (size_t i = 0; i < shape.params.size(); i++)
            out << (i ? "," : "") << fmt17(shape.params[i]);
    }
    out << ";" << (1 + shape.hole_loops.size());
    auto emit_loop = [&out](const Loop& loop) {
        out << ";" << loop.size();
        for (const Vec2& v : loop) out << ";" << fmt17(v.x) << "," << fmt17(v.y);
    };
    emit_loop(shape.outer_loop);
    for (const Loop& hole : shape.hole_loops) emit_loop(hole);
    return out.str();
}

Shape shape_from_record(const std::string& line) {
    std::vector<std::string> f = split(line, ';');
    if (f.size() < 4) throw std::runtime_error("bad shape record");
    Shape s;
    size_t i = 0;
    s.shape_id = static_cast<int>(parse_long(f[i++]));
    if (f[i] != "-")
        for (const std::string& tok : split(f[i], ',')) s.params.push_back(parse_double(tok));
    i++;
    long loop_count = parse_long(f[i++]);
    for (long l = 0; l < loop_count; l++) {
        long nv = parse_long(f.at(i++));
        Loop loop;
        loop.reserve(nv);
        for (long v = 0; v < nv; v++) {
            std::vector<std::string> xy = split(f.at(i++), ',');
            if (xy.size() != 2) throw std::runtime_error("bad vertex field");
            loop.push_back({parse_double(xy[0]), parse_double(xy[1])});
        }
        if (l == 0)
            s.outer_loop = std::move(loop);
        else
            s.hole_loops.push_back(std::move(loop));
    }
    return s;
}

void write_shapes(const std::string& path, const std::vector<Shape>& shapes) {
    std::ostringstream out;
    for (const Shape& s : shapes) out << shape_to_record(s) << "\n";
    write_file(path, out.str());
}

std::vector<Shape> read_shapes(const std::string& path) {
    std::vector<Shape> shapes;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        shapes.push_back(shape_from_record(line));
    }
    return shapes;
}

}  // namespace sdfsur
