#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sdfsur/rng.hpp"

namespace sdfsur {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

using Loop = std::vector<Vec2>;

// Closed polygonal domain in the [-1,1]^2 working frame: one outer loop,
// optional hole loops. Immutable after construction.
struct Shape {
    int shape_id = 0;
    Loop outer_loop;
    std::vector<Loop> hole_loops;
    // Generating parameters when the family provides them, else empty.
    std::vector<double> params;
    // Outer-loop segment indices excluded from the wall boundary (inflow /
    // outflow arcs). Not serialized; re-derived from the family spec.
    std::vector<int> non_wall_segments;
};

enum class ShapeFamily { PlateWithHoles, BlobFourier };

struct ParamRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Sampling recipe for a parametric shape family. Ranges may be point values
// (lo == hi); lo > hi is rejected at validation.
struct ShapeFamilySpec {
    ShapeFamily family = ShapeFamily::PlateWithHoles;
    uint64_t seed = 0;
    int circle_vertices = 256;

    // PlateWithHoles: outer square [-1,1]^2 with N circular holes. Weighted
    // hole counts are expressed by repetition, e.g. {1,1,1,1,1,1,1,2,2,2}
    // draws one hole 70% of the time.
    std::vector<int> hole_count_choices = {2};
    ParamRange hole_radius = {0.15, 0.3};
    ParamRange hole_center = {-0.5, 0.5};
    double hole_clearance = 0.1;  // min rim-to-rim distance between holes

    // BlobFourier: star-shaped boundary r(phi) = r0 + sum a_n cos(n phi)
    // + b_n sin(n phi) about a movable center. harmonics = 0 gives circles.
    int harmonics = 5;
    ParamRange blob_radius = {0.2, 0.5};
    ParamRange blob_center = {0.0, 0.0};
    double harmonic_amp = 0.05;  // a_n, b_n ~ U(-amp/n, amp/n)
    // Angular ranges (radians) tagged as inflow/outflow, excluded from the
    // wall boundary under GammaSelector::WallsOnly.
    std::vector<std::pair<double, double>> tagged_arcs;
};

// Boundary subset used for distance-function features.
enum class GammaSelector { All, WallsOnly };

// --- validation ---------------------------------------------------------

// Empty string when valid, else a reason.
std::string validate_shape(const Shape& shape);

// --- family construction -------------------------------------------------

// Rebuilds the vertex set from explicit parameters (round-trip support).
Shape shape_from_params(const ShapeFamilySpec& spec, const std::vector<double>& params,
                        int shape_id);

// Deterministic given (spec.seed, index). Throws std::runtime_error after
// 100 consecutive invalid candidates.
Shape sample_shape(const ShapeFamilySpec& spec, int index);

// --- queries -------------------------------------------------------------

// Even-odd membership; points within 1e-12 of any edge count as inside.
bool contains(const Shape& shape, Vec2 p);

// Signed distance to the full boundary, positive inside the domain.
double exact_sdf(const Shape& shape, Vec2 p);

// Signed distance to hole boundaries only (outer loop ignored): negative
// inside a hole, positive elsewhere. Used for datasets that drop a shared
// outer frame from SDF labeling.
double exact_sdf_holes(const Shape& shape, Vec2 p);

// Distance to the selected boundary subset (unsigned).
double distance_to_boundary(const Shape& shape, Vec2 p, GammaSelector gamma);

// --- derived quantities --------------------------------------------------

double loop_area(const Loop& loop);
Vec2 loop_centroid(const Loop& loop);  // shoelace area centroid

// Centroid of the region whose boundary is being learned: the outer loop
// normally, the hole region when the outer frame is excluded.
Vec2 shape_centroid(const Shape& shape, bool holes_only);

double boundary_length(const Shape& shape, GammaSelector gamma);

// n points uniform by arc length over the selected boundary; evenly spaced
// when rng is null, random otherwise.
std::vector<Vec2> sample_boundary(const Shape& shape, GammaSelector gamma, int n, Rng* rng);

// Like sample_boundary but over hole loops only.
std::vector<Vec2> sample_hole_boundary(const Shape& shape, int n, Rng* rng);

// --- serialization (shapes.txt) ------------------------------------------
// One line per shape: shape_id; params csv or "-"; loop_count; then per loop
// a vertex-count field followed by one x,y field per vertex.

std::string shape_to_record(const Shape& shape);
Shape shape_from_record(const std::string& line);
void write_shapes(const std::string& path, const std::vector<Shape>& shapes);
std::vector<Shape> read_shapes(const std::string& path);

}  // namespace sdfsur
