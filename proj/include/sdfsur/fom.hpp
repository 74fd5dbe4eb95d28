#pragma once

#include <string>
#include <vector>

#include "sdfsur/geometry.hpp"
#include "sdfsur/sdf_dataset.hpp"

namespace sdfsur {

enum class FomProblem { PoissonUnitSource, DiffusionLeftRight };

std::string fom_problem_to_string(FomProblem p);
FomProblem fom_problem_from_string(const std::string& s);

// Square node grid over the [-1,1]^2 working frame; node (ix, iy) sits at
// (-1 + h*ix, -1 + h*iy). mask marks nodes inside the domain; isolated
// inside nodes (no inside neighbor) are pruned.
struct MaskedGrid {
    int n = 0;
    double h = 0.0;
    std::vector<uint8_t> mask;

    bool in(int ix, int iy) const {
        return ix >= 0 && iy >= 0 && ix < n && iy < n && mask[static_cast<size_t>(iy) * n + ix];
    }
    Vec2 node(int ix, int iy) const { return {-1.0 + h * ix, -1.0 + h * iy}; }
};

struct FomField {
    MaskedGrid grid;
    std::vector<double> values;  // per node, zero outside the mask
    FomProblem problem = FomProblem::PoissonUnitSource;

    double at(int ix, int iy) const { return values[static_cast<size_t>(iy) * grid.n + ix]; }
};

MaskedGrid build_masked_grid(const Shape& shape, double h);

// 5-point Laplacian on the masked nodes, first-order staircase boundaries
// (nearest outside neighbor acts as a zero ghost). PoissonUnitSource solves
// -lap u = source_scale with u = 0 on the whole boundary. DiffusionLeftRight
// solves lap u = 0 with u = 1 on the x = -1 face, u = 0 on the x = +1 face
// and on hole boundaries, mirror-ghost Neumann on the other outer faces.
// Jacobi-preconditioned conjugate gradient to relative residual 1e-10,
// solved independently per connected component.
FomField solve_fom(const Shape& shape, FomProblem problem, double h, double source_scale = 1.0);

// Bilinear interpolation over the cell containing p when all four corners
// are inside; otherwise the nearest fully-inside cell within 2h is used
// (extrapolating). Throws when no such cell exists.
double interpolate(const FomField& field, Vec2 p);

// Adapter for phys-dataset building: nullopt where interpolation fails.
// The field must outlive the returned function.
FieldFn fom_field_fn(const FomField& field);

// fom_{id}.csv: metadata comment line, then x,y,u rows for inside nodes.
void write_fom_csv(const std::string& path, const FomField& field);

}  // namespace sdfsur
