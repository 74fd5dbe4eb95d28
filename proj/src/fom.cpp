#include "sdfsur/fom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"

namespace sdfsur {

namespace {

constexpr double kCgTol = 1e-10;

enum class NodeKind : uint8_t { Out, Fixed, Free };

struct FdSystem {
    std::vector<NodeKind> kind;
    std::vector<double> fixed;      // Dirichlet value for Fixed nodes
    std::vector<int> free_index;    // node -> unknown index, -1 otherwise
    std::vector<int> free_node;     // unknown index -> node
    // CSR-style rows over the unknowns
    std::vector<int> row_start;
    std::vector<int> cols;
    std::vector<double> coeffs;
    std::vector<double> diag;
    std::vector<double> rhs;
};

// Mirror-ghost Neumann rows get half weight so the assembled matrix stays
// symmetric positive definite.
double row_weight(FomProblem problem, int iy, int n) {
    if (problem == FomProblem::DiffusionLeftRight && (iy == 0 || iy == n - 1)) return 0.5;
    return 1.0;
}

FdSystem assemble(const MaskedGrid& grid, FomProblem problem, double source_scale) {
    const int n = grid.n;
    const double inv_h2 = 1.0 / (grid.h * grid.h);
    const size_t total = static_cast<size_t>(n) * n;

    FdSystem sys;
    sys.kind.assign(total, NodeKind::Out);
    sys.fixed.assign(total, 0.0);
    sys.free_index.assign(total, -1);

    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            if (!grid.in(ix, iy)) continue;
            const size_t id = static_cast<size_t>(iy) * n + ix;
            const bool border = ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1;
            if (problem == FomProblem::PoissonUnitSource) {
                if (border) {
                    sys.kind[id] = NodeKind::Fixed;  // outer faces are part of the boundary
                } else {
                    sys.kind[id] = NodeKind::Free;
                }
            } else {
                if (ix == 0) {
                    sys.kind[id] = NodeKind::Fixed;
                    sys.fixed[id] = 1.0;
                } else if (ix == n - 1) {
                    sys.kind[id] = NodeKind::Fixed;
                } else {
                    sys.kind[id] = NodeKind::Free;  // includes mirror-ghost y faces
                }
            }
            if (sys.kind[id] == NodeKind::Free) {
                sys.free_index[id] = static_cast<int>(sys.free_node.size());
                sys.free_node.push_back(static_cast<int>(id));
            }
        }
    }

    const int unknowns = static_cast<int>(sys.free_node.size());
    sys.row_start.assign(unknowns + 1, 0);
    sys.diag.assign(unknowns, 0.0);
    sys.rhs.assign(unknowns, 0.0);

    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    for (int u = 0; u < unknowns; ++u) {
        const int node = sys.free_node[u];
        const int ix = node % n;
        const int iy = node / n;
        const double w = row_weight(problem, iy, n);
        sys.rhs[u] = problem == FomProblem::PoissonUnitSource ? w * source_scale : 0.0;
        for (int d = 0; d < 4; ++d) {
            int jx = ix + dx[d];
            int jy = iy + dy[d];
            sys.diag[u] += w * inv_h2;
            if (jx < 0 || jy < 0 || jx >= n || jy >= n) {
                // off the grid: mirror ghost duplicates the opposite neighbor
                jx = ix - dx[d];
                jy = iy - dy[d];
            }
            const size_t nb = static_cast<size_t>(jy) * n + jx;
            switch (sys.kind[nb]) {
                case NodeKind::Out:
                    break;  // zero ghost on the staircase boundary
                case NodeKind::Fixed:
                    sys.rhs[u] += w * inv_h2 * sys.fixed[nb];
                    break;
                case NodeKind::Free:
                    sys.cols.push_back(sys.free_index[nb]);
                    sys.coeffs.push_back(-w * inv_h2);
                    break;
            }
        }
        sys.row_start[u + 1] = static_cast<int>(sys.cols.size());
    }
    return sys;
}

// Jacobi-preconditioned CG on one connected component (a subset of rows).
// Vectors are full-length; only component entries are touched.
bool cg_component(const FdSystem& sys, const std::vector<int>& comp, std::vector<double>& x) {
    const int m = static_cast<int>(comp.size());
    std::vector<double> r(m), z(m), p(m), ap(m);
    std::vector<int> local(sys.diag.size(), -1);
    for (int i = 0; i < m; ++i) local[comp[i]] = i;

    const auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (int i = 0; i < m; ++i) {
            const int row = comp[i];
            double acc = sys.diag[row] * v[i];
            for (int e = sys.row_start[row]; e < sys.row_start[row + 1]; ++e)
                acc += sys.coeffs[e] * v[local[sys.cols[e]]];
            out[i] = acc;
        }
    };

    double b_norm2 = 0.0;
    for (int i = 0; i < m; ++i) {
        r[i] = sys.rhs[comp[i]];  // x starts at zero
        b_norm2 += r[i] * r[i];
    }
    if (b_norm2 == 0.0) {
        for (int i = 0; i < m; ++i) x[comp[i]] = 0.0;
        return true;
    }
    const double target2 = kCgTol * kCgTol * b_norm2;

    std::vector<double> xs(m, 0.0);
    double rz = 0.0;
    for (int i = 0; i < m; ++i) {
        z[i] = r[i] / sys.diag[comp[i]];
        p[i] = z[i];
        rz += r[i] * z[i];
    }

    const long max_iters = 50L * m;
    for (long it = 0; it < max_iters; ++it) {
        double r_norm2 = 0.0;
        for (int i = 0; i < m; ++i) r_norm2 += r[i] * r[i];
        if (r_norm2 <= target2) {
            for (int i = 0; i < m; ++i) x[comp[i]] = xs[i];
            return true;
        }
        apply(p, ap);
        double pap = 0.0;
        for (int i = 0; i < m; ++i) pap += p[i] * ap[i];
        if (!(pap > 0.0)) return false;
        const double alpha = rz / pap;
        for (int i = 0; i < m; ++i) {
            xs[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rz_new = 0.0;
        for (int i = 0; i < m; ++i) {
            z[i] = r[i] / sys.diag[comp[i]];
            rz_new += r[i] * z[i];
        }
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < m; ++i) p[i] = z[i] + beta * p[i];
    }
    double r_norm2 = 0.0;
    for (int i = 0; i < m; ++i) r_norm2 += r[i] * r[i];
    if (r_norm2 <= target2) {
        for (int i = 0; i < m; ++i) x[comp[i]] = xs[i];
        return true;
    }
    return false;
}

std::vector<std::vector<int>> connected_components(const FdSystem& sys) {
    const int unknowns = static_cast<int>(sys.diag.size());
    std::vector<int> label(unknowns, -1);
    std::vector<std::vector<int>> comps;
    std::vector<int> stack;
    for (int s = 0; s < unknowns; ++s) {
        if (label[s] >= 0) continue;
        const int id = static_cast<int>(comps.size());
        comps.emplace_back();
        stack.push_back(s);
        label[s] = id;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            comps[id].push_back(u);
            for (int e = sys.row_start[u]; e < sys.row_start[u + 1]; ++e) {
                const int v = sys.cols[e];
                if (label[v] < 0) {
                    label[v] = id;
                    stack.push_back(v);
                }
            }
        }
        std::sort(comps[id].begin(), comps[id].end());
    }
    return comps;
}

}  // namespace

std::string fom_problem_to_string(FomProblem p) {
    switch (p) {
        case FomProblem::PoissonUnitSource:
            return "POISSON_UNIT_SOURCE";
        case FomProblem::DiffusionLeftRight:
            return "DIFFUSION_LEFT_RIGHT";
    }
    throw std::logic_error("unknown fom problem");
}

FomProblem fom_problem_from_string(const std::string& s) {
    if (s == "POISSON_UNIT_SOURCE") return FomProblem::PoissonUnitSource;
    if (s == "DIFFUSION_LEFT_RIGHT") return FomProblem::DiffusionLeftRight;
    throw std::invalid_argument("unknown fom problem: " + s);
}

MaskedGrid build_masked_grid(const Shape& shape, double h) {
    if (!(h > 0.0) || h > 1.0) throw std::invalid_argument("fom spacing out of range");
    MaskedGrid grid;
    grid.n = static_cast<int>(std::lround(2.0 / h)) + 1;
    grid.h = 2.0 / (grid.n - 1);
    grid.mask.assign(static_cast<size_t>(grid.n) * grid.n, 0);
    for (int iy = 0; iy < grid.n; ++iy)
        for (int ix = 0; ix < grid.n; ++ix)
            grid.mask[static_cast<size_t>(iy) * grid.n + ix] =
                contains(shape, grid.node(ix, iy)) ? 1 : 0;

    // prune nodes with no inside neighbor until stable
    bool changed = true;
    while (changed) {
        changed = false;
        for (int iy = 0; iy < grid.n; ++iy) {
            for (int ix = 0; ix < grid.n; ++ix) {
                if (!grid.in(ix, iy)) continue;
                if (grid.in(ix + 1, iy) || grid.in(ix - 1, iy) || grid.in(ix, iy + 1) ||
                    grid.in(ix, iy - 1))
                    continue;
                grid.mask[static_cast<size_t>(iy) * grid.n + ix] = 0;
                changed = true;
            }
        }
    }
    return grid;
}

FomField solve_fom(const Shape& shape, FomProblem problem, double h, double source_scale) {
    FomField field;
    field.problem = problem;
    field.grid = build_masked_grid(shape, h);
    field.values.assign(field.grid.mask.size(), 0.0);

    const FdSystem sys = assemble(field.grid, problem, source_scale);
    std::vector<double> x(sys.diag.size(), 0.0);
    const auto comps = connected_components(sys);
    if (comps.size() > 1)
        log_info("fom solve: " + std::to_string(comps.size()) + " disconnected components");
    for (size_t c = 0; c < comps.size(); ++c) {
        if (!cg_component(sys, comps[c], x))
            throw std::runtime_error("fom solve: conjugate gradient failed to converge (component " +
                                     std::to_string(c) + ")");
    }

    for (size_t u = 0; u < x.size(); ++u) field.values[sys.free_node[u]] = x[u];
    for (size_t id = 0; id < sys.kind.size(); ++id)
        if (sys.kind[id] == NodeKind::Fixed) field.values[id] = sys.fixed[id];
    return field;
}

double interpolate(const FomField& field, Vec2 p) {
    const MaskedGrid& g = field.grid;
    const double h = g.h;
    const auto clamp_cell = [&](double v) {
        return std::min(g.n - 2, std::max(0, static_cast<int>(std::floor(v))));
    };
    const int ix = clamp_cell((p.x + 1.0) / h);
    const int iy = clamp_cell((p.y + 1.0) / h);

    const auto cell_inside = [&](int cx, int cy) {
        return cx >= 0 && cy >= 0 && cx + 1 < g.n && cy + 1 < g.n && g.in(cx, cy) &&
               g.in(cx + 1, cy) && g.in(cx, cy + 1) && g.in(cx + 1, cy + 1);
    };
    const auto cell_distance = [&](int cx, int cy) {
        const double lox = -1.0 + h * cx, loy = -1.0 + h * cy;
        const double dx = std::max({lox - p.x, 0.0, p.x - (lox + h)});
        const double dy = std::max({loy - p.y, 0.0, p.y - (loy + h)});
        return std::sqrt(dx * dx + dy * dy);
    };

    int bx = ix, by = iy;
    if (!cell_inside(ix, iy)) {
        double best = std::numeric_limits<double>::infinity();
        for (int cy = iy - 3; cy <= iy + 3; ++cy) {
            for (int cx = ix - 3; cx <= ix + 3; ++cx) {
                if (!cell_inside(cx, cy)) continue;
                const double d = cell_distance(cx, cy);
                if (d < best) {
                    best = d;
                    bx = cx;
                    by = cy;
                }
            }
        }
        if (best > 2.0 * h)
            throw std::runtime_error("interpolate: no inside cell within 2h of the query point");
    }

    const double tx = (p.x - (-1.0 + h * bx)) / h;
    const double ty = (p.y - (-1.0 + h * by)) / h;
    const double v00 = field.at(bx, by);
    const double v10 = field.at(bx + 1, by);
    const double v01 = field.at(bx, by + 1);
    const double v11 = field.at(bx + 1, by + 1);
    return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
}

FieldFn fom_field_fn(const FomField& field) {
    return [&field](Vec2 p) -> std::optional<std::vector<double>> {
        try {
            return std::vector<double>{interpolate(field, p)};
        } catch (const std::runtime_error&) {
            return std::nullopt;
        }
    };
}

void write_fom_csv(const std::string& path, const FomField& field) {
    std::ostringstream out;
    out << "# problem=" << fom_problem_to_string(field.problem) << " h=" << fmt17(field.grid.h)
        << "\n";
    out << "x,y,u\n";
    for (int iy = 0; iy < field.grid.n; ++iy) {
        for (int ix = 0; ix < field.grid.n; ++ix) {
            if (!field.grid.in(ix, iy)) continue;
            const Vec2 p = field.grid.node(ix, iy);
            out << fmt17(p.x) << "," << fmt17(p.y) << "," << fmt17(field.at(ix, iy)) << "\n";
        }
    }
    write_file(path, out.str());
}

}  // namespace sdfsur
