#include "sdfsur/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sdfsur/io_util.hpp"
#include "sdfsur/sdf_dataset.hpp"

namespace sdfsur {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// --- config field formatting -------------------------------------------

std::string ints_str(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    if (trim(s).empty()) return out;
    for (const std::string& tok : split(s, ',')) out.push_back(static_cast<int>(parse_long(trim(tok))));
    return out;
}

std::string range_str(ParamRange r) { return fmt17(r.lo) + "," + fmt17(r.hi); }

ParamRange parse_range(const std::string& s) {
    auto parts = split(s, ',');
    if (parts.size() != 2) throw std::runtime_error("expected lo,hi");
    return {parse_double(trim(parts[0])), parse_double(trim(parts[1]))};
}

std::string bool_str(bool b) { return b ? "1" : "0"; }

bool parse_bool(const std::string& s) {
    const std::string t = trim(s);
    if (t == "0") return false;
    if (t == "1") return true;
    throw std::runtime_error("expected 0 or 1");
}

std::string arcs_str(const std::vector<std::pair<double, double>>& arcs) {
    std::string out;
    for (size_t i = 0; i < arcs.size(); ++i) {
        if (i) out += ',';
        out += fmt17(arcs[i].first) + ":" + fmt17(arcs[i].second);
    }
    return out;
}

std::vector<std::pair<double, double>> parse_arcs(const std::string& s) {
    std::vector<std::pair<double, double>> out;
    if (trim(s).empty()) return out;
    for (const std::string& tok : split(s, ',')) {
        auto parts = split(tok, ':');
        if (parts.size() != 2) throw std::runtime_error("expected lo:hi pairs");
        out.emplace_back(parse_double(trim(parts[0])), parse_double(trim(parts[1])));
    }
    return out;
}

std::string strings_str(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += v[i];
    }
    return out;
}

std::vector<std::string> parse_strings(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    for (const std::string& tok : split(s, ',')) out.push_back(trim(tok));
    return out;
}

struct Binding {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = [] {
        std::vector<Binding> b;
        auto add = [&b](const char* key, std::function<std::string(const RunConfig&)> get,
                        std::function<void(RunConfig&, const std::string&)> set) {
            b.push_back({key, std::move(get), std::move(set)});
        };

        add("run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(parse_long(v)); });
        add("run.out", [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, const std::string& v) { c.out_dir = v; });
        add("run.jobs", [](const RunConfig& c) { return std::to_string(c.jobs); },
            [](RunConfig& c, const std::string& v) { c.jobs = static_cast<int>(parse_long(v)); });

        add("family.kind", [](const RunConfig& c) { return family_to_string(c.family.family); },
            [](RunConfig& c, const std::string& v) { c.family.family = family_from_string(v); });
        add("family.circle_vertices",
            [](const RunConfig& c) { return std::to_string(c.family.circle_vertices); },
            [](RunConfig& c, const std::string& v) {
                c.family.circle_vertices = static_cast<int>(parse_long(v));
            });
        add("family.hole_count_choices",
            [](const RunConfig& c) { return ints_str(c.family.hole_count_choices); },
            [](RunConfig& c, const std::string& v) { c.family.hole_count_choices = parse_ints(v); });
        add("family.hole_radius", [](const RunConfig& c) { return range_str(c.family.hole_radius); },
            [](RunConfig& c, const std::string& v) { c.family.hole_radius = parse_range(v); });
        add("family.hole_center", [](const RunConfig& c) { return range_str(c.family.hole_center); },
            [](RunConfig& c, const std::string& v) { c.family.hole_center = parse_range(v); });
        add("family.hole_clearance",
            [](const RunConfig& c) { return fmt17(c.family.hole_clearance); },
            [](RunConfig& c, const std::string& v) { c.family.hole_clearance = parse_double(v); });
        add("family.harmonics", [](const RunConfig& c) { return std::to_string(c.family.harmonics); },
            [](RunConfig& c, const std::string& v) {
                c.family.harmonics = static_cast<int>(parse_long(v));
            });
        add("family.blob_radius", [](const RunConfig& c) { return range_str(c.family.blob_radius); },
            [](RunConfig& c, const std::string& v) { c.family.blob_radius = parse_range(v); });
        add("family.blob_center", [](const RunConfig& c) { return range_str(c.family.blob_center); },
            [](RunConfig& c, const std::string& v) { c.family.blob_center = parse_range(v); });
        add("family.harmonic_amp",
            [](const RunConfig& c) { return fmt17(c.family.harmonic_amp); },
            [](RunConfig& c, const std::string& v) { c.family.harmonic_amp = parse_double(v); });
        add("family.tagged_arcs", [](const RunConfig& c) { return arcs_str(c.family.tagged_arcs); },
            [](RunConfig& c, const std::string& v) { c.family.tagged_arcs = parse_arcs(v); });

        add("data.n_train", [](const RunConfig& c) { return std::to_string(c.n_train); },
            [](RunConfig& c, const std::string& v) { c.n_train = static_cast<int>(parse_long(v)); });
        add("data.n_phys", [](const RunConfig& c) { return std::to_string(c.n_phys); },
            [](RunConfig& c, const std::string& v) { c.n_phys = static_cast<int>(parse_long(v)); });
        add("data.n_test", [](const RunConfig& c) { return std::to_string(c.n_test); },
            [](RunConfig& c, const std::string& v) { c.n_test = static_cast<int>(parse_long(v)); });
        add("data.n_boundary", [](const RunConfig& c) { return std::to_string(c.n_boundary); },
            [](RunConfig& c, const std::string& v) {
                c.n_boundary = static_cast<int>(parse_long(v));
            });
        add("data.n_grid", [](const RunConfig& c) { return std::to_string(c.n_grid); },
            [](RunConfig& c, const std::string& v) { c.n_grid = static_cast<int>(parse_long(v)); });
        add("data.noise_sd1", [](const RunConfig& c) { return fmt17(c.noise_sd1); },
            [](RunConfig& c, const std::string& v) { c.noise_sd1 = parse_double(v); });
        add("data.noise_sd2", [](const RunConfig& c) { return fmt17(c.noise_sd2); },
            [](RunConfig& c, const std::string& v) { c.noise_sd2 = parse_double(v); });
        add("data.exclude_outer", [](const RunConfig& c) { return bool_str(c.exclude_outer); },
            [](RunConfig& c, const std::string& v) { c.exclude_outer = parse_bool(v); });

        add("sdf.k", [](const RunConfig& c) { return std::to_string(c.sdf.k); },
            [](RunConfig& c, const std::string& v) { c.sdf.k = static_cast<int>(parse_long(v)); });
        add("sdf.hidden", [](const RunConfig& c) { return ints_str(c.sdf.hidden); },
            [](RunConfig& c, const std::string& v) { c.sdf.hidden = parse_ints(v); });
        add("sdf.activation",
            [](const RunConfig& c) { return activation_to_string(c.sdf.activation); },
            [](RunConfig& c, const std::string& v) { c.sdf.activation = activation_from_string(v); });
        add("sdf.loss", [](const RunConfig& c) { return loss_kind_to_string(c.sdf.loss.kind); },
            [](RunConfig& c, const std::string& v) { c.sdf.loss.kind = loss_kind_from_string(v); });
        add("sdf.beta", [](const RunConfig& c) { return fmt17(c.sdf.loss.beta); },
            [](RunConfig& c, const std::string& v) { c.sdf.loss.beta = parse_double(v); });
        add("sdf.sigma", [](const RunConfig& c) { return fmt17(c.sdf.loss.sigma); },
            [](RunConfig& c, const std::string& v) { c.sdf.loss.sigma = parse_double(v); });
        add("sdf.centralize", [](const RunConfig& c) { return bool_str(c.sdf.centralize); },
            [](RunConfig& c, const std::string& v) { c.sdf.centralize = parse_bool(v); });
        add("sdf.fourier_m", [](const RunConfig& c) { return std::to_string(c.sdf.fourier_m); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.fourier_m = static_cast<int>(parse_long(v));
            });
        add("sdf.fourier_sigma", [](const RunConfig& c) { return fmt17(c.sdf.fourier_sigma); },
            [](RunConfig& c, const std::string& v) { c.sdf.fourier_sigma = parse_double(v); });
        add("sdf.adam_epochs",
            [](const RunConfig& c) { return std::to_string(c.sdf.schedule.adam_epochs); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.schedule.adam_epochs = static_cast<int>(parse_long(v));
            });
        add("sdf.decoder_lr", [](const RunConfig& c) { return fmt17(c.sdf.schedule.decoder_lr); },
            [](RunConfig& c, const std::string& v) { c.sdf.schedule.decoder_lr = parse_double(v); });
        add("sdf.code_lr_unit",
            [](const RunConfig& c) { return fmt17(c.sdf.schedule.code_lr_unit); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.schedule.code_lr_unit = parse_double(v);
            });
        add("sdf.batch_shapes",
            [](const RunConfig& c) { return std::to_string(c.sdf.schedule.batch_shapes); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.schedule.batch_shapes = static_cast<int>(parse_long(v));
            });
        add("sdf.subsample",
            [](const RunConfig& c) { return std::to_string(c.sdf.schedule.subsample_per_shape); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.schedule.subsample_per_shape = static_cast<int>(parse_long(v));
            });
        add("sdf.lbfgs_max_iters",
            [](const RunConfig& c) { return std::to_string(c.sdf.schedule.lbfgs_max_iters); },
            [](RunConfig& c, const std::string& v) {
                c.sdf.schedule.lbfgs_max_iters = static_cast<int>(parse_long(v));
            });
        add("sdf.lbfgs_tol", [](const RunConfig& c) { return fmt17(c.sdf.schedule.lbfgs_tol); },
            [](RunConfig& c, const std::string& v) { c.sdf.schedule.lbfgs_tol = parse_double(v); });

        add("infer.restarts", [](const RunConfig& c) { return std::to_string(c.infer_restarts); },
            [](RunConfig& c, const std::string& v) {
                c.infer_restarts = static_cast<int>(parse_long(v));
            });
        add("infer.lbfgs_max_iters",
            [](const RunConfig& c) { return std::to_string(c.infer_lbfgs_max_iters); },
            [](RunConfig& c, const std::string& v) {
                c.infer_lbfgs_max_iters = static_cast<int>(parse_long(v));
            });
        add("infer.lbfgs_tol", [](const RunConfig& c) { return fmt17(c.infer_lbfgs_tol); },
            [](RunConfig& c, const std::string& v) { c.infer_lbfgs_tol = parse_double(v); });

        add("fom.problem", [](const RunConfig& c) { return fom_problem_to_string(c.problem); },
            [](RunConfig& c, const std::string& v) { c.problem = fom_problem_from_string(v); });
        add("fom.h", [](const RunConfig& c) { return fmt17(c.h); },
            [](RunConfig& c, const std::string& v) { c.h = parse_double(v); });

        add("phys.hidden", [](const RunConfig& c) { return ints_str(c.phys_hidden); },
            [](RunConfig& c, const std::string& v) { c.phys_hidden = parse_ints(v); });
        add("phys.use_df", [](const RunConfig& c) { return bool_str(c.phys_features.use_df); },
            [](RunConfig& c, const std::string& v) { c.phys_features.use_df = parse_bool(v); });
        add("phys.encoder",
            [](const RunConfig& c) { return encoder_to_string(c.phys_features.encoder); },
            [](RunConfig& c, const std::string& v) {
                c.phys_features.encoder = encoder_from_string(v);
            });
        add("phys.use_centroid",
            [](const RunConfig& c) { return bool_str(c.phys_features.use_centroid); },
            [](RunConfig& c, const std::string& v) {
                c.phys_features.use_centroid = parse_bool(v);
            });
        add("phys.gamma", [](const RunConfig& c) { return gamma_to_string(c.gamma); },
            [](RunConfig& c, const std::string& v) { c.gamma = gamma_from_string(v); });
        add("phys.n_points", [](const RunConfig& c) { return std::to_string(c.phys_points); },
            [](RunConfig& c, const std::string& v) {
                c.phys_points = static_cast<int>(parse_long(v));
            });
        add("phys.adam_epochs",
            [](const RunConfig& c) { return std::to_string(c.phys_schedule.adam_epochs); },
            [](RunConfig& c, const std::string& v) {
                c.phys_schedule.adam_epochs = static_cast<int>(parse_long(v));
            });
        add("phys.lr", [](const RunConfig& c) { return fmt17(c.phys_schedule.lr); },
            [](RunConfig& c, const std::string& v) { c.phys_schedule.lr = parse_double(v); });
        add("phys.lbfgs_max_iters",
            [](const RunConfig& c) { return std::to_string(c.phys_schedule.lbfgs_max_iters); },
            [](RunConfig& c, const std::string& v) {
                c.phys_schedule.lbfgs_max_iters = static_cast<int>(parse_long(v));
            });
        add("phys.lbfgs_tol", [](const RunConfig& c) { return fmt17(c.phys_schedule.lbfgs_tol); },
            [](RunConfig& c, const std::string& v) { c.phys_schedule.lbfgs_tol = parse_double(v); });

        add("eval.n_points", [](const RunConfig& c) { return std::to_string(c.eval_points); },
            [](RunConfig& c, const std::string& v) {
                c.eval_points = static_cast<int>(parse_long(v));
            });

        add("recon.grid_n", [](const RunConfig& c) { return std::to_string(c.recon_grid_n); },
            [](RunConfig& c, const std::string& v) {
                c.recon_grid_n = static_cast<int>(parse_long(v));
            });
        add("recon.grid_lo", [](const RunConfig& c) { return fmt17(c.recon_lo); },
            [](RunConfig& c, const std::string& v) { c.recon_lo = parse_double(v); });
        add("recon.grid_hi", [](const RunConfig& c) { return fmt17(c.recon_hi); },
            [](RunConfig& c, const std::string& v) { c.recon_hi = parse_double(v); });
        add("recon.n_reference", [](const RunConfig& c) { return std::to_string(c.recon_reference); },
            [](RunConfig& c, const std::string& v) {
                c.recon_reference = static_cast<int>(parse_long(v));
            });

        add("sweep.key", [](const RunConfig& c) { return c.sweep_key; },
            [](RunConfig& c, const std::string& v) { c.sweep_key = trim(v); });
        add("sweep.values", [](const RunConfig& c) { return strings_str(c.sweep_values); },
            [](RunConfig& c, const std::string& v) { c.sweep_values = parse_strings(v); });
        return b;
    }();
    return table;
}

// --- paths, seeds, shared stage plumbing --------------------------------

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

// Stage seed streams off the run seed. Per-shape streams hash in the shape
// index (generation) or shape id (online evaluation); ids equal indices for
// pipeline-generated shapes.
enum SeedStream : uint64_t {
    kSeedFamily = 1,
    kSeedSdfData = 2,
    kSeedSdfTrain = 3,
    kSeedPhysData = 4,
    kSeedPhysTrain = 5,
    kSeedEval = 6,
    kSeedInfer = 7,
};

int phys_shape_count(const RunConfig& cfg) {
    return cfg.n_phys > 0 ? std::min(cfg.n_phys, cfg.n_train) : cfg.n_train;
}

std::vector<Shape> make_all_shapes(const RunConfig& cfg) {
    ShapeFamilySpec spec = cfg.family;
    spec.seed = derive_seed(cfg.seed, kSeedFamily);
    std::vector<Shape> shapes;
    const int total = cfg.n_train + cfg.n_test;
    shapes.reserve(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) shapes.push_back(sample_shape(spec, i));
    return shapes;
}

const Shape& shape_by_id(const std::vector<Shape>& shapes, int id) {
    for (const Shape& s : shapes) {
        if (s.shape_id == id) return s;
    }
    throw std::runtime_error("shape " + std::to_string(id) + " not found in shapes.txt");
}

void write_resolved_config(const RunConfig& cfg, Manifest& man) {
    write_file(join_path(cfg.out_dir, "config_resolved.txt"), resolved_config_text(cfg));
    man.record(cfg.out_dir, "config_resolved.txt", {});
}

GridSpec recon_grid(const RunConfig& cfg) {
    GridSpec g;
    g.origin = {cfg.recon_lo, cfg.recon_lo};
    g.spacing = (cfg.recon_hi - cfg.recon_lo) / (cfg.recon_grid_n - 1);
    g.n_x = cfg.recon_grid_n;
    g.n_y = cfg.recon_grid_n;
    return g;
}

// codes_inferred.csv: shape_id,objective,failed_restarts,z1..zk (successes only)
struct CodeRow {
    int shape_id = 0;
    double objective = 0.0;
    int failed_restarts = 0;
    Eigen::VectorXd z;
};

void write_code_rows(const std::string& path, const std::vector<CodeRow>& rows, int k) {
    std::ostringstream out;
    out << "shape_id,objective,failed_restarts";
    for (int j = 1; j <= k; ++j) out << ",z" << j;
    out << "\n";
    for (const CodeRow& r : rows) {
        out << r.shape_id << ',' << fmt17(r.objective) << ',' << r.failed_restarts;
        for (long j = 0; j < r.z.size(); ++j) out << ',' << fmt17(r.z[j]);
        out << "\n";
    }
    write_file(path, out.str());
}

std::vector<CodeRow> read_code_rows(const std::string& path) {
    std::vector<CodeRow> rows;
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto parts = split(line, ',');
        if (parts.size() < 3) throw std::runtime_error("malformed codes row: " + line);
        CodeRow r;
        r.shape_id = static_cast<int>(parse_long(parts[0]));
        r.objective = parse_double(parts[1]);
        r.failed_restarts = static_cast<int>(parse_long(parts[2]));
        r.z.resize(static_cast<long>(parts.size()) - 3);
        for (size_t j = 3; j < parts.size(); ++j) r.z[static_cast<long>(j) - 3] = parse_double(parts[j]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

std::string family_to_string(ShapeFamily f) {
    return f == ShapeFamily::PlateWithHoles ? "PLATE_WITH_HOLES" : "BLOB_FOURIER";
}

ShapeFamily family_from_string(const std::string& s) {
    if (s == "PLATE_WITH_HOLES") return ShapeFamily::PlateWithHoles;
    if (s == "BLOB_FOURIER") return ShapeFamily::BlobFourier;
    throw std::invalid_argument("unknown shape family: " + s);
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, const Binding*> by_key;
    for (const Binding& b : bindings()) by_key[b.key] = &b;

    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("malformed config line " + std::to_string(line_no) + ": " + t);
        }
        const std::string key = section.empty() ? trim(t.substr(0, eq))
                                                : section + "." + trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        auto it = by_key.find(key);
        if (it == by_key.end()) throw std::runtime_error("unknown config key: " + key);
        try {
            it->second->set(cfg, value);
        } catch (const std::exception& e) {
            throw std::runtime_error("bad value for " + key + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config_text(read_file(path)); }

std::string resolved_config_text(const RunConfig& cfg) {
    std::ostringstream out;
    std::string section;
    for (const Binding& b : bindings()) {
        const std::string sec = b.key.substr(0, b.key.find('.'));
        if (sec != section) {
            if (!section.empty()) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << b.key.substr(b.key.find('.') + 1) << " = " << b.get(cfg) << "\n";
    }
    return out.str();
}

void apply_sweep_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "k") {
        cfg.sdf.k = static_cast<int>(parse_long(value));
    } else if (key == "m") {
        cfg.sdf.fourier_m = static_cast<int>(parse_long(value));
    } else if (key == "centralize") {
        cfg.sdf.centralize = parse_bool(value);
    } else if (key == "optimizer") {
        if (value == "adam") {
            cfg.sdf.schedule.lbfgs_max_iters = 0;
        } else if (value != "adam+lbfgs") {
            throw std::invalid_argument("unknown optimizer mode: " + value);
        }
    } else if (key == "activation") {
        cfg.sdf.activation = activation_from_string(value);
    } else if (key == "loss") {
        cfg.sdf.loss.kind = loss_kind_from_string(value);
    } else if (key == "depth_width") {
        auto parts = split(value, 'x');
        if (parts.size() != 2) throw std::invalid_argument("expected DxW, got: " + value);
        const int depth = static_cast<int>(parse_long(trim(parts[0])));
        const int width = static_cast<int>(parse_long(trim(parts[1])));
        if (depth < 1 || width < 1) throw std::invalid_argument("expected DxW, got: " + value);
        cfg.sdf.hidden.assign(static_cast<size_t>(depth), width);
    } else {
        throw std::invalid_argument("unknown sweep key: " + key);
    }
}

// --- manifest ------------------------------------------------------------

Manifest Manifest::load(const std::string& dir) {
    Manifest man;
    const std::string path = join_path(dir, "manifest.txt");
    if (!std::filesystem::exists(path)) return man;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto parts = split(line, ' ');
        if (parts.size() < 2) throw std::runtime_error("malformed manifest line: " + line);
        Entry e;
        e.hash = parts[1];
        for (size_t i = 2; i < parts.size(); ++i) {
            auto dep = split(parts[i], ':');
            if (dep.size() != 2) throw std::runtime_error("malformed manifest input: " + parts[i]);
            e.inputs.emplace_back(dep[0], dep[1]);
        }
        man.entries[parts[0]] = std::move(e);
    }
    return man;
}

void Manifest::save(const std::string& dir) const {
    std::ostringstream out;
    for (const auto& [name, e] : entries) {
        out << name << ' ' << e.hash;
        for (const auto& [in_name, in_hash] : e.inputs) out << ' ' << in_name << ':' << in_hash;
        out << "\n";
    }
    write_file(join_path(dir, "manifest.txt"), out.str());
}

void Manifest::record(const std::string& dir, const std::string& name,
                      const std::vector<std::string>& inputs) {
    Entry e;
    e.hash = hash_hex(read_file(join_path(dir, name)));
    for (const std::string& in_name : inputs) {
        e.inputs.emplace_back(in_name, hash_hex(read_file(join_path(dir, in_name))));
    }
    entries[name] = std::move(e);
}

void Manifest::require(const std::string& dir, const std::vector<std::string>& names) const {
    for (const std::string& name : names) {
        const std::string path = join_path(dir, name);
        if (!std::filesystem::exists(path)) {
            throw std::runtime_error("missing prerequisite artifact: " + name);
        }
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw std::runtime_error("prerequisite artifact " + name +
                                     " has no manifest record; re-run its stage");
        }
        if (hash_hex(read_file(path)) != it->second.hash) {
            throw std::runtime_error("stale prerequisite artifact: " + name);
        }
        for (const auto& [in_name, in_hash] : it->second.inputs) {
            const std::string in_path = join_path(dir, in_name);
            if (!std::filesystem::exists(in_path) || hash_hex(read_file(in_path)) != in_hash) {
                throw std::runtime_error("stale prerequisite artifact: " + name + " (input " +
                                         in_name + " changed)");
            }
        }
    }
}

void write_pgm(const std::string& path, const Eigen::MatrixXd& values01) {
    const long h = values01.rows(), w = values01.cols();
    std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    bytes.reserve(bytes.size() + static_cast<size_t>(h * w));
    for (long r = 0; r < h; ++r) {
        for (long c = 0; c < w; ++c) {
            const double v = std::clamp(values01(r, c), 0.0, 1.0);
            bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
        }
    }
    write_file(path, bytes);
}

// --- stages --------------------------------------------------------------

namespace {

struct GenSummary {
    int shapes = 0;
    long sdf_rows = 0;
    long phys_rows = 0;
};

GenSummary do_gen(const RunConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
    Manifest man = Manifest::load(cfg.out_dir);

    std::vector<Shape> shapes = make_all_shapes(cfg);
    write_shapes(join_path(cfg.out_dir, "shapes.txt"), shapes);

    GenSummary sum;
    sum.shapes = static_cast<int>(shapes.size());

    std::vector<SdfDataset> datasets(static_cast<size_t>(cfg.n_train));
    parallel_for(cfg.n_train, cfg.jobs, [&](int i) {
        try {
            datasets[static_cast<size_t>(i)] = build_sdf_dataset(
                shapes[static_cast<size_t>(i)], cfg.n_boundary, cfg.n_grid,
                {cfg.noise_sd1, cfg.noise_sd2},
                derive_seed(derive_seed(cfg.seed, kSeedSdfData), static_cast<uint64_t>(i)),
                cfg.exclude_outer);
        } catch (const std::exception& e) {
            throw std::runtime_error("shape " + std::to_string(i) + ": " + e.what());
        }
    });
    for (const SdfDataset& d : datasets) sum.sdf_rows += static_cast<long>(d.samples.size());
    write_sdf_csv(join_path(cfg.out_dir, "sdf_train.csv"), datasets);

    const int n_phys = phys_shape_count(cfg);
    std::vector<std::pair<int, std::vector<PhysSample>>> sets(static_cast<size_t>(n_phys));
    std::vector<std::string> fom_names(static_cast<size_t>(n_phys));
    parallel_for(n_phys, cfg.jobs, [&](int i) {
        const Shape& shape = shapes[static_cast<size_t>(i)];
        try {
            FomField field = solve_fom(shape, cfg.problem, cfg.h);
            fom_names[static_cast<size_t>(i)] = "fom_" + std::to_string(shape.shape_id) + ".csv";
            write_fom_csv(join_path(cfg.out_dir, fom_names[static_cast<size_t>(i)]), field);
            sets[static_cast<size_t>(i)] = {
                shape.shape_id,
                build_phys_points(
                    shape, fom_field_fn(field), cfg.phys_points, cfg.gamma,
                    derive_seed(derive_seed(cfg.seed, kSeedPhysData), static_cast<uint64_t>(i)))};
        } catch (const std::exception& e) {
            throw std::runtime_error("shape " + std::to_string(shape.shape_id) + ": " + e.what());
        }
    });
    for (const auto& [id, samples] : sets) sum.phys_rows += static_cast<long>(samples.size());
    write_phys_csv(join_path(cfg.out_dir, "phys_train.csv"), sets);

    write_resolved_config(cfg, man);
    man.record(cfg.out_dir, "shapes.txt", {});
    man.record(cfg.out_dir, "sdf_train.csv", {"shapes.txt"});
    std::vector<std::string> phys_inputs = {"shapes.txt"};
    for (const std::string& name : fom_names) {
        man.record(cfg.out_dir, name, {"shapes.txt"});
        phys_inputs.push_back(name);
    }
    man.record(cfg.out_dir, "phys_train.csv", phys_inputs);
    man.save(cfg.out_dir);
    return sum;
}

double do_train_sdf(const RunConfig& cfg, SdfTrainReport* report_out = nullptr) {
    std::filesystem::create_directories(cfg.out_dir);
    Manifest man = Manifest::load(cfg.out_dir);
    man.require(cfg.out_dir, {"sdf_train.csv", "shapes.txt"});

    std::vector<Shape> shapes = read_shapes(join_path(cfg.out_dir, "shapes.txt"));
    std::vector<SdfDataset> datasets = read_sdf_csv(join_path(cfg.out_dir, "sdf_train.csv"));
    for (SdfDataset& d : datasets) {
        d.centroid = shape_centroid(shape_by_id(shapes, d.shape_id), cfg.exclude_outer);
    }

    SdfTrainOptions opt = cfg.sdf;
    opt.seed = derive_seed(cfg.seed, kSeedSdfTrain);
    SdfTrainReport report;
    TrainedSdfModel model = train_sdf(datasets, opt, &report);
    write_sdf_model(join_path(cfg.out_dir, "sdf_model.ckpt"), model);

    write_resolved_config(cfg, man);
    man.record(cfg.out_dir, "sdf_model.ckpt", {"sdf_train.csv", "shapes.txt"});
    man.save(cfg.out_dir);
    if (report_out) *report_out = report;
    return report.final_objective;
}

struct InferSummary {
    double mean_objective = kNan;
    int failures = 0;
};

InferSummary do_infer_codes(const RunConfig& cfg) {
    Manifest man = Manifest::load(cfg.out_dir);
    man.require(cfg.out_dir, {"sdf_model.ckpt", "shapes.txt"});

    TrainedSdfModel model = read_sdf_model(join_path(cfg.out_dir, "sdf_model.ckpt"));
    std::vector<Shape> shapes = read_shapes(join_path(cfg.out_dir, "shapes.txt"));

    struct Slot {
        CodeRow row;
        bool ok = false;
        std::string error;
        int shape_id = 0;
    };
    std::vector<Slot> slots(static_cast<size_t>(cfg.n_test));
    parallel_for(cfg.n_test, cfg.jobs, [&](int t) {
        const int index = cfg.n_train + t;
        Slot& slot = slots[static_cast<size_t>(t)];
        slot.shape_id = index;
        try {
            const Shape& shape = shape_by_id(shapes, index);
            SdfDataset ds = build_sdf_dataset(
                shape, cfg.n_boundary, cfg.n_grid, {cfg.noise_sd1, cfg.noise_sd2},
                derive_seed(derive_seed(cfg.seed, kSeedSdfData), static_cast<uint64_t>(index)),
                cfg.exclude_outer);
            InferResult res = infer_code(
                model, ds, cfg.infer_restarts,
                derive_seed(derive_seed(cfg.seed, kSeedInfer), static_cast<uint64_t>(index)),
                cfg.infer_lbfgs_max_iters, cfg.infer_lbfgs_tol);
            slot.row = {shape.shape_id, res.objective, res.failed_restarts, res.code.z};
            slot.ok = true;
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
    });

    InferSummary sum;
    std::vector<CodeRow> rows;
    double total = 0.0;
    for (const Slot& slot : slots) {
        if (slot.ok) {
            rows.push_back(slot.row);
            total += slot.row.objective;
        } else {
            sum.failures += 1;
            std::fprintf(stderr, "infer-codes: shape %d failed: %s\n", slot.shape_id,
                         slot.error.c_str());
        }
    }
    if (!rows.empty()) sum.mean_objective = total / static_cast<double>(rows.size());
    write_code_rows(join_path(cfg.out_dir, "codes_inferred.csv"), rows, model.k);

    write_resolved_config(cfg, man);
    man.record(cfg.out_dir, "codes_inferred.csv", {"sdf_model.ckpt", "shapes.txt"});
    man.save(cfg.out_dir);
    return sum;
}

double do_train_phys(const RunConfig& cfg, PhysTrainReport* report_out = nullptr) {
    Manifest man = Manifest::load(cfg.out_dir);
    man.require(cfg.out_dir, {"phys_train.csv", "sdf_model.ckpt", "shapes.txt"});

    TrainedSdfModel model = read_sdf_model(join_path(cfg.out_dir, "sdf_model.ckpt"));
    std::vector<Shape> shapes = read_shapes(join_path(cfg.out_dir, "shapes.txt"));
    auto raw = read_phys_csv(join_path(cfg.out_dir, "phys_train.csv"));

    std::vector<PhysTrainingSet> sets;
    for (auto& [id, samples] : raw) {
        const Shape& shape = shape_by_id(shapes, id);
        PhysTrainingSet set;
        set.shape_id = id;
        set.samples = std::move(samples);
        set.centroid = shape_centroid(shape, cfg.exclude_outer);
        if (cfg.phys_features.encoder == ShapeEncoder::ShapeCodes) {
            const LatentCode* found = nullptr;
            for (const LatentCode& c : model.codes) {
                if (c.shape_id == id) found = &c;
            }
            if (!found) {
                throw std::runtime_error("no trained code for shape " + std::to_string(id));
            }
            set.code = found->z;
        } else {
            if (shape.params.empty()) {
                throw std::runtime_error("shape " + std::to_string(id) +
                                         " carries no explicit parameters");
            }
            set.code = Eigen::Map<const Eigen::VectorXd>(shape.params.data(),
                                                         static_cast<long>(shape.params.size()));
        }
        sets.push_back(std::move(set));
    }

    PhysTrainReport report;
    Surrogate s = train_phys(sets, cfg.phys_features, cfg.gamma, cfg.phys_hidden,
                             cfg.phys_schedule, derive_seed(cfg.seed, kSeedPhysTrain), &report,
                             "sdf_model.ckpt");
    write_phys_model(join_path(cfg.out_dir, "phys_model.ckpt"), s);

    write_resolved_config(cfg, man);
    man.record(cfg.out_dir, "phys_model.ckpt", {"phys_train.csv", "sdf_model.ckpt", "shapes.txt"});
    man.save(cfg.out_dir);
    if (report_out) *report_out = report;
    return report.final_loss;
}

struct EvalSummary {
    double rel_l2 = kNan;
    int failures = 0;
};

EvalSummary do_eval(const RunConfig& cfg) {
    Manifest man = Manifest::load(cfg.out_dir);
    man.require(cfg.out_dir, {"sdf_model.ckpt", "phys_model.ckpt", "shapes.txt"});

    TrainedSdfModel model = read_sdf_model(join_path(cfg.out_dir, "sdf_model.ckpt"));
    Surrogate surrogate = read_phys_model(join_path(cfg.out_dir, "phys_model.ckpt"));
    std::vector<Shape> shapes = read_shapes(join_path(cfg.out_dir, "shapes.txt"));

    std::vector<Shape> test_shapes;
    for (int t = 0; t < cfg.n_test; ++t) {
        test_shapes.push_back(shape_by_id(shapes, cfg.n_train + t));
    }

    OnlineEvalConfig ocfg;
    ocfg.n_boundary = cfg.n_boundary;
    ocfg.n_grid = cfg.n_grid;
    ocfg.noise_sds = {cfg.noise_sd1, cfg.noise_sd2};
    ocfg.exclude_outer_boundary = cfg.exclude_outer;
    ocfg.restarts = cfg.infer_restarts;
    ocfg.n_eval_points = cfg.eval_points;
    ocfg.problem = cfg.problem;
    ocfg.h = cfg.h;
    ocfg.seed = derive_seed(cfg.seed, kSeedEval);
    ocfg.jobs = cfg.jobs;
    OnlineReport report = run_online(model, surrogate, test_shapes, ocfg);

    // eval_report.csv with a pooled row under shape_id -1
    std::ostringstream csv;
    csv << "shape_id,n_points,rel_l2,code_objective\n";
    long total_points = 0;
    for (const ShapeEvalResult& r : report.shapes) {
        csv << r.shape_id << ',' << r.n_points << ',' << fmt17(r.rel_l2) << ','
            << fmt17(r.code_objective) << "\n";
        if (!r.failed) total_points += r.n_points;
    }
    csv << -1 << ',' << total_points << ',' << fmt17(report.aggregate_rel_l2) << ',' << fmt17(kNan)
        << "\n";
    write_file(join_path(cfg.out_dir, "eval_report.csv"), csv.str());

    write_resolved_config(cfg, man);
    const std::vector<std::string> stage_inputs = {"sdf_model.ckpt", "phys_model.ckpt",
                                                   "shapes.txt"};
    man.record(cfg.out_dir, "eval_report.csv", stage_inputs);

    EvalSummary sum;
    sum.rel_l2 = report.aggregate_rel_l2;
    for (const ShapeEvalResult& r : report.shapes) {
        if (r.failed) {
            sum.failures += 1;
            std::fprintf(stderr, "eval: shape %d failed: %s\n", r.shape_id, r.error.c_str());
            continue;
        }
        const std::string pred_name = "pred_" + std::to_string(r.shape_id) + ".csv";
        std::ostringstream pred;
        pred << "x,y,u_ref,u_pred\n";
        for (size_t j = 0; j < r.points.size(); ++j) {
            pred << fmt17(r.points[j].x) << ',' << fmt17(r.points[j].y) << ','
                 << fmt17(r.u_ref[j]) << ',' << fmt17(r.u_pred[j]) << "\n";
        }
        write_file(join_path(cfg.out_dir, pred_name), pred.str());
        man.record(cfg.out_dir, pred_name, stage_inputs);

        // raster of |u_pred - u_ref| over the reference grid, 0 outside
        const MaskedGrid& grid = r.ref_field.grid;
        std::vector<Vec2> nodes;
        std::vector<std::pair<int, int>> idx;
        for (int iy = 0; iy < grid.n; ++iy) {
            for (int ix = 0; ix < grid.n; ++ix) {
                if (!grid.in(ix, iy)) continue;
                nodes.push_back(grid.node(ix, iy));
                idx.emplace_back(ix, iy);
            }
        }
        const Vec2* cen = surrogate.feature_spec.use_centroid ? &r.centroid : nullptr;
        const Shape& shape = shape_by_id(shapes, r.shape_id);
        auto pred_nodes = predict(surrogate, r.code, shape, nodes, cen);
        Eigen::MatrixXd img = Eigen::MatrixXd::Zero(grid.n, grid.n);
        double max_err = 0.0;
        for (size_t j = 0; j < nodes.size(); ++j) {
            const double err = std::abs(pred_nodes[j][0] - r.ref_field.at(idx[j].first, idx[j].second));
            img(grid.n - 1 - idx[j].second, idx[j].first) = err;
            max_err = std::max(max_err, err);
        }
        if (max_err > 0.0) img /= max_err;
        const std::string pgm_name = "field_" + std::to_string(r.shape_id) + ".pgm";
        write_pgm(join_path(cfg.out_dir, pgm_name), img);
        man.record(cfg.out_dir, pgm_name, stage_inputs);
    }
    man.save(cfg.out_dir);
    return sum;
}

struct ReconSummary {
    double mean_cd = kNan;
    int failures = 0;
};

ReconSummary do_reconstruct(const RunConfig& cfg) {
    Manifest man = Manifest::load(cfg.out_dir);
    man.require(cfg.out_dir, {"sdf_model.ckpt", "codes_inferred.csv", "shapes.txt"});

    TrainedSdfModel model = read_sdf_model(join_path(cfg.out_dir, "sdf_model.ckpt"));
    std::vector<Shape> shapes = read_shapes(join_path(cfg.out_dir, "shapes.txt"));
    std::vector<CodeRow> codes = read_code_rows(join_path(cfg.out_dir, "codes_inferred.csv"));
    const GridSpec grid = recon_grid(cfg);

    struct Slot {
        CdReportRow row;
        PointSet points;
        std::string error;
    };
    std::vector<Slot> slots(codes.size());
    parallel_for(static_cast<int>(codes.size()), cfg.jobs, [&](int i) {
        const CodeRow& code = codes[static_cast<size_t>(i)];
        Slot& slot = slots[static_cast<size_t>(i)];
        slot.row.shape_id = code.shape_id;
        try {
            const Shape& shape = shape_by_id(shapes, code.shape_id);
            std::vector<Vec2> reference =
                cfg.exclude_outer ? sample_hole_boundary(shape, cfg.recon_reference, nullptr)
                                  : sample_boundary(shape, GammaSelector::All, cfg.recon_reference,
                                                    nullptr);
            Vec2 centroid = shape_centroid(shape, cfg.exclude_outer);
            const Vec2* cen = model.centralize ? &centroid : nullptr;
            ReconResult res = evaluate_reconstruction(model, code.z, reference, grid, cen);
            slot.row.cd = res.cd;
            slot.points = std::move(res.points);
        } catch (const std::exception& e) {
            slot.row.cd = kNan;
            slot.row.failed = true;
            slot.error = e.what();
        }
    });

    ReconSummary sum;
    std::vector<CdReportRow> rows;
    double total = 0.0;
    int ok = 0;
    write_resolved_config(cfg, man);
    const std::vector<std::string> stage_inputs = {"sdf_model.ckpt", "codes_inferred.csv",
                                                   "shapes.txt"};
    for (const Slot& slot : slots) {
        rows.push_back(slot.row);
        if (slot.row.failed) {
            sum.failures += 1;
            std::fprintf(stderr, "reconstruct: shape %d failed: %s\n", slot.row.shape_id,
                         slot.error.c_str());
            continue;
        }
        total += slot.row.cd;
        ok += 1;
        const std::string name = "recon_" + std::to_string(slot.row.shape_id) + ".csv";
        write_point_set_csv(join_path(cfg.out_dir, name), slot.points);
        man.record(cfg.out_dir, name, stage_inputs);
    }
    if (ok > 0) sum.mean_cd = total / static_cast<double>(ok);
    write_cd_report(join_path(cfg.out_dir, "cd_report.csv"), rows);
    man.record(cfg.out_dir, "cd_report.csv", stage_inputs);
    man.save(cfg.out_dir);
    return sum;
}

std::string sanitize_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    }
    return out;
}

}  // namespace

int cmd_gen(const RunConfig& cfg) {
    GenSummary sum = do_gen(cfg);
    std::printf("shapes=%d sdf_rows=%ld phys_rows=%ld\n", sum.shapes, sum.sdf_rows, sum.phys_rows);
    return 0;
}

int cmd_train_sdf(const RunConfig& cfg) {
    const double final_objective = do_train_sdf(cfg);
    std::printf("final_objective=%s\n", fmt17(final_objective).c_str());
    return 0;
}

int cmd_infer_codes(const RunConfig& cfg) {
    InferSummary sum = do_infer_codes(cfg);
    std::printf("mean_objective=%s failures=%d\n", fmt17(sum.mean_objective).c_str(),
                sum.failures);
    return sum.failures == 0 ? 0 : 1;
}

int cmd_train_phys(const RunConfig& cfg) {
    const double final_loss = do_train_phys(cfg);
    std::printf("final_loss=%s\n", fmt17(final_loss).c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    EvalSummary sum = do_eval(cfg);
    std::printf("rel_l2=%s failures=%d\n", fmt17(sum.rel_l2).c_str(), sum.failures);
    return sum.failures == 0 ? 0 : 1;
}

int cmd_reconstruct(const RunConfig& cfg) {
    ReconSummary sum = do_reconstruct(cfg);
    std::printf("mean_cd=%s failures=%d\n", fmt17(sum.mean_cd).c_str(), sum.failures);
    return sum.failures == 0 ? 0 : 1;
}

int cmd_sweep(const RunConfig& cfg) {
    if (cfg.sweep_key.empty() || cfg.sweep_values.empty()) {
        throw std::invalid_argument("sweep requires sweep.key and sweep.values");
    }
    std::filesystem::create_directories(cfg.out_dir);
    Manifest man = Manifest::load(cfg.out_dir);

    int failures = 0;
    std::ostringstream csv;
    csv << "value,metric\n";
    for (const std::string& value : cfg.sweep_values) {
        RunConfig sub = cfg;
        sub.sweep_key.clear();
        sub.sweep_values.clear();
        apply_sweep_value(sub, cfg.sweep_key, value);
        sub.out_dir = join_path(cfg.out_dir, "sweep_" + sanitize_token(cfg.sweep_key) + "_" +
                                                 sanitize_token(value));
        do_gen(sub);
        do_train_sdf(sub);
        InferSummary inf = do_infer_codes(sub);
        ReconSummary rec = do_reconstruct(sub);
        failures += inf.failures + rec.failures;
        csv << value << ',' << fmt17(rec.mean_cd) << "\n";
        log_info("sweep " + cfg.sweep_key + "=" + value + " mean_cd=" + fmt17(rec.mean_cd));
    }
    write_file(join_path(cfg.out_dir, "sweep_report.csv"), csv.str());
    write_resolved_config(cfg, man);
    man.record(cfg.out_dir, "sweep_report.csv", {});
    man.save(cfg.out_dir);
    std::printf("rows=%zu failures=%d\n", cfg.sweep_values.size(), failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace sdfsur
