#include "sdfsur/pipeline.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "sdfsur/io_util.hpp"

using namespace sdfsur;
namespace fs = std::filesystem;

namespace {

const char* kSmokeConfig = R"(# ten-blob smoke covering every stage
[run]
seed = 7
jobs = 1

[family]
kind = BLOB_FOURIER
harmonics = 0
blob_radius = 0.25,0.45
blob_center = -0.2,0.2

[data]
n_train = 10
n_test = 3
n_boundary = 150
n_grid = 14

[sdf]
k = 2
hidden = 16,16
loss = L1
adam_epochs = 100
batch_shapes = 10
lbfgs_max_iters = 300

[infer]
restarts = 2

[fom]
problem = POISSON_UNIT_SOURCE
h = 0.03125

[phys]
hidden = 12,12
n_points = 80
adam_epochs = 120
lbfgs_max_iters = 300

[eval]
n_points = 150

[recon]
grid_n = 81
n_reference = 500
)";

// Redirects stdout to a scratch file around fn and returns what was printed.
std::string capture_stdout(const std::function<int()>& fn, int& rc) {
    std::fflush(stdout);
    const std::string path = (fs::temp_directory_path() / "sdfsur_stdout.txt").string();
    const int saved = dup(fileno(stdout));
    REQUIRE(saved >= 0);
    REQUIRE(std::freopen(path.c_str(), "w", stdout) != nullptr);
    rc = fn();
    std::fflush(stdout);
    dup2(saved, fileno(stdout));
    close(saved);
    return read_file(path);
}

// Value of `key=` in a one-line summary such as "rel_l2=0.05 failures=0".
double summary_value(const std::string& line, const std::string& key) {
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) {
        if (tok.rfind(key + "=", 0) == 0) return parse_double(tok.substr(key.size() + 1));
    }
    throw std::runtime_error("summary key " + key + " not found in: " + line);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(split(line, ','));
    }
    return rows;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config text round trips and rejects unknown or bad keys") {
    RunConfig def;
    const std::string rendered = resolved_config_text(def);
    CHECK(resolved_config_text(parse_config_text(rendered)) == rendered);

    RunConfig cfg;
    cfg.seed = 99;
    cfg.out_dir = "some/dir";
    cfg.jobs = 4;
    cfg.family.family = ShapeFamily::PlateWithHoles;
    cfg.family.hole_count_choices = {1, 2};
    cfg.family.hole_radius = {0.12, 0.31};
    cfg.family.tagged_arcs = {{0.0, 0.25}, {0.5, 0.75}};
    cfg.noise_sd1 = 0.1;
    cfg.sdf.hidden = {8, 8, 8};
    cfg.sdf.loss.kind = SdfLossKind::HardClampL1;
    cfg.sdf.activation = Activation::Tanh;
    cfg.phys_features.encoder = ShapeEncoder::ExplicitParams;
    cfg.phys_features.use_df = false;
    cfg.gamma = GammaSelector::WallsOnly;
    cfg.problem = FomProblem::DiffusionLeftRight;
    cfg.recon_lo = -1.3;
    cfg.sweep_key = "optimizer";
    cfg.sweep_values = {"adam", "adam+lbfgs"};
    const std::string text = resolved_config_text(cfg);
    RunConfig back = parse_config_text(text);
    CHECK(resolved_config_text(back) == text);
    CHECK(back.family.tagged_arcs.size() == 2);
    CHECK(back.sweep_values == cfg.sweep_values);
    CHECK(back.noise_sd1 == 0.1);

    // rejection names the offending key
    const std::string unknown =
        message_of([] { parse_config_text("[data]\nn_tran = 5\n"); });
    CHECK(unknown.find("unknown config key: data.n_tran") != std::string::npos);
    const std::string bad =
        message_of([] { parse_config_text("[sdf]\nk = banana\n"); });
    CHECK(bad.find("bad value for sdf.k") != std::string::npos);
    const std::string malformed = message_of([] { parse_config_text("just words\n"); });
    CHECK(malformed.find("malformed config line") != std::string::npos);

    CHECK(family_from_string("PLATE_WITH_HOLES") == ShapeFamily::PlateWithHoles);
    CHECK(family_to_string(ShapeFamily::BlobFourier) == "BLOB_FOURIER");
    CHECK_THROWS_AS(family_from_string("SQUARES"), std::invalid_argument);
}

TEST_CASE("sweep value application") {
    RunConfig cfg;
    apply_sweep_value(cfg, "k", "5");
    CHECK(cfg.sdf.k == 5);
    apply_sweep_value(cfg, "m", "8");
    CHECK(cfg.sdf.fourier_m == 8);
    apply_sweep_value(cfg, "centralize", "1");
    CHECK(cfg.sdf.centralize);
    apply_sweep_value(cfg, "optimizer", "adam");
    CHECK(cfg.sdf.schedule.lbfgs_max_iters == 0);
    RunConfig cfg2;
    const int keep = cfg2.sdf.schedule.lbfgs_max_iters;
    apply_sweep_value(cfg2, "optimizer", "adam+lbfgs");
    CHECK(cfg2.sdf.schedule.lbfgs_max_iters == keep);
    apply_sweep_value(cfg, "activation", "tanh");
    CHECK(cfg.sdf.activation == Activation::Tanh);
    apply_sweep_value(cfg, "loss", "HARD_CLAMP_L1");
    CHECK(cfg.sdf.loss.kind == SdfLossKind::HardClampL1);
    apply_sweep_value(cfg, "depth_width", "3x8");
    CHECK(cfg.sdf.hidden == std::vector<int>{8, 8, 8});
    CHECK_THROWS_AS(apply_sweep_value(cfg, "widthdepth", "3x8"), std::invalid_argument);
    CHECK_THROWS_AS(apply_sweep_value(cfg, "depth_width", "8"), std::invalid_argument);
    CHECK_THROWS_AS(apply_sweep_value(cfg, "optimizer", "sgd"), std::invalid_argument);
}

TEST_CASE("manifest records hashes and flags tampering") {
    const fs::path dir = fs::temp_directory_path() / "sdfsur_manifest_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_file((dir / "a.txt").string(), "alpha\n");
    write_file((dir / "b.txt").string(), "beta\n");

    Manifest man;
    man.record(dir.string(), "a.txt", {});
    man.record(dir.string(), "b.txt", {"a.txt"});
    man.save(dir.string());

    Manifest loaded = Manifest::load(dir.string());
    CHECK(loaded.entries.size() == 2);
    CHECK_NOTHROW(loaded.require(dir.string(), {"a.txt", "b.txt"}));

    // artifact modified after being recorded
    write_file((dir / "b.txt").string(), "changed\n");
    std::string msg =
        message_of([&] { loaded.require(dir.string(), {"b.txt"}); });
    CHECK(msg.find("stale prerequisite artifact: b.txt") != std::string::npos);
    write_file((dir / "b.txt").string(), "beta\n");

    // input of a recorded artifact modified
    write_file((dir / "a.txt").string(), "changed\n");
    msg = message_of([&] { loaded.require(dir.string(), {"b.txt"}); });
    CHECK(msg.find("stale prerequisite artifact: b.txt (input a.txt changed)") !=
          std::string::npos);
    write_file((dir / "a.txt").string(), "alpha\n");

    // artifact file gone
    fs::remove(dir / "b.txt");
    msg = message_of([&] { loaded.require(dir.string(), {"b.txt"}); });
    CHECK(msg.find("missing prerequisite artifact: b.txt") != std::string::npos);

    // present but never recorded
    write_file((dir / "c.txt").string(), "gamma\n");
    msg = message_of([&] { loaded.require(dir.string(), {"c.txt"}); });
    CHECK(msg.find("no manifest record") != std::string::npos);

    // round trip preserves every byte of the ledger
    const std::string bytes = read_file((dir / "manifest.txt").string());
    loaded.save(dir.string());
    CHECK(read_file((dir / "manifest.txt").string()) == bytes);
    fs::remove_all(dir);
}

TEST_CASE("pgm writer emits the exact byte layout") {
    const fs::path path = fs::temp_directory_path() / "sdfsur_test.pgm";
    Eigen::MatrixXd img(2, 3);
    img << 0.0, 0.5, 1.0, -0.2, 2.0, 0.25;
    write_pgm(path.string(), img);
    const std::string bytes = read_file(path.string());
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
    CHECK(px[0] == 0);
    CHECK(px[1] == 128);  // lround(255 * 0.5)
    CHECK(px[2] == 255);
    CHECK(px[3] == 0);    // clipped below
    CHECK(px[4] == 255);  // clipped above
    CHECK(px[5] == 64);
    fs::remove(path);
}

TEST_CASE("full pipeline smoke on ten blobs") {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::temp_directory_path() / "sdfsur_pipeline_smoke";
    fs::remove_all(dir);

    RunConfig cfg = parse_config_text(kSmokeConfig);
    cfg.out_dir = dir.string();
    auto artifact = [&](const std::string& name) { return (dir / name).string(); };

    int rc = -1;
    const std::string gen_line = capture_stdout([&] { return cmd_gen(cfg); }, rc);
    CHECK(rc == 0);
    CHECK(summary_value(gen_line, "shapes") == 13.0);
    for (const char* name : {"shapes.txt", "sdf_train.csv", "phys_train.csv", "fom_0.csv",
                             "fom_9.csv", "config_resolved.txt", "manifest.txt"}) {
        CHECK_MESSAGE(fs::exists(artifact(name)), name);
    }

    // identical config + seed regenerates byte-identical data artifacts
    std::map<std::string, std::string> snapshot;
    for (const auto& entry : fs::directory_iterator(dir)) {
        snapshot[entry.path().filename().string()] = read_file(entry.path().string());
    }
    capture_stdout([&] { return cmd_gen(cfg); }, rc);
    CHECK(rc == 0);
    for (const auto& [name, bytes] : snapshot) {
        const std::string context = "gen re-run changed " + name;
        CHECK_MESSAGE(read_file(artifact(name)) == bytes, context);
    }

    const std::string sdf_line = capture_stdout([&] { return cmd_train_sdf(cfg); }, rc);
    CHECK(rc == 0);
    CHECK(std::isfinite(summary_value(sdf_line, "final_objective")));
    CHECK(fs::exists(artifact("sdf_model.ckpt")));

    const std::string infer_line = capture_stdout([&] { return cmd_infer_codes(cfg); }, rc);
    CHECK(rc == 0);
    CHECK(summary_value(infer_line, "failures") == 0.0);
    CHECK(csv_rows(artifact("codes_inferred.csv")).size() == 3);

    const std::string phys_line = capture_stdout([&] { return cmd_train_phys(cfg); }, rc);
    CHECK(rc == 0);
    CHECK(std::isfinite(summary_value(phys_line, "final_loss")));
    CHECK(fs::exists(artifact("phys_model.ckpt")));

    const std::string eval_line = capture_stdout([&] { return cmd_eval(cfg); }, rc);
    CHECK(rc == 0);
    CHECK(summary_value(eval_line, "failures") == 0.0);
    // summary metric must match the pooled row of the report exactly
    const auto eval_rows = csv_rows(artifact("eval_report.csv"));
    REQUIRE(eval_rows.size() == 4);  // three shapes + pooled row
    const auto& pooled = eval_rows.back();
    CHECK(pooled[0] == "-1");
    const double printed = summary_value(eval_line, "rel_l2");
    CHECK(std::abs(parse_double(pooled[2]) - printed) <= 1e-12 * std::max(1.0, printed));
    for (int id : {10, 11, 12}) {
        CHECK(fs::exists(artifact("pred_" + std::to_string(id) + ".csv")));
        const std::string pgm = read_file(artifact("field_" + std::to_string(id) + ".pgm"));
        const std::string header = "P5\n65 65\n255\n";  // h = 1/32 grid
        REQUIRE(pgm.size() == header.size() + 65 * 65);
        CHECK(pgm.substr(0, header.size()) == header);
    }

    const std::string recon_line = capture_stdout([&] { return cmd_reconstruct(cfg); }, rc);
    CHECK(rc == 0);
    const auto cd_rows = csv_rows(artifact("cd_report.csv"));
    REQUIRE(cd_rows.size() == 3);
    double cd_sum = 0.0;
    for (const auto& row : cd_rows) {
        CHECK(row[2] == "0");
        cd_sum += parse_double(row[1]);
        CHECK(fs::exists(artifact("recon_" + row[0] + ".csv")));
    }
    const double printed_cd = summary_value(recon_line, "mean_cd");
    CHECK(std::abs(cd_sum / 3.0 - printed_cd) <= 1e-12 * std::max(1.0, printed_cd));

    // stale and missing prerequisites abort the dependent stages
    const std::string sdf_bytes = read_file(artifact("sdf_train.csv"));
    write_file(artifact("sdf_train.csv"), sdf_bytes + "tamper\n");
    std::string msg = message_of([&] { cmd_train_sdf(cfg); });
    CHECK(msg.find("stale prerequisite artifact: sdf_train.csv") != std::string::npos);
    write_file(artifact("sdf_train.csv"), sdf_bytes);

    RunConfig empty_cfg = cfg;
    empty_cfg.out_dir = (fs::temp_directory_path() / "sdfsur_pipeline_empty").string();
    fs::remove_all(empty_cfg.out_dir);
    fs::create_directories(empty_cfg.out_dir);
    msg = message_of([&] { cmd_eval(empty_cfg); });
    CHECK(msg.find("missing prerequisite artifact") != std::string::npos);
    fs::remove_all(empty_cfg.out_dir);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(seconds < 300.0);
    fs::remove_all(dir);
}

TEST_CASE("sweep stage writes one metric row per value") {
    const fs::path dir = fs::temp_directory_path() / "sdfsur_sweep_test";
    fs::remove_all(dir);

    RunConfig cfg = parse_config_text(kSmokeConfig);
    cfg.out_dir = dir.string();
    cfg.n_train = 5;
    cfg.n_phys = 1;
    cfg.n_test = 2;
    cfg.n_boundary = 120;
    cfg.n_grid = 12;
    cfg.sdf.schedule.adam_epochs = 80;
    cfg.sdf.schedule.batch_shapes = 5;
    cfg.sdf.schedule.lbfgs_max_iters = 200;
    cfg.h = 0.0625;
    cfg.phys_points = 30;
    cfg.recon_grid_n = 61;
    cfg.recon_reference = 400;
    cfg.sweep_key = "k";
    cfg.sweep_values = {"1", "2"};

    int rc = -1;
    capture_stdout([&] { return cmd_sweep(cfg); }, rc);
    CHECK(rc == 0);
    const auto rows = csv_rows((dir / "sweep_report.csv").string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][0] == "1");
    CHECK(rows[1][0] == "2");
    for (const auto& row : rows) CHECK(std::isfinite(parse_double(row[1])));
    CHECK(fs::exists(dir / "sweep_k_1" / "cd_report.csv"));
    CHECK(fs::exists(dir / "sweep_k_2" / "cd_report.csv"));

    RunConfig no_key = cfg;
    no_key.sweep_key.clear();
    CHECK_THROWS_AS(cmd_sweep(no_key), std::invalid_argument);
    fs::remove_all(dir);
}
