#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lapanet/cxa.hpp"
#include "lapanet/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace lapanet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("lapanet_test_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

ExperimentConfig small_config()
{
    ExperimentConfig c;
    c.rows = c.cols = 48;
    c.n_frames = 2;
    c.n_coils = 2;
    c.pairs = {{0, 1}};
    c.accelerations = {1.0, 2.0};
    c.train.model.height = c.train.model.width = 48;
    c.train.model.n_coils = 2;
    return c;
}

int line_count(const std::string& s)
{
    int n = 0;
    for (char ch : s)
        n += ch == '\n';
    return n;
}

} // namespace

TEST_CASE("phantom command writes frames, masks and fields deterministically")
{
    const ExperimentConfig c = small_config();
    const fs::path a = scratch("phantom_a"), b = scratch("phantom_b");
    const PhantomOutput o = cmd_phantom(c, a);
    cmd_phantom(c, b);
    CHECK(o.frames.size() == 2);
    CHECK(o.masks.size() == 2);
    CHECK(o.fields.size() == 2);
    for (const auto& f : o.frames)
        CHECK(slurp(f) == slurp(b / f.filename()));
    for (const auto& f : o.fields)
        CHECK(slurp(f) == slurp(b / f.filename()));
    const CxaArray frame = read_cxa(o.frames[0]);
    CHECK(frame.dims == std::vector<uint32_t>{48, 48});
    const std::string pgm = slurp(o.previews[0]);
    CHECK(pgm.rfind("P5", 0) == 0);
    CHECK(pgm.find("48 48") != std::string::npos);
}

TEST_CASE("undersample writes one k-space per frame and rejects R outside the grid")
{
    const ExperimentConfig c = small_config();
    const fs::path d = scratch("undersample");
    const auto files = cmd_undersample(c, PatternKind::radial_spokes, 2.0, d);
    CHECK(fs::exists(d / "kspace_0_radial_R2.cxa"));
    CHECK(fs::exists(d / "kspace_1_radial_R2.cxa"));
    CHECK(fs::exists(d / "patterns_radial_R2.csv"));
    CHECK(files.size() == 5);
    CHECK_THROWS_AS(cmd_undersample(c, PatternKind::radial_spokes, 3.0, d), ValidationError);
    CHECK_THROWS_AS(cmd_register(c, Method::lap, 0, 1, PatternKind::cartesian_lines, 16.0, {}), ValidationError);
}

TEST_CASE("LAP recovers a fully sampled translation")
{
    ExperimentConfig c = small_config();
    c.scene = SceneKind::translation;
    c.max_shift = 2.0;
    const fs::path d = scratch("register");
    const RegisterRow r = cmd_register(c, Method::lap, 0, 1, PatternKind::cartesian_lines, 1.0, d);
    CHECK(r.status == "ok");
    CHECK(r.epe < 0.5);
    CHECK(r.eval.nrmse < r.nrmse_before);
    CHECK(fs::exists(d / "field.cxa"));
    CHECK(fs::exists(d / "flow.ppm"));
    CHECK(line_count(slurp(d / "metrics.csv")) == 2);
}

TEST_CASE("an identical pair gives a near-zero field")
{
    ExperimentConfig c = small_config();
    const fs::path d = scratch("identical");
    const RegisterRow r = cmd_register(c, Method::lap, 1, 1, PatternKind::cartesian_lines, 1.0, d);
    CHECK(r.status == "ok");
    CHECK(r.nrmse_before == 0.0);
    const DisplacementField u = cxa_to_field(read_cxa(d / "field.cxa"));
    CHECK((u.ux.square() + u.uy.square()).sqrt().mean() < 0.05);
}

TEST_CASE("sweep covers the grid, summarizes consistently and is reproducible")
{
    ExperimentConfig c = small_config();
    c.pairs = {{0, 1}, {1, 0}};
    const fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
    const auto rows = cmd_sweep(c, a);
    cmd_sweep(c, b);
    CHECK(rows.size() == c.trajectories.size() * c.accelerations.size() * c.pairs.size());
    CHECK(line_count(slurp(a / "sweep.csv")) == int(rows.size()) + 1);
    CHECK(slurp(a / "sweep.csv") == slurp(b / "sweep.csv"));
    CHECK(slurp(a / "sweep_summary.csv") == slurp(b / "sweep_summary.csv"));

    const auto summary = summarize(rows);
    CHECK(summary.size() == c.trajectories.size() * c.accelerations.size());
    for (const auto& s : summary) {
        std::vector<double> dsc;
        for (const auto& r : rows)
            if (r.status == "ok" && r.trajectory == s.trajectory && r.R == s.R)
                dsc.push_back(r.eval.mean_dsc());
        REQUIRE(int(dsc.size()) == s.n);
        double mean = 0.0;
        for (double v : dsc)
            mean += v / double(dsc.size());
        double ss = 0.0;
        for (double v : dsc)
            ss += (v - mean) * (v - mean);
        CHECK(s.dsc_mean == doctest::Approx(mean).epsilon(1e-12));
        CHECK(s.dsc_std == doctest::Approx(std::sqrt(ss / double(dsc.size() - 1))).epsilon(1e-9));
    }

    c.pairs.clear();
    CHECK_THROWS_AS(cmd_sweep(c, a), ValidationError);
}

TEST_CASE("config JSON round trips and rejects unknown keys")
{
    ExperimentConfig c = small_config();
    c.scene = SceneKind::gaussian;
    c.seed = 17;
    c.train.batch = 3;
    c.train.curriculum = {{SceneKind::translation, 5, 2.0}};
    const ExperimentConfig back = parse_experiment_config(experiment_config_json(c));
    CHECK(back.rows == 48);
    CHECK(back.scene == SceneKind::gaussian);
    CHECK(back.seed == 17);
    CHECK(back.train.seed == 17);
    CHECK(back.train.batch == 3);
    CHECK(back.train.curriculum.size() == 1);
    CHECK(back.train.model.n_coils == 2);
    CHECK(experiment_config_json(back) == experiment_config_json(c));

    CHECK_THROWS_AS(parse_experiment_config(R"({"rows": 32, "colour": 1})"), ValidationError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"lrate": 1}})"), ValidationError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"rows": "big"})"), ValidationError);
    CHECK_THROWS_AS(parse_experiment_config("{not json"), ValidationError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"accelerations": [0.5]})"), ValidationError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"pairs": [[0, 9]]})"), ValidationError);
}

TEST_CASE("selftest oracles pass")
{
    const auto lines = run_selftest(1);
    CHECK(lines.size() == 5);
    for (const auto& l : lines) {
        INFO(l.name << ' ' << l.detail);
        CHECK(l.pass);
    }
    std::ostringstream os;
    write_selftest(os, lines);
    CHECK(line_count(os.str()) == 5);
}
