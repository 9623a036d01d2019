#include "megenum/io.hpp"
#include "megenum/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

using namespace megenum;

namespace {

int parse_error_line(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ParseError& e) {
        return e.line();
    }
    return -1;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("megenum_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("measurement round trip is exact") {
    Rng rng(1);
    MeasurementSet m;
    m.data = rng.normal_matrix(5, 7) * 1e-13;
    m.data(0, 0) = -0.0;
    m.data(1, 1) = 1e-300;
    m.sampling_rate_hz = 600.0;
    const MeasurementSet back = parse_measurement(format_measurement(m));
    CHECK(back.data == m.data);
    CHECK(back.sampling_rate_hz == 600.0);
    CHECK(format_measurement(back) == format_measurement(m));
}

TEST_CASE("trial round trip is exact") {
    Rng rng(2);
    TrialSet t;
    t.baseline_samples = 4;
    for (int i = 0; i < 3; ++i) t.trials.push_back(rng.normal_matrix(2, 9));
    const TrialSet back = parse_trials(format_trials(t));
    CHECK(back.baseline_samples == 4);
    REQUIRE(back.trials.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(back.trials[i] == t.trials[i]);
}

TEST_CASE("malformed data files name the offending line") {
    CHECK(parse_error_line([] { parse_measurement("2 2 1000\n1 2\n3\n"); }) == 3);
    CHECK(parse_error_line([] { parse_measurement("2 2 1000\n1 2\n3 nan\n"); }) == 3);
    CHECK(parse_error_line([] { parse_measurement("2 2 1000\n1 2\n3 x\n"); }) == 3);
    CHECK(parse_error_line([] { parse_measurement("2 2 1000\n1 2\n"); }) >= 2);
    CHECK(parse_error_line([] { parse_measurement("2 2 1000\n1 2\n3 4\n5 6\n"); }) == 4);
    CHECK(parse_error_line([] { parse_measurement("2 2\n"); }) == 1);
    CHECK(parse_error_line([] { parse_measurement("0 2 1000\n"); }) == 1);
    CHECK(parse_error_line([] { parse_trials("1 1 3 3\n1 2 3\n"); }) == 1);
    try {
        parse_measurement("2 2 1000\n1 2\n3 inf\n", "data.txt");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).rfind("data.txt:3:", 0) == 0);
    }
}

TEST_CASE("sensor and grid CSV") {
    SensorArray s;
    s.positions = {Vec3(0.01, 0.02, 0.11), Vec3(-0.03, 0.0, 0.1)};
    s.orientations = {Vec3(0, 0, 1), Vec3(0.6, 0, 0.8)};
    const std::string text = format_sensors(s);
    CHECK(text.rfind("x,y,z,ox,oy,oz\n", 0) == 0);
    const SensorArray back = parse_sensors(text);
    CHECK(back.positions == s.positions);
    CHECK(back.orientations == s.orientations);

    SourceGrid g;
    g.points = {Vec3(0.01, 0.0, 0.03)};
    CHECK(format_grid(g).rfind("x,y,z\n", 0) == 0);
    CHECK_FALSE(parse_grid(format_grid(g)).fixed_orientations.has_value());
    g.fixed_orientations = std::vector<Vec3>{Vec3(1, 0, 0)};
    const SourceGrid og = parse_grid(format_grid(g));
    REQUIRE(og.fixed_orientations.has_value());
    CHECK((*og.fixed_orientations)[0] == Vec3(1, 0, 0));

    CHECK(parse_error_line([] { parse_sensors("x,y,z\n1,2,3\n"); }) == 1);
    CHECK(parse_error_line([] { parse_sensors("x,y,z,ox,oy,oz\n1,2,3,0,0\n"); }) == 2);
    CHECK(parse_error_line([] { parse_grid("x,y,z\n"); }) >= 1);
}

TEST_CASE("threshold and curve CSV") {
    ThresholdTable t;
    t.set(-4.0, 0, 1.3125, 0.75);
    t.set(-4.0, 1, 1.125);
    t.set(8.0, 0, 1.0625, 0.5);
    const std::string text = format_thresholds(t);
    CHECK(text.rfind("snr_db,k_reduced,threshold,mean_accuracy\n", 0) == 0);
    const ThresholdTable back = parse_thresholds(text);
    CHECK(back.lookup(-4.0, 0) == 1.3125);
    CHECK(back.find(-4.0, 0)->mean_accuracy == 0.75);
    CHECK(std::isnan(back.find(-4.0, 1)->mean_accuracy));
    CHECK(back.lookup(8.0, 0) == 1.0625);

    const ThresholdTable three = parse_thresholds("snr_db,k_reduced,threshold\n0,0,1.2\n0,1,1.1\n");
    CHECK(three.lookup(0.0, 1) == 1.1);
    CHECK(parse_error_line([] { parse_thresholds("snr_db,k_reduced,threshold\n0,0,-1\n"); }) == 2);
    CHECK(parse_error_line([] { parse_thresholds("snr,k,t\n0,0,1\n"); }) == 1);
    CHECK(parse_error_line([] { parse_thresholds("snr_db,k_reduced,threshold\n"); }) >= 1);

    AccuracyCurve c{0.0, 2, {1.0, 1.5}, {3, 4}, 4};
    const std::string curves = format_curves({c});
    CHECK(curves == "snr_db,q_true,threshold,accuracy\n0,2,1,0.75\n0,2,1.5,1\n");
}

TEST_CASE("results CSV header") {
    ComparisonRow r;
    r.run_id = 3;
    r.seed = 99;
    r.q_true = 2;
    r.rho = 0.9;
    r.model_error_mm = Vec3(1, 0, 0);
    r.q_hat_fratio = 2;
    r.q_hat_aic = 5;
    r.q_hat_mdl = 3;
    CHECK(format_results({r}) ==
          "run_id,seed,q_true,rho,snr_db,err_x_mm,err_y_mm,err_z_mm,q_hat_fratio,q_hat_aic,q_hat_mdl\n"
          "3,99,2,0.9,0,1,0,0,2,5,3\n");
}

TEST_CASE("enumeration record") {
    EnumerationResult r;
    r.q_hat = 1;
    r.snr_bin = 0.0;
    FStep s;
    s.k_reduced = 0;
    s.f.value = std::numeric_limits<double>::infinity();
    s.f.perfect_full_fit = true;
    s.threshold = 1.2;
    s.reject = true;
    s.dof_reduced = 100;
    s.dof_full = 97;
    r.steps.push_back(s);
    const std::string text = format_enumeration(r);
    CHECK(text.find("q_hat=1\n") != std::string::npos);
    CHECK(text.find("k_reduced,f_value,threshold,decision,dof_reduced,dof_full,ss_reduced,ss_full,flags\n") !=
          std::string::npos);
    CHECK(text.find("0,inf,1.2,reject,100,97,0,0,perfect_full_fit\n") != std::string::npos);
}

TEST_CASE("configuration files") {
    const Config c = Config::parse("# comment\nreps = 50  # inline\nsnr_levels_db = -4, 0, 4\n"
                                   "model_errors_mm = 1,0,0; 0,1,0\nflag = true\nname = desk\n",
                                   "test.cfg");
    CHECK(c.get_int("reps", 1) == 50);
    CHECK(c.get_doubles("snr_levels_db", {}) == std::vector<double>{-4, 0, 4});
    const auto errs = c.get_vec3s("model_errors_mm", {});
    REQUIRE(errs.size() == 2);
    CHECK(errs[1] == Vec3(0, 1, 0));
    CHECK(c.get_bool("flag", false));
    CHECK(c.require_string("name") == "desk");
    CHECK(c.get_double("missing", 2.5) == 2.5);

    SUBCASE("malformed values report the key and line") {
        const Config bad = Config::parse("a = 1\nreps = many\n", "bad.cfg");
        try {
            bad.get_int("reps", 1);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
            CHECK(std::string(e.what()).find("reps") != std::string::npos);
            CHECK(std::string(e.what()).find("bad.cfg") != std::string::npos);
        }
        CHECK_THROWS_AS(bad.require_double("absent"), ParseError);
    }
    SUBCASE("syntax errors") {
        CHECK(parse_error_line([] { Config::parse("a = 1\njunk\n"); }) == 2);
        CHECK(parse_error_line([] { Config::parse("a = 1\n\na = 2\n"); }) == 3);
        CHECK(parse_error_line([] { Config::parse(" = 2\n"); }) == 1);
    }
    SUBCASE("overrides, merging and unused keys") {
        Config base = Config::parse("reps = 10\nunused_key = 3\n", "file.cfg");
        base.set_override("reps=20");
        CHECK(base.get_int("reps", 0) == 20);
        CHECK_THROWS_AS(base.set_override("novalue"), InvalidInput);
        Config other = Config::parse("extra = 1\n", "other.cfg");
        base.merge(other);
        CHECK(base.has("extra"));
        CHECK(base.unused_keys("file.cfg") == std::vector<std::string>{"unused_key"});
        CHECK(base.unused_keys("other.cfg") == std::vector<std::string>{"extra"});
        CHECK(base.snapshot().at("reps") == "20");
    }
}

TEST_CASE("file helpers") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");

    const fs::path dir = scratch_dir("files");
    write_file_atomic(dir / "a.txt", "first");
    write_file_atomic(dir / "a.txt", "second");
    CHECK(read_file(dir / "a.txt") == "second");
    std::size_t entries = 0;
    for (const auto& e : fs::directory_iterator(dir)) entries += e.is_regular_file();
    CHECK(entries == 1);
    CHECK_THROWS(read_file(dir / "missing.txt"));
    fs::remove_all(dir);
}
