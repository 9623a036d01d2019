#include "megenum/calibrate.hpp"
#include "megenum/cli.hpp"
#include "megenum/enumerate.hpp"
#include "megenum/forward.hpp"
#include "megenum/localize.hpp"
#include "megenum/rng.hpp"
#include "megenum/simulate.hpp"
#include "megenum/whiten.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace megenum;

namespace {

Matrix stack(const std::vector<Vec3>& v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 3);
    for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    return m;
}

std::vector<Vec3> unstack(const Matrix& m) {
    if (m.cols() != 3) throw InvalidInput("expected an (n, 3) array");
    std::vector<Vec3> v;
    for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m.row(i).transpose());
    return v;
}

OrientationMode mode_arg(const std::string& s) { return parse_orientation_mode(s); }

}  // namespace

PYBIND11_MODULE(_megenum, m) {
    m.doc() = "MEG source-count estimation: sphere forward model, AP localizer, F-ratio and AIC/MDL";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("hash64", &hash64, py::arg("base"), py::arg("index"));

    m.def(
        "sphere_dipole_field",
        [](const Vec3& loc, const Vec3& moment, const Vec3& pos, const Vec3& orient, double radius) {
            return sphere_dipole_field(loc, moment, pos, orient, SphereHeadModel{Vec3::Zero(), radius});
        },
        py::arg("dipole_location"), py::arg("moment"), py::arg("sensor_position"), py::arg("sensor_orientation"),
        py::arg("radius") = 0.09);

    m.def(
        "hemisphere_sensors",
        [](std::size_t count, double shell_radius) {
            const SensorArray s = make_hemisphere_sensor_array(count, shell_radius, SphereHeadModel{});
            return py::make_tuple(stack(s.positions), stack(s.orientations));
        },
        py::arg("count") = 102, py::arg("shell_radius") = 0.12);

    m.def(
        "lead_fields",
        [](const Matrix& points, const Matrix& sensor_positions, const Matrix& sensor_orientations) {
            auto grid = std::make_shared<SourceGrid>();
            grid->points = unstack(points);
            SensorArray sensors{unstack(sensor_positions), unstack(sensor_orientations)};
            return build_lead_fields(grid, sensors, SphereHeadModel{}).gains();
        },
        py::arg("points"), py::arg("sensor_positions"), py::arg("sensor_orientations"),
        "M x 3P gain matrix for a free-orientation grid");

    m.def(
        "subspace_fit",
        [](const Matrix& data, const Matrix& topographies) {
            const SubspaceFit f = subspace_fit(data, topographies);
            return py::make_tuple(f.amplitudes, f.residual_ss);
        },
        py::arg("data"), py::arg("topographies"));

    m.def(
        "ap_localize",
        [](const Matrix& data, const Matrix& points, const Matrix& sensor_positions, const Matrix& sensor_orientations,
           int k) {
            auto grid = std::make_shared<SourceGrid>();
            grid->points = unstack(points);
            SensorArray sensors{unstack(sensor_positions), unstack(sensor_orientations)};
            const LeadFieldSet lf = build_lead_fields(grid, sensors, SphereHeadModel{});
            const DipoleFit fit = ap_localize(data, lf, k, OrientationMode::free);
            py::dict d;
            d["point_indices"] = fit.point_indices;
            d["orientations"] = stack(fit.orientations);
            d["residual_ss"] = fit.residual_ss;
            d["passes_used"] = fit.passes_used;
            d["flags"] = fit.flags;
            return d;
        },
        py::arg("data"), py::arg("points"), py::arg("sensor_positions"), py::arg("sensor_orientations"), py::arg("k"),
        "free-orientation alternating-projection fit");

    m.def("gen_waveforms", &gen_waveforms, py::arg("q"), py::arg("n"), py::arg("freq_range_hz"),
          py::arg("sampling_rate_hz"), py::arg("seed"));
    m.def("apply_correlation", &apply_correlation, py::arg("waveforms"), py::arg("target"));
    m.def("sample_correlation", &sample_correlation, py::arg("rows"));
    m.def(
        "add_noise_at_snr",
        [](const Matrix& clean, double snr_db, std::uint64_t seed) {
            const MeasurementSet ms = add_noise_at_snr(clean, snr_db, seed);
            return py::make_tuple(ms.data, ms.noise_sigma);
        },
        py::arg("clean"), py::arg("snr_db"), py::arg("seed"));
    m.def("frobenius_snr_db", &frobenius_snr_db, py::arg("signal"), py::arg("noise"));

    m.def(
        "fit_lpc", [](const Matrix& baseline, int order) { return fit_lpc(baseline, order).coefficients; },
        py::arg("baseline"), py::arg("order") = 6);
    m.def(
        "spatial_whitener",
        [](const Matrix& cov, double f) { return build_spatial_whitener(cov, f).matrix; }, py::arg("noise_cov"),
        py::arg("regularization_fraction") = 0.10);
    m.def("estimate_snr", &estimate_snr, py::arg("data"), py::arg("baseline"));

    m.def(
        "dof", [](std::int64_t m_, std::int64_t n, std::int64_t k, const std::string& mode) { return dof(m_, n, k, mode_arg(mode)); },
        py::arg("m"), py::arg("n"), py::arg("k"), py::arg("mode") = "fixed");
    m.def(
        "f_ratio",
        [](double ssr, double ssf, std::int64_t dr, std::int64_t df) { return f_ratio(ssr, ssf, dr, df).value; },
        py::arg("ss_reduced"), py::arg("ss_full"), py::arg("dof_reduced"), py::arg("dof_full"));
    m.def("nominal_threshold", &nominal_threshold, py::arg("dof_reduced"), py::arg("dof_full"), py::arg("alpha"));
    m.def("eigen_spectrum", &eigen_spectrum, py::arg("data"));
    m.def("aic_estimate", &aic_estimate, py::arg("eigenvalues"), py::arg("n"));
    m.def("mdl_estimate", &mdl_estimate, py::arg("eigenvalues"), py::arg("n"));
    m.def(
        "decide", [](const std::vector<double>& f, double t) { return decide_uniform(f, t); }, py::arg("f_values"),
        py::arg("threshold"), "sequential decision on an F cascade with one threshold");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = run_cli(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "run the command-line tool in-process; returns (exit_code, stdout, stderr)");
}
