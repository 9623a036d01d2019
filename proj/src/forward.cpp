#include "megenum/forward.hpp"

#include "megenum/parallel.hpp"
#include "megenum/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace megenum {

namespace {

constexpr double kMu0Over4Pi = 1e-7;
constexpr double kUnitTolerance = 1e-9;

bool is_unit(const Vec3& v) { return std::abs(v.norm() - 1.0) <= kUnitTolerance; }

std::string format_vec(const Vec3& v) {
    std::ostringstream os;
    os << "(" << v.x() << ", " << v.y() << ", " << v.z() << ")";
    return os.str();
}

double radical_inverse(std::uint64_t index, unsigned base) {
    double result = 0.0;
    double fraction = 1.0 / base;
    while (index > 0) {
        result += static_cast<double>(index % base) * fraction;
        index /= base;
        fraction /= base;
    }
    return result;
}

}  // namespace

void validate(const SensorArray& sensors, const SphereHeadModel& head) {
    if (!(head.radius > 0.0)) throw InvalidInput("head radius must be positive");
    if (sensors.positions.empty()) throw InvalidInput("sensor array is empty");
    if (sensors.positions.size() != sensors.orientations.size())
        throw InvalidInput("sensor positions and orientations differ in count");
    for (std::size_t i = 0; i < sensors.size(); ++i) {
        if (!is_unit(sensors.orientations[i]))
            throw InvalidInput("sensor " + std::to_string(i) + " orientation is not a unit vector");
        if ((sensors.positions[i] - head.center).norm() <= head.radius)
            throw InvalidInput("sensor " + std::to_string(i) + " lies inside the head sphere");
    }
}

void validate(const SourceGrid& grid, const SphereHeadModel& head) {
    if (!(head.radius > 0.0)) throw InvalidInput("head radius must be positive");
    if (grid.fixed_orientations && grid.fixed_orientations->size() != grid.points.size())
        throw InvalidInput("grid orientations and points differ in count");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double r = (grid.points[i] - head.center).norm();
        if (r >= head.radius)
            throw InvalidInput("grid point " + std::to_string(i) + " " + format_vec(grid.points[i]) +
                               " is not strictly inside the head sphere");
        if (r <= head.radius * 1e-9)
            throw InvalidInput("grid point " + std::to_string(i) + " coincides with the sphere center");
        if (grid.fixed_orientations && !is_unit((*grid.fixed_orientations)[i]))
            throw InvalidInput("grid point " + std::to_string(i) + " fixed orientation is not a unit vector");
    }
}

LeadFieldSet::LeadFieldSet(Matrix gains, std::shared_ptr<const SourceGrid> grid)
    : gains_(std::move(gains)), grid_(std::move(grid)) {
    if (!grid_) throw InvalidInput("lead field set requires a grid");
    if (gains_.cols() % 3 != 0 || static_cast<std::size_t>(gains_.cols() / 3) != grid_->size())
        throw InvalidInput("gain matrix count does not match grid point count");
    if (!gains_.allFinite()) throw InvalidInput("lead field contains non-finite entries");
}

LeadFieldSet LeadFieldSet::transformed(const Matrix& transform) const {
    if (transform.cols() != gains_.rows()) throw InvalidInput("transform does not match sensor count");
    return LeadFieldSet(transform * gains_, grid_);
}

Vec3 sphere_dipole_field_vector(const Vec3& dipole_location, const Vec3& moment, const Vec3& sensor_position,
                                const SphereHeadModel& head) {
    const Vec3 r0 = dipole_location - head.center;
    const Vec3 r = sensor_position - head.center;
    const double r0n = r0.norm();
    const double rn = r.norm();
    if (!(head.radius > 0.0)) throw InvalidInput("head radius must be positive");
    if (r0n >= head.radius) throw InvalidInput("dipole " + format_vec(dipole_location) + " is not inside the head");
    if (r0n <= head.radius * 1e-9) throw InvalidInput("dipole at the sphere center is magnetically undefined");
    if (rn <= head.radius) throw InvalidInput("sensor " + format_vec(sensor_position) + " is not outside the head");

    const Vec3 a_vec = r - r0;
    const double a = a_vec.norm();
    const double a_dot_r = a_vec.dot(r);
    const double f = a * (rn * a + rn * rn - r0.dot(r));
    const Vec3 grad_f = (a * a / rn + a_dot_r / a + 2.0 * a + 2.0 * rn) * r - (a + 2.0 * rn + a_dot_r / a) * r0;
    const Vec3 q_cross_r0 = moment.cross(r0);
    return kMu0Over4Pi / (f * f) * (f * q_cross_r0 - q_cross_r0.dot(r) * grad_f);
}

double sphere_dipole_field(const Vec3& dipole_location, const Vec3& moment, const Vec3& sensor_position,
                           const Vec3& sensor_orientation, const SphereHeadModel& head) {
    return sphere_dipole_field_vector(dipole_location, moment, sensor_position, head).dot(sensor_orientation);
}

LeadFieldSet build_lead_fields(std::shared_ptr<const SourceGrid> grid, const SensorArray& sensors,
                               const SphereHeadModel& head) {
    if (!grid) throw InvalidInput("null grid");
    validate(sensors, head);
    if (grid->points.empty()) throw InvalidInput("grid is empty");
    const auto m = static_cast<Eigen::Index>(sensors.size());
    Matrix gains(m, 3 * static_cast<Eigen::Index>(grid->size()));
    parallel_for(grid->size(), [&](std::size_t p) {
        const Vec3& loc = grid->points[p];
        for (Eigen::Index s = 0; s < m; ++s) {
            for (int axis = 0; axis < 3; ++axis) {
                try {
                    gains(s, 3 * static_cast<Eigen::Index>(p) + axis) =
                        sphere_dipole_field(loc, Vec3::Unit(axis), sensors.positions[s], sensors.orientations[s], head);
                } catch (const InvalidInput& e) {
                    throw InvalidInput("grid point " + std::to_string(p) + ": " + e.what());
                }
            }
        }
    });
    return LeadFieldSet(std::move(gains), std::move(grid));
}

Vector topography(const LeadFieldSet& leadfields, std::size_t point_index, const Vec3& orientation) {
    if (point_index >= leadfields.point_count())
        throw InvalidInput("point index " + std::to_string(point_index) + " out of range");
    if (!is_unit(orientation)) throw InvalidInput("orientation is not a unit vector");
    return leadfields.gain(point_index) * orientation;
}

TranslatedGrid translate_grid(const SourceGrid& grid, const Vec3& offset_mm, const SphereHeadModel& head) {
    TranslatedGrid out{grid, {}};
    const Vec3 offset = offset_mm * 1e-3;
    for (std::size_t i = 0; i < out.grid.points.size(); ++i) {
        Vec3& p = out.grid.points[i];
        p += offset;
        const Vec3 rel = p - head.center;
        const double r = rel.norm();
        if (r >= head.radius) {
            p = head.center + rel * (0.99 * head.radius / r);
            out.clamped.push_back(i);
        }
    }
    return out;
}

SensorArray make_hemisphere_sensor_array(std::size_t count, double shell_radius, const SphereHeadModel& head) {
    if (count == 0) throw InvalidInput("sensor count must be positive");
    if (!(shell_radius > head.radius)) throw InvalidInput("sensor shell must lie outside the head");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    SensorArray array;
    for (std::size_t i = 0; i < count; ++i) {
        const double z = (static_cast<double>(i) + 0.5) / static_cast<double>(count);
        const double rho = std::sqrt(1.0 - z * z);
        const double phi = golden_angle * static_cast<double>(i);
        const Vec3 dir(rho * std::cos(phi), rho * std::sin(phi), z);
        array.positions.push_back(head.center + shell_radius * dir);
        array.orientations.push_back(dir.normalized());
    }
    return array;
}

OrientationField::OrientationField(std::uint64_t seed) {
    Rng rng(hash64(seed, 0x0f1e1dULL));
    for (int i = 0; i < 3; ++i) offset_(i) = rng.normal();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) slope_(i, j) = rng.normal();
}

Vec3 OrientationField::at(const Vec3& point, const SphereHeadModel& head) const {
    const Vec3 rel = point - head.center;
    const Vec3 radial = rel.normalized();
    const Vec3 f = offset_ + slope_ * (rel / head.radius);
    Vec3 tangential = f - f.dot(radial) * radial;
    if (tangential.norm() <= 1e-3 * std::max(f.norm(), 1e-12)) {
        // field is locally radial; fall back to the azimuthal direction
        tangential = Vec3::UnitZ().cross(radial);
        if (tangential.norm() < 1e-6) tangential = Vec3::UnitX().cross(radial);
    }
    return tangential.normalized();
}

SourceGrid make_shell_grid(const GridSpec& spec, const SphereHeadModel& head) {
    if (spec.count == 0) throw InvalidInput("grid point count must be positive");
    if (!(0.0 < spec.inner_fraction && spec.inner_fraction < spec.outer_fraction && spec.outer_fraction < 1.0))
        throw InvalidInput("grid shell fractions must satisfy 0 < inner < outer < 1");
    Rng rng(hash64(spec.stream_seed, 0x6a1dULL));
    const double shift[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    const double r1 = spec.inner_fraction * head.radius;
    const double r2 = spec.outer_fraction * head.radius;
    const double r1c = r1 * r1 * r1;
    const double r2c = r2 * r2 * r2;

    SourceGrid grid;
    grid.label = spec.label;
    grid.points.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::uint64_t index = i + 1;
        double u[3] = {radical_inverse(index, 2), radical_inverse(index, 3), radical_inverse(index, 5)};
        for (int d = 0; d < 3; ++d) u[d] = std::fmod(u[d] + shift[d], 1.0);
        const double r = std::cbrt(r1c + u[0] * (r2c - r1c));
        const double cos_theta = u[1];
        const double sin_theta = std::sqrt(1.0 - cos_theta * cos_theta);
        const double phi = 2.0 * std::numbers::pi * u[2];
        grid.points.push_back(head.center + r * Vec3(sin_theta * std::cos(phi), sin_theta * std::sin(phi), cos_theta));
    }
    if (spec.orientation_field_seed) {
        const OrientationField field(*spec.orientation_field_seed);
        std::vector<Vec3> orientations;
        orientations.reserve(grid.points.size());
        for (const Vec3& p : grid.points) orientations.push_back(field.at(p, head));
        grid.fixed_orientations = std::move(orientations);
    }
    return grid;
}

}  // namespace megenum
