#pragma once

#include "megenum/types.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace megenum {

/// Point magnetometers: position (m, head coordinates) and unit measurement direction.
struct SensorArray {
    std::vector<Vec3> positions;
    std::vector<Vec3> orientations;

    std::size_t size() const { return positions.size(); }
};

struct SphereHeadModel {
    Vec3 center = Vec3::Zero();
    double radius = 0.09;
};

enum class GridLabel { simulation, reconstruction };

/// Candidate source locations. `fixed_orientations` is present only for
/// fixed-orientation work and then holds one unit vector per point.
struct SourceGrid {
    std::vector<Vec3> points;
    std::optional<std::vector<Vec3>> fixed_orientations;
    GridLabel label = GridLabel::reconstruction;

    std::size_t size() const { return points.size(); }
};

void validate(const SensorArray& sensors, const SphereHeadModel& head);
void validate(const SourceGrid& grid, const SphereHeadModel& head);

/// Per-point M x 3 gain matrices stored side by side in one M x 3P block
/// (tesla per ampere-meter). Point p occupies columns [3p, 3p + 3).
class LeadFieldSet {
public:
    LeadFieldSet(Matrix gains, std::shared_ptr<const SourceGrid> grid);

    Eigen::Index sensor_count() const { return gains_.rows(); }
    std::size_t point_count() const { return static_cast<std::size_t>(gains_.cols() / 3); }

    auto gain(std::size_t point) const { return gains_.middleCols(3 * static_cast<Eigen::Index>(point), 3); }
    const Matrix& gains() const { return gains_; }
    const SourceGrid& grid() const { return *grid_; }
    std::shared_ptr<const SourceGrid> grid_ptr() const { return grid_; }

    /// Same grid, gains premultiplied by `transform` (e.g. a spatial whitener).
    LeadFieldSet transformed(const Matrix& transform) const;

private:
    Matrix gains_;
    std::shared_ptr<const SourceGrid> grid_;
};

/// Reading of one magnetometer for a current dipole inside a spherically
/// symmetric conductor (closed-form Sarvas field projected on the sensor axis).
double sphere_dipole_field(const Vec3& dipole_location, const Vec3& moment, const Vec3& sensor_position,
                           const Vec3& sensor_orientation, const SphereHeadModel& head);

/// Full external field vector (tesla) for the same geometry.
Vec3 sphere_dipole_field_vector(const Vec3& dipole_location, const Vec3& moment, const Vec3& sensor_position,
                                const SphereHeadModel& head);

LeadFieldSet build_lead_fields(std::shared_ptr<const SourceGrid> grid, const SensorArray& sensors,
                               const SphereHeadModel& head);

/// Topography l = L(p) o for one grid point.
Vector topography(const LeadFieldSet& leadfields, std::size_t point_index, const Vec3& orientation);

struct TranslatedGrid {
    SourceGrid grid;
    std::vector<std::size_t> clamped;  ///< indices pulled back inside the head
};

/// Shifts every point by `offset_mm` (millimeters). Points that would leave
/// the head are clamped radially to 0.99 * radius and listed in `clamped`.
TranslatedGrid translate_grid(const SourceGrid& grid, const Vec3& offset_mm, const SphereHeadModel& head);

/// Radial magnetometers on the upper hemisphere of a shell (Fibonacci sampling).
SensorArray make_hemisphere_sensor_array(std::size_t count, double shell_radius, const SphereHeadModel& head);

/// Smooth tangential orientation field. Neighbouring points get similar
/// orientations, mimicking cortical normals shared by nearby grid points.
class OrientationField {
public:
    explicit OrientationField(std::uint64_t seed);
    Vec3 at(const Vec3& point, const SphereHeadModel& head) const;

private:
    Vec3 offset_;
    Eigen::Matrix3d slope_;
};

struct GridSpec {
    std::size_t count = 5000;
    double inner_fraction = 0.3;  ///< of head radius
    double outer_fraction = 0.9;
    std::uint64_t stream_seed = 1;  ///< selects the quasi-random stream
    std::optional<std::uint64_t> orientation_field_seed;  ///< set for fixed-orientation grids
    GridLabel label = GridLabel::reconstruction;
};

/// Quasi-random (rotated Halton) points filling the upper half of a
/// spherical shell with uniform volume density.
SourceGrid make_shell_grid(const GridSpec& spec, const SphereHeadModel& head);

}  // namespace megenum
