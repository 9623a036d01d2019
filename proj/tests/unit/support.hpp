#pragma once

#include "megenum/forward.hpp"
#include "megenum/rng.hpp"

#include <memory>

namespace megenum::testing {

inline Vec3 random_interior_point(Rng& rng, const SphereHeadModel& head, double lo = 0.2, double hi = 0.9) {
    const double r = head.radius * rng.uniform(lo, hi);
    return head.center + r * rng.unit_vector();
}

inline Vec3 tangential(const Vec3& point, const SphereHeadModel& head, Rng& rng) {
    const Vec3 radial = (point - head.center).normalized();
    Vec3 v = rng.unit_vector();
    v -= v.dot(radial) * radial;
    return v.normalized();
}

/// Fixed-orientation grid of `count` quasi-random points with its lead fields.
inline LeadFieldSet small_world(std::size_t count, std::uint64_t seed, bool fixed, const SensorArray& sensors,
                                const SphereHeadModel& head = {}) {
    GridSpec spec;
    spec.count = count;
    spec.stream_seed = seed;
    if (fixed) spec.orientation_field_seed = seed + 100;
    auto grid = std::make_shared<const SourceGrid>(make_shell_grid(spec, head));
    return build_lead_fields(grid, sensors, head);
}

}  // namespace megenum::testing
