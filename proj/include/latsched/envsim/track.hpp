#pragma once

#include <string>
#include <vector>

namespace latsched::envsim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Closed polyline centerline in meters with a precomputed distance-field grid
// used by the renderer. Physics queries use exact segment projection.
class Track {
public:
    static Track circle(double radius, int waypoints);
    static Track from_waypoints(std::vector<Vec2> pts);
    static Track load(const std::string& path);
    void save(const std::string& path) const;

    double length() const { return total_len_; }
    const std::vector<Vec2>& waypoints() const { return pts_; }

    struct Projection {
        double arc = 0.0;  // arc-length position of the nearest centerline point, in [0, length)
        double dist = 0.0; // distance to the centerline
    };
    Projection project(double x, double y) const;

    Vec2 point_at(double arc) const;
    Vec2 tangent_at(double arc) const;
    Vec2 start() const { return pts_.front(); }
    double start_heading() const;

    // Distance to centerline via the bilinear grid (renderer fast path).
    double fast_distance(double x, double y) const;

    double min_x() const { return bx0_; }
    double max_x() const { return bx1_; }
    double min_y() const { return by0_; }
    double max_y() const { return by1_; }

    // Signed wrap of (b - a) into [-length/2, length/2).
    double arc_delta(double a, double b) const;

private:
    void finalize();

    std::vector<Vec2> pts_;
    std::vector<double> cum_; // cumulative arc length per waypoint
    double total_len_ = 0.0;
    double bx0_ = 0, bx1_ = 0, by0_ = 0, by1_ = 0; // grid bounds
    int gw_ = 0, gh_ = 0;
    double cell_ = 0.5;
    std::vector<float> grid_; // distance field samples
};

} // namespace latsched::envsim
