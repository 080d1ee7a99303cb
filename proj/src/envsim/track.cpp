#include "latsched/envsim/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace latsched::envsim {

namespace {
double seg_distance(const Vec2& p, const Vec2& a, const Vec2& b, double* t_out) {
    double vx = b.x - a.x, vy = b.y - a.y;
    double wx = p.x - a.x, wy = p.y - a.y;
    double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0) : 0.0;
    double dx = wx - t * vx, dy = wy - t * vy;
    if (t_out) *t_out = t;
    return std::sqrt(dx * dx + dy * dy);
}
} // namespace

Track Track::circle(double radius, int waypoints) {
    std::vector<Vec2> pts(static_cast<size_t>(waypoints));
    for (int i = 0; i < waypoints; ++i) {
        double ang = 2.0 * M_PI * i / waypoints;
        pts[static_cast<size_t>(i)] = {radius * std::cos(ang), radius * std::sin(ang)};
    }
    return from_waypoints(std::move(pts));
}

Track Track::from_waypoints(std::vector<Vec2> pts) {
    if (pts.size() < 3) throw std::invalid_argument("track needs at least 3 waypoints");
    Track t;
    t.pts_ = std::move(pts);
    t.finalize();
    return t;
}

Track Track::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open track file " + path);
    std::vector<Vec2> pts;
    double x, y;
    while (in >> x >> y) pts.push_back({x, y});
    return from_waypoints(std::move(pts));
}

void Track::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write track file " + path);
    char buf[80];
    for (const Vec2& p : pts_) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.x, p.y);
        out << buf;
    }
}

void Track::finalize() {
    size_t n = pts_.size();
    cum_.assign(n + 1, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const Vec2& a = pts_[i];
        const Vec2& b = pts_[(i + 1) % n];
        cum_[i + 1] = cum_[i] + std::hypot(b.x - a.x, b.y - a.y);
    }
    total_len_ = cum_[n];

    double x0 = pts_[0].x, x1 = pts_[0].x, y0 = pts_[0].y, y1 = pts_[0].y;
    for (const Vec2& p : pts_) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    const double margin = 25.0;
    bx0_ = x0 - margin;
    bx1_ = x1 + margin;
    by0_ = y0 - margin;
    by1_ = y1 + margin;
    gw_ = static_cast<int>(std::ceil((bx1_ - bx0_) / cell_)) + 1;
    gh_ = static_cast<int>(std::ceil((by1_ - by0_) / cell_)) + 1;
    grid_.assign(static_cast<size_t>(gw_) * gh_, 0.0f);
    for (int gy = 0; gy < gh_; ++gy)
        for (int gx = 0; gx < gw_; ++gx) {
            Vec2 p{bx0_ + gx * cell_, by0_ + gy * cell_};
            double best = 1e30;
            for (size_t i = 0; i < n; ++i)
                best = std::min(best, seg_distance(p, pts_[i], pts_[(i + 1) % n], nullptr));
            grid_[static_cast<size_t>(gy) * gw_ + gx] = static_cast<float>(best);
        }
}

Track::Projection Track::project(double x, double y) const {
    size_t n = pts_.size();
    Vec2 p{x, y};
    double best = 1e30, best_arc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double t;
        double d = seg_distance(p, pts_[i], pts_[(i + 1) % n], &t);
        if (d < best) {
            best = d;
            best_arc = cum_[i] + t * (cum_[i + 1] - cum_[i]);
        }
    }
    if (best_arc >= total_len_) best_arc -= total_len_;
    return {best_arc, best};
}

Vec2 Track::point_at(double arc) const {
    arc = std::fmod(arc, total_len_);
    if (arc < 0) arc += total_len_;
    size_t i = static_cast<size_t>(std::upper_bound(cum_.begin(), cum_.end(), arc) - cum_.begin());
    if (i > 0) --i;
    if (i >= pts_.size()) i = pts_.size() - 1;
    double seg = cum_[i + 1] - cum_[i];
    double t = seg > 0 ? (arc - cum_[i]) / seg : 0.0;
    const Vec2& a = pts_[i];
    const Vec2& b = pts_[(i + 1) % pts_.size()];
    return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

Vec2 Track::tangent_at(double arc) const {
    arc = std::fmod(arc, total_len_);
    if (arc < 0) arc += total_len_;
    size_t i = static_cast<size_t>(std::upper_bound(cum_.begin(), cum_.end(), arc) - cum_.begin());
    if (i > 0) --i;
    if (i >= pts_.size()) i = pts_.size() - 1;
    const Vec2& a = pts_[i];
    const Vec2& b = pts_[(i + 1) % pts_.size()];
    double len = std::hypot(b.x - a.x, b.y - a.y);
    return len > 0 ? Vec2{(b.x - a.x) / len, (b.y - a.y) / len} : Vec2{1.0, 0.0};
}

double Track::start_heading() const {
    Vec2 t = tangent_at(0.0);
    return std::atan2(t.y, t.x);
}

double Track::fast_distance(double x, double y) const {
    double fx = (x - bx0_) / cell_;
    double fy = (y - by0_) / cell_;
    fx = std::clamp(fx, 0.0, static_cast<double>(gw_ - 1) - 1e-9);
    fy = std::clamp(fy, 0.0, static_cast<double>(gh_ - 1) - 1e-9);
    int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    double tx = fx - ix, ty = fy - iy;
    auto g = [&](int gy, int gx) { return static_cast<double>(grid_[static_cast<size_t>(gy) * gw_ + gx]); };
    double v0 = g(iy, ix) * (1 - tx) + g(iy, ix + 1) * tx;
    double v1 = g(iy + 1, ix) * (1 - tx) + g(iy + 1, ix + 1) * tx;
    return v0 * (1 - ty) + v1 * ty;
}

double Track::arc_delta(double a, double b) const {
    double d = b - a;
    while (d >= total_len_ / 2) d -= total_len_;
    while (d < -total_len_ / 2) d += total_len_;
    return d;
}

} // namespace latsched::envsim
