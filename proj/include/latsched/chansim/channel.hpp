#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace latsched::chansim {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

struct RadioSpec {
    int antennas = 40;           // total across all arrays (5 arrays of 4x2)
    double carrier_hz = 2.14e9;
    int subcarriers = 16;
    double bandwidth_hz = 20e6;
    double noise_power_w = 1e-9;      // sigma^2
    double snr_threshold = 100.0;     // linear decode threshold
    double power_budget_w = 1e-4;     // rho_max
    std::vector<Vec3> array_positions = {
        {45.0, 0.0, 10.0},   {13.9, 42.8, 10.0},  {-36.4, 26.5, 10.0},
        {-36.4, -26.5, 10.0}, {13.9, -42.8, 10.0},
    };
    double device_height = 1.0;

    int arrays() const { return static_cast<int>(array_positions.size()); }
    int antennas_per_array() const { return antennas / arrays(); }
    double wavelength() const { return 299792458.0 / carrier_hz; }
    void validate() const;
};

// Complex uplink channel for one device position and slot. Entries are laid
// out antenna-major: g[n * subcarriers + k].
struct ChannelSnapshot {
    std::vector<std::complex<double>> g;
    double pos_x = 0.0;
    double pos_y = 0.0;
    int64_t slot = 0;
    int subcarriers = 1;

    // Receive-combined gain: sum over antennas, averaged across subcarriers.
    double gain_sq() const;
};

struct Scatterer {
    Vec3 pos;
    std::complex<double> gain;
};

// Fixed scene standing in for ray tracing: one line-of-sight path per array
// plus a set of static scatterers, all deterministic in (position, slot,
// seed). Amplitudes decay as 1/distance (free-space exponent 1.0) and each
// path picks up a small slot-indexed phase jitter.
struct ScattererField {
    uint64_t seed = 0;
    std::vector<Scatterer> scatterers;
    double x_min = -100, x_max = 100, y_min = -100, y_max = 100;
    double phase_jitter_std = 0.02;

    static ScattererField make(uint64_t seed, int count, double radius_lo, double radius_hi,
                               double bound_x0, double bound_x1, double bound_y0, double bound_y1);
    void save(const std::string& path) const;
    static ScattererField load(const std::string& path);
    bool in_bounds(double x, double y) const {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }
};

ChannelSnapshot channel_at(double x, double y, int64_t slot, const ScattererField& field,
                           const RadioSpec& spec);

// SNR_t = |g|^2 * rho / sigma^2.
double snr(const ChannelSnapshot& g, double power_w, double noise_power_w);

// Power meeting the decode threshold exactly: SNRbar * sigma^2 / |g|^2.
double required_power(const ChannelSnapshot& g, double snr_threshold, double noise_power_w);

// Constraint check: 0 <= rho <= rho_max (meeting rho implies the SNR
// threshold is met by construction).
bool feasible(double power_w, const RadioSpec& spec);

// Interleaved re/im little-endian blob at path.bin plus a text manifest.
void export_channel_trace(const std::string& path, const std::vector<ChannelSnapshot>& trace,
                          const RadioSpec& spec);

} // namespace latsched::chansim
