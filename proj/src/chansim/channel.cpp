#include "latsched/chansim/channel.hpp"

#include "latsched/substrate/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latsched::chansim {

using substrate::hash_normal;
using substrate::RngStream;

void RadioSpec::validate() const {
    if (antennas < 1) throw std::invalid_argument("radio: antennas must be >= 1");
    if (noise_power_w <= 0.0) throw std::invalid_argument("radio: noise power must be positive");
    if (power_budget_w <= 0.0) throw std::invalid_argument("radio: power budget must be positive");
    if (snr_threshold <= 0.0) throw std::invalid_argument("radio: SNR threshold must be positive");
    if (array_positions.empty()) throw std::invalid_argument("radio: need at least one array");
    if (antennas % arrays() != 0)
        throw std::invalid_argument("radio: antennas must divide evenly across arrays");
}

double ChannelSnapshot::gain_sq() const {
    double sum = 0.0;
    for (const auto& c : g) sum += std::norm(c);
    return sum / static_cast<double>(subcarriers);
}

ScattererField ScattererField::make(uint64_t seed, int count, double radius_lo, double radius_hi,
                                    double bound_x0, double bound_x1, double bound_y0,
                                    double bound_y1) {
    ScattererField f;
    f.seed = seed;
    f.x_min = bound_x0;
    f.x_max = bound_x1;
    f.y_min = bound_y0;
    f.y_max = bound_y1;
    RngStream rng = substrate::derive_stream(seed, "chansim.scatterers");
    f.scatterers.resize(static_cast<size_t>(count));
    for (auto& s : f.scatterers) {
        double ang = rng.uniform(0.0, 2.0 * M_PI);
        double rad = rng.uniform(radius_lo, radius_hi);
        s.pos = {rad * std::cos(ang), rad * std::sin(ang), rng.uniform(2.0, 12.0)};
        double amp = rng.uniform(0.08, 0.2);
        double ph = rng.uniform(0.0, 2.0 * M_PI);
        s.gain = std::polar(amp, ph);
    }
    return f;
}

void ScattererField::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write scatterer field " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "# seed %llu bounds %.17g %.17g %.17g %.17g jitter %.17g\n",
                  static_cast<unsigned long long>(seed), x_min, x_max, y_min, y_max,
                  phase_jitter_std);
    out << buf;
    for (const auto& s : scatterers) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g\n", s.pos.x, s.pos.y, s.pos.z,
                      s.gain.real(), s.gain.imag());
        out << buf;
    }
}

ScattererField ScattererField::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scatterer field " + path);
    ScattererField f;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hs(line.substr(1));
            std::string word;
            unsigned long long seed = 0;
            while (hs >> word) {
                if (word == "seed") hs >> seed;
                else if (word == "bounds") hs >> f.x_min >> f.x_max >> f.y_min >> f.y_max;
                else if (word == "jitter") hs >> f.phase_jitter_std;
            }
            f.seed = seed;
            continue;
        }
        std::istringstream ls(line);
        Scatterer s;
        double re, im;
        if (ls >> s.pos.x >> s.pos.y >> s.pos.z >> re >> im) {
            s.gain = {re, im};
            f.scatterers.push_back(s);
        }
    }
    return f;
}

namespace {
Vec3 antenna_position(const RadioSpec& spec, int array_idx, int elem_idx) {
    // Elements form a grid per array: rows of up to 4 along x, layers along z,
    // half-wavelength spacing.
    const Vec3& base = spec.array_positions[static_cast<size_t>(array_idx)];
    int per = spec.antennas_per_array();
    int row_len = per >= 4 ? 4 : per;
    double d = spec.wavelength() / 2.0;
    int ix = elem_idx % row_len;
    int iz = elem_idx / row_len;
    return {base.x + (ix - (row_len - 1) / 2.0) * d, base.y, base.z + iz * d};
}

double distance(const Vec3& a, const Vec3& b) {
    return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                     (a.z - b.z) * (a.z - b.z));
}
} // namespace

ChannelSnapshot channel_at(double x, double y, int64_t slot, const ScattererField& field,
                           const RadioSpec& spec) {
    spec.validate();
    if (!field.in_bounds(x, y))
        throw std::invalid_argument("channel_at: position outside world bounds");

    const int K = spec.subcarriers;
    const double c0 = 299792458.0;
    ChannelSnapshot snap;
    snap.pos_x = x;
    snap.pos_y = y;
    snap.slot = slot;
    snap.subcarriers = K;
    snap.g.assign(static_cast<size_t>(spec.antennas) * K, {0.0, 0.0});

    Vec3 dev{x, y, spec.device_height};
    std::vector<double> freq(static_cast<size_t>(K));
    for (int k = 0; k < K; ++k)
        freq[static_cast<size_t>(k)] =
            spec.carrier_hz + (k - (K - 1) / 2.0) * (spec.bandwidth_hz / K);

    int per = spec.antennas_per_array();
    for (int a = 0; a < spec.arrays(); ++a) {
        double jit_los = field.phase_jitter_std *
                         hash_normal(field.seed, static_cast<uint64_t>(slot), static_cast<uint64_t>(a), 1);
        for (int e = 0; e < per; ++e) {
            int n = a * per + e;
            Vec3 ant = antenna_position(spec, a, e);
            double d_los = distance(dev, ant);
            double amp_los = 1.0 / d_los;
            for (int k = 0; k < K; ++k) {
                double phase = -2.0 * M_PI * d_los * freq[static_cast<size_t>(k)] / c0 + jit_los;
                snap.g[static_cast<size_t>(n) * K + k] += std::polar(amp_los, phase);
            }
            for (size_t s = 0; s < field.scatterers.size(); ++s) {
                const Scatterer& sc = field.scatterers[s];
                double jit = field.phase_jitter_std *
                             hash_normal(field.seed, static_cast<uint64_t>(slot), 1000 + s, 2);
                double d = distance(dev, sc.pos) + distance(sc.pos, ant);
                double amp = std::abs(sc.gain) / d;
                double base = std::arg(sc.gain) + jit;
                for (int k = 0; k < K; ++k) {
                    double phase = base - 2.0 * M_PI * d * freq[static_cast<size_t>(k)] / c0;
                    snap.g[static_cast<size_t>(n) * K + k] += std::polar(amp, phase);
                }
            }
        }
    }
    return snap;
}

double snr(const ChannelSnapshot& g, double power_w, double noise_power_w) {
    if (power_w < 0.0) throw std::invalid_argument("snr: negative transmit power");
    return g.gain_sq() * power_w / noise_power_w;
}

double required_power(const ChannelSnapshot& g, double snr_threshold, double noise_power_w) {
    double gain = g.gain_sq();
    if (gain <= 0.0) throw std::domain_error("required_power: singular channel (zero gain)");
    return snr_threshold * noise_power_w / gain;
}

bool feasible(double power_w, const RadioSpec& spec) {
    return power_w >= 0.0 && power_w <= spec.power_budget_w;
}

void export_channel_trace(const std::string& path, const std::vector<ChannelSnapshot>& trace,
                          const RadioSpec& spec) {
    std::ofstream manifest(path);
    if (!manifest) throw std::runtime_error("cannot write trace manifest " + path);
    manifest << "antennas " << spec.antennas << "\n"
             << "subcarriers " << spec.subcarriers << "\n"
             << "slots " << trace.size() << "\n"
             << "layout interleaved-re-im-f64-le\n";
    std::ofstream bin(path + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write trace blob " + path + ".bin");
    for (const auto& snap : trace) {
        for (const auto& c : snap.g) {
            double re = c.real(), im = c.imag();
            bin.write(reinterpret_cast<const char*>(&re), sizeof(double));
            bin.write(reinterpret_cast<const char*>(&im), sizeof(double));
        }
    }
}

} // namespace latsched::chansim
