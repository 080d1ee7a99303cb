#include "latsched/substrate/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace latsched::substrate {

namespace {

void append_values(std::vector<char>& blob, const Tensor& t, Precision prec) {
    if (prec == Precision::f32) {
        for (double d : t.v) {
            float f = static_cast<float>(d);
            const char* p = reinterpret_cast<const char*>(&f);
            blob.insert(blob.end(), p, p + sizeof(float));
        }
    } else {
        const char* p = reinterpret_cast<const char*>(t.v.data());
        blob.insert(blob.end(), p, p + t.v.size() * sizeof(double));
    }
}

void write_atomic(const std::string& path, const char* data, size_t size) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out.write(data, static_cast<std::streamsize>(size));
        if (!out) throw std::runtime_error("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

struct ManifestEntry {
    std::string kind, name;
    int rows = 0, cols = 0;
    std::string dtype;
    size_t offset = 0;
};

} // namespace

void save_checkpoint(const std::string& path, const ParameterSet& params, const BufferSet& buffers,
                     Precision precision) {
    std::ostringstream manifest;
    std::vector<char> blob;
    const char* dtype = precision == Precision::f32 ? "f32" : "f64";
    manifest << "latsched-checkpoint 1\n";
    manifest << "dtype " << dtype << "\n";
    manifest << "version " << params.version() << "\n";
    manifest << "entries " << params.size() + buffers.size() << "\n";
    for (size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = params[i];
        manifest << "param " << p.name << " " << p.rows << " " << p.cols << " " << dtype << " "
                 << blob.size() << "\n";
        append_values(blob, p, precision);
    }
    for (size_t i = 0; i < buffers.size(); ++i) {
        const Tensor& t = buffers[i];
        manifest << "buffer " << buffers.name(i) << " " << t.rows << " " << t.cols << " " << dtype << " "
                 << blob.size() << "\n";
        append_values(blob, t, precision);
    }
    std::string m = manifest.str();
    write_atomic(path + ".bin", blob.data(), blob.size());
    write_atomic(path, m.data(), m.size());
}

void load_checkpoint(const std::string& path, ParameterSet& params, BufferSet& buffers) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint manifest " + path);
    std::string magic;
    int fmt = 0;
    in >> magic >> fmt;
    if (magic != "latsched-checkpoint" || fmt != 1)
        throw std::runtime_error("unrecognized checkpoint format in " + path);
    std::string key, dtype;
    uint64_t version = 0;
    size_t entries = 0;
    in >> key >> dtype;
    if (key != "dtype") throw std::runtime_error("malformed checkpoint manifest (dtype)");
    in >> key >> version;
    if (key != "version") throw std::runtime_error("malformed checkpoint manifest (version)");
    in >> key >> entries;
    if (key != "entries") throw std::runtime_error("malformed checkpoint manifest (entries)");

    std::vector<ManifestEntry> list(entries);
    for (auto& e : list) {
        in >> e.kind >> e.name >> e.rows >> e.cols >> e.dtype >> e.offset;
        if (!in) throw std::runtime_error("truncated checkpoint manifest " + path);
    }

    std::ifstream bin(path + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open checkpoint blob " + path + ".bin");

    auto read_into = [&](Tensor& t, const ManifestEntry& e) {
        if (t.rows != e.rows || t.cols != e.cols)
            throw std::runtime_error("checkpoint shape mismatch for " + e.name + ": file has " +
                                     std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                                     ", configured " + std::to_string(t.rows) + "x" +
                                     std::to_string(t.cols));
        bin.seekg(static_cast<std::streamoff>(e.offset));
        if (e.dtype == "f32") {
            std::vector<float> tmp(t.v.size());
            bin.read(reinterpret_cast<char*>(tmp.data()),
                     static_cast<std::streamsize>(tmp.size() * sizeof(float)));
            for (size_t k = 0; k < t.v.size(); ++k) t.v[k] = static_cast<double>(tmp[k]);
        } else if (e.dtype == "f64") {
            bin.read(reinterpret_cast<char*>(t.v.data()),
                     static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        } else {
            throw std::runtime_error("unknown dtype " + e.dtype + " in checkpoint");
        }
        if (!bin) throw std::runtime_error("truncated checkpoint blob for " + e.name);
    };

    size_t pi = 0, bi = 0;
    for (const auto& e : list) {
        if (e.kind == "param") {
            if (pi >= params.size()) throw std::runtime_error("checkpoint has more parameters than configured");
            Parameter& p = params[pi++];
            if (p.name != e.name)
                throw std::runtime_error("checkpoint parameter order mismatch: file " + e.name +
                                         " vs configured " + p.name);
            read_into(p, e);
        } else if (e.kind == "buffer") {
            if (bi >= buffers.size()) throw std::runtime_error("checkpoint has more buffers than configured");
            if (buffers.name(bi) != e.name)
                throw std::runtime_error("checkpoint buffer order mismatch: file " + e.name +
                                         " vs configured " + buffers.name(bi));
            read_into(buffers[bi++], e);
        } else {
            throw std::runtime_error("unknown manifest entry kind " + e.kind);
        }
    }
    if (pi != params.size() || bi != buffers.size())
        throw std::runtime_error("checkpoint is missing entries for " + path);
}

} // namespace latsched::substrate
