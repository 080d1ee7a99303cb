#include "latsched/pipeline/metrics.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace latsched::pipeline {

MetricsWriter::MetricsWriter(const std::string& path, const std::vector<std::string>& fields)
    : path_(path), field_count_(fields.size()) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics file " + path);
    out_ << "#";
    for (const auto& f : fields) out_ << " " << f;
    out_ << "\n";
    out_.flush();
}

void MetricsWriter::row(const std::vector<double>& values) {
    if (values.size() != field_count_) throw std::invalid_argument("metrics row width mismatch");
    char buf[40];
    std::string line;
    for (size_t i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
        if (i) line += ' ';
        line += buf;
    }
    line += '\n';
    out_ << line;
    out_.flush();
}

std::vector<std::vector<double>> read_metrics(const std::string& path,
                                              std::vector<std::string>* fields) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    size_t width = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (fields) {
                fields->clear();
                std::istringstream hs(line.substr(1));
                std::string f;
                while (hs >> f) fields->push_back(f);
            }
            width = 0;
            continue;
        }
        std::istringstream ls(line);
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (width == 0) width = vals.size();
        if (vals.size() != width) continue; // torn trailing line
        rows.push_back(std::move(vals));
    }
    return rows;
}

} // namespace latsched::pipeline
