#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace latsched::pipeline {

// Append-only line-delimited metrics with a named-field header. Rows are
// flushed as written so a crash loses at most a partial last line, which
// readers tolerate.
class MetricsWriter {
public:
    MetricsWriter() = default;
    MetricsWriter(const std::string& path, const std::vector<std::string>& fields);

    void row(const std::vector<double>& values);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    size_t field_count_ = 0;
    std::ofstream out_;
};

// Reads rows back, skipping the header and any torn trailing line.
std::vector<std::vector<double>> read_metrics(const std::string& path,
                                              std::vector<std::string>* fields = nullptr);

} // namespace latsched::pipeline
