#include "dartlab/csvio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dartlab/errors.hpp"

namespace dartlab {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> schema, const std::string& path)
    : schema_(std::move(schema)), path_(path) {
    if (schema_.empty()) throw ConfigError("csv schema must not be empty");
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        if (i) buf_ += ',';
        buf_ += schema_[i];
    }
    buf_ += '\n';
}

CsvWriter::~CsvWriter() {
    if (open_) {
        try {
            close();
        } catch (...) {
        }
    }
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
    if (!open_) throw IoError("csv writer already closed: " + path_);
    if (cells.size() != schema_.size()) {
        std::size_t at = std::min(cells.size(), schema_.size() - 1);
        throw ConfigError("csv row width " + std::to_string(cells.size()) +
                          " does not match schema width " + std::to_string(schema_.size()) +
                          " (column '" + schema_[at] + "')");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) buf_ += ',';
        if (auto* n = std::get_if<long long>(&cells[i]))
            buf_ += std::to_string(*n);
        else if (auto* d = std::get_if<double>(&cells[i]))
            buf_ += format_double(*d);
        else
            buf_ += std::get<std::string>(cells[i]);
    }
    buf_ += '\n';
}

void CsvWriter::close() {
    open_ = false;
    write_text_file(path_, buf_);
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << body;
    if (!out) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_summary(const nlohmann::json& summary, const std::string& path) {
    write_text_file(path, summary.dump(2) + "\n");
}

CsvTable read_csv(const std::string& path) {
    CsvTable table;
    std::istringstream in(read_text_file(path));
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (first) {
            table.header = cells;
            first = false;
        } else {
            table.rows.push_back(cells);
        }
    }
    return table;
}

}  // namespace dartlab
