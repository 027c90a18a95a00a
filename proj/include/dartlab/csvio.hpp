#pragma once

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace dartlab {

/// Decimal form of a double at 17 significant digits (lossless round-trip).
std::string format_double(double v);

using CsvCell = std::variant<long long, double, std::string>;

/// CSV emitter: header row is exactly the schema, floats at 17 significant
/// digits, LF newlines. Rows must match the schema width.
class CsvWriter {
public:
    CsvWriter(std::vector<std::string> schema, const std::string& path);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<CsvCell>& cells);
    void close();

private:
    std::vector<std::string> schema_;
    std::string path_;
    std::string buf_;
    bool open_ = true;
};

void write_text_file(const std::string& path, const std::string& body);
std::string read_text_file(const std::string& path);
void write_summary(const nlohmann::json& summary, const std::string& path);

/// Parse a CSV produced by CsvWriter back into header + string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::string& path);

}  // namespace dartlab
