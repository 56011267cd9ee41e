#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ctseg::textio {

// Shortest decimal form that parses back to the identical double.
std::string fmt_full(double v);
// Fixed human-readable form for report files (10 significant digits).
std::string fmt_report(double v);

double parse_double(const std::string& s);
std::int64_t parse_int(const std::string& s);

// Line-based `key = value` files; '#' starts a comment line.
void write_kv(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& kv);
std::map<std::string, std::string> read_kv(const std::string& path);

// Minimal CSV without quoting (no field in this project contains commas).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
// Returns all rows including the header row.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace ctseg::textio
