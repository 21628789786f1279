#include "dtok/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dtok/error.hpp"

namespace dtok {

Report::Report(std::string command) : command_(std::move(command)) {}

Report::Json Report::number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return value;
}

void Report::set(std::string_view key, double value) { fields_[std::string(key)] = number(value); }
void Report::set(std::string_view key, long long value) { fields_[std::string(key)] = value; }
void Report::set(std::string_view key, std::string value) { fields_[std::string(key)] = std::move(value); }
void Report::add_row(Json row) { rows_.push_back(std::move(row)); }

std::string Report::format(const Json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", value.get<double>());
    return buf;
  }
  return value.dump();
}

std::string Report::text(bool include_rows) const {
  std::ostringstream out;
  for (const auto& [k, v] : fields_.items()) out << k << '=' << format(v) << '\n';
  for (const auto& row : include_rows ? rows_ : Json::array()) {
    out << "row";
    for (const auto& [k, v] : row.items()) out << ' ' << k << '=' << format(v);
    out << '\n';
  }
  return out.str();
}

Report::Json Report::to_json() const {
  Json j = Json::object();
  j["command"] = command_;
  j["fields"] = fields_;
  j["rows"] = rows_;
  return j;
}

void Report::save_json(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << to_json().dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + path.string());
}

Report Report::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    fail(ErrorCode::kUnsupported, path.string() + ": " + e.what());
  }
  require(j.is_object() && j.contains("fields") && j.contains("rows"), ErrorCode::kUnsupported,
          path.string() + " is not a report manifest");
  Report r(j.value("command", std::string{}));
  r.fields_ = j["fields"];
  r.rows_ = j["rows"];
  return r;
}

}  // namespace dtok
