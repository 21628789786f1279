#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

namespace dtok {

/// Command report: ordered scalar fields plus an optional table of rows.
/// Rendered as key=value lines for stdout and as a JSON manifest on disk.
/// Non-finite numbers are stored as the strings "inf", "-inf" or "nan".
class Report {
 public:
  using Json = nlohmann::ordered_json;

  explicit Report(std::string command = {});

  const std::string& command() const noexcept { return command_; }

  void set(std::string_view key, double value);
  void set(std::string_view key, long long value);
  void set(std::string_view key, std::size_t value) { set(key, static_cast<long long>(value)); }
  void set(std::string_view key, int value) { set(key, static_cast<long long>(value)); }
  void set(std::string_view key, std::string value);
  void set(std::string_view key, const char* value) { set(key, std::string(value)); }
  void add_row(Json row);

  const Json& fields() const noexcept { return fields_; }
  const Json& rows() const noexcept { return rows_; }

  /// One "key=value" line per field, then one "row key=value ..." line per row.
  std::string text(bool include_rows = true) const;
  Json to_json() const;
  void save_json(const std::filesystem::path& path) const;
  static Report load_json(const std::filesystem::path& path);

  static Json number(double value);
  static std::string format(const Json& value);

 private:
  std::string command_;
  Json fields_ = Json::object();
  Json rows_ = Json::array();
};

}  // namespace dtok
