#pragma once

// Locale-independent CSV/JSON output: '.' decimal separator, LF line
// endings, doubles printed with 17 significant digits.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace opq::io {

std::string format_double(double value);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, std::initializer_list<std::string_view> header);
  CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header);

  CsvWriter& operator<<(double value);
  CsvWriter& operator<<(long long value);
  CsvWriter& operator<<(int value) { return *this << static_cast<long long>(value); }
  CsvWriter& operator<<(std::size_t value) { return *this << static_cast<long long>(value); }
  CsvWriter& operator<<(std::string_view text);
  void end_row();

 private:
  void separator();

  std::ofstream out_;
  std::size_t columns_ = 0;
  std::size_t column_ = 0;
};

void write_json(const std::filesystem::path& file, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& file);

}  // namespace opq::io
