#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/io.hpp"

using namespace opq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  const auto dir = fs::temp_directory_path() / "opq_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("doubles print with 17 significant digits and round trip") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 3.141592653589793}) {
    const auto s = io::format_double(v);
    CHECK(std::stod(s) == v);
    CHECK(s.find(',') == std::string::npos);
  }
  CHECK(io::format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(io::format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(io::format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("CSV writer emits a header, LF endings and exact values") {
  const auto file = scratch("sub/dir/table.csv");
  fs::remove_all(file.parent_path());
  {
    io::CsvWriter csv(file, {"a", "b", "c"});
    csv << 0.1 << 7 << "x";
    csv.end_row();
    csv << -1.5 << std::size_t{3} << "y";
    csv.end_row();
  }
  const auto text = slurp(file);
  CHECK(text == "a,b,c\n0.10000000000000001,7,x\n-1.5,3,y\n");
  CHECK(text.find('\r') == std::string::npos);
}

TEST_CASE("JSON files round trip and unreadable input is a usage error") {
  const auto file = scratch("doc.json");
  const nlohmann::json doc = {{"x", 0.1}, {"list", {1, 2, 3}}};
  io::write_json(file, doc);
  CHECK(io::read_json(file) == doc);

  std::ofstream(scratch("bad.json")) << "{ not json";
  try {
    io::read_json(scratch("bad.json"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Usage);
  }
  CHECK_THROWS_AS(io::read_json(scratch("missing.json")), Error);
}
