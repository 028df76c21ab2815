#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "fbsde/errors.hpp"
#include "fbsde/table_io.hpp"

using namespace fbsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "fbsde_table_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("format_double round-trips awkward values") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::numeric_limits<double>::min(),
                   std::numeric_limits<double>::max(), std::nextafter(1.0, 2.0)}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("to_csv / parse_csv round trip") {
  Table t;
  t.header = {"t", "mean", "seed"};
  t.add_row({0.0, 1.0 / 3.0, 20240611});
  t.add_row({0.5, -1e-17, 20240611});
  const auto text = to_csv(t);
  CHECK(text.substr(0, 12) == "t,mean,seed\n");
  CHECK(parse_csv(text) == t);
  CHECK(t.column("mean") == 1);
  CHECK_THROWS_AS(t.column("sd"), InvalidArgument);
  CHECK_THROWS_AS(t.add_row({1.0}), InvalidArgument);
}

TEST_CASE("parse_csv tolerates CRLF and blank lines") {
  const auto t = parse_csv("a,b\r\n1,2\r\n\r\n3,4\r\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][1] == 4.0);
}

TEST_CASE("parse_csv errors name the offending line") {
  try {
    parse_csv("a,b\n1,2\n3\n");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  try {
    parse_csv("a,b\n1,x2\n");
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("write_file_atomic replaces content and leaves no temporary") {
  const auto p = scratch("atomic.csv");
  write_file_atomic(p, "x\n1\n");
  write_file_atomic(p, "x\n2\n");
  CHECK(read_table(p).rows.at(0).at(0) == 2.0);
  auto tmp = p;
  tmp += ".tmp";
  CHECK_FALSE(fs::exists(tmp));
}

TEST_CASE("I/O failures raise IoError") {
  CHECK_THROWS_AS(read_table(scratch("does_not_exist.csv")), IoError);
  const auto blocker = scratch("blocker");
  std::ofstream(blocker) << "file";
  CHECK_THROWS_AS(write_file_atomic(blocker / "x.csv", "x\n"), IoError);
}
