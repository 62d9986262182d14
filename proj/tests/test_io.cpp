#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "placeopt/io.hpp"
#include "placeopt/random.hpp"

using namespace placeopt;

TEST_CASE("doubles round-trip through their text form") {
  NormalStream rng(1);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.normal() * std::pow(10.0, static_cast<int>(rng.next_u64() % 40) - 20);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("matrix csv round trip is exact") {
  NormalStream rng(2);
  const Matrix m = rng.normal_matrix(3, 4);
  std::stringstream ss;
  write_matrix_csv(ss, m);
  const Matrix back = read_matrix_csv(ss);
  CHECK(back == m);
}

TEST_CASE("matrix json forms") {
  NormalStream rng(3);
  const Matrix m = rng.normal_matrix(2, 3);
  const Json j = matrix_to_json(m);
  CHECK(j["rows"] == 2);
  CHECK(j["cols"] == 3);
  CHECK(j["entries"].size() == 6);
  CHECK(j["entries"][1].get<double>() == m(0, 1));
  CHECK(matrix_from_json(j, "m") == m);
  CHECK(matrix_from_json(Json::parse("[[1,2],[3,4]]"), "m")(1, 0) == 3.0);
  CHECK(matrix_from_json(Json::parse("[1,2,3]"), "m").cols() == 1);
  CHECK(matrix_from_json(Json(2.5), "m")(0, 0) == 2.5);
  try {
    matrix_from_json(Json::parse("[[1,2],[3]]"), "lq.B");
    FAIL("ragged matrix accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).rfind("lq.B:", 0) == 0);
  }
  CHECK_THROWS_AS(matrix_from_json(Json::parse(R"({"rows":2,"cols":2,"entries":[1,2,3]})"), "m"), Error);
}

TEST_CASE("csv table round trip and schema errors") {
  CsvTable t;
  t.header = {"dim", "cost"};
  t.add_row({"50", "0.125"});
  t.add_row({"200", "0.25"});
  const CsvTable back = CsvTable::parse(t.str());
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.column("cost") == 1);
  CHECK_THROWS_AS(back.column("x"), Error);
  const auto dir = std::filesystem::temp_directory_path() / "placeopt_io_test";
  std::filesystem::create_directories(dir);
  t.write((dir / "t.csv").string());
  CHECK(read_text((dir / "t.csv").string()) == t.str());
}
