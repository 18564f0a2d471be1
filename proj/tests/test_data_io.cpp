#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "stimpute/data_io.hpp"

using namespace stimpute;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("speed matrix files round-trip") {
  SpeedMatrix m;
  m.node_ids = {"node_0", "node_1"};
  m.values.resize(2, 4);
  m.values << 55.25, 0.0, 61.125, 58.0,
              49.5, 50.75, 0.0, 52.625;
  m.start_time = detail::parse_time("2012-03-01T00:00:00", "test");
  m.step_seconds = 300;

  const auto path = temp_file("stimpute_speed_test.csv");
  save_speed_matrix(m, path.string());
  const auto loaded = load_speed_matrix(path.string());
  std::filesystem::remove(path);

  CHECK(loaded.node_ids == m.node_ids);
  CHECK(loaded.values == m.values);  // exact for representable values
  CHECK(loaded.start_time == m.start_time);
  CHECK(loaded.step_seconds == 300);
}

TEST_CASE("speed matrix loader reports malformed content with location") {
  const auto path = temp_file("stimpute_speed_bad.csv");
  {
    std::ofstream out(path);
    out << "node_0,node_1\n"
        << "2012-03-01T00:00:00,51.5,52.5\n"
        << "2012-03-01T00:05:00,nan,53.5\n";
  }
  CHECK_THROWS_WITH(load_speed_matrix(path.string()),
                    Catch::Matchers::ContainsSubstring(":3") &&
                        Catch::Matchers::ContainsSubstring("column 2"));

  {
    std::ofstream out(path);
    out << "node_0,node_1\n"
        << "2012-03-01T00:00:00,51.5\n";
  }
  CHECK_THROWS_WITH(load_speed_matrix(path.string()),
                    Catch::Matchers::ContainsSubstring("expected 3 fields"));

  {
    std::ofstream out(path);
    out << "node_0,node_1\n"
        << "midnight,51.5,52.5\n";
  }
  CHECK_THROWS_WITH(load_speed_matrix(path.string()),
                    Catch::Matchers::ContainsSubstring("timestamp"));
  std::filesystem::remove(path);
}

TEST_CASE("graph alignment reorders to the matrix node order") {
  TrafficGraph g;
  g.node_ids = {"b", "a", "c"};
  g.adjacency = Eigen::MatrixXd::Zero(3, 3);
  g.adjacency(0, 1) = 1.0;  // b -> a
  g.adjacency(1, 2) = 1.0;  // a -> c
  g.kind = GraphKind::LinkConnectivity;

  SpeedMatrix m;
  m.node_ids = {"a", "b", "c"};
  m.values = Eigen::MatrixXd::Constant(3, 5, 50.0);
  m.start_time = 0;

  const auto aligned = align_graph(g, m);
  CHECK(aligned.node_ids == m.node_ids);
  CHECK(aligned.adjacency(1, 0) == 1.0);  // b -> a in the new order
  CHECK(aligned.adjacency(0, 2) == 1.0);  // a -> c

  m.node_ids = {"a", "b", "d"};
  CHECK_THROWS_AS(align_graph(g, m), DataError);
}

TEST_CASE("synthetic fixture is deterministic and sinusoidal without noise") {
  const auto a = synthesize_dataset(6, 600, 42, 0.0, 288);
  const auto b = synthesize_dataset(6, 600, 42, 0.0, 288);
  CHECK(a.speeds.values == b.speeds.values);
  CHECK(a.graph.adjacency == b.graph.adjacency);

  // Exact sinusoid: x(v, t) = 55 + 10 sin(2 pi (t/288 + v/6)).
  for (int v = 0; v < 6; ++v)
    for (int t = 0; t < 600; t += 37) {
      const double expect =
          55.0 + 10.0 * std::sin(2.0 * 3.14159265358979323846 *
                                 (t / 288.0 + v / 6.0));
      CHECK_THAT(a.speeds.values(v, t), Catch::Matchers::WithinAbs(expect, 1e-9));
    }

  // Period: one full day apart the signal repeats.
  for (int v = 0; v < 6; ++v)
    CHECK_THAT(a.speeds.values(v, 0),
               Catch::Matchers::WithinAbs(a.speeds.values(v, 288), 1e-9));

  // Seeds only matter once noise is on.
  const auto noisy1 = synthesize_dataset(6, 600, 42, 1.0, 288);
  const auto noisy2 = synthesize_dataset(6, 600, 43, 1.0, 288);
  CHECK(noisy1.speeds.values != noisy2.speeds.values);
  CHECK(synthesize_dataset(6, 600, 42, 1.0, 288).speeds.values == noisy1.speeds.values);
}

TEST_CASE("fixture neighbors correlate more than distant pairs") {
  const auto data = synthesize_dataset(10, 2000, 7, 1.0, 288, 0.5);
  const auto& x = data.speeds.values;

  const auto correlation = [&](int a, int b) {
    const auto ra = x.row(a);
    const auto rb = x.row(b);
    const double ma = ra.mean(), mb = rb.mean();
    const double cov = ((ra.array() - ma) * (rb.array() - mb)).mean();
    const double sa = std::sqrt((ra.array() - ma).square().mean());
    const double sb = std::sqrt((rb.array() - mb).square().mean());
    return cov / (sa * sb);
  };

  double adjacent = 0.0, distant = 0.0;
  for (int v = 0; v < 10; ++v) {
    adjacent += correlation(v, (v + 1) % 10);
    distant += correlation(v, (v + 5) % 10);
  }
  CHECK(adjacent / 10.0 > distant / 10.0);
}

TEST_CASE("dataset summaries cover the observed entries") {
  SpeedMatrix m;
  m.node_ids = {"a", "b"};
  m.values.resize(2, 3);
  m.values << 2.0, 0.0, 4.0,
              0.0, 0.0, 0.0;
  m.start_time = 0;

  const auto s = describe_dataset(m);
  CHECK(s.nodes == 2);
  CHECK(s.steps == 3);
  CHECK_THAT(s.observed_fraction, Catch::Matchers::WithinAbs(2.0 / 6.0, 1e-12));
  REQUIRE(s.mean.has_value());
  CHECK_THAT(*s.mean, Catch::Matchers::WithinAbs(3.0, 1e-12));
  CHECK_THAT(*s.stddev, Catch::Matchers::WithinAbs(1.0, 1e-12));

  m.values.setZero();
  const auto empty = describe_dataset(m);
  CHECK(empty.observed_fraction == 0.0);
  CHECK(!empty.mean.has_value());
  CHECK(!empty.stddev.has_value());
}
