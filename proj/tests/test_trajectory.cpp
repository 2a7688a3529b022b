#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cmm/errors.hpp"
#include "cmm/road_map.hpp"
#include "cmm/trajectory.hpp"

using namespace cmm;

namespace {

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& name, const std::string& content) : path(name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempCsv() { std::remove(path.c_str()); }
};

const char* kHeader = "vehicle_id,t_s,lat_deg,lon_deg,speed_mps,heading_deg\n";

// A flat trajectory of n samples for in-memory filter tests.
Trajectory flat_traj(int id, int n, double heading = 90.0) {
  Trajectory t;
  t.vehicle_id = id;
  for (int i = 0; i < n; ++i)
    t.samples.push_back(TrajSample{i * 1.0, 0.0, 10.0, heading});
  return t;
}

}  // namespace

TEST_SUITE("trajectory") {

TEST_CASE("projection fixes the origin and scales latitude exactly") {
  const Vec2 at_origin = latlon_to_en(42.28, -83.74, 42.28, -83.74);
  CHECK(at_origin.norm() == 0.0);

  // At the equator origin the 0.001 degree delta is representable exactly.
  const Vec2 north_step = latlon_to_en(0.0, 0.0, 0.001, 0.0);
  CHECK(north_step.x() == 0.0);
  CHECK(north_step.y() == doctest::Approx(111.19492664455873).epsilon(1e-12));

  const Vec2 mid_lat = latlon_to_en(42.28, -83.74, 42.281, -83.74);
  CHECK(mid_lat.x() == 0.0);
  CHECK(mid_lat.y() == doctest::Approx(111.19492664455873).epsilon(1e-9));

  // Longitude shrinks with the cosine of the origin latitude.
  const Vec2 east_step = latlon_to_en(42.28, -83.74, 42.28, -83.739);
  CHECK(east_step.y() == 0.0);
  CHECK(east_step.x() ==
        doctest::Approx(111.19492664455873 * std::cos(42.28 * M_PI / 180.0))
            .epsilon(1e-9));
}

TEST_CASE("projection round-trips over the supported bounding box") {
  const double lat0 = 42.28, lon0 = -83.73;
  for (double lat = 42.22; lat <= 42.34; lat += 0.023) {
    for (double lon = -83.82; lon <= -83.64; lon += 0.037) {
      const Vec2 en = latlon_to_en(lat0, lon0, lat, lon);
      double lat2, lon2;
      en_to_latlon(lat0, lon0, en, lat2, lon2);
      CHECK(std::abs(lat2 - lat) < 1e-6);
      CHECK(std::abs(lon2 - lon) < 1e-6);
    }
  }
}

TEST_CASE("well-formed two-vehicle file loads into two trajectories") {
  std::string body = kHeader;
  for (int i = 0; i < 3; ++i) {
    char row[128];
    std::snprintf(row, sizeof(row), "1,%.1f,42.2800%d0,-83.740000,10.0,90.0\n",
                  i * 0.1, i);
    body += row;
    std::snprintf(row, sizeof(row), "2,%.1f,42.2900%d0,-83.750000,12.0,180.0\n",
                  i * 0.1, i);
    body += row;
  }
  TempCsv f("traj_two.csv", body);
  const auto set = load_trajectories_csv(f.path);
  REQUIRE(set.items.size() == 2);
  CHECK(set.items[0].vehicle_id == 1);
  CHECK(set.items[1].vehicle_id == 2);
  CHECK(set.items[0].samples.size() == 3);
  CHECK(set.items[1].samples.size() == 3);
  // Origin comes from the first data row.
  CHECK(set.origin_lat_deg == doctest::Approx(42.28));
  CHECK(set.items[0].samples[0].east_m == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(set.items[0].samples[0].north_m == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("empty and header-only files load as empty sets") {
  TempCsv empty("traj_empty.csv", "");
  CHECK(load_trajectories_csv(empty.path).items.empty());
  TempCsv header_only("traj_header.csv", kHeader);
  CHECK(load_trajectories_csv(header_only.path).items.empty());
}

TEST_CASE("parse errors carry the row number") {
  TempCsv bad_lat("traj_badlat.csv",
                  std::string(kHeader) + "1,0.0,42.28,-83.74,10,90\n"
                                         "1,0.1,abc,-83.74,10,90\n");
  CHECK_THROWS_WITH_AS(load_trajectories_csv(bad_lat.path),
                       doctest::Contains("row 3"), DataError);

  TempCsv few("traj_few.csv", std::string(kHeader) + "1,0.0,42.28\n");
  CHECK_THROWS_WITH_AS(load_trajectories_csv(few.path), doctest::Contains("row 2"),
                       DataError);

  TempCsv bad_head("traj_badhead.csv", "id,t,lat,lon,v,h\n");
  CHECK_THROWS_AS(load_trajectories_csv(bad_head.path), DataError);

  TempCsv range("traj_range.csv", std::string(kHeader) + "1,0.0,95.0,-83.74,10,90\n");
  CHECK_THROWS_AS(load_trajectories_csv(range.path), DataError);

  CHECK_THROWS_AS(load_trajectories_csv("no_such_file.csv"), DataError);
}

TEST_CASE("non-increasing time and broken cadence are rejected") {
  TempCsv repeat("traj_repeat.csv", std::string(kHeader) +
                                        "1,0.1,42.28,-83.74,10,90\n"
                                        "1,0.1,42.28,-83.74,10,90\n");
  CHECK_THROWS_WITH_AS(load_trajectories_csv(repeat.path),
                       doctest::Contains("row 3"), DataError);

  TempCsv fast("traj_fast.csv", std::string(kHeader) +
                                    "1,0.0,42.28,-83.74,10,90\n"
                                    "1,0.05,42.28,-83.74,10,90\n");
  CHECK_THROWS_WITH_AS(load_trajectories_csv(fast.path), doctest::Contains("cadence"),
                       DataError);
}

TEST_CASE("time gaps split a vehicle into fresh-id trajectories") {
  TempCsv gap("traj_gap.csv", std::string(kHeader) +
                                  "1,0.0,42.280,-83.74,10,90\n"
                                  "1,0.1,42.281,-83.74,10,90\n"
                                  "1,0.5,42.282,-83.74,10,90\n"
                                  "1,0.6,42.283,-83.74,10,90\n"
                                  "7,0.0,42.284,-83.74,10,90\n");
  const auto set = load_trajectories_csv(gap.path);
  REQUIRE(set.items.size() == 3);
  CHECK(set.items[0].vehicle_id == 1);
  CHECK(set.items[0].samples.size() == 2);
  CHECK(set.items[0].t0_s == doctest::Approx(0.0));
  // The continuation takes an id past the file's largest.
  CHECK(set.items[1].vehicle_id == 8);
  CHECK(set.items[1].samples.size() == 2);
  CHECK(set.items[1].t0_s == doctest::Approx(0.5));
  CHECK(set.items[2].vehicle_id == 7);
}

TEST_CASE("duration threshold is strict") {
  TrajectorySet set;
  set.items.push_back(flat_traj(1, 2999));  // 299.9 s
  set.items.push_back(flat_traj(2, 3000));  // 300.0 s
  set.items.push_back(flat_traj(3, 4000));  // 400 s, truncated
  const auto kept = filter_valid(set, 300.0, 10.0);
  REQUIRE(kept.items.size() == 2);
  CHECK(kept.items[0].vehicle_id == 2);
  CHECK(kept.items[0].samples.size() == 3000);
  CHECK(kept.items[1].vehicle_id == 3);
  CHECK(kept.items[1].samples.size() == 3000);
  CHECK(kept.items[1].duration_s() == doctest::Approx(300.0));
}

TEST_CASE("heading jumps use the shortest angular difference") {
  TrajectorySet set;
  // 350 -> 5 crosses north: true change 15 degrees, rejected.
  Trajectory wrap = flat_traj(1, 5);
  wrap.samples[2].heading_deg = 350.0;
  wrap.samples[3].heading_deg = 5.0;
  set.items.push_back(wrap);
  // 355 -> 3 is an 8 degree change, kept.
  Trajectory ok = flat_traj(2, 5, 355.0);
  for (std::size_t i = 3; i < ok.samples.size(); ++i) ok.samples[i].heading_deg = 3.0;
  set.items.push_back(ok);
  const auto kept = filter_valid(set, 0.4, 10.0);
  REQUIRE(kept.items.size() == 1);
  CHECK(kept.items[0].vehicle_id == 2);
}

TEST_CASE("filter_valid is idempotent") {
  TrajectorySet set;
  set.items.push_back(flat_traj(1, 50));
  set.items.push_back(flat_traj(2, 20));
  const auto once = filter_valid(set, 3.0, 10.0);
  const auto twice = filter_valid(once, 3.0, 10.0);
  REQUIRE(once.items.size() == twice.items.size());
  for (std::size_t i = 0; i < once.items.size(); ++i) {
    CHECK(once.items[i].vehicle_id == twice.items[i].vehicle_id);
    CHECK(once.items[i].samples.size() == twice.items[i].samples.size());
  }
}

TEST_CASE("saving and loading preserves geographic positions") {
  const auto map = make_grid_map(2, 2, 200.0, 1.75, 1.0, 42.28, -83.74);
  RandomStream rng(11);
  auto set = synth_trajectories(map, 3, 10.0, 8.0, 14.0, rng);
  set.origin_lat_deg = 42.28;
  set.origin_lon_deg = -83.74;

  const std::string path = "traj_roundtrip.csv";
  save_trajectories_csv(set, path);
  const auto back = load_trajectories_csv(path);
  std::remove(path.c_str());

  REQUIRE(back.items.size() == set.items.size());
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const auto& a = set.items[i];
    const auto& b = back.items[i];
    CHECK(a.vehicle_id == b.vehicle_id);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t k = 0; k < a.samples.size(); ++k) {
      double la, lo, lb2, lo2;
      en_to_latlon(set.origin_lat_deg, set.origin_lon_deg,
                   Vec2(a.samples[k].east_m, a.samples[k].north_m), la, lo);
      en_to_latlon(back.origin_lat_deg, back.origin_lon_deg,
                   Vec2(b.samples[k].east_m, b.samples[k].north_m), lb2, lo2);
      CHECK(std::abs(la - lb2) < 1e-6);
      CHECK(std::abs(lo - lo2) < 1e-6);
      CHECK(a.samples[k].speed_mps == doctest::Approx(b.samples[k].speed_mps).epsilon(1e-6));
      CHECK(a.samples[k].heading_deg ==
            doctest::Approx(b.samples[k].heading_deg).epsilon(1e-6));
    }
  }
}

TEST_CASE("network sampling draws without replacement, deterministically") {
  TrajectorySet set;
  for (int i = 1; i <= 10; ++i) set.items.push_back(flat_traj(i, 5));

  RandomStream rng(3);
  const auto all = sample_network(set, 10, rng);
  CHECK(all.items.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(all.items[i].vehicle_id == i + 1);

  RandomStream r0(3);
  CHECK(sample_network(set, 0, r0).items.empty());

  RandomStream r1(3), r2(3);
  const auto pick1 = sample_network(set, 4, r1);
  const auto pick2 = sample_network(set, 4, r2);
  REQUIRE(pick1.items.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(pick1.items[i].vehicle_id == pick2.items[i].vehicle_id);
  // Input order is preserved.
  for (std::size_t i = 1; i < 4; ++i)
    CHECK(pick1.items[i].vehicle_id > pick1.items[i - 1].vehicle_id);

  RandomStream r3(3);
  CHECK_THROWS_AS(sample_network(set, 11, r3), ConfigError);
}

TEST_CASE("synthetic vehicles ride the map at constant speed") {
  const auto map = make_grid_map(3, 3, 300.0);
  RandomStream rng(9);
  const auto set = synth_trajectories(map, 1, 300.0, 10.0, 10.0, rng);
  REQUIRE(set.items.size() == 1);
  const auto& t = set.items[0];
  CHECK(t.samples.size() == 3000);
  for (const auto& s : t.samples) {
    CHECK(s.speed_mps == 10.0);
    CHECK(map.in_constraint(Vec2(s.east_m, s.north_m)));
    CHECK(s.heading_deg >= 0.0);
    CHECK(s.heading_deg < 360.0);
  }
  // Arc spacing is speed * dt everywhere; the straight-line spacing matches
  // except across end-of-segment reversals, where the path folds back.
  int exact = 0;
  for (std::size_t i = 1; i < t.samples.size(); ++i) {
    const double dx = t.samples[i].east_m - t.samples[i - 1].east_m;
    const double dy = t.samples[i].north_m - t.samples[i - 1].north_m;
    const double d = std::hypot(dx, dy);
    CHECK(d <= 1.0 + 1e-9);
    if (std::abs(d - 1.0) < 1e-9) ++exact;
  }
  CHECK(exact >= static_cast<int>(t.samples.size() * 9 / 10));
}

TEST_CASE("degenerate speed range pins every vehicle to that speed") {
  const auto map = make_grid_map(2, 2, 400.0);
  RandomStream rng(21);
  const auto set = synth_trajectories(map, 5, 5.0, 12.5, 12.5, rng);
  REQUIRE(set.items.size() == 5);
  for (const auto& t : set.items)
    for (const auto& s : t.samples) CHECK(s.speed_mps == 12.5);
}

TEST_CASE("synthetic speeds cover the requested range") {
  const auto map = make_grid_map(2, 2, 400.0);
  RandomStream rng(22);
  const auto set = synth_trajectories(map, 20, 1.0, 8.0, 14.0, rng);
  double lo = 1e9, hi = -1e9;
  for (const auto& t : set.items) {
    REQUIRE(!t.samples.empty());
    const double v = t.samples[0].speed_mps;
    CHECK(v >= 8.0);
    CHECK(v <= 14.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi - lo > 1.0);
}

}  // TEST_SUITE
