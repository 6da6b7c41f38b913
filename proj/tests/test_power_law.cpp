/*
 Copyright 2026 The koopscale Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#include "koopman/power_law.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace koopman;

namespace {

std::vector<PowerLawPoint> sample(double A, double alpha, double C, std::vector<double> D) {
  std::vector<PowerLawPoint> pts;
  for (double d : D) pts.push_back({d, A * std::pow(d, -alpha) + C});
  return pts;
}

}  // namespace

TEST_CASE("noise-free points recover the generating law") {
  const PowerLawFit f = fit_power_law(sample(2, 1.5, 0.01, {10, 100, 1e3, 1e4, 1e5}));
  CHECK(std::abs(f.alpha - 1.5) < 1e-3);
  CHECK(f.A == doctest::Approx(2.0).epsilon(1e-2));
  CHECK(f.C == doctest::Approx(0.01).epsilon(1e-3));
  CHECK(f.r2 > 0.999999);
  CHECK_FALSE(f.degenerate);
  CHECK(f(1e3) == doctest::Approx(2 * std::pow(1e3, -1.5) + 0.01).epsilon(1e-4));
}

TEST_CASE("pure power law is fitted exactly") {
  const PowerLawFit f = fit_power_law(sample(3, 0.7, 0, {1e3, 4e3, 1.6e4, 6.4e4}));
  CHECK(std::abs(f.r2 - 1.0) < 1e-12);
  CHECK(f.alpha == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(f.C == 0.0);
}

TEST_CASE("degenerate and invalid inputs") {
  const PowerLawFit f = fit_power_law({{1, 0.5}, {2, 0.5}, {4, 0.5}});
  CHECK(f.degenerate);
  CHECK(f.alpha == 0.0);
  CHECK(f.C == 0.5);
  CHECK_THROWS(fit_power_law({{1, 0.5}, {1, 0.4}, {4, 0.5}}));
  CHECK_THROWS(fit_power_law({{1, 0.5}, {2, -0.4}, {4, 0.5}}));
  CHECK_THROWS(fit_power_law({{0, 0.5}, {2, 0.4}, {4, 0.5}}));
}

TEST_CASE("fit is independent of point order and tolerates noise") {
  auto pts = sample(0.5, 1.2, 1e-4, {1e3, 2e3, 4e3, 8e3, 1.6e4, 3.2e4, 6.4e4});
  const double jitter[] = {1.03, 0.98, 1.01, 0.97, 1.02, 0.99, 1.0};
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].eps *= jitter[i];
  const PowerLawFit a = fit_power_law(pts);
  std::reverse(pts.begin(), pts.end());
  std::swap(pts[1], pts[4]);
  const PowerLawFit b = fit_power_law(pts);
  CHECK(a.alpha == b.alpha);
  CHECK(a.C == b.C);
  CHECK(a.alpha == doctest::Approx(1.2).epsilon(0.15));
  CHECK(a.r2 > 0.99);
  CHECK(a.C >= 0);
  const Json j = to_json(a);
  for (const char* k : {"A", "alpha", "C", "r2"}) CHECK(j.contains(k));
}
