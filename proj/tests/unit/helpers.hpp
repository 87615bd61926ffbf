// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "hqga/hqga.hpp"

namespace hqga::testing {

inline Mat<double> randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  return (a.template cast<double>() - b.template cast<double>()).cwiseAbs().maxCoeff();
}

// Small config used across suites.
inline HierarchyConfig tiny_config(int d = 8) {
  HierarchyConfig c;
  c.K = 2;
  c.L = 8;
  c.gamma = 0.25;  // 2 frames per clip
  c.N = 3;
  c.M = 8;
  c.d = d;
  c.H = 2;
  c.d_m = c.d_a = c.d_r = 8;
  c.d_e = 8;
  return c;
}

inline WorldSpec world_for(const HierarchyConfig& c) {
  WorldSpec w = default_world();
  w.d_m = c.d_m;
  w.d_a = c.d_a;
  w.d_r = c.d_r;
  return w;
}

inline FeatureBundle<double> random_bundle(std::mt19937_64& rng, const HierarchyConfig& c, int q_len = -1) {
  const int m = q_len < 0 ? c.M : q_len;
  return {randn(rng, c.K, c.d), randn(rng, c.T(), c.d), randn(rng, static_cast<Eigen::Index>(c.T()) * c.N, c.d),
          randn(rng, m, c.d), randn(rng, 1, c.d)};
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("hqga_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace hqga::testing
