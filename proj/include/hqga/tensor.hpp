// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hqga/errors.hpp"

namespace hqga {

// Row-major dense matrix. Vectors are stored as 1 x n rows throughout.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Mat<S> row_vector(std::initializer_list<S> values) {
  Mat<S> m(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (S v : values) m(0, i++) = v;
  return m;
}

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

template <typename S>
void require_finite(const Mat<S>& m, const std::string& what) {
  if (!m.allFinite()) throw DataError(what + " contains non-finite values");
}

template <typename To, typename From>
Mat<To> cast(const Mat<From>& m) {
  return m.template cast<To>();
}

// A learnable tensor with its accumulated gradient.
template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
using ParameterList = std::vector<Parameter<S>*>;

template <typename S>
std::size_t count_scalars(const ParameterList<S>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += static_cast<std::size_t>(p->size());
  return n;
}

// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
void init_fan_in(Parameter<S>& p, std::mt19937_64& rng, Eigen::Index fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(dist(rng));
}

template <typename S>
void init_uniform(Parameter<S>& p, std::mt19937_64& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<S>(dist(rng));
}

template <typename S>
Mat<S> random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

// Affine map y = x W + b, W is in x out.
template <typename S>
struct Linear {
  Parameter<S> weight;
  Parameter<S> bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, bool with_bias = true)
      : weight(name + ".weight", in, out), bias(name + ".bias", with_bias ? 1 : 0, with_bias ? out : 0) {}

  bool has_bias() const { return bias.size() > 0; }
  void init(std::mt19937_64& rng) {
    init_fan_in(weight, rng, weight.rows());
    if (has_bias()) init_fan_in(bias, rng, weight.rows());
  }
  void collect(ParameterList<S>& out) {
    out.push_back(&weight);
    if (has_bias()) out.push_back(&bias);
  }
};

}  // namespace hqga
