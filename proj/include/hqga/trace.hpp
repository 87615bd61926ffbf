// Copyright (c) 2026, The HQGA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention traces: recording, top-down localization, JSONL export/import
// and PNG rendering.

#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "hqga/config.hpp"
#include "hqga/errors.hpp"
#include "hqga/model.hpp"

namespace hqga {

struct TraceUnit {
  int unit = 0;
  std::optional<Mat<double>> alpha;  // n x M
  Mat<double> A;                     // n x n
  std::vector<double> beta;          // n

  bool operator==(const TraceUnit&) const = default;
};

struct TraceRecord {
  std::string sample_id;
  std::map<std::string, std::vector<TraceUnit>> levels;  // "O", "F", "C"
  int prediction = -1;
  int answer = -1;
  std::vector<std::vector<int>> candidates;

  const std::vector<TraceUnit>& level(const std::string& name) const {
    static const std::vector<TraceUnit> empty;
    auto it = levels.find(name);
    return it == levels.end() ? empty : it->second;
  }
};

inline const std::array<std::string, 3> kTraceLevels = {"O", "F", "C"};

namespace detail {

template <typename S>
std::vector<TraceUnit> copy_units(const std::vector<UnitTrace<S>>& units) {
  std::vector<TraceUnit> out;
  out.reserve(units.size());
  for (const auto& u : units) {
    TraceUnit t;
    t.unit = u.unit_index;
    if (u.alpha) t.alpha = u.alpha->template cast<double>();
    t.A = u.A.template cast<double>();
    t.beta.assign(u.beta.data(), u.beta.data() + u.beta.size());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

// Builds a record from a traced forward pass. Multi-choice runs keep the
// trace of the predicted candidate. Returns nothing when tracing was off.
template <typename S>
std::optional<TraceRecord> record_trace(const QASample& sample, const SampleForward<S>& f) {
  if (f.traces.empty()) return std::nullopt;
  const Mat<S> scores = f.scores.value();
  TraceRecord r;
  r.sample_id = sample.sample_id;
  r.prediction = predict(scores);
  r.answer = sample.answer_index;
  r.candidates = sample.candidates;
  const HierTrace<S>& h = f.traces.size() == 1 ? f.traces.front() : f.traces.at(static_cast<std::size_t>(r.prediction));
  r.levels["O"] = detail::copy_units(h.level_O);
  r.levels["F"] = detail::copy_units(h.level_F);
  r.levels["C"] = detail::copy_units(h.level_C);
  return r;
}

template <typename S>
TraceRecord trace_sample(ModelParams<S>& p, const PreparedVideo<S>& video, const QASample& sample) {
  ag::Tape<S> tape;
  auto v = project_video(tape, video, p);
  return *record_trace(sample, forward_sample(tape, p, v, sample, true));
}

namespace detail {

inline int argmax(const std::vector<double>& v) {
  if (v.empty()) throw PathUnavailableError("empty pooling weights");
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace detail

struct TopDownPath {
  int clip = 0;
  int frame = 0;  // global frame index
  int object = 0;

  bool operator==(const TopDownPath&) const = default;
};

// Follows the argmax of the pooling weights from clips to frames to objects.
inline TopDownPath top_down_path(const TraceRecord& r, const HierarchyConfig& c) {
  if (!c.use_GO || !c.use_GF || !c.use_GC || c.sumpool_O || c.sumpool_F || c.sumpool_C)
    throw PathUnavailableError("top-down path needs all three graph levels with attention pooling");
  const auto& C = r.level("C");
  const auto& F = r.level("F");
  const auto& O = r.level("O");
  if (C.size() != 1 || static_cast<int>(F.size()) != c.K || static_cast<int>(O.size()) != c.T())
    throw PathUnavailableError("trace of " + r.sample_id + " does not cover every level of the configuration");
  TopDownPath p;
  p.clip = detail::argmax(C[0].beta);
  p.frame = p.clip * c.frames_per_clip() + detail::argmax(F[static_cast<std::size_t>(p.clip)].beta);
  p.object = detail::argmax(O[static_cast<std::size_t>(p.frame)].beta);
  return p;
}

// JSON with values rounded to 9 significant digits.
namespace detail {

inline double round9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

inline nlohmann::json matrix_json(const Mat<double>& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(round9(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat<double> matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("trace matrix must be an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw DataError("ragged trace matrix");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

}  // namespace detail

inline nlohmann::json trace_to_json(const TraceRecord& r) {
  nlohmann::json levels = nlohmann::json::object();
  for (const auto& name : kTraceLevels) {
    nlohmann::json units = nlohmann::json::array();
    for (const auto& u : r.level(name)) {
      nlohmann::json beta = nlohmann::json::array();
      for (double b : u.beta) beta.push_back(detail::round9(b));
      units.push_back({{"unit", u.unit},
                       {"alpha", u.alpha ? detail::matrix_json(*u.alpha) : nlohmann::json(nullptr)},
                       {"A", detail::matrix_json(u.A)},
                       {"beta", beta}});
    }
    levels[name] = std::move(units);
  }
  return {{"sample_id", r.sample_id},
          {"levels", levels},
          {"prediction", r.prediction},
          {"answer", r.answer},
          {"candidates", r.candidates}};
}

// Structural and stochasticity checks of one exported record. Returns the
// list of violations (empty when valid).
inline std::vector<std::string> validate_trace_json(const nlohmann::json& j, double tol = 1e-6) {
  std::vector<std::string> errs;
  if (!j.is_object()) return {"record is not an object"};
  if (!j.contains("sample_id") || !j["sample_id"].is_string()) errs.push_back("sample_id must be a string");
  if (!j.contains("prediction") || !j["prediction"].is_number_integer()) errs.push_back("prediction must be an integer");
  if (!j.contains("levels") || !j["levels"].is_object()) {
    errs.push_back("levels must be an object");
    return errs;
  }
  auto stochastic = [&](const nlohmann::json& row, const std::string& where) {
    double sum = 0;
    for (const auto& v : row) {
      if (!v.is_number()) {
        errs.push_back(where + ": non-numeric entry");
        return;
      }
      if (v.get<double>() < -tol) errs.push_back(where + ": negative entry");
      sum += v.get<double>();
    }
    if (std::abs(sum - 1.0) > tol) errs.push_back(where + ": row sums to " + std::to_string(sum));
  };
  for (const auto& [name, units] : j["levels"].items()) {
    if (std::find(kTraceLevels.begin(), kTraceLevels.end(), name) == kTraceLevels.end())
      errs.push_back("unknown level " + name);
    if (!units.is_array()) {
      errs.push_back("level " + name + " must be an array");
      continue;
    }
    for (const auto& u : units) {
      const std::string where = "level " + name + " unit " + (u.contains("unit") ? u["unit"].dump() : "?");
      if (!u.contains("unit") || !u["unit"].is_number_integer()) errs.push_back(where + ": unit must be an integer");
      if (!u.contains("A") || !u["A"].is_array() || !u.contains("beta") || !u["beta"].is_array() || !u.contains("alpha")) {
        errs.push_back(where + ": needs alpha, A and beta");
        continue;
      }
      const std::size_t n = u["beta"].size();
      if (u["A"].size() != n) errs.push_back(where + ": A must be n x n");
      for (const auto& row : u["A"]) {
        if (row.size() != n) errs.push_back(where + ": A must be n x n");
        stochastic(row, where + " A");
      }
      stochastic(u["beta"], where + " beta");
      if (!u["alpha"].is_null()) {
        if (!u["alpha"].is_array() || u["alpha"].size() != n) errs.push_back(where + ": alpha must have n rows");
        for (const auto& row : u["alpha"]) stochastic(row, where + " alpha");
      }
    }
  }
  return errs;
}

inline TraceRecord trace_from_json(const nlohmann::json& j) {
  auto errs = validate_trace_json(j);
  if (!errs.empty()) throw DataError("invalid trace record: " + errs.front());
  TraceRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.prediction = j.at("prediction").get<int>();
  r.answer = j.value("answer", -1);
  if (j.contains("candidates")) j.at("candidates").get_to(r.candidates);
  for (const auto& [name, units] : j.at("levels").items()) {
    auto& out = r.levels[name];
    for (const auto& u : units) {
      TraceUnit t;
      t.unit = u.at("unit").get<int>();
      if (!u.at("alpha").is_null()) t.alpha = detail::matrix_from_json(u.at("alpha"));
      t.A = detail::matrix_from_json(u.at("A"));
      u.at("beta").get_to(t.beta);
      out.push_back(std::move(t));
    }
  }
  return r;
}

inline void export_traces(const std::vector<TraceRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << trace_to_json(r).dump() << "\n";
  if (!out) throw DataError("write failed for " + path.string());
}

inline std::vector<TraceRecord> import_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<TraceRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(trace_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

// PNG rendering.

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;  // row-major RGB

  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 255) {}

  void fill(int x0, int y0, int w, int h, std::array<unsigned char, 3> c) {
    for (int y = std::max(0, y0); y < std::min(height, y0 + h); ++y)
      for (int x = std::max(0, x0); x < std::min(width, x0 + w); ++x)
        std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<std::ptrdiff_t>(y) * width + x) * 3);
  }
};

// Fixed [0, 1] scale from white to dark blue.
inline std::array<unsigned char, 3> heat_color(double v) {
  const double t = std::clamp(v, 0.0, 1.0);
  auto lerp = [t](double a, double b) { return static_cast<unsigned char>(std::lround(a + (b - a) * t)); };
  return {lerp(255, 8), lerp(255, 48), lerp(255, 107)};
}

inline void write_png(const RgbImage& img, const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<std::ptrdiff_t>(y) * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline RgbImage render_heatmap(const Mat<double>& m, int cell = 16) {
  RgbImage img(static_cast<int>(m.cols()) * cell, static_cast<int>(m.rows()) * cell);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      img.fill(static_cast<int>(j) * cell, static_cast<int>(i) * cell, cell, cell, heat_color(m(i, j)));
  return img;
}

inline RgbImage render_bars(const std::vector<double>& v, int bar = 16, int height = 96) {
  RgbImage img(std::max<int>(1, static_cast<int>(v.size())) * bar, height);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const int h = static_cast<int>(std::lround(std::clamp(v[i], 0.0, 1.0) * height));
    img.fill(static_cast<int>(i) * bar + 1, height - h, bar - 2, h, heat_color(1.0));
  }
  return img;
}

inline std::string file_safe(const std::string& s) {
  std::string out = s;
  for (char& ch : out)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) ch = '_';
  return out;
}

// Writes <sample_id>_<level>_<unit>_<tensor>.png for A, beta and alpha of
// every unit. Returns the written paths.
inline std::vector<std::filesystem::path> render_trace(const TraceRecord& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& level, int unit, const std::string& tensor, const RgbImage& img) {
    auto p = out_dir / (file_safe(r.sample_id) + "_" + level + "_" + std::to_string(unit) + "_" + tensor + ".png");
    write_png(img, p);
    written.push_back(p);
  };
  for (const auto& level : kTraceLevels) {
    for (const auto& u : r.level(level)) {
      emit(level, u.unit, "A", render_heatmap(u.A));
      emit(level, u.unit, "beta", render_bars(u.beta));
      if (u.alpha) emit(level, u.unit, "alpha", render_heatmap(*u.alpha));
    }
  }
  return written;
}

}  // namespace hqga
