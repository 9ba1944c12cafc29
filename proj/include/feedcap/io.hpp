#pragma once

// JSON model files and CSV series. See docs/model-schema.md for the model
// schema. Every CSV starts with a header row and numbers use 17 significant
// digits.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "feedcap/channel_filter.hpp"
#include "feedcap/linalg.hpp"
#include "feedcap/mc_sim.hpp"
#include "feedcap/model.hpp"
#include "feedcap/noise_filter.hpp"
#include "feedcap/oracle.hpp"

namespace feedcap {

/// Malformed or inconsistent model file.
class ModelFileError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

using nlohmann::json;

inline Matrix matrix_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ModelFileError("field '" + field + "': expected a 2-D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array()) throw ModelFileError("field '" + field + "': expected a 2-D array");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[i];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ModelFileError("field '" + field + "': ragged row " + std::to_string(i));
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (!row[k].is_number()) {
        throw ModelFileError("field '" + field + "': non-numeric entry at [" + std::to_string(i) +
                             "][" + std::to_string(k) + "]");
      }
      m(i, k) = row[k].get<double>();
    }
  }
  return m;
}

inline json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    out.push_back(row);
  }
  return out;
}

inline std::vector<Matrix> sequence_from_json(const json& doc, const std::string& field,
                                              bool time_invariant, std::size_t count) {
  if (!doc.contains(field)) throw ModelFileError("missing field '" + field + "'");
  const json& j = doc.at(field);
  if (time_invariant) return std::vector<Matrix>(count, matrix_from_json(j, field));
  if (!j.is_array() || j.size() != count) {
    throw ModelFileError("field '" + field + "': expected " + std::to_string(count) +
                         " matrices");
  }
  std::vector<Matrix> out;
  for (std::size_t t = 0; t < count; ++t) {
    out.push_back(matrix_from_json(j[t], field + "[" + std::to_string(t) + "]"));
  }
  return out;
}

inline int positive_int(const json& doc, const std::string& field) {
  if (!doc.contains(field)) throw ModelFileError("missing field '" + field + "'");
  const auto& j = doc.at(field);
  if (!j.is_number_integer() || j.get<long long>() < 1) {
    throw ModelFileError("field '" + field + "': expected a positive integer");
  }
  return j.get<int>();
}

inline std::pair<int, int> line_and_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline PoSsRealization model_from_json(const nlohmann::json& doc) {
  using detail::json;
  if (!doc.is_object()) throw ModelFileError("model file must hold a JSON object");
  PoSsRealization r;
  r.n = detail::positive_int(doc, "n");
  r.n_s = detail::positive_int(doc, "n_s");
  r.n_w = detail::positive_int(doc, "n_w");
  const bool ti = doc.value("time_invariant", false);
  const auto steps = static_cast<std::size_t>(r.n);
  r.A = detail::sequence_from_json(doc, "A", ti, steps - 1);
  r.B = detail::sequence_from_json(doc, "B", ti, steps - 1);
  for (const auto& m : detail::sequence_from_json(doc, "C", ti, steps)) {
    if (m.rows() != 1) throw ModelFileError("field 'C': each entry must be a single row");
    r.C.push_back(m.row(0));
  }
  for (const auto& m : detail::sequence_from_json(doc, "N", ti, steps)) {
    if (m.rows() != 1) throw ModelFileError("field 'N': each entry must be a single row");
    r.N.push_back(m.row(0));
  }
  r.K_W = detail::sequence_from_json(doc, "K_W", ti, steps);
  if (!doc.contains("mu_S1") || !doc.at("mu_S1").is_array()) {
    throw ModelFileError("missing field 'mu_S1'");
  }
  const auto& mu = doc.at("mu_S1");
  r.mu_S1.resize(static_cast<Eigen::Index>(mu.size()));
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!mu[i].is_number()) throw ModelFileError("field 'mu_S1': non-numeric entry");
    r.mu_S1(static_cast<Eigen::Index>(i)) = mu[i].get<double>();
  }
  if (!doc.contains("K_S1")) throw ModelFileError("missing field 'K_S1'");
  r.K_S1 = detail::matrix_from_json(doc.at("K_S1"), "K_S1");
  if (doc.contains("metadata") && doc.at("metadata").is_object()) {
    r.unstable_initialization = doc.at("metadata").value("unstable_initialization", false);
  }
  const auto rep = validate_realization(r);
  if (!rep.ok()) throw ModelFileError("invalid model: " + rep.summary());
  return r;
}

inline PoSsRealization parse_model(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_and_column(text, e.byte);
    throw ModelFileError("malformed JSON at line " + std::to_string(line) + ", column " +
                         std::to_string(col));
  }
  return model_from_json(doc);
}

inline PoSsRealization load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ModelFileError("model file not found: " + path.string());
  }
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

inline nlohmann::json model_to_json(const PoSsRealization& r) {
  using detail::json;
  json doc;
  doc["n"] = r.n;
  doc["n_s"] = r.n_s;
  doc["n_w"] = r.n_w;
  const bool ti = r.is_time_invariant() && r.n >= 2;
  doc["time_invariant"] = ti;
  auto seq = [&](const auto& v) {
    if (ti) return detail::matrix_to_json(Matrix(v.front()));
    json arr = json::array();
    for (const auto& m : v) arr.push_back(detail::matrix_to_json(Matrix(m)));
    return arr;
  };
  doc["A"] = seq(r.A);
  doc["B"] = seq(r.B);
  doc["C"] = seq(r.C);
  doc["N"] = seq(r.N);
  doc["K_W"] = seq(r.K_W);
  doc["mu_S1"] = std::vector<double>(r.mu_S1.data(), r.mu_S1.data() + r.mu_S1.size());
  doc["K_S1"] = detail::matrix_to_json(r.K_S1);
  if (r.unstable_initialization) doc["metadata"]["unstable_initialization"] = true;
  return doc;
}

/// Minimal CSV writer: header first, numbers at 17 significant digits.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_row(header);
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  void write_numbers(const std::vector<double>& cells) {
    std::vector<std::string> s;
    s.reserve(cells.size());
    for (double x : cells) s.push_back(format_number(x));
    write_row(s);
  }

 private:
  std::ofstream out_;
};

namespace detail {

inline std::vector<std::string> flattened_names(const std::string& base, Eigen::Index rows,
                                                Eigen::Index cols) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      names.push_back(base + "_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  return names;
}

inline void append_flat(std::vector<double>& row, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
}

}  // namespace detail

/// Columns: t, Sigma (row-major), K_Ihat.
inline void write_noise_trace_csv(const std::filesystem::path& path, const NoiseFilterTrace& tr) {
  const auto n_s = tr.Sigma.front().rows();
  std::vector<std::string> header{"t"};
  for (auto& s : detail::flattened_names("Sigma", n_s, n_s)) header.push_back(s);
  header.push_back("K_Ihat");
  CsvWriter csv(path, header);
  for (std::size_t t = 0; t < tr.Sigma.size(); ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    detail::append_flat(row, tr.Sigma[t]);
    row.push_back(tr.K_Ihat[t]);
    csv.write_numbers(row);
  }
}

/// Columns: t, K (row-major), K_I, power.
inline void write_output_trace_csv(const std::filesystem::path& path, const OutputFilterTrace& tr) {
  const auto n_s = tr.K.front().rows();
  std::vector<std::string> header{"t"};
  for (auto& s : detail::flattened_names("K", n_s, n_s)) header.push_back(s);
  header.push_back("K_I");
  header.push_back("power");
  CsvWriter csv(path, header);
  for (std::size_t t = 0; t < tr.K.size(); ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    detail::append_flat(row, tr.K[t]);
    row.push_back(tr.K_I[t]);
    row.push_back(tr.power[t]);
    csv.write_numbers(row);
  }
}

/// Columns: t, Lambda_1..Lambda_ns, K_Z.
inline void write_strategy_csv(const std::filesystem::path& path, const SequentialStrategy& s) {
  const auto n_s = s.Lambda.empty() ? 0 : s.Lambda.front().size();
  std::vector<std::string> header{"t"};
  for (Eigen::Index i = 0; i < n_s; ++i) header.push_back("Lambda_" + std::to_string(i + 1));
  header.push_back("K_Z");
  CsvWriter csv(path, header);
  for (int t = 0; t < s.horizon(); ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    for (Eigen::Index i = 0; i < n_s; ++i) row.push_back(s.Lambda[t](i));
    row.push_back(s.K_Z[t]);
    csv.write_numbers(row);
  }
}

/// Columns: matrix, row, col_1..col_n for B then K_Zbar.
inline void write_cover_pombra_csv(const std::filesystem::path& path,
                                   const CoverPombraStrategy& s) {
  const int n = s.horizon();
  std::vector<std::string> header{"matrix", "row"};
  for (int j = 0; j < n; ++j) header.push_back("col_" + std::to_string(j + 1));
  CsvWriter csv(path, header);
  auto dump = [&](const char* name, const Matrix& m) {
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> row{name, std::to_string(i + 1)};
      for (int j = 0; j < n; ++j) row.push_back(format_number(m(i, j)));
      csv.write_row(row);
    }
  };
  dump("B", s.B);
  dump("K_Zbar", s.K_Zbar);
}

inline constexpr int kMaxExportedSamples = 10000;

/// Long format: sample, t, V, I_hat, X, Z, Y, I. Refuses traces above
/// `max_samples` samples.
inline void write_simulation_csv(const std::filesystem::path& path, const SimulationTrace& tr,
                                 int max_samples = kMaxExportedSamples) {
  if (tr.n_samples > max_samples) {
    throw std::invalid_argument("simulation trace too large to export (" +
                                std::to_string(tr.n_samples) + " samples > " +
                                std::to_string(max_samples) + ")");
  }
  CsvWriter csv(path, {"sample", "t", "V", "I_hat", "X", "Z", "Y", "I"});
  for (int k = 0; k < tr.n_samples; ++k) {
    for (int t = 0; t < tr.n; ++t) {
      csv.write_numbers({static_cast<double>(k), static_cast<double>(t + 1), tr.V(k, t),
                         tr.I_hat(k, t), tr.X(k, t), tr.Z(k, t), tr.Y(k, t), tr.I(k, t)});
    }
  }
}

}  // namespace feedcap
