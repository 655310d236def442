/*
 * Copyright 2026 The tracegp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TRACEGP_IO_HPP
#define TRACEGP_IO_HPP

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"
#include "tracegp/kernels.hpp"
#include "tracegp/meanfit.hpp"
#include "tracegp/ranking.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary file formats are little-endian");

namespace tracegp::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Text formats. All are UTF-8, tab-separated, with '#' comment lines.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string field;
  while (ss >> field) fields.push_back(field);
  return fields;
}

inline DataError line_error(const fs::path& path, std::size_t line_no,
                            const std::string& message) {
  return DataError(path.string() + ":" + std::to_string(line_no) + ": " + message);
}

inline long long parse_int(const std::string& s, const fs::path& path,
                           std::size_t line_no) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw line_error(path, line_no, "expected an integer, got '" + s + "'");
  }
}

inline double parse_real(const std::string& s, const fs::path& path,
                         std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw line_error(path, line_no, "expected a real number, got '" + s + "'");
  }
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Write-temp-then-rename so partially written outputs never replace files.
inline void atomic_write(const fs::path& path,
                         const std::function<void(std::ostream&)>& writer,
                         bool binary) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp.string());
    writer(out);
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace detail

/// Graph file: header `nodes<TAB>N`, then one edge per line `i<TAB>j<TAB>w`
/// (w optional, default 1.0). Each undirected edge may be listed once.
inline kernels::GraphAdjacency load_graph(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::optional<Index> n_nodes;
  std::vector<kernels::GraphEdge> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (fields[0] == "nodes") {
      if (fields.size() != 2) throw detail::line_error(path, line_no, "bad nodes header");
      n_nodes = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
      continue;
    }
    if (!n_nodes.has_value()) {
      throw detail::line_error(path, line_no, "edge before 'nodes' header");
    }
    if (fields.size() != 2 && fields.size() != 3) {
      throw detail::line_error(path, line_no, "expected 'i\\tj[\\tw]'");
    }
    kernels::GraphEdge e;
    e.i = static_cast<Index>(detail::parse_int(fields[0], path, line_no));
    e.j = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
    e.w = fields.size() == 3 ? detail::parse_real(fields[2], path, line_no) : 1.0;
    edges.push_back(e);
  }
  if (!n_nodes.has_value()) throw DataError("graph file missing 'nodes' header: " + path.string());
  try {
    return kernels::GraphAdjacency(*n_nodes, std::move(edges));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void save_graph(const fs::path& path, const kernels::GraphAdjacency& g,
                       const std::vector<std::string>& comments = {}) {
  detail::atomic_write(path, [&](std::ostream& out) {
    for (const std::string& c : comments) out << "# " << c << "\n";
    out << "nodes\t" << g.n_nodes() << "\n";
    for (const kernels::GraphEdge& e : g.edges()) {
      out << e.i << "\t" << e.j << "\t" << detail::format_real(e.w) << "\n";
    }
  }, /*binary=*/false);
}

/// Observations file: header `dims<TAB>M<TAB>N`, then `m<TAB>n<TAB>r` lines.
inline meanfit::SparseObservations load_observations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open observations file: " + path.string());
  meanfit::SparseObservations data;
  bool have_dims = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (fields[0] == "dims") {
      if (fields.size() != 3) throw detail::line_error(path, line_no, "bad dims header");
      data.n_rows = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
      data.n_cols = static_cast<Index>(detail::parse_int(fields[2], path, line_no));
      have_dims = true;
      continue;
    }
    if (!have_dims) throw detail::line_error(path, line_no, "entry before 'dims' header");
    if (fields.size() != 3) throw detail::line_error(path, line_no, "expected 'm\\tn\\tr'");
    meanfit::Observation t;
    t.row = static_cast<Index>(detail::parse_int(fields[0], path, line_no));
    t.col = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
    t.value = detail::parse_real(fields[2], path, line_no);
    data.triples.push_back(t);
  }
  if (!have_dims) throw DataError("observations file missing 'dims' header: " + path.string());
  try {
    data.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return data;
}

inline void save_observations(const fs::path& path, const meanfit::SparseObservations& data,
                              const std::vector<std::string>& comments = {}) {
  detail::atomic_write(path, [&](std::ostream& out) {
    for (const std::string& c : comments) out << "# " << c << "\n";
    out << "dims\t" << data.n_rows << "\t" << data.n_cols << "\n";
    for (const meanfit::Observation& t : data.triples) {
      out << t.row << "\t" << t.col << "\t" << detail::format_real(t.value) << "\n";
    }
  }, /*binary=*/false);
}

/// Labels file: header `dims<TAB>M<TAB>N`, then `m<TAB>n<TAB>y` with y in {+1, -1}.
inline ranking::LabeledObservations load_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file: " + path.string());
  ranking::LabeledObservations data;
  bool have_dims = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (fields[0] == "dims") {
      if (fields.size() != 3) throw detail::line_error(path, line_no, "bad dims header");
      data.n_rows = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
      data.n_cols = static_cast<Index>(detail::parse_int(fields[2], path, line_no));
      have_dims = true;
      continue;
    }
    if (!have_dims) throw detail::line_error(path, line_no, "entry before 'dims' header");
    if (fields.size() != 3) throw detail::line_error(path, line_no, "expected 'm\\tn\\ty'");
    ranking::LabeledObservation t;
    t.row = static_cast<Index>(detail::parse_int(fields[0], path, line_no));
    t.col = static_cast<Index>(detail::parse_int(fields[1], path, line_no));
    if (fields[2] == "+1" || fields[2] == "1") {
      t.label = 1;
    } else if (fields[2] == "-1") {
      t.label = -1;
    } else {
      throw detail::line_error(path, line_no, "label must be +1 or -1, got '" + fields[2] + "'");
    }
    data.triples.push_back(t);
  }
  if (!have_dims) throw DataError("labels file missing 'dims' header: " + path.string());
  try {
    data.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return data;
}

inline void save_labels(const fs::path& path, const ranking::LabeledObservations& data,
                        const std::vector<std::string>& comments = {}) {
  detail::atomic_write(path, [&](std::ostream& out) {
    for (const std::string& c : comments) out << "# " << c << "\n";
    out << "dims\t" << data.n_rows << "\t" << data.n_cols << "\n";
    for (const ranking::LabeledObservation& t : data.triples) {
      out << t.row << "\t" << t.col << "\t" << (t.label == 1 ? "+1" : "-1") << "\n";
    }
  }, /*binary=*/false);
}

// ---------------------------------------------------------------------------
// Binary matrix framing: magic "KRNL", u32 version = 1, u64 rows, u64 cols,
// then rows * cols float64 row-major, all little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_raw(std::ostream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

inline void read_raw(std::istream& in, void* data, std::size_t bytes,
                     const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes)) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_raw(out, &v, 4); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_raw(out, &v, 8); }
inline void write_f64(std::ostream& out, double v) { write_raw(out, &v, 8); }

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  read_raw(in, &v, 4, what);
  return v;
}
inline std::uint64_t read_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  read_raw(in, &v, 8, what);
  return v;
}
inline double read_f64(std::istream& in, const char* what) {
  double v = 0;
  read_raw(in, &v, 8, what);
  return v;
}

inline void write_tag(std::ostream& out, const char tag[5]) { write_raw(out, tag, 4); }

inline std::string read_tag(std::istream& in, const char* what) {
  char tag[4];
  read_raw(in, tag, 4, what);
  return std::string(tag, 4);
}

}  // namespace detail

inline void write_matrix(std::ostream& out, const Matrix& m) {
  detail::write_tag(out, "KRNL");
  detail::write_u32(out, 1);
  detail::write_u64(out, static_cast<std::uint64_t>(m.rows()));
  detail::write_u64(out, static_cast<std::uint64_t>(m.cols()));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor rm = m;
  detail::write_raw(out, rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()));
}

inline Matrix read_matrix(std::istream& in) {
  if (detail::read_tag(in, "matrix magic") != "KRNL") {
    throw DataError("bad matrix magic (expected KRNL)");
  }
  const std::uint32_t version = detail::read_u32(in, "matrix version");
  if (version != 1) throw DataError("unsupported matrix version " + std::to_string(version));
  const std::uint64_t rows = detail::read_u64(in, "matrix rows");
  const std::uint64_t cols = detail::read_u64(in, "matrix cols");
  if (rows > (1ull << 32) || cols > (1ull << 32)) throw DataError("matrix too large");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rm(static_cast<Index>(rows), static_cast<Index>(cols));
  detail::read_raw(in, rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()),
                   "matrix data");
  return Matrix(rm);
}

inline void save_matrix(const fs::path& path, const Matrix& m) {
  detail::atomic_write(path, [&](std::ostream& out) { write_matrix(out, m); },
                       /*binary=*/true);
}

inline Matrix load_matrix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open matrix file: " + path.string());
  return read_matrix(in);
}

// ---------------------------------------------------------------------------
// Model container: magic "MVGM", u32 version = 1, u32 section count, then
// sections of (4-byte tag, u64 payload length, payload). Matrix payloads use
// the KRNL framing above.
// ---------------------------------------------------------------------------

struct LoadedModel {
  meanfit::MeanModel model;
  meanfit::Hyperparams hyperparams;
  std::optional<ranking::RankingState> state;
};

namespace detail {

inline std::string matrix_payload(const Matrix& m) {
  std::ostringstream ss(std::ios::binary);
  write_matrix(ss, m);
  return ss.str();
}

inline Matrix matrix_from_payload(const std::string& payload) {
  std::istringstream ss(payload, std::ios::binary);
  return read_matrix(ss);
}

inline void write_section(std::ostream& out, const char tag[5], const std::string& payload) {
  write_tag(out, tag);
  write_u64(out, payload.size());
  write_raw(out, payload.data(), payload.size());
}

inline std::string index_vector_payload(const std::vector<Index>& values) {
  std::ostringstream ss(std::ios::binary);
  write_u64(ss, values.size());
  for (Index v : values) write_u64(ss, static_cast<std::uint64_t>(v));
  return ss.str();
}

inline std::vector<Index> index_vector_from_payload(const std::string& payload) {
  std::istringstream ss(payload, std::ios::binary);
  const std::uint64_t count = read_u64(ss, "index vector count");
  std::vector<Index> out(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    out[i] = static_cast<Index>(read_u64(ss, "index vector entry"));
  }
  return out;
}

inline std::string hyperparams_payload(const meanfit::Hyperparams& h) {
  std::ostringstream ss(std::ios::binary);
  write_f64(ss, h.lambda);
  write_f64(ss, h.alpha);
  write_f64(ss, h.sigma2);
  write_f64(ss, h.tol);
  write_u64(ss, static_cast<std::uint64_t>(h.max_iter));
  write_u64(ss, static_cast<std::uint64_t>(h.factor_rank));
  const std::uint8_t has_bound = h.trace_bound.has_value() ? 1 : 0;
  write_raw(ss, &has_bound, 1);
  write_f64(ss, h.trace_bound.value_or(0.0));
  const std::uint8_t bias = h.use_row_bias ? 1 : 0;
  write_raw(ss, &bias, 1);
  return ss.str();
}

inline meanfit::Hyperparams hyperparams_from_payload(const std::string& payload) {
  std::istringstream ss(payload, std::ios::binary);
  meanfit::Hyperparams h;
  h.lambda = read_f64(ss, "lambda");
  h.alpha = read_f64(ss, "alpha");
  h.sigma2 = read_f64(ss, "sigma2");
  h.tol = read_f64(ss, "tol");
  h.max_iter = static_cast<int>(read_u64(ss, "max_iter"));
  h.factor_rank = static_cast<int>(read_u64(ss, "factor_rank"));
  std::uint8_t has_bound = 0;
  read_raw(ss, &has_bound, 1, "trace_bound flag");
  const double bound = read_f64(ss, "trace_bound");
  if (has_bound != 0) h.trace_bound = bound;
  std::uint8_t bias = 0;
  read_raw(ss, &bias, 1, "row bias flag");
  h.use_row_bias = bias != 0;
  return h;
}

}  // namespace detail

inline void save_model(const fs::path& path, const meanfit::MeanModel& model,
                       const meanfit::Hyperparams& hyperparams,
                       const ranking::RankingState* state = nullptr) {
  detail::atomic_write(path, [&](std::ostream& out) {
    std::vector<std::pair<std::string, std::string>> sections;
    sections.emplace_back("BMAT", detail::matrix_payload(model.b));
    sections.emplace_back("GMBA", detail::matrix_payload(model.basis_m.entries));
    sections.emplace_back("GNBA", detail::matrix_payload(model.basis_n.entries));
    sections.emplace_back("BIAS", detail::matrix_payload(model.row_bias));
    sections.emplace_back("HYPR", detail::hyperparams_payload(hyperparams));
    if (state != nullptr) {
      std::vector<Index> offsets{0};
      std::vector<Index> perms;
      std::vector<Index> k_pos;
      std::vector<Index> flags;
      std::vector<double> xs;
      std::vector<double> rs;
      for (const ranking::TaskState& ts : state->tasks) {
        offsets.push_back(offsets.back() + ts.x.size());
        for (Index i = 0; i < ts.x.size(); ++i) {
          xs.push_back(ts.x(i));
          rs.push_back(ts.r(i));
        }
        perms.insert(perms.end(), ts.perm.begin(), ts.perm.end());
        k_pos.push_back(ts.k_pos);
        flags.push_back((ts.trivial ? 1 : 0) | (ts.inner_converged ? 2 : 0));
      }
      const auto as_row = [](const std::vector<double>& v) {
        Matrix m(1, static_cast<Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
        return m;
      };
      sections.emplace_back("RSTO", detail::index_vector_payload(offsets));
      sections.emplace_back("RSTX", detail::matrix_payload(as_row(xs)));
      sections.emplace_back("RSTR", detail::matrix_payload(as_row(rs)));
      sections.emplace_back("RSTP", detail::index_vector_payload(perms));
      sections.emplace_back("RSTK", detail::index_vector_payload(k_pos));
      sections.emplace_back("RSTF", detail::index_vector_payload(flags));
    }
    detail::write_tag(out, "MVGM");
    detail::write_u32(out, 1);
    detail::write_u32(out, static_cast<std::uint32_t>(sections.size()));
    for (const auto& [tag, payload] : sections) {
      detail::write_section(out, tag.c_str(), payload);
    }
  }, /*binary=*/true);
}

inline LoadedModel load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path.string());
  if (detail::read_tag(in, "model magic") != "MVGM") {
    throw DataError("bad model magic in " + path.string());
  }
  const std::uint32_t version = detail::read_u32(in, "model version");
  if (version != 1) throw DataError("unsupported model version " + std::to_string(version));
  const std::uint32_t n_sections = detail::read_u32(in, "section count");
  std::vector<std::pair<std::string, std::string>> sections;
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    const std::string tag = detail::read_tag(in, "section tag");
    const std::uint64_t size = detail::read_u64(in, "section size");
    std::string payload(size, '\0');
    detail::read_raw(in, payload.data(), size, "section payload");
    sections.emplace_back(tag, std::move(payload));
  }
  const auto find = [&sections](const std::string& tag) -> const std::string* {
    for (const auto& [t, p] : sections) {
      if (t == tag) return &p;
    }
    return nullptr;
  };
  const auto require = [&](const std::string& tag) -> const std::string& {
    const std::string* p = find(tag);
    if (p == nullptr) throw DataError("model file missing section " + tag);
    return *p;
  };

  LoadedModel out;
  out.model.b = detail::matrix_from_payload(require("BMAT"));
  out.model.basis_m.entries = detail::matrix_from_payload(require("GMBA"));
  out.model.basis_n.entries = detail::matrix_from_payload(require("GNBA"));
  out.model.row_bias = detail::matrix_from_payload(require("BIAS"));
  out.hyperparams = detail::hyperparams_from_payload(require("HYPR"));
  if (out.model.b.rows() != out.model.basis_m.dim() ||
      out.model.b.cols() != out.model.basis_n.dim()) {
    throw DataError("model file inconsistent: B does not match bases");
  }

  if (find("RSTO") != nullptr) {
    const std::vector<Index> offsets = detail::index_vector_from_payload(require("RSTO"));
    const Matrix xs = detail::matrix_from_payload(require("RSTX"));
    const Matrix rs = detail::matrix_from_payload(require("RSTR"));
    const std::vector<Index> perms = detail::index_vector_from_payload(require("RSTP"));
    const std::vector<Index> k_pos = detail::index_vector_from_payload(require("RSTK"));
    const std::vector<Index> flags = detail::index_vector_from_payload(require("RSTF"));
    if (offsets.empty() || offsets.size() - 1 != k_pos.size() ||
        flags.size() != k_pos.size()) {
      throw DataError("model file inconsistent ranking state");
    }
    ranking::RankingState state;
    state.tasks.resize(k_pos.size());
    for (std::size_t m = 0; m < k_pos.size(); ++m) {
      const Index begin = offsets[m];
      const Index end = offsets[m + 1];
      if (begin > end || end > xs.cols() || end > rs.cols() ||
          end > static_cast<Index>(perms.size())) {
        throw DataError("model file inconsistent ranking state offsets");
      }
      ranking::TaskState& ts = state.tasks[m];
      const Index d = end - begin;
      ts.x = xs.row(0).segment(begin, d).transpose();
      ts.r = rs.row(0).segment(begin, d).transpose();
      ts.perm.assign(perms.begin() + begin, perms.begin() + end);
      ts.k_pos = k_pos[m];
      ts.trivial = (flags[m] & 1) != 0;
      ts.inner_converged = (flags[m] & 2) != 0;
    }
    out.state = std::move(state);
  }
  return out;
}

}  // namespace tracegp::io

#endif  // TRACEGP_IO_HPP
