#pragma once

// Files: comma-separated matrices, supports, problem directories, subspace
// bases, and config files (JSON or a small TOML subset, both read into json).

#include "sporadic/oracle.hpp"
#include "sporadic/problem.hpp"
#include "sporadic/spectral.hpp"
#include "sporadic/intersect.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sporadic {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Numbers and text files
// ---------------------------------------------------------------------------

/// Shortest decimal that reads back to the same double; "nan", "inf", "-inf" otherwise.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw IoError("to_chars failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view t) {
  while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) t.remove_prefix(1);
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\r')) t.remove_suffix(1);
  if (t == "nan" || t == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  if (!t.empty() && t.front() == '+') t.remove_prefix(1);
  double v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size())
    throw IoError("not a number: '" + std::string(t) + "'");
  return v;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

/// Pretty-printed with sorted keys, newline-terminated.
inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV matrices: one line per row, no header.
// ---------------------------------------------------------------------------

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

inline Matrix matrix_from_csv(std::string_view text, const std::string& name = "csv") {
  std::vector<double> vals;
  Index rows = 0, cols = -1;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    Index n = 0;
    while (true) {
      const auto comma = line.find(',');
      vals.push_back(parse_double(line.substr(0, comma)));
      ++n;
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (cols >= 0 && n != cols)
      throw IoError(name + ": row " + std::to_string(rows + 1) + " has " + std::to_string(n) +
                    " fields, expected " + std::to_string(cols));
    cols = n;
    ++rows;
  }
  if (rows == 0) return Matrix(0, 0);
  return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      vals.data(), rows, cols);
}

inline void write_csv(const fs::path& path, const Matrix& m) { write_text(path, matrix_to_csv(m)); }

inline Matrix read_csv(const fs::path& path) { return matrix_from_csv(read_text(path), path.string()); }

/// Table with a header row; every row must have as many cells as the header.
inline void write_table(const fs::path& path, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += ',';
      out += cells[c];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw DimensionError("table row does not match header");
    line(r);
  }
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// supports.csv: one line per sample, the sorted estimated indices.
// ---------------------------------------------------------------------------

inline void write_supports(const fs::path& path, const SupportEstimate& e) {
  std::string out;
  for (const auto& o : e.omega) {
    for (std::size_t t = 0; t < o.size(); ++t) {
      if (t) out += ',';
      out += std::to_string(o[t]);
    }
    out += '\n';
  }
  write_text(path, out);
}

/// Reads back supports.csv; line r belongs to samples[r] (default: sample r).
inline SupportEstimate read_supports(const fs::path& path, Index K, std::vector<Index> samples = {}) {
  const auto text = read_text(path);
  std::vector<std::vector<Index>> omega;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<Index> o;
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto tok = rest.substr(0, comma);
      Index v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || p != tok.data() + tok.size())
        throw IoError(path.string() + ": bad index '" + std::string(tok) + "'");
      o.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    omega.push_back(std::move(o));
  }
  if (samples.empty()) {
    samples.resize(omega.size());
    std::iota(samples.begin(), samples.end(), Index{0});
  }
  return SupportEstimate::from_omega(K, std::move(samples), std::move(omega));
}

// ---------------------------------------------------------------------------
// JSON conversions
// ---------------------------------------------------------------------------

namespace detail {

/// Rejects keys outside `allowed` so typos in config files fail loudly.
inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a table/object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("unknown key '" + k + "' in " + std::string(where));
}

template <class T>
T get(const json& j, const char* key, std::string_view where) {
  if (!j.contains(key)) throw ConfigError(std::string(where) + " is missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + " has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, std::string_view where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

}  // namespace detail

inline json to_json(const ProblemConfig& c) {
  json seeds = json::array();
  for (const auto& o : c.overlap_seeding) seeds.push_back({{"k", o.k}, {"first", o.first}, {"second", o.second}});
  return {{"M", c.M}, {"K", c.K}, {"s", c.s}, {"N", c.N}, {"seed", c.seed}, {"overlap_seeding", seeds}};
}

inline ProblemConfig problem_config_from_json(const json& j) {
  constexpr std::string_view where = "problem";
  detail::check_keys(j, {"M", "K", "s", "N", "seed", "overlap_seeding"}, where);
  ProblemConfig c;
  c.M = detail::get<Index>(j, "M", where);
  c.K = detail::get<Index>(j, "K", where);
  c.s = detail::get<Index>(j, "s", where);
  c.N = detail::get<Index>(j, "N", where);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", 0, where);
  if (j.contains("overlap_seeding")) {
    for (const auto& o : j.at("overlap_seeding")) {
      detail::check_keys(o, {"k", "first", "second"}, "overlap_seeding");
      c.overlap_seeding.push_back({detail::get<Index>(o, "k", "overlap_seeding"),
                                   detail::get<Index>(o, "first", "overlap_seeding"),
                                   detail::get<Index>(o, "second", "overlap_seeding")});
    }
  }
  c.validate();
  return c;
}

inline json to_json(const IntersectConfig& c) {
  return {{"ell", c.ell}, {"J", c.J}, {"tau", c.tau}, {"dedup_threshold", c.dedup_threshold}, {"alpha", c.alpha}};
}

/// Missing ell/J fall back to choose_ell / default_J for (K, s).
inline IntersectConfig intersect_config_from_json(const json& j, Index K, Index s) {
  constexpr std::string_view where = "intersect";
  detail::check_keys(j, {"ell", "J", "tau", "dedup_threshold", "alpha"}, where);
  const double alpha = detail::get_or<double>(j, "alpha", 1.0, where);
  auto c = IntersectConfig::defaults_for(K, s, alpha);
  c.ell = detail::get_or<Index>(j, "ell", c.ell, where);
  c.J = j.contains("J") ? detail::get<Index>(j, "J", where) : default_J(K, c.ell, alpha);
  c.tau = detail::get_or<double>(j, "tau", c.tau, where);
  c.dedup_threshold = detail::get_or<double>(j, "dedup_threshold", c.dedup_threshold, where);
  c.validate();
  return c;
}

inline std::string route_name(CovarianceRoute r) {
  switch (r) {
    case CovarianceRoute::direct: return "direct";
    case CovarianceRoute::moment: return "moment";
    default: return "automatic";
  }
}

inline CovarianceRoute route_from_name(const std::string& s) {
  if (s == "automatic") return CovarianceRoute::automatic;
  if (s == "direct") return CovarianceRoute::direct;
  if (s == "moment") return CovarianceRoute::moment;
  throw ConfigError("unknown covariance route '" + s + "'");
}

// ---------------------------------------------------------------------------
// Problem directories and subspaces
// ---------------------------------------------------------------------------

inline void save_problem(const fs::path& dir, const ProblemInstance& p) {
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(p.config));
  write_csv(dir / "D.csv", p.D.matrix());
  write_csv(dir / "X.csv", p.X.dense());
  write_csv(dir / "Y.csv", p.Y.matrix());
}

inline ProblemInstance load_problem(const fs::path& dir) {
  ProblemInstance p;
  p.config = problem_config_from_json(read_json(dir / "config.json"));
  p.D = Dictionary(read_csv(dir / "D.csv"));
  p.X = CoefficientMatrix::from_dense(read_csv(dir / "X.csv"));
  Matrix y = read_csv(dir / "Y.csv");
  const auto& c = p.config;
  if (p.D.dim() != c.M || p.D.size() != c.K) throw DimensionError("D.csv does not match config.json");
  if (p.X.K() != c.K || p.X.N() != c.N || p.X.s() != c.s) throw DimensionError("X.csv does not match config.json");
  if (y.rows() != c.M || y.cols() != c.N) throw DimensionError("Y.csv does not match config.json");
  p.Y = SampleSet(std::move(y), c);
  return p;
}

inline fs::path subspace_path(const fs::path& dir, Index j) {
  return dir / ("S_" + std::to_string(j) + ".csv");
}

inline void write_subspace(const fs::path& dir, Index j, const Subspace& s) {
  write_csv(subspace_path(dir, j), s.basis());
}

inline Subspace read_subspace(const fs::path& dir, Index j) {
  return Subspace::from_orthonormal(read_csv(subspace_path(dir, j)));
}

// ---------------------------------------------------------------------------
// TOML subset: [tables], [dotted.tables], dotted keys, strings, integers,
// floats, booleans, arrays (may span lines) and inline tables. No dates,
// no [[arrays of tables]], no multi-line strings.
// ---------------------------------------------------------------------------

namespace detail {

class TomlReader {
 public:
  explicit TomlReader(std::string_view text) : t_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++p_;
        if (peek() == '[') fail("arrays of tables are not supported");
        auto path = key_path();
        skip_ws();
        expect(']');
        table = &descend(root, path);
      } else {
        auto path = key_path();
        skip_ws();
        expect('=');
        json v = value();
        json* owner = &descend(*table, {path.begin(), path.end() - 1});
        if (owner->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*owner)[path.back()] = std::move(v);
      }
      end_of_line();
    }
    return root;
  }

 private:
  std::string_view t_;
  std::size_t p_ = 0;
  std::size_t line_ = 1;

  bool eof() const { return p_ >= t_.size(); }
  char peek() const { return eof() ? '\0' : t_[p_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("toml line " + std::to_string(line_) + ": " + msg);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++p_;
  }

  void skip_ws() {
    while (peek() == ' ' || peek() == '\t') ++p_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++p_;
  }

  // whitespace, comments and newlines (inside arrays and between statements)
  void skip_all() {
    while (true) {
      skip_ws();
      skip_comment();
      if (peek() == '\r') {
        ++p_;
      } else if (peek() == '\n') {
        ++p_;
        ++line_;
      } else {
        return;
      }
    }
  }

  void skip_blank_lines() { skip_all(); }

  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') ++p_;
    if (eof()) return;
    if (peek() != '\n') fail("unexpected trailing characters");
  }

  std::string bare_or_quoted_key() {
    skip_ws();
    if (peek() == '"' || peek() == '\'') return string_value();
    const auto start = p_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++p_;
    if (p_ == start) fail("expected a key");
    return std::string(t_.substr(start, p_ - start));
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{bare_or_quoted_key()};
    skip_ws();
    while (peek() == '.') {
      ++p_;
      path.push_back(bare_or_quoted_key());
      skip_ws();
    }
    return path;
  }

  json& descend(json& from, const std::vector<std::string>& path) {
    json* cur = &from;
    for (const auto& k : path) {
      if (!cur->contains(k)) (*cur)[k] = json::object();
      cur = &(*cur)[k];
      if (!cur->is_object()) fail("'" + k + "' is not a table");
    }
    return *cur;
  }

  std::string string_value() {
    const char q = peek();
    ++p_;
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = t_[p_++];
      if (c == q) break;
      if (q == '"' && c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = t_[p_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '\\': out += '\\'; break;
          case '"': out += '"'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  json scalar() {
    const auto start = p_;
    while (!eof() && std::string_view(",]}# \t\r\n").find(peek()) == std::string_view::npos) ++p_;
    std::string tok(t_.substr(start, p_ - start));
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    if (tok == "nan" || tok == "+nan" || tok == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (tok == "inf" || tok == "+inf") return std::numeric_limits<double>::infinity();
    if (tok == "-inf") return -std::numeric_limits<double>::infinity();
    std::string clean;
    for (char c : tok)
      if (c != '_') clean += c;
    const bool floaty = clean.find_first_of(".eE") != std::string::npos;
    std::string_view sv(clean);
    if (!sv.empty() && sv.front() == '+') sv.remove_prefix(1);
    if (!floaty) {
      std::int64_t v = 0;
      auto [q, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
      if (ec == std::errc{} && q == sv.data() + sv.size()) return v;
      if (!sv.empty() && sv.front() != '-') {
        std::uint64_t u = 0;
        auto [q2, ec2] = std::from_chars(sv.data(), sv.data() + sv.size(), u);
        if (ec2 == std::errc{} && q2 == sv.data() + sv.size()) return u;
      }
      fail("bad value '" + tok + "'");
    }
    double d = 0;
    auto [q, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), d);
    if (ec != std::errc{} || q != sv.data() + sv.size()) fail("bad value '" + tok + "'");
    return d;
  }

  json value() {
    skip_ws();
    const char c = peek();
    if (c == '"' || c == '\'') return string_value();
    if (c == '[') {
      ++p_;
      json arr = json::array();
      skip_all();
      while (peek() != ']') {
        arr.push_back(value());
        skip_all();
        if (peek() == ',') {
          ++p_;
          skip_all();
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      ++p_;
      return arr;
    }
    if (c == '{') {
      ++p_;
      json obj = json::object();
      skip_ws();
      while (peek() != '}') {
        auto path = key_path();
        skip_ws();
        expect('=');
        json v = value();
        json* owner = &descend(obj, {path.begin(), path.end() - 1});
        if (owner->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*owner)[path.back()] = std::move(v);
        skip_ws();
        if (peek() == ',') {
          ++p_;
          skip_ws();
        } else if (peek() != '}') {
          fail("expected ',' or '}' in inline table");
        }
      }
      ++p_;
      return obj;
    }
    return scalar();
  }
};

}  // namespace detail

inline json parse_toml(std::string_view text) { return detail::TomlReader(text).parse(); }

/// .toml files go through parse_toml, anything else is read as JSON.
inline json load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  if (path.extension() == ".toml") return parse_toml(read_text(path));
  return read_json(path);
}

}  // namespace sporadic
