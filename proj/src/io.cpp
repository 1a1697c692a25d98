#include "sage3d/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "sage3d/errors.hpp"

namespace sage3d {

namespace {

// Line reader that tracks line numbers and splits on whitespace.
class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  // Next non-empty line, split; false at end of input.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, line_, what); }

  double real(const std::string& tok) const {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
      fail("expected a finite number, got '" + tok + "'");
    }
    return v;
  }

  std::size_t count(const std::string& tok) const {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      fail("expected a non-negative integer, got '" + tok + "'");
    }
    return v;
  }

  // "<tag> <count>" header.
  std::size_t header(const std::string& tag) {
    std::vector<std::string> t;
    if (!next(t)) fail("missing '" + tag + " <count>' header");
    if (t.size() != 2 || t[0] != tag) fail("expected '" + tag + " <count>' header");
    return count(t[1]);
  }

  void expect_end() {
    std::vector<std::string> t;
    if (next(t)) fail("unexpected trailing content");
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 0;
};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// point clouds

PointCloud parse_point_cloud(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  const std::size_t n = r.header("pcd");
  PointCloud cloud;
  cloud.coords.reserve(n);
  cloud.attrs.reserve(n);
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) {
    if (!r.next(t)) r.fail("expected " + std::to_string(n) + " points, found " + std::to_string(i));
    if (t.size() != 3 + kAttrWidth) r.fail("expected 8 values per point, got " + std::to_string(t.size()));
    Vec3 p;
    Attrs a;
    for (std::size_t k = 0; k < 3; ++k) p[k] = r.real(t[k]);
    for (std::size_t k = 0; k < kAttrWidth; ++k) a[k] = r.real(t[3 + k]);
    cloud.coords.push_back(p);
    cloud.attrs.push_back(a);
  }
  r.expect_end();
  return cloud;
}

void write_point_cloud(std::ostream& out, const PointCloud& cloud) {
  out << "pcd " << cloud.size() << '\n';
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    out << format_real(p[0]) << ' ' << format_real(p[1]) << ' ' << format_real(p[2]);
    for (double a : cloud.attrs[i]) out << ' ' << format_real(a);
    out << '\n';
  }
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_point_cloud(in, path.string());
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  write_point_cloud(out, cloud);
  finish(out, path);
}

// ---------------------------------------------------------------------------
// wireframes

Wireframe parse_wireframe(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  const std::size_t m = r.header("wf");
  Wireframe wf;
  std::vector<std::string> t;
  for (std::size_t i = 0; i < m; ++i) {
    if (!r.next(t)) r.fail("expected " + std::to_string(m) + " vertices, found " + std::to_string(i));
    if (t.size() != 3) r.fail("expected 3 values per vertex, got " + std::to_string(t.size()));
    wf.vertices.push_back({r.real(t[0]), r.real(t[1]), r.real(t[2])});
  }
  r.expect_end();
  return wf;
}

void write_wireframe(std::ostream& out, const Wireframe& wf) {
  out << "wf " << wf.size() << '\n';
  for (const auto& v : wf.vertices) {
    out << format_real(v[0]) << ' ' << format_real(v[1]) << ' ' << format_real(v[2]) << '\n';
  }
}

Wireframe read_wireframe(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_wireframe(in, path.string());
}

void write_wireframe(const std::filesystem::path& path, const Wireframe& wf) {
  auto out = open_out(path);
  write_wireframe(out, wf);
  finish(out, path);
}

// ---------------------------------------------------------------------------
// corners

CornerSet parse_corners(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  const std::size_t n = r.header("corners");
  CornerSet cs;
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) {
    if (!r.next(t)) r.fail("expected " + std::to_string(n) + " corners, found " + std::to_string(i));
    if (t.size() != 5) r.fail("expected 5 values per corner, got " + std::to_string(t.size()));
    Corner c{{r.real(t[0]), r.real(t[1]), r.real(t[2])}, r.real(t[3]), r.count(t[4])};
    cs.corners.push_back(c);
  }
  r.expect_end();
  return cs;
}

void write_corners(std::ostream& out, const CornerSet& corners) {
  out << "corners " << corners.size() << '\n';
  for (const auto& c : corners.corners) {
    out << format_real(c.position[0]) << ' ' << format_real(c.position[1]) << ' '
        << format_real(c.position[2]) << ' ' << format_real(c.confidence) << ' ' << c.support << '\n';
  }
}

CornerSet read_corners(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_corners(in, path.string());
}

void write_corners(const std::filesystem::path& path, const CornerSet& corners) {
  auto out = open_out(path);
  write_corners(out, corners);
  finish(out, path);
}

// ---------------------------------------------------------------------------
// checkpoints

void write_checkpoint(std::ostream& out, const ParameterSet& params) {
  out << "ckpt v1\n";
  for (const auto& e : params.entries()) {
    out << e.name;
    for (std::size_t d : e.tensor.shape()) out << ' ' << d;
    out << " ;\n";
    const auto v = e.tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_real(v[i]);
    out << '\n';
  }
}

void read_checkpoint(std::istream& in, ParameterSet& params, const std::string& source) {
  LineReader r(in, source);
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 2 || t[0] != "ckpt" || t[1] != "v1") r.fail("expected 'ckpt v1' header");
  std::vector<std::vector<double>> loaded;
  for (const auto& e : params.entries()) {
    if (!r.next(t)) r.fail("missing parameter '" + e.name + "'");
    if (t.size() < 2 || t.back() != ";") r.fail("expected 'name dims... ;' header");
    if (t[0] != e.name) r.fail("expected parameter '" + e.name + "', found '" + t[0] + "'");
    ag::Shape shape;
    for (std::size_t k = 1; k + 1 < t.size(); ++k) shape.push_back(r.count(t[k]));
    if (shape != e.tensor.shape()) {
      r.fail("shape " + ag::shape_string(shape) + " for '" + e.name + "' does not match the model's " +
             ag::shape_string(e.tensor.shape()));
    }
    std::vector<double> values;
    values.reserve(e.tensor.size());
    while (values.size() < e.tensor.size()) {
      if (!r.next(t)) r.fail("values of '" + e.name + "' end early");
      for (const auto& tok : t) values.push_back(r.real(tok));
    }
    if (values.size() != e.tensor.size()) r.fail("too many values for '" + e.name + "'");
    loaded.push_back(std::move(values));
  }
  r.expect_end();
  // Only touch the parameters once the whole file parsed.
  for (std::size_t p = 0; p < loaded.size(); ++p) {
    ag::Tensor t = params.entries()[p].tensor;
    std::copy(loaded[p].begin(), loaded[p].end(), t.mutable_values().begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  auto out = open_out(path);
  write_checkpoint(out, params);
  finish(out, path);
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  auto in = open_in(path);
  read_checkpoint(in, params, path.string());
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace sage3d
