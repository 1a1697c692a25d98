#pragma once

// ASCII file formats.
//
//   point cloud   "pcd <N>" then N rows "x y z r g b a i"
//   wireframe     "wf <M>" then M rows "x y z"
//   corners       "corners <n>" then n rows "x y z confidence support"
//   checkpoint    "ckpt v1" then per parameter a "name d0 d1 ... ;" header
//                 line followed by its values, whitespace separated
//
// Reals are written in shortest round-trip form, so write -> read is exact.
// Parse failures throw ParseError with the 1-based line number.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "sage3d/geometry.hpp"
#include "sage3d/optim.hpp"
#include "sage3d/postprocess.hpp"

namespace sage3d {

std::string format_real(double v);

PointCloud parse_point_cloud(std::istream& in, const std::string& source = "<pcd>");
void write_point_cloud(std::ostream& out, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

Wireframe parse_wireframe(std::istream& in, const std::string& source = "<wf>");
void write_wireframe(std::ostream& out, const Wireframe& wf);
Wireframe read_wireframe(const std::filesystem::path& path);
void write_wireframe(const std::filesystem::path& path, const Wireframe& wf);

CornerSet parse_corners(std::istream& in, const std::string& source = "<corners>");
void write_corners(std::ostream& out, const CornerSet& corners);
CornerSet read_corners(const std::filesystem::path& path);
void write_corners(const std::filesystem::path& path, const CornerSet& corners);

void write_checkpoint(std::ostream& out, const ParameterSet& params);
// Loads values into an existing set; names, order and shapes must match.
void read_checkpoint(std::istream& in, ParameterSet& params, const std::string& source = "<ckpt>");
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

// Whole-file helpers that report the path on failure.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sage3d
