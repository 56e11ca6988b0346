#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hgwm/core_types.hpp"

namespace hgwm::io {

namespace fs = std::filesystem;

/// Flat `key = value` text, one entry per line, `#` comments. Keys are kept
/// sorted so that writing is deterministic.
class KeyValue {
 public:
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "1" : "0")); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string to_string() const;
  static KeyValue parse(const std::string& text);
  void write(const fs::path& path) const;
  static KeyValue read(const fs::path& path);

 private:
  std::map<std::string, std::string> entries_;
};

// Round-trip exact decimal form of a double.
std::string format_double(double v);
std::string join_doubles(const std::vector<double>& v);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

// Scene file: "BGS1", u32 count, then 17 little-endian float64 per Gaussian.
void write_scene(const fs::path& path, const GaussianSet& set);
GaussianSet read_scene(const fs::path& path);

// 16-bit binary PPM (P6, maxval 65535) for RGB in [0, 1].
void write_ppm(const fs::path& path, const RgbImage& img);
RgbImage read_ppm(const fs::path& path);
// 8-bit binary PGM (P5) for label maps.
void write_pgm(const fs::path& path, const LabelImage& img);
LabelImage read_pgm(const fs::path& path);
// Raw little-endian float32, row-major, no header.
void write_depth(const fs::path& path, const DepthImage& img);
DepthImage read_depth(const fs::path& path, int width, int height);

void put_camera(KeyValue& kv, const std::string& prefix, const Camera& cam);
Camera get_camera(const KeyValue& kv, const std::string& prefix);
void put_arm_action(KeyValue& kv, const std::string& prefix, const ArmAction& a);
ArmAction get_arm_action(const KeyValue& kv, const std::string& prefix);

/// Dataset layout:
///   <root>/demos/<id>/meta
///   <root>/demos/<id>/step_<k>/view_<v>.rgb.ppm
///   <root>/demos/<id>/step_<k>/view_<v>.depth.bin
///   <root>/demos/<id>/step_<k>/view_<v>.mask.pgm
///   <root>/demos/<id>/step_<k>/action.kv
void write_demo(const fs::path& demo_dir, const DemoTrajectory& demo);
DemoTrajectory read_demo(const fs::path& demo_dir);

std::vector<fs::path> list_demos(const fs::path& dataset_root);
std::vector<DemoTrajectory> read_dataset(const fs::path& dataset_root);

}  // namespace hgwm::io
