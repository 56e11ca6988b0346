#include "hgwm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hgwm/errors.hpp"

namespace hgwm::io {

namespace {

template <typename T>
void append_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T load_le(const std::string& in, std::size_t offset) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (offset + sizeof(T) > in.size()) throw FormatError("truncated binary payload");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Parses "P5"/"P6" headers: magic, width, height, maxval, single whitespace.
struct NetpbmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw FormatError(std::string("expected netpbm magic ") + magic);
  }
  std::size_t pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& f : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const auto res = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), f);
    if (res.ec != std::errc()) throw FormatError("malformed netpbm header");
    pos = static_cast<std::size_t>(res.ptr - bytes.data());
  }
  if (pos >= bytes.size()) throw FormatError("netpbm header without payload");
  return {fields[0], fields[1], fields[2], pos + 1};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

void KeyValue::set(const std::string& key, double value) { entries_[key] = format_double(value); }

const std::string& KeyValue::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw FormatError("missing key '" + key + "'");
  return it->second;
}

double KeyValue::get_double(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("key '" + key + "' is not a number: " + s);
  }
  return v;
}

int KeyValue::get_int(const std::string& key) const {
  const std::string& s = get(key);
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("key '" + key + "' is not an integer: " + s);
  }
  return v;
}

bool KeyValue::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw FormatError("key '" + key + "' is not a boolean: " + s);
}

std::vector<double> KeyValue::get_doubles(const std::string& key) const {
  std::istringstream in(get(key));
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc()) throw FormatError("key '" + key + "' has a bad number: " + tok);
    out.push_back(v);
  }
  return out;
}

std::string KeyValue::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

KeyValue KeyValue::parse(const std::string& text) {
  KeyValue kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError("line " + std::to_string(lineno) + ": expected key = value");
    }
    kv.entries_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

void KeyValue::write(const fs::path& path) const { write_file(path, to_string()); }

KeyValue KeyValue::read(const fs::path& path) { return parse(read_file(path)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_scene(const fs::path& path, const GaussianSet& set) {
  std::string out = "BGS1";
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.size()));
  for (const Gaussian& g : set.gaussians) {
    for (double v : g.to_array()) append_le<double>(out, v);
  }
  write_file(path, out);
}

GaussianSet read_scene(const fs::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 8 || in.compare(0, 4, "BGS1") != 0) throw FormatError("not a BGS1 scene file");
  const auto count = load_le<std::uint32_t>(in, 4);
  const std::size_t expected = 8 + static_cast<std::size_t>(count) * Gaussian::kFieldCount * 8;
  if (in.size() != expected) throw FormatError("scene file length does not match its count");
  GaussianSet set;
  set.gaussians.reserve(count);
  std::array<double, Gaussian::kFieldCount> buf{};
  for (std::uint32_t i = 0; i < count; ++i) {
    for (std::size_t f = 0; f < Gaussian::kFieldCount; ++f) {
      buf[f] = load_le<double>(in, 8 + (i * Gaussian::kFieldCount + f) * 8);
    }
    set.gaussians.push_back(Gaussian::from_array(buf));
  }
  return set;
}

void write_ppm(const fs::path& path, const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
  out.reserve(out.size() + img.data.size() * 2);
  for (double v : img.data) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  write_file(path, out);
}

RgbImage read_ppm(const fs::path& path) {
  const std::string in = read_file(path);
  const NetpbmHeader h = parse_netpbm(in, "P6");
  RgbImage img(h.width, h.height);
  const std::size_t bpc = h.maxval > 255 ? 2 : 1;
  if (in.size() < h.data_offset + img.data.size() * bpc) throw FormatError("truncated PPM payload");
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    unsigned v = static_cast<unsigned char>(in[h.data_offset + i * bpc]);
    if (bpc == 2) v = (v << 8) | static_cast<unsigned char>(in[h.data_offset + i * 2 + 1]);
    img.data[i] = static_cast<double>(v) / h.maxval;
  }
  return img;
}

void write_pgm(const fs::path& path, const LabelImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  write_file(path, out);
}

LabelImage read_pgm(const fs::path& path) {
  const std::string in = read_file(path);
  const NetpbmHeader h = parse_netpbm(in, "P5");
  if (h.maxval > 255) throw FormatError("16-bit PGM label maps are not supported");
  LabelImage img(h.width, h.height);
  if (in.size() < h.data_offset + img.data.size()) throw FormatError("truncated PGM payload");
  std::memcpy(img.data.data(), in.data() + h.data_offset, img.data.size());
  return img;
}

void write_depth(const fs::path& path, const DepthImage& img) {
  std::string out;
  out.reserve(img.data.size() * 4);
  for (double v : img.data) append_le<float>(out, static_cast<float>(v));
  write_file(path, out);
}

DepthImage read_depth(const fs::path& path, int width, int height) {
  const std::string in = read_file(path);
  DepthImage img(width, height);
  if (in.size() != img.data.size() * 4) throw FormatError("depth file size does not match camera");
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = load_le<float>(in, i * 4);
  return img;
}

void put_camera(KeyValue& kv, const std::string& p, const Camera& cam) {
  const Intrinsics& k = cam.intrinsics();
  kv.set(p + ".intrinsics", join_doubles({k.fx, k.fy, k.cx, k.cy}));
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(cam.rotation()(i, j));
  kv.set(p + ".rotation", join_doubles(r));
  const Vec3& t = cam.translation();
  kv.set(p + ".translation", join_doubles({t[0], t[1], t[2]}));
  kv.set(p + ".width", cam.width());
  kv.set(p + ".height", cam.height());
}

Camera get_camera(const KeyValue& kv, const std::string& p) {
  const auto k = kv.get_doubles(p + ".intrinsics");
  const auto r = kv.get_doubles(p + ".rotation");
  const auto t = kv.get_doubles(p + ".translation");
  if (k.size() != 4 || r.size() != 9 || t.size() != 3) throw FormatError("malformed camera " + p);
  RigidTransform w2c;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w2c.rotation(i, j) = r[i * 3 + j];
  w2c.translation = {t[0], t[1], t[2]};
  return Camera({k[0], k[1], k[2], k[3]}, w2c, kv.get_int(p + ".width"), kv.get_int(p + ".height"));
}

void put_arm_action(KeyValue& kv, const std::string& p, const ArmAction& a) {
  kv.set(p + ".trans_bin", std::to_string(a.trans_bin[0]) + " " + std::to_string(a.trans_bin[1]) +
                               " " + std::to_string(a.trans_bin[2]));
  kv.set(p + ".rot_bins", std::to_string(a.rot_bins[0]) + " " + std::to_string(a.rot_bins[1]) +
                              " " + std::to_string(a.rot_bins[2]));
  kv.set(p + ".open", a.open);
  kv.set(p + ".collide", a.collide);
}

ArmAction get_arm_action(const KeyValue& kv, const std::string& p) {
  const auto t = kv.get_doubles(p + ".trans_bin");
  const auto r = kv.get_doubles(p + ".rot_bins");
  if (t.size() != 3 || r.size() != 3) throw FormatError("malformed action " + p);
  ArmAction a;
  for (int i = 0; i < 3; ++i) {
    a.trans_bin[i] = static_cast<int>(t[i]);
    a.rot_bins[i] = static_cast<int>(r[i]);
  }
  a.open = kv.get_bool(p + ".open");
  a.collide = kv.get_bool(p + ".collide");
  a.validate();
  return a;
}

void write_demo(const fs::path& dir, const DemoTrajectory& demo) {
  if (demo.steps.empty()) throw ValidationError("cannot write an empty demo");
  KeyValue meta;
  meta.set("task", demo.task);
  meta.set("language", demo.language);
  meta.set("background", std::string("black"));
  meta.set("workspace.lo", join_doubles({demo.workspace.lo[0], demo.workspace.lo[1], demo.workspace.lo[2]}));
  meta.set("workspace.hi", join_doubles({demo.workspace.hi[0], demo.workspace.hi[1], demo.workspace.hi[2]}));
  meta.set("num_steps", static_cast<int>(demo.steps.size()));
  const auto& views = demo.steps.front().obs.views;
  meta.set("num_views", static_cast<int>(views.size()));
  for (std::size_t v = 0; v < views.size(); ++v) put_camera(meta, "camera_" + std::to_string(v), views[v].camera);
  meta.write(dir / "meta");

  for (std::size_t k = 0; k < demo.steps.size(); ++k) {
    const DemoStep& s = demo.steps[k];
    const fs::path sd = dir / ("step_" + std::to_string(k));
    fs::create_directories(sd);
    for (std::size_t v = 0; v < s.obs.views.size(); ++v) {
      const std::string base = "view_" + std::to_string(v);
      write_ppm(sd / (base + ".rgb.ppm"), s.obs.views[v].rgb);
      write_depth(sd / (base + ".depth.bin"), s.obs.views[v].depth);
      write_pgm(sd / (base + ".mask.pgm"), s.labels[v]);
    }
    KeyValue act;
    put_arm_action(act, "stabilizing", s.action.stabilizing);
    put_arm_action(act, "acting", s.action.acting);
    act.set("role", std::string(s.action.role == Role::kLeftStabilizes ? "left_stabilizes"
                                                                      : "right_stabilizes"));
    act.set("proprio.time", s.obs.proprio.time_index);
    act.set("proprio.left_open", s.obs.proprio.left_open);
    act.set("proprio.right_open", s.obs.proprio.right_open);
    act.write(sd / "action.kv");
  }
}

DemoTrajectory read_demo(const fs::path& dir) {
  const KeyValue meta = KeyValue::read(dir / "meta");
  DemoTrajectory demo;
  demo.task = meta.get("task");
  demo.language = meta.has("language") ? meta.get("language") : std::string();
  const auto lo = meta.get_doubles("workspace.lo");
  const auto hi = meta.get_doubles("workspace.hi");
  if (lo.size() != 3 || hi.size() != 3) throw FormatError("malformed workspace bounds");
  demo.workspace = {{lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]}};
  const int nsteps = meta.get_int("num_steps");
  const int nviews = meta.get_int("num_views");
  std::vector<Camera> cams;
  for (int v = 0; v < nviews; ++v) cams.push_back(get_camera(meta, "camera_" + std::to_string(v)));

  demo.steps.resize(static_cast<std::size_t>(nsteps));
  for (int k = 0; k < nsteps; ++k) {
    DemoStep& s = demo.steps[static_cast<std::size_t>(k)];
    const fs::path sd = dir / ("step_" + std::to_string(k));
    for (int v = 0; v < nviews; ++v) {
      const std::string base = "view_" + std::to_string(v);
      View view;
      view.camera = cams[static_cast<std::size_t>(v)];
      view.rgb = read_ppm(sd / (base + ".rgb.ppm"));
      view.depth = read_depth(sd / (base + ".depth.bin"), view.camera.width(), view.camera.height());
      s.obs.views.push_back(std::move(view));
      s.labels.push_back(read_pgm(sd / (base + ".mask.pgm")));
    }
    const KeyValue act = KeyValue::read(sd / "action.kv");
    s.action.stabilizing = get_arm_action(act, "stabilizing");
    s.action.acting = get_arm_action(act, "acting");
    // Role defaults to right-stabilizes when the file does not say.
    s.action.role = act.has("role") && act.get("role") == "left_stabilizes" ? Role::kLeftStabilizes
                                                                             : Role::kRightStabilizes;
    s.obs.proprio.time_index = act.get_int("proprio.time");
    s.obs.proprio.left_open = act.get_bool("proprio.left_open");
    s.obs.proprio.right_open = act.get_bool("proprio.right_open");
  }
  for (std::size_t k = 0; k + 1 < demo.steps.size(); ++k) {
    for (const View& v : demo.steps[k + 1].obs.views) demo.steps[k].next_rgb.push_back(v.rgb);
    demo.steps[k].next_labels = demo.steps[k + 1].labels;
  }
  demo.validate();
  return demo;
}

std::vector<fs::path> list_demos(const fs::path& root) {
  const fs::path demos = root / "demos";
  if (!fs::is_directory(demos)) throw FormatError("dataset has no demos/ directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(demos)) {
    if (e.is_directory() && fs::exists(e.path() / "meta")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<DemoTrajectory> read_dataset(const fs::path& root) {
  std::vector<DemoTrajectory> out;
  for (const fs::path& p : list_demos(root)) out.push_back(read_demo(p));
  if (out.empty()) throw FormatError("dataset contains no demos: " + root.string());
  return out;
}

}  // namespace hgwm::io
