#include "hgwm/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <sstream>

#include "hgwm/checkpoint.hpp"
#include "hgwm/errors.hpp"
#include "hgwm/io.hpp"

namespace hgwm {

using ad::Shape;
using ad::Tensor;

namespace {

Tensor constant(Shape shape, std::vector<double> data) { return Tensor::from(std::move(shape), std::move(data)); }

Tensor filled(std::size_t rows, std::size_t cols, std::span<const double> row) {
  std::vector<double> d(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) std::copy(row.begin(), row.end(), d.begin() + i * cols);
  return constant({rows, cols}, std::move(d));
}

Tensor linear(const Tensor& x, const ModelParams& p, const std::string& name) {
  return ad::add_bias(ad::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

// Three-layer perceptron with relu hidden units.
Tensor mlp3(const Tensor& x, const ModelParams& p, const std::string& name) {
  Tensor h = ad::relu(linear(x, p, name + ".l1"));
  h = ad::relu(linear(h, p, name + ".l2"));
  return linear(h, p, name + ".l3");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const char* rotation_update_name(RotationUpdate r) {
  return r == RotationUpdate::kAdditive ? "additive" : "compose";
}

int deform_inputs(const ModelConfig& c, int actions) {
  return 3 + 4 + 3 + actions * kActionFeatureDim + c.features;
}

}  // namespace

void ModelConfig::validate() const {
  if (grid < 2 || features < 1 || conv_hidden < 1 || mlp_hidden < 1 || latents < 1 || attn_layers < 0 ||
      attn_dim < 1 || lang_dim < 1) {
    throw ValidationError("model config sizes must be positive (grid >= 2)");
  }
  if (!(workspace.hi.array() > workspace.lo.array()).all()) throw ValidationError("empty workspace");
  if ((workspace.extent().array() != workspace.extent().x()).any()) {
    throw ValidationError("workspace must be a cube so grid cells are cubic");
  }
}

HeadSpan head_span(int head) {
  if (head < 3) return {head * kTransBins, kTransBins};
  if (head < 6) return {3 * kTransBins + (head - 3) * kRotBins, kRotBins};
  if (head == 6) return {3 * kTransBins + 3 * kRotBins, 2};
  if (head == 7) return {3 * kTransBins + 3 * kRotBins + 2, 2};
  throw UsageError("head index out of range: " + std::to_string(head));
}

// ---- parameters -------------------------------------------------------------

void ModelParams::add(std::string name, Tensor t) { tensors_.emplace_back(std::move(name), std::move(t)); }

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams p;
  p.config_ = c;
  std::mt19937_64 rng(seed);
  auto normal = [&](Shape s, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(ad::numel(s));
    for (double& x : v) x = d(rng);
    return Tensor::from(std::move(s), std::move(v), true);
  };
  auto zeros = [](Shape s) { return Tensor::zeros(std::move(s), true); };
  auto ones = [](std::size_t n) { return Tensor::from({n}, std::vector<double>(n, 1.0), true); };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    p.add(name + ".w", normal({in, out}, gain * std::sqrt(2.0 / static_cast<double>(in))));
    p.add(name + ".b", zeros({out}));
  };

  const std::size_t F = c.features, H = c.mlp_hidden, D = c.attn_dim;
  p.add("repr.conv1.w", normal({27 * kVoxelChannels, static_cast<std::size_t>(c.conv_hidden)},
                               std::sqrt(2.0 / (27.0 * kVoxelChannels))));
  p.add("repr.conv2.w", normal({27 * static_cast<std::size_t>(c.conv_hidden + kProprioChannels), F},
                               std::sqrt(2.0 / (27.0 * (c.conv_hidden + kProprioChannels)))));

  dense("regress.l1", F, H);
  dense("regress.l2", H, kGaussianOutputs, 0.1);

  for (const auto& [name, actions] : {std::pair<std::string, int>{"leader", 1}, {"follower", 2}}) {
    dense(name + ".l1", deform_inputs(c, actions), H);
    dense(name + ".l2", H, H);
    dense(name + ".l3", H, kDeltaOutputs, 0.01);
  }

  dense("policy.in", F + 3, D);
  p.add("policy.lang.w", normal({static_cast<std::size_t>(c.lang_dim), D}, 1.0 / std::sqrt(c.lang_dim)));
  p.add("policy.latents", normal({static_cast<std::size_t>(c.latents), D}, 1.0));
  p.add("policy.tok_ln.g", ones(D));
  p.add("policy.tok_ln.b", zeros({D}));
  for (int l = 0; l < c.attn_layers; ++l) {
    const std::string pre = "policy.layer" + std::to_string(l);
    p.add(pre + ".ln1.g", ones(D));
    p.add(pre + ".ln1.b", zeros({D}));
    for (const char* m : {".q.w", ".k.w", ".v.w", ".o.w"}) p.add(pre + m, normal({D, D}, 1.0 / std::sqrt(D)));
    p.add(pre + ".ln2.g", ones(D));
    p.add(pre + ".ln2.b", zeros({D}));
    dense(pre + ".mlp1", D, 2 * D);
    dense(pre + ".mlp2", 2 * D, D, 0.5);
  }
  dense("policy.out", static_cast<std::size_t>(c.latents) * D, 2 * kArmLogits, 0.5);
  return p;
}

const Tensor& ModelParams::operator[](const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw UsageError("unknown parameter tensor '" + name + "'");
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : tensors_) n += e.second.numel();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config_ = config_;
  for (const auto& [n, t] : tensors_) {
    p.add(n, Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), t.requires_grad()));
  }
  return p;
}

void ModelParams::zero_grad() const {
  for (const auto& e : tensors_) e.second.zero_grad();
}

void ModelParams::freeze_zero(const std::string& prefix) {
  for (auto& [n, t] : tensors_) {
    if (n.rfind(prefix, 0) != 0) continue;
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    t.set_requires_grad(false);
  }
}

bool ModelParams::all_finite() const {
  for (const auto& e : tensors_)
    for (double v : e.second.data())
      if (!std::isfinite(v)) return false;
  return true;
}

std::map<std::string, std::string> ModelParams::manifest() const {
  const ModelConfig& c = config_;
  std::map<std::string, std::string> m;
  m["model.grid"] = std::to_string(c.grid);
  m["model.features"] = std::to_string(c.features);
  m["model.conv_hidden"] = std::to_string(c.conv_hidden);
  m["model.mlp_hidden"] = std::to_string(c.mlp_hidden);
  m["model.latents"] = std::to_string(c.latents);
  m["model.attn_layers"] = std::to_string(c.attn_layers);
  m["model.attn_dim"] = std::to_string(c.attn_dim);
  m["model.lang_dim"] = std::to_string(c.lang_dim);
  m["model.occupancy_threshold"] = io::format_double(c.occupancy_threshold);
  m["model.workspace_lo"] = io::join_doubles({c.workspace.lo.x(), c.workspace.lo.y(), c.workspace.lo.z()});
  m["model.workspace_hi"] = io::join_doubles({c.workspace.hi.x(), c.workspace.hi.y(), c.workspace.hi.z()});
  m["model.rotation_update"] = rotation_update_name(c.rotation_update);
  m["model.policy_heads"] = "2x(3x100,3x72,2,2)";
  return m;
}

ModelConfig config_from_manifest(const std::map<std::string, std::string>& m) {
  io::KeyValue kv;
  for (const auto& [k, v] : m) kv.set(k, v);
  ModelConfig c;
  c.grid = kv.get_int("model.grid");
  c.features = kv.get_int("model.features");
  c.conv_hidden = kv.get_int("model.conv_hidden");
  c.mlp_hidden = kv.get_int("model.mlp_hidden");
  c.latents = kv.get_int("model.latents");
  c.attn_layers = kv.get_int("model.attn_layers");
  c.attn_dim = kv.get_int("model.attn_dim");
  c.lang_dim = kv.get_int("model.lang_dim");
  c.occupancy_threshold = kv.get_double("model.occupancy_threshold");
  const auto lo = kv.get_doubles("model.workspace_lo");
  const auto hi = kv.get_doubles("model.workspace_hi");
  if (lo.size() != 3 || hi.size() != 3) throw FormatError("workspace bounds need 3 values");
  c.workspace.lo = Vec3(lo[0], lo[1], lo[2]);
  c.workspace.hi = Vec3(hi[0], hi[1], hi[2]);
  const std::string rot = kv.get("model.rotation_update");
  if (rot == "additive") {
    c.rotation_update = RotationUpdate::kAdditive;
  } else if (rot == "compose") {
    c.rotation_update = RotationUpdate::kCompose;
  } else {
    throw FormatError("unknown rotation update '" + rot + "'");
  }
  if (kv.get("model.policy_heads") != "2x(3x100,3x72,2,2)") {
    throw ManifestMismatchError("checkpoint policy heads '" + kv.get("model.policy_heads") +
                                "' differ from 2x(3x100,3x72,2,2)");
  }
  return c;
}

void ModelParams::save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra) const {
  ad::Archive a;
  a.meta = manifest();
  for (const auto& [k, v] : extra) a.meta[k] = v;
  a.tensors = tensors_;
  ad::save_archive(path, a);
}

ModelParams ModelParams::from_archive(const std::map<std::string, std::string>& meta,
                                      const std::vector<std::pair<std::string, Tensor>>& tensors,
                                      const ModelConfig* expected) {
  const ModelConfig c = config_from_manifest(meta);
  ModelParams p = ModelParams::init(c, 0);
  if (expected != nullptr) {
    ModelParams want;
    want.config_ = *expected;
    const auto wm = want.manifest();
    const auto got = p.manifest();
    for (const auto& [k, v] : wm) {
      if (got.at(k) != v) {
        throw ManifestMismatchError("checkpoint " + k + " = " + got.at(k) + ", expected " + v);
      }
    }
  }
  for (auto& [name, t] : p.tensors_) {
    const auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
    if (it == tensors.end()) throw ManifestMismatchError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ManifestMismatchError("checkpoint tensor '" + name + "' has shape " + ad::shape_str(it->second.shape()) +
                                  ", expected " + ad::shape_str(t.shape()));
    }
    auto d = t.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), d.begin());
  }
  return p;
}

ModelParams ModelParams::load(const std::filesystem::path& path, const ModelConfig* expected) {
  const ad::Archive a = ad::load_archive(path);
  return from_archive(a.meta, a.tensors, expected);
}

// ---- representation -----------------------------------------------------------

Vec3 VolumetricFeature::cell_center(std::size_t cell) const {
  const std::size_t g = static_cast<std::size_t>(grid);
  const double h = workspace.extent().x() / grid;
  const std::size_t ix = cell / (g * g), iy = (cell / g) % g, iz = cell % g;
  return workspace.lo + h * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
}

std::vector<double> voxelize(const Observation& obs, int grid, const Bounds& workspace) {
  const std::size_t g = static_cast<std::size_t>(grid);
  const double h = workspace.extent().x() / grid;
  std::vector<std::vector<std::array<double, 3>>> bins(g * g * g);
  for (const View& view : obs.views) {
    for (int y = 0; y < view.depth.height; ++y) {
      for (int x = 0; x < view.depth.width; ++x) {
        const double d = view.depth.at(x, y);
        if (!(d > 0.0)) continue;
        const Vec3 p = view.camera.unproject(Vec2(x, y), d);
        if (!workspace.contains(p)) continue;
        std::size_t idx[3];
        for (int k = 0; k < 3; ++k) {
          const double u = std::floor((p[k] - workspace.lo[k]) / h);
          idx[k] = static_cast<std::size_t>(std::clamp(u, 0.0, static_cast<double>(grid - 1)));
        }
        bins[(idx[0] * g + idx[1]) * g + idx[2]].push_back(
            {view.rgb.at(x, y, 0), view.rgb.at(x, y, 1), view.rgb.at(x, y, 2)});
      }
    }
  }
  std::vector<double> out(g * g * g * kVoxelChannels, 0.0);
  for (std::size_t c = 0; c < bins.size(); ++c) {
    auto& b = bins[c];
    if (b.empty()) continue;
    // sorting first makes the sum independent of view order
    std::sort(b.begin(), b.end());
    double s[3] = {0, 0, 0};
    for (const auto& v : b)
      for (int k = 0; k < 3; ++k) s[k] += v[k];
    for (int k = 0; k < 3; ++k) out[c * kVoxelChannels + k] = s[k] / static_cast<double>(b.size());
    out[c * kVoxelChannels + 3] = 1.0;
  }
  return out;
}

VolumetricFeature represent(const Observation& obs, const ModelParams& params, const RepresentOptions& opts) {
  const ModelConfig& c = params.config();
  const std::size_t cells = c.cells();
  std::vector<double> vox = voxelize(obs, c.grid, c.workspace);
  VolumetricFeature v;
  v.grid = c.grid;
  v.workspace = c.workspace;
  v.occupancy.resize(cells);
  bool any = false;
  for (std::size_t i = 0; i < cells; ++i) {
    v.occupancy[i] = vox[i * kVoxelChannels + 3];
    any = any || v.occupancy[i] > 0.0;
  }
  if (!any && !opts.allow_empty) {
    throw DegenerateObservationError("no observed point falls inside the workspace");
  }

  // Convolutions are bias-free and proprioception is only written to occupied
  // cells, so features vanish two cells away from any observed surface.
  const auto prop = obs.proprio.features();
  std::vector<double> pd(cells * kProprioChannels, 0.0);
  for (std::size_t i = 0; i < cells; ++i)
    for (int k = 0; k < kProprioChannels; ++k) pd[i * kProprioChannels + k] = v.occupancy[i] * prop[k];

  const Tensor x = constant({cells, kVoxelChannels}, std::move(vox));
  const Tensor b1 = Tensor::zeros({static_cast<std::size_t>(c.conv_hidden)});
  const Tensor b2 = Tensor::zeros({static_cast<std::size_t>(c.features)});
  const Tensor h1 = ad::relu(ad::conv3d(x, params["repr.conv1.w"], b1, c.grid));
  const Tensor h = ad::concat({h1, constant({cells, kProprioChannels}, std::move(pd))}, 1);
  v.features = ad::relu(ad::conv3d(h, params["repr.conv2.w"], b2, c.grid));
  return v;
}

// ---- Gaussian tensors -------------------------------------------------------------

Tensor GaussianTensors::mu() const { return ad::add(mu_base, mu_delta); }

Tensor GaussianTensors::rot() const { return ad::normalize_rows(ad::add(rot_base, rot_delta)); }

GaussianSet GaussianTensors::to_set() const {
  GaussianSet set;
  set.timestamp = timestamp;
  const Tensor m = mu();
  const Tensor r = rot();
  const std::size_t n = size();
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian g;
    g.mu = Vec3(m[3 * i], m[3 * i + 1], m[3 * i + 2]);
    g.color = Vec3(color[3 * i], color[3 * i + 1], color[3 * i + 2]);
    g.rot = Vec4(r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]);
    g.scale = Vec3(scale[3 * i], scale[3 * i + 1], scale[3 * i + 2]);
    g.opacity = opacity[i];
    g.logits = Vec3(logits[3 * i], logits[3 * i + 1], logits[3 * i + 2]);
    set.gaussians.push_back(g);
  }
  return set;
}

GaussianTensors GaussianTensors::from_set(const GaussianSet& set) {
  const std::size_t n = set.size();
  std::vector<double> mu, color, rot, scale, opacity, logits;
  for (const Gaussian& g : set.gaussians) {
    for (int k = 0; k < 3; ++k) {
      mu.push_back(g.mu[k]);
      color.push_back(g.color[k]);
      scale.push_back(g.scale[k]);
      logits.push_back(g.logits[k]);
    }
    for (int k = 0; k < 4; ++k) rot.push_back(g.rot[k]);
    opacity.push_back(g.opacity);
  }
  GaussianTensors t;
  t.mu_base = constant({n, 3}, std::move(mu));
  t.mu_delta = Tensor::zeros({n, 3});
  t.rot_base = constant({n, 4}, std::move(rot));
  t.rot_delta = Tensor::zeros({n, 4});
  t.color = constant({n, 3}, std::move(color));
  t.scale = constant({n, 3}, std::move(scale));
  t.opacity = constant({n}, std::move(opacity));
  t.logits = constant({n, 3}, std::move(logits));
  t.timestamp = set.timestamp;
  return t;
}

GaussianTensors regress_gaussians(const VolumetricFeature& v, const ModelParams& params) {
  const ModelConfig& c = params.config();
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < v.occupancy.size(); ++i)
    if (v.occupancy[i] > c.occupancy_threshold) cells.push_back(i);
  if (cells.empty()) throw EmptySceneError("no occupied grid cell to place Gaussians in");
  const std::size_t m = cells.size();
  const double h = c.cell_size();

  std::vector<double> centers;
  for (std::size_t cell : cells) {
    const Vec3 ctr = v.cell_center(cell);
    centers.insert(centers.end(), {ctr.x(), ctr.y(), ctr.z()});
  }
  const Tensor x = ad::gather_rows(v.features, cells);
  const Tensor hid = ad::relu(linear(x, params, "regress.l1"));
  const Tensor raw = linear(hid, params, "regress.l2");

  const double ident[4] = {1, 0, 0, 0};
  const double floor3[3] = {1e-3, 1e-3, 1e-3};
  GaussianTensors t;
  t.mu_base = ad::add(constant({m, 3}, std::move(centers)), ad::scale(ad::tanh(ad::slice(raw, 1, 0, 3)), 0.5 * h));
  t.mu_delta = Tensor::zeros({m, 3});
  t.color = ad::sigmoid(ad::slice(raw, 1, 3, 6));
  t.rot_base = ad::normalize_rows(ad::add(ad::slice(raw, 1, 6, 10), filled(m, 4, ident)));
  t.rot_delta = Tensor::zeros({m, 4});
  t.scale = ad::add(ad::scale(ad::softplus(ad::slice(raw, 1, 10, 13)), h), filled(m, 3, floor3));
  t.opacity = ad::reshape(ad::sigmoid(ad::slice(raw, 1, 13, 14)), {m});
  t.logits = ad::slice(raw, 1, 14, 17);
  return t;
}

// ---- trilinear sampling ---------------------------------------------------------

namespace {

struct Corner {
  std::size_t cell;
  double weight;
  Vec3 dweight;  // d weight / d position
};

// Eight corner weights of a position; clamped axes carry no position gradient.
std::array<Corner, 8> trilinear_corners(const VolumetricFeature& v, const double* p) {
  const int g = v.grid;
  const double h = v.workspace.extent().x() / g;
  int i0[3];
  double f[3];
  bool clamped[3];
  for (int k = 0; k < 3; ++k) {
    double u = (p[k] - v.workspace.lo[k]) / h - 0.5;
    clamped[k] = u < 0.0 || u > g - 1;
    u = std::clamp(u, 0.0, static_cast<double>(g - 1));
    i0[k] = std::min(static_cast<int>(std::floor(u)), g - 2);
    f[k] = u - i0[k];
  }
  std::array<Corner, 8> out;
  for (int c = 0; c < 8; ++c) {
    const int b[3] = {c >> 2 & 1, c >> 1 & 1, c & 1};
    double w[3], dw[3];
    for (int k = 0; k < 3; ++k) {
      w[k] = b[k] ? f[k] : 1.0 - f[k];
      dw[k] = clamped[k] ? 0.0 : (b[k] ? 1.0 : -1.0) / h;
    }
    const std::size_t cell =
        (static_cast<std::size_t>(i0[0] + b[0]) * g + static_cast<std::size_t>(i0[1] + b[1])) * g +
        static_cast<std::size_t>(i0[2] + b[2]);
    out[c] = {cell, w[0] * w[1] * w[2], Vec3(dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2])};
  }
  return out;
}

}  // namespace

Tensor sample_features(const VolumetricFeature& v, const Tensor& positions) {
  if (positions.rank() != 2 || positions.dim(1) != 3) {
    throw ShapeError("sample_features: positions must be [N,3], got " + ad::shape_str(positions.shape()));
  }
  const VolumetricFeature vol{Tensor(), {}, v.grid, v.workspace};
  auto op = ad::register_custom(
      "trilinear",
      [vol](std::span<const Tensor> in) {
        const std::size_t n = in[1].dim(0), f = in[0].dim(1);
        const auto feat = in[0].data();
        const auto pos = in[1].data();
        std::vector<double> out(n * f, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (const Corner& c : trilinear_corners(vol, pos.data() + 3 * i)) {
            for (std::size_t j = 0; j < f; ++j) out[i * f + j] += c.weight * feat[c.cell * f + j];
          }
        }
        return ad::CustomForwardResult{{Tensor::from({n, f}, std::move(out))}, {}};
      },
      [vol](std::span<const Tensor> in, std::span<const Tensor>, std::span<const std::span<const double>> up,
            const std::any&) {
        const std::size_t n = in[1].dim(0), f = in[0].dim(1);
        const auto feat = in[0].data();
        const auto pos = in[1].data();
        std::vector<double> g_feat(in[0].numel(), 0.0), g_pos(in[1].numel(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double* u = up[0].data() + i * f;
          for (const Corner& c : trilinear_corners(vol, pos.data() + 3 * i)) {
            double dot = 0.0;
            for (std::size_t j = 0; j < f; ++j) {
              g_feat[c.cell * f + j] += c.weight * u[j];
              dot += u[j] * feat[c.cell * f + j];
            }
            for (int k = 0; k < 3; ++k) g_pos[3 * i + k] += dot * c.dweight[k];
          }
        }
        return std::vector<std::vector<double>>{std::move(g_feat), std::move(g_pos)};
      });
  return op({v.features, positions})[0];
}

// ---- deformation ---------------------------------------------------------------

namespace {

// Hamilton product of two [N,4] quaternion tensors (w, x, y, z).
Tensor quat_mul(const Tensor& a, const Tensor& b) {
  auto col = [](const Tensor& t, std::size_t k) { return ad::slice(t, 1, k, k + 1); };
  const Tensor aw = col(a, 0), ax = col(a, 1), ay = col(a, 2), az = col(a, 3);
  const Tensor bw = col(b, 0), bx = col(b, 1), by = col(b, 2), bz = col(b, 3);
  using ad::mul, ad::add, ad::sub;
  const Tensor w = sub(sub(sub(mul(aw, bw), mul(ax, bx)), mul(ay, by)), mul(az, bz));
  const Tensor x = sub(add(add(mul(aw, bx), mul(ax, bw)), mul(ay, bz)), mul(az, by));
  const Tensor y = add(add(sub(mul(aw, by), mul(ax, bz)), mul(ay, bw)), mul(az, bx));
  const Tensor z = add(sub(add(mul(aw, bz), mul(ax, by)), mul(ay, bx)), mul(az, bw));
  return ad::concat({w, x, y, z}, 1);
}

GaussianTensors apply_deltas(const GaussianTensors& theta, const Tensor& d_mu, const Tensor& d_rot,
                             RotationUpdate mode) {
  GaussianTensors out = theta;
  out.mu_delta = ad::add(theta.mu_delta, d_mu);
  if (mode == RotationUpdate::kAdditive) {
    out.rot_delta = ad::add(theta.rot_delta, d_rot);
  } else {
    const double ident[4] = {1, 0, 0, 0};
    const Tensor q = ad::normalize_rows(ad::add(d_rot, filled(theta.size(), 4, ident)));
    out.rot_base = ad::normalize_rows(quat_mul(q, theta.rot()));
    out.rot_delta = Tensor::zeros({theta.size(), 4});
  }
  return out;
}

Tensor forced(std::size_t n, std::span<const double> row) { return filled(n, row.size(), row); }

GaussianTensors deform(const std::string& stage, const GaussianTensors& theta,
                       const std::vector<const ArmAction*>& actions, const VolumetricFeature& v,
                       const ModelParams& params, const std::optional<Vec3>& shift,
                       const std::optional<Vec4>& rot, const DeformHooks* hooks) {
  const ModelConfig& c = params.config();
  const std::size_t n = theta.size();
  std::vector<std::array<double, kActionFeatureDim>> feats;
  std::vector<double> row;
  for (const ArmAction* a : actions) {
    feats.push_back(action_features(*a, c.workspace));
    row.insert(row.end(), feats.back().begin(), feats.back().end());
  }
  if (hooks != nullptr && hooks->probe) hooks->probe(stage, feats);

  Tensor d_mu, d_rot;
  if (shift || rot) {
    const Vec3 s = shift.value_or(Vec3::Zero());
    const Vec4 r = rot.value_or(Vec4::Zero());
    d_mu = forced(n, std::span<const double>(s.data(), 3));
    d_rot = forced(n, std::span<const double>(r.data(), 4));
  } else {
    const Tensor mu = theta.mu();
    const Tensor x = ad::concat({mu, theta.rot(), theta.logits, forced(n, row), sample_features(v, mu)}, 1);
    const Tensor out = mlp3(x, params, stage);
    d_mu = ad::slice(out, 1, 0, 3);
    d_rot = ad::slice(out, 1, 3, 7);
  }
  GaussianTensors next = apply_deltas(theta, d_mu, d_rot, c.rotation_update);
  if (next.size() != n) throw Error("internal: deformation changed the particle count");
  return next;
}

}  // namespace

GaussianTensors leader_deform(const GaussianTensors& theta, const ArmAction& a_s, const VolumetricFeature& v,
                              const ModelParams& params, const DeformHooks* hooks) {
  return deform("leader", theta, {&a_s}, v, params, hooks ? hooks->forced_leader_shift : std::nullopt,
                hooks ? hooks->forced_leader_rot : std::nullopt, hooks);
}

GaussianTensors follower_deform(const GaussianTensors& theta_s, const ArmAction& a_s, const ArmAction& a_a,
                                const VolumetricFeature& v, const ModelParams& params, const DeformHooks* hooks) {
  return deform("follower", theta_s, {&a_s, &a_a}, v, params, hooks ? hooks->forced_follower_shift : std::nullopt,
                hooks ? hooks->forced_follower_rot : std::nullopt, hooks);
}

// ---- policy head -----------------------------------------------------------------

std::vector<double> language_embedding(const std::string& instruction, int dim) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : instruction) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  if (tokens.empty()) tokens.push_back(std::string("\0null", 5));

  std::vector<double> e(static_cast<std::size_t>(dim), 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    // position-aware so word order matters
    std::uint64_t state = fnv1a(tokens[t]) ^ (0x632BE59BD9B4E019ULL * (t + 1));
    for (double& x : e) x += static_cast<double>(splitmix(state) >> 11) * 0x1.0p-52 - 1.0;
  }
  double norm = 0.0;
  for (double x : e) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : e) x /= norm;
  return e;
}

ad::Tensor PolicyLogits::head(int arm, int h) const {
  const HeadSpan s = head_span(h);
  return ad::slice(ad::slice(logits, 0, arm, arm + 1), 1, s.offset, s.offset + s.size);
}

ArmAction PolicyLogits::argmax(int arm) const {
  auto best = [&](int h) {
    const HeadSpan s = head_span(h);
    const double* row = logits.data().data() + static_cast<std::size_t>(arm) * kArmLogits + s.offset;
    return static_cast<int>(std::max_element(row, row + s.size) - row);
  };
  ArmAction a;
  for (int k = 0; k < 3; ++k) {
    a.trans_bin[k] = best(k);
    a.rot_bins[k] = best(3 + k);
  }
  a.open = best(6) == 1;
  a.collide = best(7) == 1;
  return a;
}

PolicyLogits decode_actions(const VolumetricFeature& v, const std::string& language, const ModelParams& params) {
  const ModelConfig& c = params.config();
  const std::size_t cells = c.cells();
  const std::size_t d = c.attn_dim;

  std::vector<double> coords;
  coords.reserve(cells * 3);
  const Vec3 mid = 0.5 * (c.workspace.lo + c.workspace.hi);
  const double half = 0.5 * c.workspace.extent().x();
  for (std::size_t i = 0; i < cells; ++i) {
    const Vec3 p = (v.cell_center(i) - mid) / half;
    coords.insert(coords.end(), {p.x(), p.y(), p.z()});
  }
  const Tensor tokens = linear(ad::concat({v.features, constant({cells, 3}, std::move(coords))}, 1), params, "policy.in");
  const Tensor lang = ad::matmul(constant({1, static_cast<std::size_t>(c.lang_dim)}, language_embedding(language, c.lang_dim)),
                                 params["policy.lang.w"]);
  const Tensor kv = ad::layer_norm(ad::concat({tokens, lang}, 0), params["policy.tok_ln.g"], params["policy.tok_ln.b"]);
  Tensor z = ad::add(params["policy.latents"],
                     ad::broadcast_rows(ad::reshape(lang, {d}), static_cast<std::size_t>(c.latents)));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 0; l < c.attn_layers; ++l) {
    const std::string pre = "policy.layer" + std::to_string(l);
    const Tensor zn = ad::layer_norm(z, params[pre + ".ln1.g"], params[pre + ".ln1.b"]);
    const Tensor q = ad::matmul(zn, params[pre + ".q.w"]);
    const Tensor k = ad::matmul(kv, params[pre + ".k.w"]);
    const Tensor val = ad::matmul(kv, params[pre + ".v.w"]);
    const Tensor attn = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
    z = ad::add(z, ad::matmul(ad::matmul(attn, val), params[pre + ".o.w"]));
    const Tensor zn2 = ad::layer_norm(z, params[pre + ".ln2.g"], params[pre + ".ln2.b"]);
    z = ad::add(z, linear(ad::relu(linear(zn2, params, pre + ".mlp1")), params, pre + ".mlp2"));
  }
  const Tensor flat = ad::reshape(z, {1, static_cast<std::size_t>(c.latents) * d});
  return PolicyLogits{ad::reshape(linear(flat, params, "policy.out"), {2, static_cast<std::size_t>(kArmLogits)})};
}

}  // namespace hgwm
