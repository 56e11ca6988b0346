#include "hgwm/synth_env.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "hgwm/errors.hpp"
#include "hgwm/io.hpp"

namespace hgwm::env {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 one_hot(InstanceClass c) {
  Vec3 l = Vec3::Zero();
  l[c] = 10.0;
  return l;
}

RigidTransform pose_of(const ArmAction& a, const Bounds& ws) {
  const ContinuousPose p = undiscretize(a, ws);
  RigidTransform t;
  t.rotation = euler_zyx_to_matrix(p.euler_deg);
  t.translation = p.position;
  return t;
}

ContinuousPose at(const Vec3& p, bool open) {
  ContinuousPose c;
  c.position = p;
  c.open = open ? 1.0 : 0.0;
  return c;
}

// Gripper block plus a short stick rising along the end-effector z axis.
Body arm_body(const std::string& name, InstanceClass instance, const Vec3& color) {
  Body b;
  b.name = name;
  b.instance = instance;
  b.local = primitive_gaussians(Primitive::kBox, Vec3(0.08, 0.08, 0.06), color, instance, 0);
  for (int k = 0; k < 8; ++k) {
    b.local.gaussians.emplace_back(Vec3(0, 0, 0.06 + 0.045 * k), color, Vec4(1, 0, 0, 0), Vec3::Constant(0.018), 0.9,
                                   one_hot(instance));
  }
  return b;
}

Vec3 arm_color(InstanceClass c) { return c == kStabilizingArm ? Vec3(0.3, 0.45, 0.85) : Vec3(0.85, 0.4, 0.3); }

}  // namespace

std::vector<Camera> camera_rig(const RigConfig& rig) {
  if (rig.cameras < 1 || rig.width < 1 || rig.height < 1) throw ValidationError("camera rig needs positive sizes");
  std::vector<Camera> cams;
  for (int k = 0; k < rig.cameras; ++k) {
    const double a = 0.35 + 2.0 * kPi * k / rig.cameras;
    const Vec3 eye(rig.radius * std::cos(a), rig.radius * std::sin(a), rig.elevation);
    cams.push_back(Camera::look_at(eye, rig.target, Vec3(0, 0, 1), rig.focal * rig.width / 64.0, rig.width, rig.height));
  }
  return cams;
}

void SceneSpec::validate() const {
  if ((left_base - right_base).norm() < 0.2) throw SpecError("arm bases overlap");
  if (!workspace.contains(left_base) || !workspace.contains(right_base)) throw SpecError("arm base outside workspace");
  for (const ObjectSpec& o : objects) {
    if (!workspace.contains(o.pose.translation)) throw SpecError("object outside workspace");
    if ((o.size.array() <= 0.0).any()) throw SpecError("object sizes must be positive");
  }
}

GaussianSet primitive_gaussians(Primitive shape, const Vec3& size, const Vec3& color, InstanceClass instance,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  auto shade = [&] {
    Vec3 c = color;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + jitter(rng), 0.0, 1.0);
    return c;
  };
  GaussianSet set;
  if (shape == Primitive::kBox) {
    const Vec3 step = size / 4.0;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          const Vec3 p((i - 1.5) * step.x(), (j - 1.5) * step.y(), (k - 1.5) * step.z());
          set.gaussians.emplace_back(p, shade(), Vec4(1, 0, 0, 0), 0.55 * step, 0.9, one_hot(instance));
        }
  } else {
    // Fibonacci sphere
    const double r = 0.5 * size.x();
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < 64; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / 64.0;
      const double rho = std::sqrt(1.0 - z * z);
      const Vec3 p(r * rho * std::cos(golden * i), r * rho * std::sin(golden * i), r * z);
      set.gaussians.emplace_back(p, shade(), Vec4(1, 0, 0, 0), Vec3::Constant(0.3 * r), 0.9, one_hot(instance));
    }
  }
  return set;
}

GaussianSet body_gaussians(const Body& b) {
  GaussianSet out;
  const Vec4 q = matrix_to_quat(b.pose.rotation);
  for (const Gaussian& g : b.local.gaussians) {
    Gaussian w = g;
    w.mu = b.pose.apply(g.mu);
    w.rot = normalize_quat(quat_multiply(q, g.rot));
    out.gaussians.push_back(w);
  }
  return out;
}

GaussianSet EnvState::gaussians() const {
  GaussianSet out;
  out.timestamp = time;
  for (const Body* b : {&left_arm, &right_arm}) {
    const GaussianSet g = body_gaussians(*b);
    out.gaussians.insert(out.gaussians.end(), g.gaussians.begin(), g.gaussians.end());
  }
  for (const Body& b : objects) {
    const GaussianSet g = body_gaussians(b);
    out.gaussians.insert(out.gaussians.end(), g.gaussians.begin(), g.gaussians.end());
  }
  return out;
}

Proprio EnvState::proprio() const { return Proprio{time, left.open(), right.open()}; }

EnvState make_state(const SceneSpec& spec) {
  spec.validate();
  EnvState s;
  s.role = spec.role;
  s.workspace = spec.workspace;
  const InstanceClass left_class = spec.role == Role::kLeftStabilizes ? kStabilizingArm : kActingArm;
  const InstanceClass right_class = spec.role == Role::kLeftStabilizes ? kActingArm : kStabilizingArm;
  s.left_arm = arm_body("left_arm", left_class, arm_color(left_class));
  s.right_arm = arm_body("right_arm", right_class, arm_color(right_class));
  s.left.bins = discretize_action(at(spec.left_base, true), spec.workspace);
  s.right.bins = discretize_action(at(spec.right_base, true), spec.workspace);
  s.left.ee = s.left_arm.pose = pose_of(s.left.bins, spec.workspace);
  s.right.ee = s.right_arm.pose = pose_of(s.right.bins, spec.workspace);
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    Body b;
    b.name = "object_" + std::to_string(i);
    b.instance = o.instance;
    b.local = primitive_gaussians(o.shape, o.size, o.color, o.instance, mix_seed(spec.seed, i));
    b.pose = o.pose;
    s.objects.push_back(std::move(b));
  }
  return s;
}

GaussianSet build_scene(const SceneSpec& spec) { return make_state(spec).gaussians(); }

EnvState step_env(const EnvState& state, const BimanualAction& action) {
  EnvState next = state;
  next.time = state.time + 1;
  // grip offsets: object pose relative to the holding end-effector
  std::vector<RigidTransform> offsets(state.objects.size());
  for (const ArmState* arm : {&state.left, &state.right}) {
    if (arm->holding >= 0) {
      offsets[static_cast<std::size_t>(arm->holding)] = arm->ee.inverse() * state.objects[arm->holding].pose;
    }
  }

  struct Slot {
    ArmState* arm;
    Body* body;
    const ArmAction* target;
  };
  const Slot slots[2] = {{&next.left, &next.left_arm, &action.left()}, {&next.right, &next.right_arm, &action.right()}};

  for (const Slot& s : slots) {
    ArmAction moved = *s.target;
    moved.open = s.arm->bins.open;
    ArmAction current = s.arm->bins;
    if (moved == current) continue;  // no motion: leave everything bit-identical
    s.arm->ee = pose_of(*s.target, state.workspace);
    s.body->pose = s.arm->ee;
    if (s.arm->holding >= 0) {
      next.objects[static_cast<std::size_t>(s.arm->holding)].pose = s.arm->ee * offsets[s.arm->holding];
    }
  }

  for (const Slot& s : slots) {
    const bool was_open = s.arm->bins.open;
    const bool now_open = s.target->open;
    if (was_open && !now_open) {
      int best = -1;
      double best_d = kGraspRadius;
      for (std::size_t i = 0; i < next.objects.size(); ++i) {
        const double d = (next.objects[i].pose.translation - s.arm->ee.translation).norm();
        if (d <= best_d) {
          best = static_cast<int>(i);
          best_d = d;
        }
      }
      if (best >= 0) {
        // a second grasp takes the object from the other hand
        for (ArmState* other : {&next.left, &next.right})
          if (other->holding == best) other->holding = -1;
        s.arm->holding = best;
      }
    } else if (!was_open && now_open) {
      s.arm->holding = -1;
    }
    s.arm->bins = *s.target;
  }
  return next;
}

// ---- tasks ----------------------------------------------------------------------

std::string task_name(TaskId t) {
  switch (t) {
    case TaskId::kPushBox: return "push-box";
    case TaskId::kLiftTray: return "lift-tray-two-handed";
    case TaskId::kHandover: return "handover-item";
  }
  return "?";
}

TaskId parse_task(const std::string& name) {
  for (TaskId t : {TaskId::kPushBox, TaskId::kLiftTray, TaskId::kHandover})
    if (task_name(t) == name) return t;
  throw UsageError("unknown task '" + name + "' (push-box, lift-tray-two-handed, handover-item)");
}

std::string task_instruction(TaskId t) {
  switch (t) {
    case TaskId::kPushBox: return "push the box forward";
    case TaskId::kLiftTray: return "lift the tray with both hands";
    case TaskId::kHandover: return "hand the item over to the left hand";
  }
  return "";
}

TaskScript sample_script(TaskId task, std::uint64_t seed, const RigConfig& rig, const Bounds& workspace) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  TaskScript s;
  s.task = task;
  s.scene.rig = rig;
  s.scene.workspace = workspace;
  s.scene.seed = seed;
  s.scene.role = Role::kLeftStabilizes;
  const Vec3 lhome = s.scene.left_base, rhome = s.scene.right_base;

  ObjectSpec o;
  o.instance = kTargetObject;
  auto add = [&](const Waypoint& w) { s.waypoints.push_back(w); };
  auto wp = [](const Vec3& l, bool lo, const Vec3& r, bool ro) { return Waypoint{at(l, lo), at(r, ro)}; };

  switch (task) {
    case TaskId::kPushBox: {
      o.shape = Primitive::kBox;
      o.size = Vec3::Constant(0.12);
      o.color = Vec3(uni(0.7, 0.9), uni(0.6, 0.8), uni(0.1, 0.3));
      const Vec3 b(uni(-0.25, 0.0), uni(-0.15, 0.1), 0.06);
      o.pose.translation = b;
      const Vec3 guard(b.x() - 0.2, b.y() + 0.22, 0.15);
      const Vec3 up(0, 0, 0.2), push(0.3, 0, 0);
      add(wp(guard, true, b + up, true));
      add(wp(guard, true, b, true));
      add(wp(guard, true, b, false));
      add(wp(guard, true, b + push, false));
      add(wp(guard, true, b + push, true));
      add(wp(lhome, true, b + push + up, true));
      break;
    }
    case TaskId::kLiftTray: {
      o.shape = Primitive::kBox;
      o.size = Vec3(0.36, 0.14, 0.04);
      o.color = Vec3(uni(0.2, 0.4), uni(0.7, 0.9), uni(0.3, 0.5));
      const Vec3 t(uni(-0.15, 0.15), uni(-0.1, 0.1), 0.02);
      o.pose.translation = t;
      const Vec3 edge = t - Vec3(0.15, 0, 0);
      const Vec3 up(0, 0, 0.2), lift(0, 0, 0.25);
      add(wp(edge + up, true, t + up, true));
      add(wp(edge, true, t, true));
      add(wp(edge, false, t, false));
      add(wp(edge + lift, false, t + lift, false));
      add(wp(edge + lift, false, t + lift, false));
      break;
    }
    case TaskId::kHandover: {
      o.shape = Primitive::kSphere;
      o.size = Vec3::Constant(0.1);
      o.color = Vec3(uni(0.7, 0.9), uni(0.2, 0.4), uni(0.6, 0.8));
      const Vec3 c(uni(-0.1, 0.15), uni(-0.3, -0.15), 0.05);
      o.pose.translation = c;
      const Vec3 h(0.0, 0.0, 0.3);
      const Vec3 up(0, 0, 0.2);
      add(wp(lhome, true, c + up, true));
      add(wp(lhome, true, c, true));
      add(wp(lhome, true, c, false));
      add(wp(h + Vec3(0, 0.15, 0), true, h, false));
      add(wp(h, true, h, false));
      add(wp(h, false, h, false));
      add(wp(h, false, h, true));
      add(wp(Vec3(0, 0.3, 0.3), false, rhome, true));
      break;
    }
  }
  s.scene.objects.push_back(o);
  return s;
}

bool TaskScript::success(const EnvState& initial, const EnvState& fin) const {
  const Vec3 p0 = initial.objects.at(0).pose.translation;
  const Vec3 p1 = fin.objects.at(0).pose.translation;
  switch (task) {
    case TaskId::kPushBox: return p1.x() - p0.x() >= 0.2 && fin.right.holding < 0;
    case TaskId::kLiftTray: return p1.z() - p0.z() >= 0.2;
    case TaskId::kHandover: return fin.left.holding == 0 && p1.y() >= 0.2;
  }
  return false;
}

RenderedView render_view(const GaussianSet& set, const Camera& cam) {
  const raster::RenderOutput r = raster::render(set, cam);
  return {r.rgb_image(), r.surface_depth(0.5), r.label_map(0.5)};
}

std::optional<DemoTrajectory> run_script(const TaskScript& script, std::vector<GaussianSet>* scenes) {
  const SceneSpec& spec = script.scene;
  const std::vector<Camera> cams = camera_rig(spec.rig);
  EnvState state = make_state(spec);
  const EnvState initial = state;

  DemoTrajectory demo;
  demo.task = task_name(script.task);
  demo.language = task_instruction(script.task);
  demo.workspace = spec.workspace;
  const std::size_t n = script.waypoints.size();
  for (std::size_t k = 0; k <= n; ++k) {
    DemoStep step;
    const GaussianSet gs = state.gaussians();
    if (scenes != nullptr) scenes->push_back(gs);
    for (const Camera& cam : cams) {
      RenderedView rv = render_view(gs, cam);
      step.obs.views.push_back(View{cam, std::move(rv.rgb), std::move(rv.depth)});
      step.labels.push_back(std::move(rv.labels));
    }
    step.obs.proprio = state.proprio();
    if (k < n) {
      const Waypoint& w = script.waypoints[k];
      if (!spec.workspace.contains(w.left.position) || !spec.workspace.contains(w.right.position)) return std::nullopt;
      step.action = BimanualAction::from_arms(discretize_action(w.left, spec.workspace),
                                              discretize_action(w.right, spec.workspace), spec.role);
    } else {
      step.action = BimanualAction::from_arms(state.left.bins, state.right.bins, spec.role);
    }
    demo.steps.push_back(std::move(step));
    if (k < n) state = step_env(state, demo.steps.back().action);
  }
  for (std::size_t k = 0; k + 1 < demo.steps.size(); ++k) {
    for (const View& v : demo.steps[k + 1].obs.views) demo.steps[k].next_rgb.push_back(v.rgb);
    demo.steps[k].next_labels = demo.steps[k + 1].labels;
  }
  if (!script.success(initial, state)) return std::nullopt;
  return demo;
}

DemoTrajectory generate_episode(TaskId task, std::uint64_t seed, const RigConfig& rig, const Bounds& workspace,
                                std::vector<GaussianSet>* scenes) {
  return generate_episode([&](std::uint64_t s) { return sample_script(task, s, rig, workspace); }, seed, scenes);
}

DemoTrajectory generate_episode(const std::function<TaskScript(std::uint64_t)>& sampler, std::uint64_t seed,
                                std::vector<GaussianSet>* scenes) {
  constexpr int kMaxRejections = 20;
  for (int attempt = 0; attempt <= kMaxRejections; ++attempt) {
    if (scenes != nullptr) scenes->clear();
    if (auto demo = run_script(sampler(mix_seed(seed, static_cast<std::uint64_t>(attempt))), scenes)) return *demo;
  }
  throw SpecError("scripted expert failed " + std::to_string(kMaxRejections + 1) + " consecutive episodes");
}

void generate_demos(TaskId task, int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                    const RigConfig& rig, const Bounds& workspace) {
  if (n < 0) throw UsageError("demo count must be non-negative");
  for (int i = 0; i < n; ++i) {
    const DemoTrajectory demo = generate_episode(task, mix_seed(seed, 1000 + static_cast<std::uint64_t>(i)), rig, workspace);
    char id[16];
    std::snprintf(id, sizeof id, "%06d", i);
    io::write_demo(out_dir / "demos" / id, demo);
  }
}

}  // namespace hgwm::env
