#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hgwm/core_types.hpp"
#include "hgwm/rasterizer.hpp"

namespace hgwm::env {

enum class Primitive { kBox, kSphere };

struct ObjectSpec {
  Primitive shape = Primitive::kBox;
  RigidTransform pose;
  Vec3 size = Vec3::Constant(0.1);  // box edge lengths; spheres use size.x() as the diameter
  Vec3 color = Vec3(0.8, 0.6, 0.2);
  InstanceClass instance = kTargetObject;
};

struct RigConfig {
  int cameras = 3;
  int width = 64;
  int height = 64;
  double radius = 1.8;
  double elevation = 1.1;
  double focal = 80.0;
  Vec3 target = Vec3(0.0, 0.0, 0.15);
};

std::vector<Camera> camera_rig(const RigConfig& rig);

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  Vec3 left_base = Vec3(0.0, 0.45, 0.35);
  Vec3 right_base = Vec3(0.0, -0.45, 0.35);
  Role role = Role::kLeftStabilizes;
  RigConfig rig;
  Bounds workspace;
  std::uint64_t seed = 0;

  void validate() const;
};

// Gaussians of one primitive in its own frame (4x4x4 lattice or 64 surface samples).
GaussianSet primitive_gaussians(Primitive shape, const Vec3& size, const Vec3& color, InstanceClass instance,
                                std::uint64_t seed);

/// A rigid body: Gaussians in its own frame plus a world pose.
struct Body {
  std::string name;
  InstanceClass instance = kTargetObject;
  GaussianSet local;
  RigidTransform pose;
};

struct ArmState {
  ArmAction bins;  // last executed action
  RigidTransform ee;
  int holding = -1;  // index into EnvState::objects, -1 when empty

  bool open() const { return bins.open; }
};

struct EnvState {
  Body left_arm;
  Body right_arm;
  std::vector<Body> objects;
  ArmState left;
  ArmState right;
  Role role = Role::kLeftStabilizes;
  Bounds workspace;
  int time = 0;

  GaussianSet gaussians() const;  // arms first (left, right), then objects
  Proprio proprio() const;
};

GaussianSet body_gaussians(const Body& b);

// Ground-truth world Gaussians of a spec in its initial state.
GaussianSet build_scene(const SceneSpec& spec);
EnvState make_state(const SceneSpec& spec);

// Moves both arms to the bin-center poses of the action, carries held objects
// rigidly, then applies gripper transitions (close within 3 cm of an object
// center attaches it, open releases it).
EnvState step_env(const EnvState& state, const BimanualAction& action);

inline constexpr double kGraspRadius = 0.03;

enum class TaskId { kPushBox, kLiftTray, kHandover };

std::string task_name(TaskId t);
TaskId parse_task(const std::string& name);
std::string task_instruction(TaskId t);

struct Waypoint {
  ContinuousPose left;
  ContinuousPose right;
};

/// A scripted expert for one task, instantiated for a sampled scene.
struct TaskScript {
  TaskId task = TaskId::kPushBox;
  SceneSpec scene;
  std::vector<Waypoint> waypoints;

  // Success predicate over the final state.
  bool success(const EnvState& initial, const EnvState& final_state) const;
};

// Samples object placement for a task and builds its waypoint schedule.
TaskScript sample_script(TaskId task, std::uint64_t seed, const RigConfig& rig = {}, const Bounds& workspace = {});

struct RenderedView {
  RgbImage rgb;
  DepthImage depth;
  LabelImage labels;
};
RenderedView render_view(const GaussianSet& set, const Camera& cam);

// Runs a script; returns nullopt when a waypoint leaves the workspace or the
// success predicate fails. `scenes`, when given, receives the ground-truth
// Gaussians of every step.
std::optional<DemoTrajectory> run_script(const TaskScript& script, std::vector<GaussianSet>* scenes = nullptr);

// Samples and runs episodes until one succeeds; throws SpecError after more
// than 20 consecutive rejections.
DemoTrajectory generate_episode(TaskId task, std::uint64_t seed, const RigConfig& rig = {},
                                const Bounds& workspace = {}, std::vector<GaussianSet>* scenes = nullptr);

DemoTrajectory generate_episode(const std::function<TaskScript(std::uint64_t)>& sampler, std::uint64_t seed,
                                std::vector<GaussianSet>* scenes = nullptr);

// Writes n episodes under out_dir/demos/<id>.
void generate_demos(TaskId task, int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                    const RigConfig& rig = {}, const Bounds& workspace = {});

}  // namespace hgwm::env
