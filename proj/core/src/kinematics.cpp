// Copyright 2026 The FuseTrack Authors
// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>

#include "default_configs.hpp"
#include "fusetrack/errors.hpp"
#include "json_util.hpp"

namespace fusetrack {

using detail::json;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// HandSkeleton

namespace {

int lookup(const std::map<std::string, int>& names, const std::string& key, const std::string& what) {
  auto it = names.find(key);
  if (it == names.end()) throw ConfigError("skeleton: unknown " + what + " '" + key + "'");
  return it->second;
}

}  // namespace

HandSkeleton HandSkeleton::from_json_text(const std::string& text) {
  const json j = detail::parse_json(text, "skeleton");
  detail::require_schema_version(j, 1, "skeleton");

  HandSkeleton sk;
  std::map<std::string, int> seg_names, dof_names, lm_names;

  try {
    for (const auto& s : j.at("segments")) {
      SegmentSpec seg;
      seg.name = s.at("name").get<std::string>();
      const auto parent = s.at("parent").get<std::string>();
      seg.parent = parent.empty() ? -1 : lookup(seg_names, parent, "parent segment");
      seg.rest_offset = detail::vec3_from_json(s.at("offset"), "segment offset");
      if (s.contains("rest_rotation")) {
        for (const auto& r : s.at("rest_rotation")) {
          if (r.size() != 4) throw ConfigError("skeleton: rest_rotation entries are [ax, ay, az, angle]");
          Vec3 axis(r[0].get<double>(), r[1].get<double>(), r[2].get<double>());
          seg.rest_rotation = seg.rest_rotation * axis_angle(axis.normalized(), r[3].get<double>());
        }
      }
      if (seg_names.contains(seg.name)) throw ConfigError("skeleton: duplicate segment " + seg.name);
      seg_names[seg.name] = static_cast<int>(sk.segments_.size());
      sk.segments_.push_back(std::move(seg));
    }

    for (const auto& d : j.at("dofs")) {
      DofSpec dof;
      dof.name = d.at("name").get<std::string>();
      dof.segment = lookup(seg_names, d.at("segment").get<std::string>(), "segment");
      dof.axis = detail::vec3_from_json(d.at("axis"), "dof axis").normalized();
      const auto kind = d.at("kind").get<std::string>();
      if (kind == "flexion") {
        dof.kind = DofKind::kFlexion;
      } else if (kind == "abduction") {
        dof.kind = DofKind::kAbduction;
      } else {
        throw ConfigError("skeleton: dof kind must be flexion|abduction, got " + kind);
      }
      dof_names[dof.name] = static_cast<int>(sk.dofs_.size());
      sk.segments_[dof.segment].dofs.push_back(static_cast<int>(sk.dofs_.size()));
      sk.dofs_.push_back(std::move(dof));
    }

    for (const auto& l : j.at("landmarks")) {
      LandmarkSpec lm;
      lm.name = l.at("name").get<std::string>();
      lm.segment = lookup(seg_names, l.at("segment").get<std::string>(), "segment");
      lm.offset = detail::vec3_from_json(l.at("offset"), "landmark offset");
      lm_names[lm.name] = static_cast<int>(sk.landmarks_.size());
      sk.landmarks_.push_back(std::move(lm));
    }

    const auto& tips = j.at("fingertips");
    if (tips.size() != kNumFingertips) throw ConfigError("skeleton: expected 5 fingertips");
    for (std::size_t i = 0; i < kNumFingertips; ++i) {
      sk.fingertips_[i] = lookup(lm_names, tips[i].get<std::string>(), "fingertip landmark");
    }

    const char* finger_keys[5] = {"thumb", "index", "middle", "ring", "pinky"};
    for (int f = 0; f < 5; ++f) {
      for (const auto& name : j.at("fingers").at(finger_keys[f])) {
        sk.finger_landmarks_[f].push_back(lookup(lm_names, name.get<std::string>(), "finger landmark"));
      }
    }

    for (const auto& b : j.at("bones")) {
      sk.bones_.emplace_back(lookup(lm_names, b[0].get<std::string>(), "bone landmark"),
                             lookup(lm_names, b[1].get<std::string>(), "bone landmark"));
    }

    if (j.contains("couplings")) {
      for (const auto& c : j.at("couplings")) {
        sk.couplings_.push_back({lookup(dof_names, c.at("driver").get<std::string>(), "dof"),
                                 lookup(dof_names, c.at("dependent").get<std::string>(), "dof"),
                                 c.at("ratio").get<double>()});
      }
    }

    if (j.contains("limits")) {
      const auto& lim = j.at("limits");
      sk.limits_.flexion_min = lim.at("flexion")[0].get<double>();
      sk.limits_.flexion_max = lim.at("flexion")[1].get<double>();
      sk.limits_.abduction_min = lim.at("abduction")[0].get<double>();
      sk.limits_.abduction_max = lim.at("abduction")[1].get<double>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("skeleton: ") + e.what());
  }

  sk.validate();
  return sk;
}

HandSkeleton HandSkeleton::from_file(const std::filesystem::path& path) {
  return from_json_text(detail::read_text_file(path));
}

const HandSkeleton& HandSkeleton::default_right_hand() {
  static const HandSkeleton sk = from_json_text(detail::kDefaultSkeletonJson);
  return sk;
}

void HandSkeleton::validate() const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].parent >= static_cast<int>(i)) {
      throw ConfigError("skeleton: segment " + segments_[i].name + " is not topologically sorted");
    }
  }
  if (segments_.empty() || segments_[0].parent != -1) throw ConfigError("skeleton: first segment must be the root");
  if (dofs_.size() != kNumDofs) {
    throw ConfigError("skeleton: expected 22 DoFs, got " + std::to_string(dofs_.size()));
  }
  if (landmarks_.size() != kNumLandmarks) {
    throw ConfigError("skeleton: expected 21 landmarks, got " + std::to_string(landmarks_.size()));
  }
  std::set<int> tips(fingertips_.begin(), fingertips_.end());
  if (tips.size() != kNumFingertips) throw ConfigError("skeleton: fingertip indices must be distinct");
  for (int t : fingertips_) {
    if (t < 0 || t >= kNumLandmarks) throw ConfigError("skeleton: fingertip index out of range");
  }
}

int HandSkeleton::segment_index(const std::string& name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return static_cast<int>(i);
  }
  throw ValidationError("skeleton: no segment named " + name);
}

int HandSkeleton::dof_index(const std::string& name) const {
  for (std::size_t i = 0; i < dofs_.size(); ++i) {
    if (dofs_[i].name == name) return static_cast<int>(i);
  }
  throw ValidationError("skeleton: no dof named " + name);
}

bool HandSkeleton::is_descendant(int segment, int ancestor) const {
  for (int s = segment; s >= 0; s = segments_[s].parent) {
    if (s == ancestor) return true;
  }
  return false;
}

std::pair<double, double> HandSkeleton::limits_for(int dof) const {
  if (dofs_.at(dof).kind == DofKind::kFlexion) return {limits_.flexion_min, limits_.flexion_max};
  return {limits_.abduction_min, limits_.abduction_max};
}

void HandPose::validate(const HandSkeleton& skeleton, bool check_limits) const {
  if (!is_rotation(wrist_rotation)) throw ValidationError("wrist rotation is not in SO(3)");
  if (!phi.allFinite() || !wrist_translation.allFinite()) throw ValidationError("pose has non-finite values");
  if (!check_limits) return;
  for (int i = 0; i < kNumDofs; ++i) {
    const auto [lo, hi] = skeleton.limits_for(i);
    if (phi[i] < lo || phi[i] > hi) {
      throw ValidationError("angle " + skeleton.dofs()[i].name + " = " + std::to_string(phi[i]) +
                            " outside joint limits");
    }
  }
}

// ---------------------------------------------------------------------------
// Forward kinematics

std::vector<RigidTransform> segment_frames(const HandSkeleton& skeleton, const HandPose& pose) {
  pose.validate(skeleton);
  const RigidTransform root{pose.wrist_rotation, pose.wrist_translation};
  const auto& segs = skeleton.segments();
  const auto& dofs = skeleton.dofs();
  std::vector<RigidTransform> frames(segs.size());
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const RigidTransform& parent = segs[s].parent < 0 ? root : frames[segs[s].parent];
    Mat3 r = parent.rotation * segs[s].rest_rotation;
    for (int d : segs[s].dofs) r = r * axis_angle(dofs[d].axis, pose.phi[d]);
    frames[s] = {r, parent.rotation * segs[s].rest_offset + parent.translation};
  }
  return frames;
}

JointSet21 forward_kinematics(const HandSkeleton& skeleton, const HandPose& pose) {
  const auto frames = segment_frames(skeleton, pose);
  JointSet21 out;
  for (int l = 0; l < kNumLandmarks; ++l) {
    const auto& lm = skeleton.landmarks()[l];
    out[l] = frames[lm.segment].apply(lm.offset);
  }
  return out;
}

LocalFk local_fk_with_jacobian(const HandSkeleton& skeleton, const Phi& phi) {
  const auto& segs = skeleton.segments();
  const auto& dofs = skeleton.dofs();
  std::vector<RigidTransform> frames(segs.size());
  std::array<Vec3, kNumDofs> axis_world;
  std::array<int, kNumDofs> dof_segment;

  for (std::size_t s = 0; s < segs.size(); ++s) {
    const RigidTransform parent = segs[s].parent < 0 ? RigidTransform{} : frames[segs[s].parent];
    const Vec3 origin = parent.rotation * segs[s].rest_offset + parent.translation;
    Mat3 r = parent.rotation * segs[s].rest_rotation;
    for (int d : segs[s].dofs) {
      axis_world[d] = r * dofs[d].axis;
      dof_segment[d] = static_cast<int>(s);
      r = r * axis_angle(dofs[d].axis, phi[d]);
    }
    frames[s] = {r, origin};
  }

  LocalFk out;
  out.jacobian.setZero();
  for (int l = 0; l < kNumLandmarks; ++l) {
    const auto& lm = skeleton.landmarks()[l];
    out.points[l] = frames[lm.segment].apply(lm.offset);
    for (int d = 0; d < kNumDofs; ++d) {
      if (!skeleton.is_descendant(lm.segment, dof_segment[d])) continue;
      const Vec3 pivot = frames[dof_segment[d]].translation;
      out.jacobian.block<3, 1>(3 * l, d) = axis_world[d].cross(out.points[l] - pivot);
    }
  }
  return out;
}

std::vector<SegmentMotion> segment_motion(const HandSkeleton& skeleton, const Phi& phi, const Phi& phi_dot,
                                          const Phi& phi_ddot, const RootMotion& root) {
  const auto& segs = skeleton.segments();
  const auto& dofs = skeleton.dofs();
  const SegmentMotion root_motion{root.frame, root.omega, root.omega_dot, root.velocity, root.acceleration};
  std::vector<SegmentMotion> out(segs.size());
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const SegmentMotion& p = segs[s].parent < 0 ? root_motion : out[segs[s].parent];
    SegmentMotion m;
    const Vec3 r = p.frame.rotation * segs[s].rest_offset;
    m.frame.translation = p.frame.translation + r;
    m.velocity = p.velocity + p.omega.cross(r);
    m.acceleration = p.acceleration + p.omega_dot.cross(r) + p.omega.cross(p.omega.cross(r));
    m.omega = p.omega;
    m.omega_dot = p.omega_dot;
    Mat3 rot = p.frame.rotation * segs[s].rest_rotation;
    for (int d : segs[s].dofs) {
      const Vec3 axis = rot * dofs[d].axis;
      // The axis is carried by the frame that precedes this DoF.
      m.omega_dot += axis * phi_ddot[d] + m.omega.cross(axis * phi_dot[d]);
      m.omega += axis * phi_dot[d];
      rot = rot * axis_angle(dofs[d].axis, phi[d]);
    }
    m.frame.rotation = rot;
    out[s] = m;
  }
  return out;
}

Vec3 point_velocity(const SegmentMotion& m, const Vec3& local) {
  return m.velocity + m.omega.cross(m.frame.rotation * local);
}

Vec3 point_acceleration(const SegmentMotion& m, const Vec3& local) {
  const Vec3 r = m.frame.rotation * local;
  return m.acceleration + m.omega_dot.cross(r) + m.omega.cross(m.omega.cross(r));
}

// ---------------------------------------------------------------------------
// Sensor layout

SensorLayout::SensorLayout(std::vector<SensorSite> sensors, std::vector<std::pair<int, int>> edges,
                           int vision_anchor, int vision_extra_hops)
    : sensors_(std::move(sensors)),
      edges_(std::move(edges)),
      vision_anchor_(vision_anchor),
      vision_extra_hops_(vision_extra_hops) {
  if (sensors_.size() != kNumSensors) {
    throw ConfigError("sensor layout: expected 12 sensors, got " + std::to_string(sensors_.size()));
  }
  for (auto [a, b] : edges_) {
    if (a == b) throw ConfigError("sensor layout: self-loop on " + sensors_[a].name);
    if (a < 0 || b < 0 || a >= kNumSensors || b >= kNumSensors) throw ConfigError("sensor layout: bad edge");
  }
  if (vision_anchor_ < 0 || vision_anchor_ >= kNumSensors) throw ConfigError("sensor layout: bad vision anchor");
}

SensorLayout SensorLayout::from_json_text(const std::string& text, const HandSkeleton& skeleton) {
  const json j = detail::parse_json(text, "sensor layout");
  detail::require_schema_version(j, 1, "sensor layout");
  try {
    std::vector<SensorSite> sensors;
    std::map<std::string, int> names;
    for (const auto& s : j.at("sensors")) {
      SensorSite site;
      site.name = s.at("name").get<std::string>();
      site.segment = skeleton.segment_index(s.at("segment").get<std::string>());
      site.mount_offset = detail::vec3_from_json(s.at("offset"), "sensor offset");
      if (s.contains("rotation")) {
        for (const auto& r : s.at("rotation")) {
          Vec3 axis(r[0].get<double>(), r[1].get<double>(), r[2].get<double>());
          site.mount_rotation = site.mount_rotation * axis_angle(axis.normalized(), r[3].get<double>());
        }
      }
      names[site.name] = static_cast<int>(sensors.size());
      sensors.push_back(std::move(site));
    }
    auto idx = [&](const std::string& n) {
      auto it = names.find(n);
      if (it == names.end()) throw ConfigError("sensor layout: unknown sensor " + n);
      return it->second;
    };
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(idx(e[0].get<std::string>()), idx(e[1].get<std::string>()));
    return SensorLayout(std::move(sensors), std::move(edges), idx(j.at("vision_anchor").get<std::string>()),
                        detail::get_or<int>(j, "vision_extra_hops", 1));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sensor layout: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

SensorLayout SensorLayout::from_file(const std::filesystem::path& path, const HandSkeleton& skeleton) {
  return from_json_text(detail::read_text_file(path), skeleton);
}

const SensorLayout& SensorLayout::default_layout() {
  static const SensorLayout layout =
      from_json_text(detail::kDefaultLayoutJson, HandSkeleton::default_right_hand());
  return layout;
}

int SensorLayout::sensor_index(const std::string& name) const {
  for (std::size_t i = 0; i < sensors_.size(); ++i) {
    if (sensors_[i].name == name) return static_cast<int>(i);
  }
  throw ValidationError("sensor layout: no sensor named " + name);
}

std::array<std::vector<int>, 6> SensorLayout::sensor_groups(const HandSkeleton& skeleton) const {
  std::array<std::vector<int>, 6> groups;
  std::array<int, 5> finger_roots;
  for (int f = 0; f < 5; ++f) {
    finger_roots[f] = skeleton.landmarks()[skeleton.finger_landmarks()[f].front()].segment;
  }
  for (int k = 0; k < kNumSensors; ++k) {
    int group = 5;
    for (int f = 0; f < 5; ++f) {
      if (skeleton.is_descendant(sensors_[k].segment, finger_roots[f])) group = f;
    }
    groups[group].push_back(k);
  }
  return groups;
}

RigidTransform SensorLayout::sensor_frame(const std::vector<RigidTransform>& frames, int sensor) const {
  const SensorSite& s = sensors_.at(sensor);
  return frames.at(s.segment).compose({s.mount_rotation, s.mount_offset});
}

GeodesicMatrix sensor_geodesic_matrix(const SensorLayout& layout) {
  std::array<std::vector<int>, kNumSensors> adj;
  for (auto [a, b] : layout.edges()) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  Eigen::Matrix<int, kNumSensors, kNumSensors> hops;
  for (int src = 0; src < kNumSensors; ++src) {
    std::array<int, kNumSensors> dist;
    dist.fill(-1);
    dist[src] = 0;
    std::deque<int> queue{src};
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int v : adj[u]) {
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          queue.push_back(v);
        }
      }
    }
    for (int dst = 0; dst < kNumSensors; ++dst) {
      if (dist[dst] < 0) {
        throw ValidationError("sensor layout graph is disconnected (" + layout.sensors()[src].name + " cannot reach " +
                              layout.sensors()[dst].name + ")");
      }
      hops(src, dst) = dist[dst];
    }
  }

  GeodesicMatrix g;
  g(0, 0) = 0;
  for (int k = 0; k < kNumSensors; ++k) {
    const int v = hops(layout.vision_anchor(), k) + layout.vision_extra_hops();
    g(0, k + 1) = v;
    g(k + 1, 0) = v;
  }
  g.bottomRightCorner<kNumSensors, kNumSensors>() = hops;
  return g;
}

}  // namespace fusetrack
