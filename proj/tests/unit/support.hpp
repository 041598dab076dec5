#pragma once

// Shared fixtures for the unit tests: small meshes and models built once per
// test binary.

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "baeeeg/baestats.hpp"
#include "baeeeg/fem.hpp"
#include "baeeeg/headmesh.hpp"

namespace testsupport {

using namespace baeeeg;

inline const HeadGeometry& geometry() {
  static const HeadGeometry g;
  return g;
}

inline const Mesh& mesh_of(int target) {
  static std::map<int, Mesh> cache;
  auto it = cache.find(target);
  if (it == cache.end()) it = cache.emplace(target, build_head_mesh(geometry(), target)).first;
  return it->second;
}

/// A coarse inverse-style model with a handful of sample lead fields.
struct SmallModel {
  const Mesh* mesh = nullptr;
  std::vector<int> electrodes;
  SourceSpace sources;
  ConductivityAssignment standard_cond;
  LeadField standard;
  ConductivitySamples samples;
  std::vector<LeadField> sample_lead_fields;
};

inline const SmallModel& small_model() {
  static const SmallModel model = [] {
    SmallModel m;
    m.mesh = &mesh_of(500);
    m.electrodes = place_electrodes(*m.mesh, 32);
    m.sources = build_source_space(*m.mesh, geometry());
    m.standard = build_lead_field(*m.mesh, m.standard_cond, m.sources.positions, m.electrodes);
    m.samples = sample_conductivities(ConductivityPrior{}, 24, 99);
    m.sample_lead_fields =
        compute_sample_lead_fields(*m.mesh, m.samples.values, m.standard_cond, m.sources.positions, m.electrodes);
    return m;
  }();
  return model;
}

inline double angle_of(const Eigen::Vector2d& p) {
  double a = std::atan2(p.y(), p.x());
  return a < 0 ? a + 2 * std::numbers::pi : a;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace testsupport
