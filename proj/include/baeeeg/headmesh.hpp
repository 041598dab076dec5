#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace baeeeg {

enum class Compartment : int { Brain = 0, Skull = 1, Scalp = 2 };

const char* compartment_name(Compartment c);

/// Concentric-disk head description. All lengths in meters.
struct HeadGeometry {
  double r_brain = 0.079;
  double r_skull = 0.086;
  double r_scalp = 0.092;
  double band_inner = 0.060;  ///< gray-matter annulus holding the sources
  double band_outer = 0.075;
  int electrode_count = 32;

  /// Throws GeometryError when radii are not strictly increasing, the band
  /// does not lie strictly inside the brain, or electrode_count < 1.
  void validate() const;
};

struct Mesh {
  std::vector<Eigen::Vector2d> nodes;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
  std::vector<Compartment> element_compartment;
  std::vector<int> boundary_nodes;  // ordered by angle, on the scalp circle

  std::size_t node_count() const { return nodes.size(); }
  std::size_t triangle_count() const { return triangles.size(); }

  double signed_area(std::size_t tri) const;
  double total_area() const;
  double compartment_area(Compartment c) const;
  /// Longest element edge; an upper bound for the local mesh spacing.
  double max_edge_length() const;
};

/// Structured polar ring mesh. Ring radii land on every compartment
/// interface, so no triangle crosses one; each ring carries a multiple of
/// four nodes (and the scalp ring a multiple of lcm(4, electrode_count)) so
/// the mesh is mirror-symmetric about both axes.
Mesh build_head_mesh(const HeadGeometry& geometry, int target_nodes);

/// Boundary node nearest (in angle) to 2*pi*k/count, k = 0..count-1.
std::vector<int> place_electrodes(const Mesh& mesh, int count);

struct SourceSpace {
  std::vector<int> locations;  ///< node indices in the mesh it was built on
  std::vector<Eigen::Vector2d> positions;
  std::vector<Eigen::Vector2d> radial_dirs;

  std::size_t size() const { return positions.size(); }
  /// Index of the source closest to `p`.
  std::size_t nearest(const Eigen::Vector2d& p) const;
};

SourceSpace build_source_space(const Mesh& mesh, const HeadGeometry& geometry);

// Text format, one section per block:
//   baeeeg-mesh 1
//   nodes <N>            then N lines: x y
//   triangles <T>        then T lines: i j k compartment(0 brain,1 skull,2 scalp)
//   boundary <B>         then B lines: node index
// Coordinates are written with 17 significant digits.
void write_mesh(std::ostream& os, const Mesh& mesh);
Mesh read_mesh(std::istream& is);
void save_mesh(const std::string& path, const Mesh& mesh);
Mesh load_mesh(const std::string& path);

}  // namespace baeeeg
