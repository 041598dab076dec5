#include "baeeeg/headmesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "baeeeg/errors.hpp"

namespace baeeeg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct RingLayout {
  std::vector<double> radii;  // ring 0 is the center point (radius 0, one node)
  std::vector<int> counts;
  std::vector<Compartment> outer_compartment;  // compartment of the band inside ring k

  int node_count() const { return std::accumulate(counts.begin(), counts.end(), 0); }
};

int round_to_multiple(double value, int multiple, int minimum_multiples) {
  const int k = std::max(minimum_multiples, static_cast<int>(std::lround(value / multiple)));
  return k * multiple;
}

RingLayout make_layout(const HeadGeometry& g, double h) {
  RingLayout layout;
  layout.radii.push_back(0.0);
  layout.counts.push_back(1);
  layout.outer_compartment.push_back(Compartment::Brain);

  const int boundary_multiple = std::lcm(4, g.electrode_count);
  auto add_layers = [&](double r0, double r1, int layers, Compartment c, bool outermost) {
    for (int k = 1; k <= layers; ++k) {
      const double r = r0 + (r1 - r0) * k / layers;
      const double circumference = kTwoPi * r;
      const bool last = outermost && k == layers;
      layout.radii.push_back(r);
      layout.counts.push_back(last ? round_to_multiple(circumference / h, boundary_multiple, 1)
                                   : round_to_multiple(circumference / h, 4, 2));
      layout.outer_compartment.push_back(c);
    }
  };

  const int brain_layers = std::max(3, static_cast<int>(std::lround(g.r_brain / h)));
  const int skull_layers = std::max(2, static_cast<int>(std::ceil((g.r_skull - g.r_brain) / h - 1e-9)));
  const int scalp_layers = std::max(2, static_cast<int>(std::ceil((g.r_scalp - g.r_skull) / h - 1e-9)));
  add_layers(0.0, g.r_brain, brain_layers, Compartment::Brain, false);
  add_layers(g.r_brain, g.r_skull, skull_layers, Compartment::Skull, false);
  add_layers(g.r_skull, g.r_scalp, scalp_layers, Compartment::Scalp, true);
  return layout;
}

// Node position for index i on a ring of `count` nodes. Only the first
// quadrant is evaluated with trig; the rest is reflected so the coordinate
// set is exactly symmetric about both axes.
Eigen::Vector2d ring_point(double r, int count, int i) {
  const int q = count / 4;
  auto first_quadrant = [&](int j) -> Eigen::Vector2d {
    if (j == 0) return {r, 0.0};
    if (j == q) return {0.0, r};
    const double t = kTwoPi * j / count;
    return {r * std::cos(t), r * std::sin(t)};
  };
  if (i <= q) return first_quadrant(i);
  if (i <= 2 * q) {
    const Eigen::Vector2d p = first_quadrant(2 * q - i);
    return {-p.x(), p.y()};
  }
  if (i <= 3 * q) {
    const Eigen::Vector2d p = first_quadrant(i - 2 * q);
    return {-p.x(), -p.y()};
  }
  const Eigen::Vector2d p = first_quadrant(4 * q - i);
  return {p.x(), -p.y()};
}

}  // namespace

const char* compartment_name(Compartment c) {
  switch (c) {
    case Compartment::Brain:
      return "brain";
    case Compartment::Skull:
      return "skull";
    case Compartment::Scalp:
      return "scalp";
  }
  return "?";
}

void HeadGeometry::validate() const {
  if (!(r_brain > 0.0 && r_brain < r_skull && r_skull < r_scalp)) {
    throw GeometryError("head radii must satisfy 0 < r_brain < r_skull < r_scalp");
  }
  if (!(band_inner > 0.0 && band_inner < band_outer && band_outer < r_brain)) {
    throw GeometryError("gray-matter band must lie strictly inside the brain compartment");
  }
  if (electrode_count < 1) throw GeometryError("electrode_count must be positive");
}

double Mesh::signed_area(std::size_t tri) const {
  const auto& t = triangles[tri];
  const Eigen::Vector2d a = nodes[t[1]] - nodes[t[0]];
  const Eigen::Vector2d b = nodes[t[2]] - nodes[t[0]];
  return 0.5 * (a.x() * b.y() - a.y() * b.x());
}

double Mesh::total_area() const {
  double s = 0.0;
  for (std::size_t e = 0; e < triangles.size(); ++e) s += signed_area(e);
  return s;
}

double Mesh::compartment_area(Compartment c) const {
  double s = 0.0;
  for (std::size_t e = 0; e < triangles.size(); ++e) {
    if (element_compartment[e] == c) s += signed_area(e);
  }
  return s;
}

double Mesh::max_edge_length() const {
  double h = 0.0;
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) h = std::max(h, (nodes[t[k]] - nodes[t[(k + 1) % 3]]).norm());
  }
  return h;
}

Mesh build_head_mesh(const HeadGeometry& geometry, int target_nodes) {
  geometry.validate();
  if (target_nodes < 100) {
    throw ResolutionError("target_nodes must be at least 100 to resolve three compartments");
  }

  // Pick the ring spacing whose node count is closest to the target.
  double best_h = geometry.r_scalp;
  int best_count = 0;
  for (double h = 0.25 * geometry.r_scalp; h > 1e-6; h *= 0.995) {
    const int count = make_layout(geometry, h).node_count();
    if (best_count == 0 || std::abs(count - target_nodes) < std::abs(best_count - target_nodes)) {
      best_h = h;
      best_count = count;
    }
    if (count > 2 * target_nodes) break;
  }
  if (std::abs(best_count - target_nodes) > 0.15 * target_nodes) {
    throw ResolutionError("cannot reach " + std::to_string(target_nodes) +
                          " nodes with a three-ring layout (closest " + std::to_string(best_count) + ")");
  }
  const RingLayout layout = make_layout(geometry, best_h);

  Mesh mesh;
  std::vector<int> offset(layout.radii.size());
  for (std::size_t k = 0; k < layout.radii.size(); ++k) {
    offset[k] = static_cast<int>(mesh.nodes.size());
    if (k == 0) {
      mesh.nodes.emplace_back(0.0, 0.0);
      continue;
    }
    for (int i = 0; i < layout.counts[k]; ++i) {
      mesh.nodes.push_back(ring_point(layout.radii[k], layout.counts[k], i));
    }
  }

  auto node = [&](std::size_t ring, int i) {
    const int c = layout.counts[ring];
    return offset[ring] + ((i % c) + c) % c;
  };

  // Center fan.
  for (int i = 0; i < layout.counts[1]; ++i) {
    mesh.triangles.push_back({0, node(1, i), node(1, i + 1)});
    mesh.element_compartment.push_back(Compartment::Brain);
  }

  // Zip consecutive rings over the first quadrant, then reflect.
  struct Local {
    std::size_t ring;
    int index;
  };
  for (std::size_t a = 1; a + 1 < layout.radii.size(); ++a) {
    const std::size_t b = a + 1;
    const int ca = layout.counts[a];
    const int cb = layout.counts[b];
    const int qa = ca / 4;
    const int qb = cb / 4;
    std::vector<std::array<Local, 3>> quadrant;
    int ia = 0;
    int ib = 0;
    while (ia < qa || ib < qb) {
      bool advance_inner;
      if (ia == qa) {
        advance_inner = false;
      } else if (ib == qb) {
        advance_inner = true;
      } else {
        const double ta = static_cast<double>(ia + 1) / ca;
        const double tb = static_cast<double>(ib + 1) / cb;
        advance_inner = ta <= tb;
      }
      if (advance_inner) {
        quadrant.push_back({Local{a, ia}, Local{b, ib}, Local{a, ia + 1}});
        ++ia;
      } else {
        quadrant.push_back({Local{a, ia}, Local{b, ib}, Local{b, ib + 1}});
        ++ib;
      }
    }

    const Compartment comp = layout.outer_compartment[b];
    for (int reflection = 0; reflection < 4; ++reflection) {
      for (const auto& t : quadrant) {
        std::array<int, 3> tri{};
        for (int v = 0; v < 3; ++v) {
          const int c = layout.counts[t[v].ring];
          int i = t[v].index;
          switch (reflection) {
            case 1: i = c / 2 - i; break;  // theta -> pi - theta
            case 2: i = c - i; break;      // theta -> -theta
            case 3: i = i + c / 2; break;  // theta -> theta + pi
            default: break;
          }
          tri[v] = node(t[v].ring, i);
        }
        if (reflection == 1 || reflection == 2) std::swap(tri[1], tri[2]);
        mesh.triangles.push_back(tri);
        mesh.element_compartment.push_back(comp);
      }
    }
  }

  const std::size_t outer = layout.radii.size() - 1;
  for (int i = 0; i < layout.counts[outer]; ++i) mesh.boundary_nodes.push_back(node(outer, i));

  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    if (!(mesh.signed_area(e) > 0.0)) throw ResolutionError("mesh generation produced a degenerate triangle");
  }
  return mesh;
}

std::vector<int> place_electrodes(const Mesh& mesh, int count) {
  if (count < 1) throw ValidationError("electrode count must be positive");
  if (static_cast<std::size_t>(count) > mesh.boundary_nodes.size()) {
    throw ResolutionError("mesh has fewer boundary nodes than requested electrodes");
  }
  std::vector<int> electrodes;
  std::set<int> used;
  for (int k = 0; k < count; ++k) {
    const double target = kTwoPi * k / count;
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int n : mesh.boundary_nodes) {
      const double angle = std::atan2(mesh.nodes[n].y(), mesh.nodes[n].x());
      double d = std::fmod(std::abs(angle - target), kTwoPi);
      d = std::min(d, kTwoPi - d);
      if (d < best_dist - 1e-12) {
        best_dist = d;
        best = n;
      }
    }
    if (!used.insert(best).second) {
      throw ResolutionError("two electrodes snap to the same boundary node; refine the mesh");
    }
    electrodes.push_back(best);
  }
  return electrodes;
}

std::size_t SourceSpace::nearest(const Eigen::Vector2d& p) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const double d = (positions[i] - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

SourceSpace build_source_space(const Mesh& mesh, const HeadGeometry& geometry) {
  geometry.validate();
  SourceSpace space;
  const double tol = 1e-12 * geometry.r_scalp;
  for (std::size_t n = 0; n < mesh.nodes.size(); ++n) {
    const double r = mesh.nodes[n].norm();
    if (r >= geometry.band_inner - tol && r <= geometry.band_outer + tol) {
      space.locations.push_back(static_cast<int>(n));
      space.positions.push_back(mesh.nodes[n]);
      space.radial_dirs.push_back(mesh.nodes[n] / r);
    }
  }
  if (space.locations.empty()) throw GeometryError("no mesh nodes inside the gray-matter band");
  return space;
}

void write_mesh(std::ostream& os, const Mesh& mesh) {
  os << "baeeeg-mesh 1\n";
  os << std::setprecision(17);
  os << "nodes " << mesh.nodes.size() << '\n';
  for (const auto& p : mesh.nodes) os << p.x() << ' ' << p.y() << '\n';
  os << "triangles " << mesh.triangles.size() << '\n';
  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    const auto& t = mesh.triangles[e];
    os << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << static_cast<int>(mesh.element_compartment[e]) << '\n';
  }
  os << "boundary " << mesh.boundary_nodes.size() << '\n';
  for (int b : mesh.boundary_nodes) os << b << '\n';
}

Mesh read_mesh(std::istream& is) {
  auto expect = [&](const std::string& word) {
    std::string token;
    if (!(is >> token) || token != word) throw IoError("mesh file: expected '" + word + "'");
    std::size_t n = 0;
    if (!(is >> n)) throw IoError("mesh file: missing count after '" + word + "'");
    if (n > 50'000'000) throw IoError("mesh file: implausible count after '" + word + "'");
    return n;
  };
  if (expect("baeeeg-mesh") != 1) throw IoError("mesh file: unsupported version");
  Mesh mesh;
  mesh.nodes.resize(expect("nodes"));
  for (auto& p : mesh.nodes) {
    if (!(is >> p.x() >> p.y())) throw IoError("mesh file: truncated node list");
  }
  const std::size_t t = expect("triangles");
  mesh.triangles.resize(t);
  mesh.element_compartment.resize(t);
  for (std::size_t e = 0; e < t; ++e) {
    int c = 0;
    auto& tri = mesh.triangles[e];
    if (!(is >> tri[0] >> tri[1] >> tri[2] >> c)) throw IoError("mesh file: truncated triangle list");
    if (c < 0 || c > 2) throw IoError("mesh file: bad compartment label");
    for (int v : tri) {
      if (v < 0 || static_cast<std::size_t>(v) >= mesh.nodes.size()) throw IoError("mesh file: node index out of range");
    }
    mesh.element_compartment[e] = static_cast<Compartment>(c);
  }
  mesh.boundary_nodes.resize(expect("boundary"));
  for (auto& b : mesh.boundary_nodes) {
    if (!(is >> b)) throw IoError("mesh file: truncated boundary list");
    if (b < 0 || static_cast<std::size_t>(b) >= mesh.nodes.size()) throw IoError("mesh file: node index out of range");
  }
  return mesh;
}

void save_mesh(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_mesh(os, mesh);
  if (!os) throw IoError("write failed: " + path);
}

Mesh load_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return read_mesh(is);
}

}  // namespace baeeeg
