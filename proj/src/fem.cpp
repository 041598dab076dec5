#include "baeeeg/fem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "baeeeg/binio.hpp"
#include "baeeeg/errors.hpp"

namespace baeeeg {

double ConductivityAssignment::of(Compartment c) const {
  switch (c) {
    case Compartment::Brain:
      return brain;
    case Compartment::Skull:
      return skull;
    case Compartment::Scalp:
      return scalp;
  }
  return 0.0;
}

void ConductivityAssignment::validate() const {
  if (!(scalp > 0.0 && skull > 0.0 && brain > 0.0)) {
    throw ValidationError("conductivities must be strictly positive");
  }
}

namespace {

// Gradients of the three P1 hat functions (rows) and the triangle area.
std::pair<Eigen::Matrix<double, 3, 2>, double> hat_gradients(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                                              const Eigen::Vector2d& c) {
  const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  if (!(area2 > 0.0)) throw AssemblyError("degenerate or inverted triangle");
  Eigen::Matrix<double, 3, 2> g;
  g << b.y() - c.y(), c.x() - b.x(),
       c.y() - a.y(), a.x() - c.x(),
       a.y() - b.y(), b.x() - a.x();
  g /= area2;
  return {g, 0.5 * area2};
}

}  // namespace

Eigen::Matrix3d local_stiffness(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const auto [g, area] = hat_gradients(a, b, c);
  return area * g * g.transpose();
}

SparseMatrix assemble_stiffness(const Mesh& mesh, const ConductivityAssignment& cond) {
  cond.validate();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * mesh.triangles.size());
  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    const auto& t = mesh.triangles[e];
    const Eigen::Matrix3d ke =
        cond.of(mesh.element_compartment[e]) * local_stiffness(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) triplets.emplace_back(t[i], t[j], ke(i, j));
    }
  }
  const auto n = static_cast<Eigen::Index>(mesh.nodes.size());
  SparseMatrix k(n, n);
  k.setFromTriplets(triplets.begin(), triplets.end());
  return k;
}

Eigen::VectorXd electrode_load(std::size_t node_count, std::span<const int> electrodes, std::size_t k) {
  const double m = static_cast<double>(electrodes.size());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(node_count));
  for (std::size_t j = 0; j < electrodes.size(); ++j) b(electrodes[j]) = (j == k ? 1.0 : 0.0) - 1.0 / m;
  return b;
}

struct NeumannSolver::Impl {
  Eigen::Index n = 0;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
};

// Node 0 is grounded: its row and column are dropped from the factorized system.
NeumannSolver::NeumannSolver(const SparseMatrix& stiffness) {
  auto impl = std::make_shared<Impl>();
  impl->n = stiffness.rows();
  if (impl->n < 2 || stiffness.cols() != impl->n) throw ValidationError("stiffness matrix must be square, N >= 2");
  const SparseMatrix reduced = stiffness.bottomRightCorner(impl->n - 1, impl->n - 1);
  impl->ldlt.compute(reduced);
  if (impl->ldlt.info() != Eigen::Success) throw NumericalError("grounded stiffness factorization failed");
  if ((impl->ldlt.vectorD().array() <= 0.0).any()) {
    throw NumericalError("grounded stiffness matrix is not positive definite");
  }
  impl_ = std::move(impl);
}

Eigen::MatrixXd NeumannSolver::solve(const Eigen::MatrixXd& loads) const {
  const Eigen::Index n = impl_->n;
  if (loads.rows() != n) throw ValidationError("load size does not match stiffness matrix");
  Eigen::MatrixXd u(n, loads.cols());
  u.row(0).setZero();
  u.bottomRows(n - 1) = impl_->ldlt.solve(loads.bottomRows(n - 1));
  if (impl_->ldlt.info() != Eigen::Success || !u.allFinite()) throw NumericalError("grounded solve failed");
  u.rowwise() -= u.colwise().mean();
  return u;
}

Eigen::VectorXd NeumannSolver::solve(const Eigen::VectorXd& load) const {
  return solve(Eigen::MatrixXd(load)).col(0);
}

Eigen::MatrixXd compute_transfer_matrix(const SparseMatrix& stiffness, std::span<const int> electrodes) {
  const auto n = static_cast<std::size_t>(stiffness.rows());
  for (const int e : electrodes) {
    if (e < 0 || static_cast<std::size_t>(e) >= n) throw ValidationError("electrode node index out of range");
  }
  Eigen::MatrixXd loads(stiffness.rows(), static_cast<Eigen::Index>(electrodes.size()));
  for (std::size_t k = 0; k < electrodes.size(); ++k) {
    loads.col(static_cast<Eigen::Index>(k)) = electrode_load(n, electrodes, k);
  }
  return NeumannSolver(stiffness).solve(loads).transpose();
}

TriangleLocator::TriangleLocator(const Mesh& mesh) : mesh_(&mesh) {
  if (mesh.nodes.empty() || mesh.triangles.empty()) throw ValidationError("empty mesh");
  lo_ = mesh.nodes.front();
  Eigen::Vector2d hi = lo_;
  for (const auto& p : mesh.nodes) {
    lo_ = lo_.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max(hi.x() - lo_.x(), hi.y() - lo_.y());
  cells_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.triangles.size()) / 2.0)));
  cell_ = extent / cells_ * (1.0 + 1e-9);
  lo_.array() -= 1e-12 * extent;
  buckets_.resize(static_cast<std::size_t>(cells_) * cells_);
  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    const auto& t = mesh.triangles[e];
    Eigen::Vector2d a = mesh.nodes[t[0]];
    Eigen::Vector2d b = a;
    for (int v = 1; v < 3; ++v) {
      a = a.cwiseMin(mesh.nodes[t[v]]);
      b = b.cwiseMax(mesh.nodes[t[v]]);
    }
    const auto [i0, j0] = cell_of(a);
    const auto [i1, j1] = cell_of(b);
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) buckets_[static_cast<std::size_t>(j) * cells_ + i].push_back(e);
    }
  }
}

std::pair<int, int> TriangleLocator::cell_of(const Eigen::Vector2d& p) const {
  auto clamp = [&](double v) { return std::clamp(static_cast<int>(std::floor(v / cell_)), 0, cells_ - 1); };
  return {clamp(p.x() - lo_.x()), clamp(p.y() - lo_.y())};
}

std::vector<std::size_t> TriangleLocator::containing(const Eigen::Vector2d& x, double tol) const {
  std::vector<std::size_t> hits;
  const auto [i, j] = cell_of(x);
  for (std::size_t e : buckets_[static_cast<std::size_t>(j) * cells_ + i]) {
    const auto& t = mesh_->triangles[e];
    const Eigen::Vector2d& a = mesh_->nodes[t[0]];
    const Eigen::Vector2d& b = mesh_->nodes[t[1]];
    const Eigen::Vector2d& c = mesh_->nodes[t[2]];
    const double area2 = (b - a).x() * (c - a).y() - (c - a).x() * (b - a).y();
    const double l0 = ((b - x).x() * (c - x).y() - (c - x).x() * (b - x).y()) / area2;
    const double l1 = ((c - x).x() * (a - x).y() - (a - x).x() * (c - x).y()) / area2;
    const double l2 = 1.0 - l0 - l1;
    if (l0 >= -tol && l1 >= -tol && l2 >= -tol) hits.push_back(e);
  }
  return hits;
}

namespace {

// Edges between elements of different compartments, plus the outer boundary.
std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> interface_edges(const Mesh& mesh) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> owners;
  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    const auto& t = mesh.triangles[e];
    for (int v = 0; v < 3; ++v) {
      const int a = t[v];
      const int b = t[(v + 1) % 3];
      owners[{std::min(a, b), std::max(a, b)}].push_back(e);
    }
  }
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> edges;
  for (const auto& [edge, elements] : owners) {
    const bool boundary = elements.size() == 1;
    const bool interface = elements.size() == 2 &&
                           mesh.element_compartment[elements[0]] != mesh.element_compartment[elements[1]];
    if (boundary || interface) edges.emplace_back(mesh.nodes[edge.first], mesh.nodes[edge.second]);
  }
  return edges;
}

double segment_distance(const Eigen::Vector2d& x, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double t = std::clamp((x - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (x - a - t * ab).norm();
}

}  // namespace

SparseMatrix dipole_loads(const Mesh& mesh, std::span<const Eigen::Vector2d> positions,
                          const DipoleSpread& spread) {
  const TriangleLocator locator(mesh);
  const auto edges = interface_edges(mesh);
  const double spacing = std::sqrt(2.0 * mesh.total_area() / static_cast<double>(mesh.triangles.size()));

  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Eigen::Vector2d& x0 = positions[i];
    if (locator.containing(x0, 1e-10).empty()) throw LocationError("dipole position outside the mesh");

    double clearance = std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : edges) clearance = std::min(clearance, segment_distance(x0, a, b));
    const double radius = std::min(spread.spacing_factor * spacing, spread.clearance_factor * clearance);

    // Quadrature over the spreading disk: equal-area rings, each with its
    // share of the unit moment. A zero radius degenerates to a point dipole.
    std::vector<std::pair<Eigen::Vector2d, double>> points;
    if (radius <= 0.0 || spread.rings < 1) {
      points.emplace_back(x0, 1.0);
    } else {
      for (int k = 0; k < spread.rings; ++k) {
        const double r_in = radius * k / spread.rings;
        const double r_out = radius * (k + 1) / spread.rings;
        const int spokes = 6 * (2 * k + 1);
        const double weight = (r_out * r_out - r_in * r_in) / (radius * radius) / spokes;
        const double r_mid = std::sqrt(0.5 * (r_in * r_in + r_out * r_out));
        for (int s = 0; s < spokes; ++s) {
          const double t = 2.0 * std::numbers::pi * (s + 0.5 * (k % 2)) / spokes;
          points.emplace_back(x0 + r_mid * Eigen::Vector2d(std::cos(t), std::sin(t)), weight);
        }
      }
    }

    std::map<int, Eigen::Vector2d> load;
    for (const auto& [x, weight] : points) {
      const auto hits = locator.containing(x, 1e-10);
      if (hits.empty()) throw LocationError("dipole spreading disk leaves the mesh");
      // Points on shared edges or vertices take the area-weighted mean gradient.
      double total_area = 0.0;
      for (std::size_t e : hits) total_area += mesh.signed_area(e);
      for (std::size_t e : hits) {
        const auto& t = mesh.triangles[e];
        const auto [g, area] = hat_gradients(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
        const double w = weight * area / total_area;
        for (int v = 0; v < 3; ++v) {
          auto it = load.try_emplace(t[v], Eigen::Vector2d::Zero()).first;
          it->second += w * g.row(v).transpose();
        }
      }
    }
    for (const auto& [node, grad] : load) {
      triplets.emplace_back(node, static_cast<int>(2 * i), grad.x());
      triplets.emplace_back(node, static_cast<int>(2 * i + 1), grad.y());
    }
  }
  SparseMatrix loads(static_cast<Eigen::Index>(mesh.nodes.size()), static_cast<Eigen::Index>(2 * positions.size()));
  loads.setFromTriplets(triplets.begin(), triplets.end());
  return loads;
}

void average_reference(Eigen::MatrixXd& matrix) {
  matrix.rowwise() -= matrix.colwise().mean();
}

void average_reference(Eigen::VectorXd& v) {
  v.array() -= v.mean();
}

LeadField build_lead_field(const Mesh& mesh, const ConductivityAssignment& cond,
                           std::span<const Eigen::Vector2d> source_positions, std::span<const int> electrodes,
                           const DipoleSpread& spread) {
  const SparseMatrix loads = dipole_loads(mesh, source_positions, spread);
  const Eigen::MatrixXd transfer = compute_transfer_matrix(assemble_stiffness(mesh, cond), electrodes);
  LeadField lf;
  lf.matrix = transfer * loads;
  average_reference(lf.matrix);
  lf.electrodes.assign(electrodes.begin(), electrodes.end());
  return lf;
}

LeadField build_lead_field_direct(const Mesh& mesh, const ConductivityAssignment& cond,
                                  std::span<const Eigen::Vector2d> source_positions, std::span<const int> electrodes,
                                  const DipoleSpread& spread) {
  const NeumannSolver solver(assemble_stiffness(mesh, cond));
  const Eigen::MatrixXd loads(dipole_loads(mesh, source_positions, spread));
  const Eigen::MatrixXd potentials = solver.solve(loads);
  LeadField lf;
  lf.matrix.resize(static_cast<Eigen::Index>(electrodes.size()), loads.cols());
  for (std::size_t k = 0; k < electrodes.size(); ++k) {
    lf.matrix.row(static_cast<Eigen::Index>(k)) = potentials.row(electrodes[k]);
  }
  average_reference(lf.matrix);
  lf.electrodes.assign(electrodes.begin(), electrodes.end());
  return lf;
}

Eigen::VectorXd LeadField::response(std::size_t source, const Eigen::Vector2d& moment) const {
  if (source >= source_count()) throw ValidationError("source index out of range");
  return matrix.middleCols(static_cast<Eigen::Index>(2 * source), 2) * moment;
}

std::uint64_t LeadField::digest() const {
  binio::Fnv1a h;
  h.value<std::uint64_t>(static_cast<std::uint64_t>(matrix.rows()));
  h.value<std::uint64_t>(static_cast<std::uint64_t>(matrix.cols()));
  for (int e : electrodes) h.value<std::int32_t>(e);
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) h.value(matrix(r, c));
  }
  return h.digest();
}

Eigen::VectorXd forward_map(const LeadField& lead_field, const Dipole& dipole) {
  return lead_field.response(dipole.location_index, dipole.moment);
}

void write_lead_field(std::ostream& os, const LeadField& lf) {
  binio::put_magic(os, "BAELFLD");
  binio::put<std::uint32_t>(os, 1);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(lf.reference));
  binio::put<std::uint64_t>(os, lf.electrode_count());
  binio::put<std::uint64_t>(os, lf.source_count());
  if (lf.electrodes.size() != lf.electrode_count()) throw ValidationError("electrode map does not match matrix rows");
  for (int e : lf.electrodes) binio::put<std::int32_t>(os, e);
  for (Eigen::Index r = 0; r < lf.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < lf.matrix.cols(); ++c) binio::put(os, lf.matrix(r, c));
  }
}

LeadField read_lead_field(std::istream& is) {
  binio::expect_magic(is, "BAELFLD");
  if (binio::get<std::uint32_t>(is) != 1) throw IoError("lead-field file: unsupported version");
  if (binio::get<std::uint32_t>(is) != 0) throw IoError("lead-field file: unknown reference tag");
  const auto m = binio::get<std::uint64_t>(is);
  const auto n = binio::get<std::uint64_t>(is);
  if (m == 0 || m > 100000 || n > 10000000) throw IoError("lead-field file: implausible dimensions");
  LeadField lf;
  lf.electrodes.resize(m);
  for (auto& e : lf.electrodes) e = binio::get<std::int32_t>(is);
  lf.matrix.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(2 * n));
  for (Eigen::Index r = 0; r < lf.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < lf.matrix.cols(); ++c) lf.matrix(r, c) = binio::get<double>(is);
  }
  return lf;
}

void save_lead_field(const std::string& path, const LeadField& lf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_lead_field(os, lf);
  if (!os) throw IoError("write failed: " + path);
}

LeadField load_lead_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_lead_field(is);
}

}  // namespace baeeeg
