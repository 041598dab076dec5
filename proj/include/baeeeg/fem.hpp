#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "baeeeg/headmesh.hpp"

namespace baeeeg {

/// Per-compartment conductivities in S/m.
struct ConductivityAssignment {
  double scalp = 0.43;
  double skull = 0.0085;
  double brain = 0.33;

  double of(Compartment c) const;
  void validate() const;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

/// P1 stiffness matrix K_ij = sum_e sigma_e * int grad(phi_i) . grad(phi_j).
SparseMatrix assemble_stiffness(const Mesh& mesh, const ConductivityAssignment& cond);

/// Local stiffness of one triangle with unit conductivity.
Eigen::Matrix3d local_stiffness(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c);

/// Average-referenced electrode load for electrode k: 1 - 1/m at electrode
/// k and -1/m at the other electrodes.
Eigen::VectorXd electrode_load(std::size_t node_count, std::span<const int> electrodes, std::size_t k);

/// Row k holds the zero-mean solution of K u = b_k (grounded at node 0 then
/// re-centred), so that T * b yields average-referenced electrode potentials
/// for any zero-sum load b.
Eigen::MatrixXd compute_transfer_matrix(const SparseMatrix& stiffness, std::span<const int> electrodes);

/// Grounded sparse Cholesky solve of the singular Neumann system. Loads must
/// sum to zero; the returned potential has zero nodal mean.
class NeumannSolver {
 public:
  explicit NeumannSolver(const SparseMatrix& stiffness);
  Eigen::VectorXd solve(const Eigen::VectorXd& load) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& loads) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Grid-bucketed point location on a triangle mesh.
class TriangleLocator {
 public:
  explicit TriangleLocator(const Mesh& mesh);
  /// Every element whose barycentric coordinates at x are all >= -tol.
  std::vector<std::size_t> containing(const Eigen::Vector2d& x, double tol) const;

 private:
  std::pair<int, int> cell_of(const Eigen::Vector2d& p) const;

  const Mesh* mesh_;
  Eigen::Vector2d lo_;
  double cell_ = 1.0;
  int cells_ = 1;
  std::vector<std::vector<std::size_t>> buckets_;
};

/// The dipole moment is spread uniformly over a disk around the source
/// point. Outside a homogeneous disk this is the same field as the point
/// dipole, while the FEM load no longer depends on where inside an element
/// the point falls. Radius = min(spacing_factor * mesh spacing,
/// clearance_factor * distance to the nearest compartment interface).
struct DipoleSpread {
  double spacing_factor = 1.0;
  double clearance_factor = 0.9;
  int rings = 4;

  static DipoleSpread point() { return {0.0, 0.0, 0}; }
};

/// Partial-integration dipole loads b_j = integral of grad(phi_j) . q over
/// the spread moment density. Columns 2i and 2i+1 hold unit x- and y-moments
/// at position i. Throws LocationError when a point is outside the mesh.
SparseMatrix dipole_loads(const Mesh& mesh, std::span<const Eigen::Vector2d> positions,
                          const DipoleSpread& spread = {});

enum class Reference : int { Average = 0 };

struct LeadField {
  Eigen::MatrixXd matrix;  ///< m x 2n, columns (2i, 2i+1) = unit x/y moments at source i
  std::vector<int> electrodes;
  Reference reference = Reference::Average;

  std::size_t electrode_count() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t source_count() const { return static_cast<std::size_t>(matrix.cols() / 2); }
  /// m x 2 block for source i.
  Eigen::MatrixXd block(std::size_t source) const { return matrix.middleCols(2 * source, 2); }
  /// Potentials of a radial (or any) dipole at source i with the given moment.
  Eigen::VectorXd response(std::size_t source, const Eigen::Vector2d& moment) const;
  /// FNV-1a digest of the dimensions and matrix bytes.
  std::uint64_t digest() const;
};

struct Dipole {
  std::size_t location_index = 0;
  Eigen::Vector2d moment = Eigen::Vector2d::Zero();
};

LeadField build_lead_field(const Mesh& mesh, const ConductivityAssignment& cond,
                           std::span<const Eigen::Vector2d> source_positions, std::span<const int> electrodes,
                           const DipoleSpread& spread = {});

/// Same lead field assembled by one Neumann solve per dipole column; used to
/// cross-check the reciprocity route.
LeadField build_lead_field_direct(const Mesh& mesh, const ConductivityAssignment& cond,
                                  std::span<const Eigen::Vector2d> source_positions, std::span<const int> electrodes,
                                  const DipoleSpread& spread = {});

Eigen::VectorXd forward_map(const LeadField& lead_field, const Dipole& dipole);

/// Subtracts the column means so every column sums to zero.
void average_reference(Eigen::MatrixXd& matrix);
void average_reference(Eigen::VectorXd& v);

// Binary lead-field container, little-endian:
//   offset 0   char[8]  magic "BAELFLD\0"
//   offset 8   uint32   version (1)
//   offset 12  uint32   reference (0 = average)
//   offset 16  uint64   m (electrodes)
//   offset 24  uint64   n (source locations)
//   offset 32  int32[m] electrode node indices
//   then       float64[m * 2n] matrix, row-major
void write_lead_field(std::ostream& os, const LeadField& lf);
LeadField read_lead_field(std::istream& is);
void save_lead_field(const std::string& path, const LeadField& lf);
LeadField load_lead_field(const std::string& path);

}  // namespace baeeeg
