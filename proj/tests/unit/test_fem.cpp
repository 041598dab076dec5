#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "baeeeg/errors.hpp"
#include "baeeeg/fem.hpp"
#include "disk_series.hpp"
#include "support.hpp"

using namespace baeeeg;
using testsupport::geometry;
using testsupport::mesh_of;
using testsupport::relative_error;

namespace {

constexpr double kPi = std::numbers::pi;

oracle::DiskModel disk(const ConductivityAssignment& c) {
  const HeadGeometry& g = geometry();
  return {g.r_brain, g.r_skull, g.r_scalp, c.brain, c.skull, c.scalp};
}

std::vector<double> electrode_angles(const Mesh& mesh, const std::vector<int>& electrodes) {
  std::vector<double> angles;
  for (int e : electrodes) {
    const Eigen::Vector2d& p = mesh.nodes[static_cast<std::size_t>(e)];
    angles.push_back(std::atan2(p.y(), p.x()));
  }
  return angles;
}

// Average-referenced oracle potentials at the electrode nodes.
Eigen::VectorXd oracle_response(const Mesh& mesh, const std::vector<int>& electrodes, const ConductivityAssignment& c,
                                const Eigen::Vector2d& pos, const Eigen::Vector2d& moment) {
  const std::vector<double> v = oracle::scalp_potentials(disk(c), pos, moment, electrode_angles(mesh, electrodes));
  Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  average_reference(out);
  return out;
}

std::vector<Eigen::Vector2d> radial_test_positions() {
  std::vector<Eigen::Vector2d> out;
  const double radii[] = {0.030, 0.050, 0.062, 0.068, 0.072};
  const double angles[] = {0.3, 1.9, 3.7, 5.2, 2.6};
  for (int k = 0; k < 5; ++k) out.emplace_back(radii[k] * std::cos(angles[k]), radii[k] * std::sin(angles[k]));
  return out;
}

}  // namespace

TEST_CASE("local stiffness of the unit right triangle") {
  const Eigen::Matrix3d k = local_stiffness({0, 0}, {1, 0}, {0, 1});
  Eigen::Matrix3d expected;
  expected << 1, -0.5, -0.5, -0.5, 0.5, 0, -0.5, 0, 0.5;
  CHECK((k - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("local stiffness is invariant under translation, rotation and scaling") {
  const Eigen::Vector2d a(0.1, 0.2), b(0.5, 0.25), c(0.2, 0.7);
  const Eigen::Matrix3d k = local_stiffness(a, b, c);
  const double t = 0.7;
  const Eigen::Matrix2d rot = (Eigen::Matrix2d() << std::cos(t), -std::sin(t), std::sin(t), std::cos(t)).finished();
  const Eigen::Vector2d shift(3, -1);
  const Eigen::Matrix3d k2 = local_stiffness(3.0 * rot * a + shift, 3.0 * rot * b + shift, 3.0 * rot * c + shift);
  CHECK((k - k2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(k.rowwise().sum().cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(local_stiffness(a, c, b), AssemblyError);
}

TEST_CASE("stiffness matrix is symmetric with constants in its kernel") {
  const Mesh& m = mesh_of(500);
  const SparseMatrix k = assemble_stiffness(m, {});
  const Eigen::MatrixXd dense(k);
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-14 * dense.cwiseAbs().maxCoeff());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k.rows());
  CHECK((k * ones).cwiseAbs().maxCoeff() < 1e-12 * dense.cwiseAbs().maxCoeff());
  // Energy of a linear field x: sum over elements of sigma * area.
  Eigen::VectorXd x(k.rows());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = m.nodes[static_cast<std::size_t>(i)].x();
  const ConductivityAssignment c;
  const double expected = c.brain * m.compartment_area(Compartment::Brain) +
                          c.skull * m.compartment_area(Compartment::Skull) +
                          c.scalp * m.compartment_area(Compartment::Scalp);
  CHECK(x.dot(k * x) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("non-positive conductivities are rejected") {
  ConductivityAssignment c;
  c.skull = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_THROWS_AS(assemble_stiffness(mesh_of(150), c), ValidationError);
}

TEST_CASE("electrode loads are zero-sum with the average-reference pattern") {
  const std::vector<int> e{3, 7, 11, 20};
  const Eigen::VectorXd b = electrode_load(30, e, 1);
  CHECK(std::abs(b.sum()) < 1e-15);
  CHECK(b(7) == doctest::Approx(0.75));
  CHECK(b(3) == doctest::Approx(-0.25));
  CHECK(b(0) == 0.0);
}

TEST_CASE("Neumann solver returns the zero-mean solution") {
  const Mesh& m = mesh_of(300);
  const SparseMatrix k = assemble_stiffness(m, {});
  const NeumannSolver solver(k);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(k.rows());
  b(10) = 1.0;
  b(200) = -1.0;
  const Eigen::VectorXd u = solver.solve(b);
  CHECK(std::abs(u.mean()) < 1e-12 * u.cwiseAbs().maxCoeff());
  CHECK((k * u - b).norm() < 1e-9 * b.norm());
  CHECK_THROWS_AS(solver.solve(Eigen::VectorXd(Eigen::VectorXd::Zero(5))), ValidationError);
}

TEST_CASE("transfer matrix matches a dense pseudo-inverse oracle") {
  const Mesh& m = mesh_of(150);
  const ConductivityAssignment c;
  const SparseMatrix k = assemble_stiffness(m, c);
  const std::vector<int> electrodes = place_electrodes(m, 8);
  const Eigen::MatrixXd t = compute_transfer_matrix(k, electrodes);

  const Eigen::MatrixXd pinv = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(Eigen::MatrixXd(k)).pseudoInverse();
  const auto n = static_cast<std::size_t>(k.rows());
  for (std::size_t e = 0; e < electrodes.size(); ++e) {
    const Eigen::VectorXd expected = pinv * electrode_load(n, electrodes, e);
    CHECK(relative_error(t.row(static_cast<Eigen::Index>(e)).transpose(), expected) < 1e-8);
  }

  // For any zero-sum load, T b equals the average-referenced electrode potentials.
  Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(k.rows(), -1.0, 2.0);
  b.array() -= b.mean();
  const Eigen::VectorXd u = pinv * b;
  Eigen::VectorXd at_electrodes(static_cast<Eigen::Index>(electrodes.size()));
  for (std::size_t e = 0; e < electrodes.size(); ++e) at_electrodes(static_cast<Eigen::Index>(e)) = u(electrodes[e]);
  average_reference(at_electrodes);
  CHECK(relative_error(t * b, at_electrodes) < 1e-8);

  const std::vector<int> bad{0, static_cast<int>(n)};
  CHECK_THROWS_AS(compute_transfer_matrix(k, bad), ValidationError);
}

TEST_CASE("dipole loads integrate linear fields exactly") {
  const Mesh& m = mesh_of(500);
  const std::vector<Eigen::Vector2d> pos{{0.01, 0.02}, {0.065, -0.01}, {-0.04, 0.05}};
  for (const DipoleSpread& spread : {DipoleSpread{}, DipoleSpread::point()}) {
    const Eigen::MatrixXd loads(dipole_loads(m, pos, spread));
    const Eigen::Vector2d g(1.5, -0.7);
    Eigen::VectorXd f(loads.rows());
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = g.dot(m.nodes[static_cast<std::size_t>(i)]) + 3.0;
    for (Eigen::Index col = 0; col < loads.cols(); ++col) {
      CHECK(std::abs(loads.col(col).sum()) < 1e-9);
      CHECK(f.dot(loads.col(col)) == doctest::Approx(g(col % 2)).epsilon(1e-10));
    }
  }
}

TEST_CASE("dipoles outside the mesh are rejected") {
  const Mesh& m = mesh_of(300);
  const std::vector<Eigen::Vector2d> outside{{0.1, 0.0}};
  CHECK_THROWS_AS(dipole_loads(m, outside), LocationError);
}

TEST_CASE("triangle locator finds every centroid") {
  const Mesh& m = mesh_of(500);
  const TriangleLocator loc(m);
  for (std::size_t e = 0; e < m.triangle_count(); e += 7) {
    const auto& t = m.triangles[e];
    const Eigen::Vector2d c = (m.nodes[t[0]] + m.nodes[t[1]] + m.nodes[t[2]]) / 3.0;
    const auto hits = loc.containing(c, 1e-12);
    REQUIRE(hits.size() == 1);
    CHECK(hits.front() == e);
  }
  CHECK(loc.containing({0.2, 0.2}, 1e-12).empty());
}

TEST_CASE("reciprocity route equals direct solves") {
  const Mesh& m = mesh_of(800);
  const std::vector<int> e = place_electrodes(m, 32);
  const SourceSpace s = build_source_space(m, geometry());
  const ConductivityAssignment c;
  const LeadField a = build_lead_field(m, c, s.positions, e);
  const LeadField b = build_lead_field_direct(m, c, s.positions, e);
  REQUIRE(a.matrix.rows() == 32);
  REQUIRE(a.matrix.cols() == static_cast<Eigen::Index>(2 * s.size()));
  CHECK((a.matrix - b.matrix).cwiseAbs().maxCoeff() <= 1e-8 * b.matrix.cwiseAbs().maxCoeff());
  CHECK(a.matrix.colwise().sum().cwiseAbs().maxCoeff() < 1e-12 * a.matrix.cwiseAbs().maxCoeff());
}

TEST_CASE("a dipole at the centre gives mirror-antisymmetric potentials") {
  const Mesh& m = mesh_of(1780);
  const std::vector<int> e = place_electrodes(m, 32);
  const std::vector<Eigen::Vector2d> centre{{0.0, 0.0}};
  const LeadField lf = build_lead_field(m, {}, centre, e);
  const Eigen::VectorXd v = lf.response(0, {1.0, 0.0});
  // Electrode k sits at 2 pi k / 32, its mirror pi - theta at index 16 - k.
  for (int k = 0; k < 32; ++k) {
    const int mirror = ((16 - k) % 32 + 32) % 32;
    CHECK(v(k) == doctest::Approx(-v(mirror)).epsilon(1e-9).scale(v.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("lead field scales inversely with a global conductivity factor") {
  const Mesh& m = mesh_of(300);
  const std::vector<int> e = place_electrodes(m, 32);
  const std::vector<Eigen::Vector2d> pos{{0.05, 0.03}};
  const ConductivityAssignment c;
  const ConductivityAssignment c3{3 * c.scalp, 3 * c.skull, 3 * c.brain};
  const LeadField a = build_lead_field(m, c, pos, e);
  const LeadField b = build_lead_field(m, c3, pos, e);
  CHECK(relative_error(3.0 * b.matrix, a.matrix) < 1e-10);
}

TEST_CASE("forward map is linear in the moment") {
  const testsupport::SmallModel& sm = testsupport::small_model();
  const Eigen::Vector2d q(0.3, -1.2);
  const Eigen::VectorXd v = forward_map(sm.standard, Dipole{2, q});
  CHECK(relative_error(v, q.x() * sm.standard.matrix.col(4) + q.y() * sm.standard.matrix.col(5)) < 1e-14);
  CHECK_THROWS_AS(sm.standard.response(sm.standard.source_count(), q), ValidationError);
}

TEST_CASE("oracle: homogeneous FEM matches the free-space doubling rule") {
  const Mesh& m = mesh_of(2518);
  const std::vector<int> e = place_electrodes(m, 32);
  const ConductivityAssignment homogeneous{0.33, 0.33, 0.33};
  const Eigen::Vector2d pos(0.04, 0.02);
  const std::vector<Eigen::Vector2d> p{pos};
  const Eigen::VectorXd fem = build_lead_field(m, homogeneous, p, e).response(0, pos.normalized());
  Eigen::VectorXd expected(32);
  for (int k = 0; k < 32; ++k) {
    expected(k) = 2.0 * oracle::free_space_potential(0.33, pos, pos.normalized(), m.nodes[static_cast<std::size_t>(e[k])]);
  }
  average_reference(expected);
  CHECK(relative_error(fem, expected) < 0.01);
}

TEST_CASE("FEM matches the layered-disk series within 2% at forward resolution") {
  const Mesh& m = mesh_of(2518);
  const std::vector<int> e = place_electrodes(m, 32);
  for (double skull : {0.0055, 0.0073, 0.011}) {
    const ConductivityAssignment c{0.43, skull, 0.33};
    const auto pos = radial_test_positions();
    const LeadField lf = build_lead_field(m, c, pos, e);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const Eigen::Vector2d dir = pos[i].normalized();
      const double err = relative_error(lf.response(i, dir), oracle_response(m, e, c, pos[i], dir));
      CHECK_MESSAGE(err < 0.02, "skull " << skull << " source " << i << " error " << err);
    }
    // Tangential dipoles too.
    const Eigen::Vector2d tang(-pos[2].y(), pos[2].x());
    CHECK(relative_error(lf.response(2, tang.normalized()), oracle_response(m, e, c, pos[2], tang.normalized())) <
          0.02);
  }
}

TEST_CASE("stacked FEM error decreases under refinement") {
  const ConductivityAssignment c{0.43, 0.0073, 0.33};
  const auto pos = radial_test_positions();
  double previous = 1.0;
  for (int target : {600, 1200, 2518}) {
    const Mesh& m = mesh_of(target);
    const std::vector<int> e = place_electrodes(m, 32);
    const LeadField lf = build_lead_field(m, c, pos, e);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const Eigen::Vector2d dir = pos[i].normalized();
      const Eigen::VectorXd ref = oracle_response(m, e, c, pos[i], dir);
      num += (lf.response(i, dir) - ref).squaredNorm();
      den += ref.squaredNorm();
    }
    const double err = std::sqrt(num / den);
    MESSAGE("target " << target << " stacked error " << err);
    CHECK(err < previous);
    previous = err;
  }
}

TEST_CASE("lead-field binary round trip and digest") {
  const LeadField& lf = testsupport::small_model().standard;
  std::stringstream ss;
  write_lead_field(ss, lf);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 32 + 4 * lf.electrode_count() + 8 * static_cast<std::size_t>(lf.matrix.size()));
  CHECK(bytes.substr(0, 7) == "BAELFLD");
  const LeadField r = read_lead_field(ss);
  CHECK(r.matrix == lf.matrix);
  CHECK(r.electrodes == lf.electrodes);
  CHECK(r.digest() == lf.digest());

  LeadField changed = lf;
  changed.matrix(0, 0) = std::nextafter(changed.matrix(0, 0), 1.0);
  CHECK(changed.digest() != lf.digest());

  std::stringstream bad("NOTLFLD\0garbage");
  CHECK_THROWS_AS(read_lead_field(bad), IoError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_lead_field(truncated), IoError);
}
