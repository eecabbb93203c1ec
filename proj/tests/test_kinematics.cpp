#include <cstdlib>

#include "doctest.h"
#include "hop/kinematics.hpp"
#include "hop/rng.hpp"

using namespace hop;

namespace {

std::string data_dir() {
  const char* d = std::getenv("HOP_TEST_DATA");
  return d ? d : "data";
}

// Two unit links rotating about z in the xy plane.
KinematicChain planar_two_link() {
  JointSpec j1{"q1", -1, Vector3d::UnitZ(), RigidTransform::identity(), -M_PI, M_PI};
  JointSpec j2 = j1;
  j2.name = "q2";
  j2.parent_link = 0;
  j2.origin.translation = {1, 0, 0};
  LinkSpec l1{"l1", {{0, 0, 0}, {1, 0, 0}, 0.02}};
  LinkSpec l2{"l2", {{0, 0, 0}, {1, 0, 0}, 0.02}};
  return KinematicChain("planar2", {j1, j2}, {l1, l2});
}

KinematicChain random_chain(int dof, Rng& rng) {
  std::vector<JointSpec> joints;
  std::vector<LinkSpec> links;
  for (int i = 0; i < dof; ++i) {
    JointSpec j;
    j.name = "j" + std::to_string(i);
    j.parent_link = i - 1;  // serial
    Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    j.axis = axis.normalized();
    j.origin.translation = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                            rng.uniform(-0.2, 0.2)};
    j.origin.rotation = axis_angle(Vector3d(rng.normal(), rng.normal(), rng.normal())
                                       .normalized(),
                                   rng.uniform(-M_PI, M_PI));
    j.limit_lo = -2.5;
    j.limit_hi = 2.5;
    joints.push_back(j);
    links.push_back({"l" + std::to_string(i), {{0, 0, 0}, {0.1, 0, 0}, 0.02}});
  }
  return KinematicChain("random", joints, links);
}

Eigen::MatrixXd fd_jacobian(const KinematicChain& chain, const JointVector& q,
                            const std::vector<KeypointBinding>& bindings, double h) {
  Eigen::MatrixXd jac(3 * bindings.size(), chain.dof());
  for (int i = 0; i < chain.dof(); ++i) {
    JointVector qp = q, qm = q;
    qp[i] += h;
    qm[i] -= h;
    const auto pp = keypoint_positions(chain, qp, bindings);
    const auto pm = keypoint_positions(chain, qm, bindings);
    for (size_t k = 0; k < bindings.size(); ++k)
      jac.block<3, 1>(3 * k, i) = (pp[k] - pm[k]) / (2 * h);
  }
  return jac;
}

}  // namespace

TEST_CASE("single revolute joint loads with dof 1") {
  const char* doc = R"({"name":"one","joints":[
    {"name":"j","parent":-1,"axis":[0,0,1],
     "origin":{"pos":[0,0,0],"quat":[1,0,0,0]},"limits":[-3.14159,3.14159]}],
    "links":[{"name":"l","capsule":{"p0":[0,0,0],"p1":[0.1,0,0],"radius":0.02}}]})";
  const auto chain = load_chain_from_string(doc);
  CHECK(chain.dof() == 1);
  CHECK(chain.joints()[0].limit_hi == doctest::Approx(3.14159));
}

TEST_CASE("inverted limits are rejected") {
  const char* doc = R"({"name":"bad","joints":[
    {"name":"j","parent":-1,"axis":[0,0,1],
     "origin":{"pos":[0,0,0],"quat":[1,0,0,0]},"limits":[1.0,-1.0]}],
    "links":[{"name":"l","capsule":{"p0":[0,0,0],"p1":[0.1,0,0],"radius":0.02}}]})";
  CHECK_THROWS_WITH_AS(load_chain_from_string(doc),
                       doctest::Contains("inverted limits"), std::invalid_argument);
}

TEST_CASE("malformed documents and invalid graphs are rejected") {
  CHECK_THROWS_AS(load_chain_from_string("not json"), std::invalid_argument);
  // Non-unit axis must be rejected, not silently renormalized.
  const char* bad_axis = R"({"name":"bad","joints":[
    {"name":"j","parent":-1,"axis":[0,0,2],
     "origin":{"pos":[0,0,0],"quat":[1,0,0,0]},"limits":[-1,1]}],
    "links":[{"name":"l","capsule":{"p0":[0,0,0],"p1":[0.1,0,0],"radius":0.02}}]})";
  CHECK_THROWS_WITH_AS(load_chain_from_string(bad_axis), doctest::Contains("axis"),
                       std::invalid_argument);
  // Forward parent reference: not a tree rooted at the base.
  const char* bad_tree = R"({"name":"bad","joints":[
    {"name":"a","parent":1,"axis":[0,0,1],
     "origin":{"pos":[0,0,0],"quat":[1,0,0,0]},"limits":[-1,1]},
    {"name":"b","parent":-1,"axis":[0,0,1],
     "origin":{"pos":[0,0,0],"quat":[1,0,0,0]},"limits":[-1,1]}],
    "links":[{"name":"l1","capsule":{"p0":[0,0,0],"p1":[0.1,0,0],"radius":0.02}},
             {"name":"l2","capsule":{"p0":[0,0,0],"p1":[0.1,0,0],"radius":0.02}}]})";
  CHECK_THROWS_WITH_AS(load_chain_from_string(bad_tree), doctest::Contains("tree"),
                       std::invalid_argument);
}

TEST_CASE("bundled 23-DoF arm+hand spec loads") {
  const auto chain = load_chain(data_dir() + "/arm7_hand16.chain.json");
  CHECK(chain.dof() == 23);
  const auto arm = load_chain(data_dir() + "/arm7.chain.json");
  CHECK(arm.dof() == 7);
}

TEST_CASE("zero configuration composes joint origins") {
  const auto chain = load_chain(data_dir() + "/arm7.chain.json");
  const auto poses = chain.forward_kinematics(chain.rest_pose());
  RigidTransform expect = RigidTransform::identity();
  for (int i = 0; i < chain.dof(); ++i) {
    expect = expect * chain.joints()[i].origin;
    CHECK((poses[i].translation - expect.translation).norm() < 1e-12);
    CHECK((poses[i].rotation - expect.rotation).norm() < 1e-12);
  }
}

TEST_CASE("planar two-link matches the analytic formula") {
  const auto chain = planar_two_link();
  const std::vector<KeypointBinding> end = {{0, 1, {1, 0, 0}, 1.0}};

  JointVector q(2);
  q << M_PI / 2, 0;
  auto p = keypoint_positions(chain, q, end);
  CHECK(p[0].x() == doctest::Approx(0).epsilon(1e-12));
  CHECK(p[0].y() == doctest::Approx(2));

  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    q << rng.uniform(-M_PI, M_PI), rng.uniform(-M_PI, M_PI);
    p = keypoint_positions(chain, q, end);
    const double x = std::cos(q[0]) + std::cos(q[0] + q[1]);
    const double y = std::sin(q[0]) + std::sin(q[0] + q[1]);
    CHECK(std::abs(p[0].x() - x) < 1e-12);
    CHECK(std::abs(p[0].y() - y) < 1e-12);
    CHECK(std::abs(p[0].z()) < 1e-12);
  }
}

TEST_CASE("stacked z rotations compose angles") {
  const auto chain = planar_two_link();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    JointVector q(2);
    q << rng.uniform(-2, 2), rng.uniform(-2, 2);
    const auto poses = chain.forward_kinematics(q);
    const Matrix3d expect = axis_angle(Vector3d::UnitZ(), q[0] + q[1]);
    CHECK((poses[1].rotation - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("keypoints: base binding and identity rest pose") {
  const auto chain = planar_two_link();
  // Base-bound point never moves.
  const std::vector<KeypointBinding> base = {{0, -1, {0, 0, 0}, 1.0}};
  JointVector q(2);
  q << 1.1, -0.4;
  CHECK(keypoint_positions(chain, q, base)[0].norm() == 0.0);

  // First joint frame is identity at rest, so the offset passes through.
  const std::vector<KeypointBinding> l0 = {{0, 0, {0.1, 0, 0}, 1.0}};
  const auto p = keypoint_positions(chain, chain.rest_pose(), l0);
  CHECK((p[0] - Vector3d(0.1, 0, 0)).norm() < 1e-15);
}

TEST_CASE("keypoints equal link pose composed with offset") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto chain = random_chain(2 + int(rng.uniform_int(6)), rng);
    JointVector q(chain.dof());
    for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2, 2);
    const int link = int(rng.uniform_int(chain.dof()));
    const Vector3d offset(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                          rng.uniform(-0.2, 0.2));
    const std::vector<KeypointBinding> b = {{0, link, offset, 1.0}};
    const auto poses = chain.forward_kinematics(q);
    const Vector3d by_hand = poses[link].rotation * offset + poses[link].translation;
    CHECK((keypoint_positions(chain, q, b)[0] - by_hand).norm() < 1e-12);
  }
}

TEST_CASE("jacobian: base binding gives zero columns") {
  const auto chain = planar_two_link();
  const std::vector<KeypointBinding> base = {{0, -1, {0.5, 0.5, 0}, 1.0}};
  JointVector q(2);
  q << 0.3, 0.7;
  CHECK(keypoint_jacobian(chain, q, base).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian: single z joint, point at (1,0,0)") {
  JointSpec j{"j", -1, Vector3d::UnitZ(), RigidTransform::identity(), -M_PI, M_PI};
  LinkSpec l{"l", {{0, 0, 0}, {1, 0, 0}, 0.02}};
  const KinematicChain chain("one", {j}, {l});
  const std::vector<KeypointBinding> b = {{0, 0, {1, 0, 0}, 1.0}};
  const auto jac = keypoint_jacobian(chain, JointVector::Zero(1), b);
  CHECK((jac.col(0) - Vector3d(0, 1, 0)).norm() < 1e-15);
}

TEST_CASE("jacobian matches central finite differences") {
  Rng rng(23);
  double worst = 0.0;

  auto check_chain = [&](const KinematicChain& chain) {
    std::vector<KeypointBinding> bindings;
    for (int k = 0; k < 4; ++k)
      bindings.push_back({k, int(rng.uniform_int(chain.dof())),
                          Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                   rng.uniform(-0.1, 0.1)),
                          1.0});
    JointVector q(chain.dof());
    for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-2, 2);
    const auto jac = keypoint_jacobian(chain, q, bindings);
    const auto jac_fd = fd_jacobian(chain, q, bindings, 1e-6);
    for (Eigen::Index r = 0; r < jac.rows(); ++r)
      for (Eigen::Index c = 0; c < jac.cols(); ++c)
        worst = std::max(worst, std::abs(jac(r, c) - jac_fd(r, c)) /
                                    std::max(1.0, std::abs(jac_fd(r, c))));
  };

  for (int trial = 0; trial < 25; ++trial)
    check_chain(random_chain(2 + int(rng.uniform_int(10)), rng));
  const auto big = load_chain(data_dir() + "/arm7_hand16.chain.json");
  for (int trial = 0; trial < 25; ++trial) check_chain(big);
  CHECK(worst < 1e-5);
}

TEST_CASE("perturbing a joint only moves its descendants") {
  const auto chain = load_chain(data_dir() + "/arm7_hand16.chain.json");
  Rng rng(5);
  JointVector q(chain.dof());
  for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-1, 1);
  const auto base_poses = chain.forward_kinematics(q);
  for (int j = 0; j < chain.dof(); j += 3) {
    JointVector q2 = q;
    q2[j] += 0.1;
    const auto poses = chain.forward_kinematics(q2);
    for (int l = 0; l < chain.dof(); ++l) {
      const double moved =
          (poses[l].translation - base_poses[l].translation).norm() +
          (poses[l].rotation - base_poses[l].rotation).norm();
      if (chain.is_ancestor(j, l))
        continue;  // may move
      CHECK(moved == 0.0);
    }
  }
}

TEST_CASE("clamp to limits saturates and is idempotent") {
  const auto chain = load_chain(data_dir() + "/arm7.chain.json");
  Rng rng(9);
  JointVector inside(chain.dof());
  for (int i = 0; i < inside.size(); ++i)
    inside[i] = rng.uniform(chain.joints()[i].limit_lo, chain.joints()[i].limit_hi);
  CHECK((chain.clamp_to_limits(inside) - inside).norm() == 0.0);

  const JointVector above = chain.upper_limits().array() + 1.0;
  CHECK((chain.clamp_to_limits(above) - chain.upper_limits()).norm() == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    JointVector q(chain.dof());
    for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-6, 6);
    const auto once = chain.clamp_to_limits(q);
    CHECK((chain.clamp_to_limits(once) - once).norm() == 0.0);
    CHECK(chain.within_limits(once));
  }
}

TEST_CASE("forward kinematics is deterministic") {
  const auto chain = load_chain(data_dir() + "/arm7_hand16.chain.json");
  Rng rng(31);
  JointVector q(chain.dof());
  for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-1, 1);
  const auto a = chain.forward_kinematics(q);
  const auto b = chain.forward_kinematics(q);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].translation == b[i].translation);
    CHECK(a[i].rotation == b[i].rotation);
  }
}

TEST_CASE("chain serialization round-trips") {
  const auto chain = load_chain(data_dir() + "/arm7_hand16.chain.json");
  const auto again = load_chain_from_string(chain_to_json(chain));
  CHECK(again.dof() == chain.dof());
  Rng rng(1);
  JointVector q(chain.dof());
  for (int i = 0; i < q.size(); ++i) q[i] = rng.uniform(-1, 1);
  const auto pa = chain.forward_kinematics(q);
  const auto pb = again.forward_kinematics(q);
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i].translation - pb[i].translation).norm() < 1e-12);
}
