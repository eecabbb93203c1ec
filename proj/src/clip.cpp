#include "hop/clip.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hop {

using nlohmann::json;

void HandObjectClip::validate() const {
  if (!(fps > 0)) throw std::invalid_argument("clip fps must be > 0");
  if (frames.empty()) throw std::invalid_argument("empty clip");
  const auto k = frames.front().hand_keypoints.rows();
  const auto p = frames.front().object_points ? frames.front().object_points->rows()
                                              : Eigen::Index(-1);
  for (const auto& f : frames) {
    if (f.hand_keypoints.rows() != k)
      throw std::invalid_argument("clip frames disagree on keypoint count");
    const auto fp = f.object_points ? f.object_points->rows() : Eigen::Index(-1);
    if (fp != p)
      throw std::invalid_argument("clip frames disagree on object point count");
    if (!f.hand_keypoints.allFinite() || !f.object_pose.is_finite())
      throw std::invalid_argument("clip contains non-finite coordinates");
    if (f.hand_keypoints.cwiseAbs().maxCoeff() > 3.0)
      throw std::invalid_argument("hand keypoints outside the 3 m working cube");
  }
}

namespace {

Vector3d get_vec3(const json& j) {
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

RigidTransform get_pose(const json& j) {
  const auto& q = j.at("quat");
  return RigidTransform::from_quat(get_vec3(j.at("pos")), q[0].get<double>(),
                                   q[1].get<double>(), q[2].get<double>(),
                                   q[3].get<double>());
}

Eigen::Matrix<double, Eigen::Dynamic, 3> get_points(const json& j) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(j.size(), 3);
  for (size_t i = 0; i < j.size(); ++i)
    pts.row(static_cast<Eigen::Index>(i)) = get_vec3(j[i]).transpose();
  return pts;
}

json points_to_json(const Eigen::Matrix<double, Eigen::Dynamic, 3>& pts) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    arr.push_back({pts(i, 0), pts(i, 1), pts(i, 2)});
  return arr;
}

}  // namespace

HandObjectClip load_clip_from_string(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("clip is not valid JSON: ") + e.what());
  }

  HandObjectClip clip;
  clip.fps = doc.at("fps").get<double>();

  // Optional fixed rigid transform from the clip frame to the robot base.
  RigidTransform base_from_clip = RigidTransform::identity();
  if (doc.contains("meta")) {
    clip.source = doc.at("meta").value("source", std::string());
    if (doc.at("meta").contains("base_from_clip"))
      base_from_clip = get_pose(doc.at("meta").at("base_from_clip"));
  }

  for (const auto& fj : doc.at("frames")) {
    ClipFrame frame;
    frame.hand_keypoints = get_points(fj.at("hand_keypoints"));
    for (Eigen::Index i = 0; i < frame.hand_keypoints.rows(); ++i)
      frame.hand_keypoints.row(i) =
          base_from_clip.apply(frame.hand_keypoints.row(i).transpose()).transpose();
    frame.object_pose = base_from_clip * get_pose(fj.at("object_pose"));
    if (fj.contains("object_points"))
      frame.object_points = get_points(fj.at("object_points"));
    clip.frames.push_back(std::move(frame));
  }
  clip.validate();
  return clip;
}

HandObjectClip load_clip(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open clip file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_clip_from_string(ss.str());
}

std::string clip_to_json(const HandObjectClip& clip) {
  json doc;
  doc["fps"] = clip.fps;
  doc["meta"] = {{"source", clip.source}};
  doc["frames"] = json::array();
  for (const auto& f : clip.frames) {
    json fj;
    fj["hand_keypoints"] = points_to_json(f.hand_keypoints);
    const auto q = f.object_pose.quat_wxyz();
    fj["object_pose"] = {
        {"pos",
         {f.object_pose.translation.x(), f.object_pose.translation.y(),
          f.object_pose.translation.z()}},
        {"quat", {q[0], q[1], q[2], q[3]}}};
    if (f.object_points) fj["object_points"] = points_to_json(*f.object_points);
    doc["frames"].push_back(std::move(fj));
  }
  return doc.dump();
}

void save_clip(const HandObjectClip& clip, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write clip file: " + path);
  out << clip_to_json(clip);
}

}  // namespace hop
