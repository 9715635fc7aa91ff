#pragma once

#include <string>

#include "trackservo/clustering.hpp"
#include "trackservo/plan.hpp"
#include "trackservo/scene.hpp"

namespace trackservo {

// Versioned structured-text formats. Floats are printed with %.17g so a
// write/read round trip is exact and identical inputs serialize
// byte-for-byte.

std::string tracks_to_string(const TrackSet& tracks);
std::string demo_to_string(const Demo& demo);
std::string scene_to_string(const RigidScene& scene);
std::string cluster_model_to_string(const ClusterModel& model);
std::string plan_to_string(const MotionPlan& plan);
std::string report_to_string(const ExecutionReport& report);

TrackSet tracks_from_stream(std::istream& in);
Demo demo_from_string(const std::string& text);
RigidScene scene_from_string(const std::string& text);
ClusterModel cluster_model_from_string(const std::string& text);
MotionPlan plan_from_string(const std::string& text);

void save_text(const std::string& path, const std::string& text);
std::string load_text(const std::string& path);

void save_demo(const std::string& path, const Demo& demo);
Demo load_demo(const std::string& path);
void save_scene(const std::string& path, const RigidScene& scene);
RigidScene load_scene(const std::string& path);
void save_plan(const std::string& path, const MotionPlan& plan);
MotionPlan load_plan(const std::string& path);

}  // namespace trackservo
