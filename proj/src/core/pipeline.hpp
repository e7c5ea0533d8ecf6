#pragma once
// Stage orchestration shared by the C API and the CLI. Every stage takes a
// flat JSON config (keys mirror the CLI long options with '-' -> '_'),
// writes its artifacts plus a manifest under work_dir and returns a summary.

#include <string>
#include <vector>

#include "core/common.hpp"

namespace clonefuse::pipeline {

inline constexpr const char* kVersion = "0.1.0";

const std::vector<std::string>& stage_names();

// Throws Error(Usage) for unknown stages, missing required options or
// missing input files; other codes for pipeline failures.
json run_stage(const std::string& stage, const json& config);

}  // namespace clonefuse::pipeline
