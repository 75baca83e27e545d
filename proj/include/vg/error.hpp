#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vg {

enum class Errc {
  // geometry
  NonPositiveDepth,
  PixelOutOfBounds,
  DegenerateProjection,
  MaskShapeMismatch,
  // pointcloud
  EmptyCloud,
  TooFewPoints,
  NoCluster,
  IoFailure,
  MalformedPly,
  // scene_store
  MissingManifest,
  NoValidFrames,
  UnsupportedDepthFormat,
  EmptySpec,
  InvalidSpec,
  // semantic tools
  MalformedToolOutput,
  ChatUnavailable,
  DetectorUnavailable,
  SegmenterUnavailable,
  NoInstances,
  NoMatch,
  Timeout,
  ProtocolError,
  ReplayExhausted,
  // expansion
  NonFiniteCentroid,
  // agent
  ActionParseError,
  UnknownTool,
  ArgumentValidation,
  PlannerUnavailable,
  StepBudget,
  InvalidConfig,
};

constexpr std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::NonPositiveDepth: return "NonPositiveDepth";
    case Errc::PixelOutOfBounds: return "PixelOutOfBounds";
    case Errc::DegenerateProjection: return "DegenerateProjection";
    case Errc::MaskShapeMismatch: return "MaskShapeMismatch";
    case Errc::EmptyCloud: return "EmptyCloud";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::NoCluster: return "NoCluster";
    case Errc::IoFailure: return "IoFailure";
    case Errc::MalformedPly: return "MalformedPly";
    case Errc::MissingManifest: return "MissingManifest";
    case Errc::NoValidFrames: return "NoValidFrames";
    case Errc::UnsupportedDepthFormat: return "UnsupportedDepthFormat";
    case Errc::EmptySpec: return "EmptySpec";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::MalformedToolOutput: return "MalformedToolOutput";
    case Errc::ChatUnavailable: return "ChatUnavailable";
    case Errc::DetectorUnavailable: return "DetectorUnavailable";
    case Errc::SegmenterUnavailable: return "SegmenterUnavailable";
    case Errc::NoInstances: return "NoInstances";
    case Errc::NoMatch: return "NoMatch";
    case Errc::Timeout: return "Timeout";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::ReplayExhausted: return "ReplayExhausted";
    case Errc::NonFiniteCentroid: return "NonFiniteCentroid";
    case Errc::ActionParseError: return "ActionParseError";
    case Errc::UnknownTool: return "UnknownTool";
    case Errc::ArgumentValidation: return "ArgumentValidation";
    case Errc::PlannerUnavailable: return "PlannerUnavailable";
    case Errc::StepBudget: return "StepBudget";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

// Every failure in the library is reported as a vg::Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

  // Extra numeric detail, e.g. the HTTP status for ProtocolError.
  int status() const noexcept { return status_; }
  Error& with_status(int s) noexcept {
    status_ = s;
    return *this;
  }

 private:
  Errc code_;
  int status_ = 0;
};

}  // namespace vg
