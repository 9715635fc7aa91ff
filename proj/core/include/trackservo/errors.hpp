#pragma once

#include <stdexcept>
#include <string>

namespace trackservo {

// Error families map to distinct CLI exit codes; see tools/main.cpp.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ExecError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& msg) : Error("IoError", msg) {}
};

#define TRACKSERVO_ERROR(Name, Family)                           \
  class Name : public Family {                                   \
   public:                                                       \
    explicit Name(const std::string& msg) : Family(#Name, msg) {} \
  }

TRACKSERVO_ERROR(BehindCamera, ExecError);
TRACKSERVO_ERROR(DegenerateTranslation, ExecError);
TRACKSERVO_ERROR(DegenerateRotation, ExecError);
TRACKSERVO_ERROR(InvalidConfig, DataError);
TRACKSERVO_ERROR(UnknownPointId, DataError);
TRACKSERVO_ERROR(InvalidScript, DataError);
TRACKSERVO_ERROR(NoUsablePoints, ExecError);
TRACKSERVO_ERROR(NoComparableDemo, ExecError);
TRACKSERVO_ERROR(PointNeverVisible, DataError);
TRACKSERVO_ERROR(ZeroMotionSegment, DataError);
TRACKSERVO_ERROR(NeverVisiblePoint, DataError);
TRACKSERVO_ERROR(NumericalOverflow, ExecError);
TRACKSERVO_ERROR(DivergedOptimization, ExecError);
TRACKSERVO_ERROR(EmptyCandidates, DataError);
TRACKSERVO_ERROR(NoClusterSelected, DataError);
TRACKSERVO_ERROR(EmptyAfterCleanup, DataError);
TRACKSERVO_ERROR(InconsistentDemos, DataError);
TRACKSERVO_ERROR(StepLimitExceeded, ExecError);
TRACKSERVO_ERROR(MismatchedTracks, DataError);
TRACKSERVO_ERROR(ContextShapeMismatch, DataError);

#undef TRACKSERVO_ERROR

}  // namespace trackservo
