#include "podnn/common.hpp"

namespace podnn {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidModel: return "invalid_model";
    case ErrorKind::NumericInput: return "numeric_input";
    case ErrorKind::Stiffness: return "stiffness";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::TrainingDivergence: return "training_divergence";
    case ErrorKind::RolloutBlowUp: return "rollout_blow_up";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Provenance: return "provenance";
    case ErrorKind::MissingInput: return "missing_input";
    case ErrorKind::DivisionGuard: return "division_guard";
    case ErrorKind::EmptyReport: return "empty_report";
  }
  return "unknown";
}

}  // namespace podnn
