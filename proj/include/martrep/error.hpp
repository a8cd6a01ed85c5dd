#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace martrep {

/// Failure kinds surfaced by library operations. Expected negative outcomes
/// (an unhedgeable claim, a non-representable martingale) are returned as
/// values, not thrown; these codes cover contract violations and bad input.
enum class Errc {
  parse_error,
  invariant_error,
  zero_mass_node,
  infeasible,
  no_esmm,
  not_martingale_measure,
  bad_density,
  bad_ladder,
  mismatched_piece,
  no_subsequence,
  schedule_violation,
  non_convergent,
  not_psd,
  not_symmetric,
  invalid_witness,
  not_equivalent,
  bad_range,
  bad_params,
  oversize,
  io_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::parse_error: return "ParseError";
    case Errc::invariant_error: return "InvariantError";
    case Errc::zero_mass_node: return "ZeroMassNode";
    case Errc::infeasible: return "Infeasible";
    case Errc::no_esmm: return "NoEsmm";
    case Errc::not_martingale_measure: return "NotMartingaleMeasure";
    case Errc::bad_density: return "BadDensity";
    case Errc::bad_ladder: return "BadLadder";
    case Errc::mismatched_piece: return "MismatchedPiece";
    case Errc::no_subsequence: return "NoSubsequence";
    case Errc::schedule_violation: return "ScheduleViolation";
    case Errc::non_convergent: return "NonConvergent";
    case Errc::not_psd: return "NotPSD";
    case Errc::not_symmetric: return "NotSymmetric";
    case Errc::invalid_witness: return "InvalidWitness";
    case Errc::not_equivalent: return "NotEquivalent";
    case Errc::bad_range: return "BadRange";
    case Errc::bad_params: return "BadParams";
    case Errc::oversize: return "Oversize";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::string node_id = {})
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        node_(std::move(node_id)) {}

  Errc code() const { return code_; }
  /// Offending node id, when the failure is localized to one node.
  const std::string& node() const { return node_; }

 private:
  Errc code_;
  std::string node_;
};

}  // namespace martrep
