#pragma once

#include <cstddef>
#include <string>

#include "json.hpp"
#include "lanepilot/common/error.hpp"

namespace lanepilot::eval {

// Every intervention is charged this many seconds, whatever its real span.
inline constexpr double kInterventionSeconds = 5.0;

// Autonomy percentage: (1 - n * 5 s / elapsed) * 100. Not clamped; it goes
// negative when interventions outweigh the elapsed time.
inline double compute_autonomy(std::size_t n_interventions, double elapsed_s) {
  if (!(elapsed_s > 0.0)) throw ConfigError("compute_autonomy: elapsed time must be positive");
  return (1.0 - static_cast<double>(n_interventions) * kInterventionSeconds / elapsed_s) * 100.0;
}

enum class InterventionSource { Human, Oracle };

inline const char* to_string(InterventionSource s) { return s == InterventionSource::Human ? "human" : "oracle"; }

struct InterventionRecord {
  double start = 0.0;                       // simulation time, s
  double duration = kInterventionSeconds;   // charged time, always 5 s
  InterventionSource source = InterventionSource::Oracle;
  std::string trigger;
  double actual_span = kInterventionSeconds;  // observed control span (human takeovers vary)
};

struct AutonomyReport {
  double autonomy = 100.0;
  std::size_t interventions = 0;
  double elapsed = 0.0;
  double distance = 0.0;
  std::size_t collisions = 0;

  bool negative() const { return autonomy < 0.0; }

  nlohmann::json to_json() const {
    return {{"autonomy", autonomy},
            {"interventions", interventions},
            {"elapsed_s", elapsed},
            {"distance_m", distance},
            {"collisions", collisions}};
  }
};

}  // namespace lanepilot::eval
