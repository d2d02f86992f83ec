#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mhng/model.hpp"

namespace mhng {

inline constexpr int kEventSchemaVersion = 1;

/// One naming interaction. Serialized as one JSON object per line; field
/// names match the members below.
struct GameEvent {
  std::size_t step = 0;   // 1-based
  std::size_t round = 0;  // 1-based
  std::size_t object = 0;
  std::string speaker_id;
  std::string listener_id;
  Label proposed_sign = 0;
  Label speaker_sign = 0;
  Label listener_prior_sign = 0;
  /// Listener-side MH acceptance probability, present even when the strategy
  /// ignores it. Empty only for human listeners before offline inference.
  std::optional<double> mh_probability;
  std::string mh_note;  // non-empty for numerical edge cases or a missing r
  bool accepted = false;
  std::string decision_source;  // "MH", "AA", "AR", "LB", "human"
  std::int64_t timestamp_ms = 0;
  std::uint64_t post_state_digest = 0;
  // Post-interaction snapshots keyed by agent id order (speaker/listener
  // independent): first = side "a", second = side "b".
  Labels post_categories_a;
  Labels post_signs_a;
  Labels post_categories_b;
  Labels post_signs_b;

  /// Sign held after the interaction by the agent with the given id, for the
  /// interaction's object.
  Label held_sign(const std::string& agent_id) const;
};

void to_json(nlohmann::json& j, const GameEvent& e);
void from_json(const nlohmann::json& j, GameEvent& e);

std::string digest_hex(std::uint64_t digest);
std::uint64_t parse_digest_hex(const std::string& hex);

/// Writes one JSON object per line, each carrying `schema_version`.
void write_event_log(std::ostream& out, const std::vector<GameEvent>& events);
/// Parses a JSONL event log; throws ShapeError on schema violations
/// (unknown version, missing fields, out-of-range probabilities).
std::vector<GameEvent> read_event_log(std::istream& in);
/// Validates one JSON record against the event schema.
void validate_event_json(const nlohmann::json& j);

}  // namespace mhng
