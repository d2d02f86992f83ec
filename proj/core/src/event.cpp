#include "mhng/event.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "mhng/errors.hpp"

namespace mhng {

Label GameEvent::held_sign(const std::string& agent_id) const {
  if (agent_id == listener_id) return accepted ? proposed_sign : listener_prior_sign;
  if (agent_id == speaker_id) return speaker_sign;
  throw ShapeError("GameEvent: unknown agent id '" + agent_id + "'");
}

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

std::uint64_t parse_digest_hex(const std::string& hex) {
  if (hex.size() != 16) throw ShapeError("digest must be 16 hex characters");
  return std::stoull(hex, nullptr, 16);
}

void to_json(nlohmann::json& j, const GameEvent& e) {
  j = nlohmann::json{{"schema_version", kEventSchemaVersion},
                     {"step", e.step},
                     {"round", e.round},
                     {"object", e.object},
                     {"speaker_id", e.speaker_id},
                     {"listener_id", e.listener_id},
                     {"proposed_sign", e.proposed_sign},
                     {"speaker_sign", e.speaker_sign},
                     {"listener_prior_sign", e.listener_prior_sign},
                     {"mh_probability", nullptr},
                     {"decision", e.accepted},
                     {"decision_source", e.decision_source},
                     {"timestamp", e.timestamp_ms},
                     {"post_state_digest", digest_hex(e.post_state_digest)},
                     {"post_categories", {{"a", e.post_categories_a}, {"b", e.post_categories_b}}},
                     {"post_signs", {{"a", e.post_signs_a}, {"b", e.post_signs_b}}}};
  if (e.mh_probability) j["mh_probability"] = *e.mh_probability;
  if (!e.mh_note.empty()) j["mh_note"] = e.mh_note;
}

void validate_event_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ShapeError("event: record is not a JSON object");
  if (!j.contains("schema_version") || j.at("schema_version") != kEventSchemaVersion) {
    throw ShapeError("event: unsupported or missing schema_version");
  }
  for (const char* key : {"step", "round", "object", "proposed_sign", "speaker_sign", "listener_prior_sign"}) {
    if (!j.contains(key) || !j.at(key).is_number_integer() || j.at(key).get<long long>() < 0) {
      throw ShapeError(std::string("event: field '") + key + "' must be a non-negative integer");
    }
  }
  for (const char* key : {"speaker_id", "listener_id", "decision_source", "post_state_digest"}) {
    if (!j.contains(key) || !j.at(key).is_string()) {
      throw ShapeError(std::string("event: field '") + key + "' must be a string");
    }
  }
  if (!j.contains("decision") || !j.at("decision").is_boolean()) throw ShapeError("event: 'decision' must be boolean");
  if (!j.contains("timestamp") || !j.at("timestamp").is_number_integer()) {
    throw ShapeError("event: 'timestamp' must be an integer");
  }
  if (!j.contains("mh_probability")) throw ShapeError("event: missing 'mh_probability'");
  const auto& r = j.at("mh_probability");
  if (!r.is_null()) {
    if (!r.is_number() || r.get<double>() < 0.0 || r.get<double>() > 1.0) {
      throw ShapeError("event: 'mh_probability' must be null or in [0, 1]");
    }
  } else if (!j.contains("mh_note")) {
    throw ShapeError("event: null 'mh_probability' needs an 'mh_note' reason");
  }
  if (j.at("step").get<long long>() < 1 || j.at("round").get<long long>() < 1) {
    throw ShapeError("event: step and round are 1-based");
  }
  for (const char* key : {"post_categories", "post_signs"}) {
    if (!j.contains(key) || !j.at(key).is_object() || !j.at(key).contains("a") || !j.at(key).contains("b")) {
      throw ShapeError(std::string("event: '") + key + "' must hold arrays 'a' and 'b'");
    }
  }
  parse_digest_hex(j.at("post_state_digest").get<std::string>());
}

void from_json(const nlohmann::json& j, GameEvent& e) {
  validate_event_json(j);
  e.step = j.at("step").get<std::size_t>();
  e.round = j.at("round").get<std::size_t>();
  e.object = j.at("object").get<std::size_t>();
  e.speaker_id = j.at("speaker_id").get<std::string>();
  e.listener_id = j.at("listener_id").get<std::string>();
  e.proposed_sign = j.at("proposed_sign").get<Label>();
  e.speaker_sign = j.at("speaker_sign").get<Label>();
  e.listener_prior_sign = j.at("listener_prior_sign").get<Label>();
  e.mh_probability.reset();
  if (!j.at("mh_probability").is_null()) e.mh_probability = j.at("mh_probability").get<double>();
  e.mh_note = j.value("mh_note", std::string{});
  e.accepted = j.at("decision").get<bool>();
  e.decision_source = j.at("decision_source").get<std::string>();
  e.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  e.post_state_digest = parse_digest_hex(j.at("post_state_digest").get<std::string>());
  e.post_categories_a = j.at("post_categories").at("a").get<Labels>();
  e.post_categories_b = j.at("post_categories").at("b").get<Labels>();
  e.post_signs_a = j.at("post_signs").at("a").get<Labels>();
  e.post_signs_b = j.at("post_signs").at("b").get<Labels>();
}

void write_event_log(std::ostream& out, const std::vector<GameEvent>& events) {
  for (const auto& e : events) out << nlohmann::json(e).dump() << '\n';
}

std::vector<GameEvent> read_event_log(std::istream& in) {
  std::vector<GameEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(nlohmann::json::parse(line).get<GameEvent>());
    } catch (const nlohmann::json::exception& ex) {
      throw ShapeError("event log line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const ShapeError& ex) {
      throw ShapeError("event log line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return events;
}

}  // namespace mhng
