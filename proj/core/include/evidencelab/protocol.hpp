#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidencelab/behavior.hpp"
#include "evidencelab/game.hpp"

namespace evidencelab::protocol {

// Wire message types. Every message is a single-line JSON object with
// "type", "session", "actor" and "seq".
inline constexpr std::string_view kJoin = "join";
inline constexpr std::string_view kConfig = "config";
inline constexpr std::string_view kElicitSubmit = "elicit_submit";
inline constexpr std::string_view kFlipRequest = "flip_request";
inline constexpr std::string_view kFlipResult = "flip_result";
inline constexpr std::string_view kForecastSubmit = "forecast_submit";
inline constexpr std::string_view kForecastResult = "forecast_result";
inline constexpr std::string_view kBlockFeedback = "block_feedback";
inline constexpr std::string_view kBlockAck = "block_ack";
inline constexpr std::string_view kPaymentStatement = "payment_statement";
inline constexpr std::string_view kError = "error";

// Row labels on the feedback screen.
inline constexpr std::string_view kPeerStrategiesKey = "average_cards_turned_per_forecast";
inline constexpr std::string_view kPeerScoresKey = "score";

inline constexpr std::string_view kCompetitiveNotice = "Note the change in how your payoff will be calculated.";

// Error codes carried in "code".
namespace code {
inline constexpr std::string_view illegal_flip = "illegal_flip";
inline constexpr std::string_view protocol_order = "protocol_order";
inline constexpr std::string_view block_complete = "block_complete";
inline constexpr std::string_view invalid = "invalid";
inline constexpr std::string_view waitlist_rejected = "waitlist_rejected";
inline constexpr std::string_view unknown_token = "unknown_token";
inline constexpr std::string_view duplicate_submission = "duplicate_submission";
inline constexpr std::string_view not_found = "not_found";
inline constexpr std::string_view not_joined = "not_joined";
}  // namespace code

nlohmann::json envelope(std::string_view type, std::string_view session, std::string_view actor,
                        std::uint64_t seq);

nlohmann::json error(std::string_view session, std::uint64_t seq, std::string_view code, std::string_view message,
                     std::optional<std::uint64_t> reply_to = std::nullopt);

// "9.00" style display of integer cents.
std::string format_money(Cents cents);

nlohmann::json to_json(const ForecastRecord& r);
ForecastRecord forecast_record_from_json(const nlohmann::json& j);

// Body of a block_feedback message: "own" always, "peers" only with the
// disclosed rows, keyed by member ID as a string.
nlohmann::json feedback_body(const FeedbackPacket& packet);

// Inverse of feedback_body, used by clients and tests.
FeedbackPacket feedback_from_json(const nlohmann::json& body);

// Parse helpers that throw InvalidArgument with a field-specific message.
const nlohmann::json& require(const nlohmann::json& msg, std::string_view field);
std::string require_string(const nlohmann::json& msg, std::string_view field);
int require_int(const nlohmann::json& msg, std::string_view field);

}  // namespace evidencelab::protocol
