#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidencelab/game.hpp"
#include "evidencelab/simlab.hpp"

namespace evidencelab {

// Multiple price list: row i offers a sure sure_step * i against an urn
// gamble paying `prize` when the guessed ball color is drawn.
struct ElicitationSpec {
  bool enabled = true;
  int rows = 20;
  Cents sure_step = 10;
  Cents prize = 200;
  int urn_balls = 20;
  int risk_reds = 10;  // the ambiguous urn draws its red count uniformly from 0..urn_balls

  Cents sure_amount(int row) const noexcept { return sure_step * row; }
  void validate() const;
};

struct SessionConfig {
  std::string session_id;
  TreatmentConfig treatment;
  GameParams params;
  ElicitationSpec elicitation;
  int groups = 1;
  std::uint64_t seed = 1;
  Cents show_up = 1000;

  int capacity() const noexcept { return groups * params.group_size; }
  void validate() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

enum class ElicitationList : std::uint8_t { risk, ambiguity };
std::string_view to_string(ElicitationList l) noexcept;
ElicitationList parse_elicitation_list(std::string_view s);

// Switch row s in 1..rows+1: rows s..rows take the sure amount, so
// s = rows + 1 never does.
inline int safe_choices(int switch_row, int rows = 20) noexcept { return rows + 1 - switch_row; }

struct ElicitationOutcome {
  ElicitationList list = ElicitationList::risk;
  int switch_row = 21;
  Color guess = Color::red;
  int row = 0;          // drawn row 1..rows
  bool chose_sure = false;
  int urn_reds = 0;     // gamble only
  Color ball = Color::red;
  Cents payoff = 0;
};

// Plays one list at payment time from a dedicated stream.
ElicitationOutcome resolve_elicitation(const ElicitationSpec& spec, ElicitationList list, int switch_row, Color guess,
                                       Rng& rng);

struct PaymentStatement {
  int participant = 0;
  int group = 0;
  int member = 0;
  Cents show_up = 0;
  std::vector<ElicitationOutcome> elicitation;
  int selected_block = 0;
  RewardScheme scheme = RewardScheme::noncompetitive;
  int score = 0;
  std::optional<int> rank;
  Cents forecasting = 0;
  Cents total = 0;
};

nlohmann::json to_json(const PaymentStatement& s);

// Tie-break used at the end of a competitive block. Exposed so statistical
// tests can drive it directly.
std::vector<int> rank_group(std::uint64_t seed, int group, int block, std::span<const int> scores);

struct Event {
  std::uint64_t seq = 0;
  std::int64_t ts_ms = 0;  // wall clock, excluded from the state hash
  std::string actor;       // "server", "experimenter" or "p<index>"
  std::string type;
  nlohmann::json payload;
};

void to_json(nlohmann::json& j, const Event& e);
void from_json(const nlohmann::json& j, Event& e);

// Reads one event per line; blank lines are skipped.
std::vector<Event> read_event_log(std::istream& is);

enum class Phase : std::uint8_t { lobby, elicitation, playing, waiting, feedback, done };
std::string_view to_string(Phase p) noexcept;

struct Outbound {
  int participant = -1;  // -1: reply to the requesting connection only
  nlohmann::json message;
};

// One live session. State is a pure fold over its events; commands validate,
// produce events, and apply them. Not thread-safe: callers serialize access.
class Session {
 public:
  struct Result {
    std::vector<Event> events;
    std::vector<Outbound> out;
    std::optional<int> participant;  // set by a successful join
  };

  // Tokens default to fresh random strings; pass them for reproducible tests.
  static std::pair<Session, Event> create(const SessionConfig& config,
                                          std::optional<std::vector<std::string>> tokens = std::nullopt);
  static Session replay(std::span<const Event> events);

  // Anonymous join (no token) takes the next unused seat; a known token
  // reconnects or claims that seat.
  Result join(const std::optional<std::string>& token, std::uint64_t reply_to = 0);

  // elicit_submit, flip_request, forecast_submit or block_ack from a joined participant.
  Result handle(int participant, const nlohmann::json& message);

  // Resolves every grouped participant's statement. Throws ProtocolError
  // unless all formed groups have finished.
  Result resolve_payment();

  const SessionConfig& config() const noexcept { return config_; }
  const std::string& id() const noexcept { return config_.session_id; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::uint64_t last_seq() const noexcept { return next_seq_ - 1; }
  bool finished() const;
  bool paid() const noexcept { return paid_; }
  std::optional<int> participant_for_token(const std::string& token) const;
  Phase phase(int participant) const;

  // Current state as JSON (no timestamps) and its FNV-1a hash.
  nlohmann::json snapshot() const;
  std::uint64_t state_hash() const;

  // Dashboard view: per-group progress without any participant content.
  nlohmann::json progress() const;

  // Messages that bring a (re)connected participant up to date.
  std::vector<Outbound> resume(int participant) const;

  std::vector<PaymentStatement> statements() const;

  // Completed blocks per group in simlab's schema; forecasts also include
  // the block in progress.
  void write_forecast_csv(std::ostream& os) const;
  void write_block_csv(std::ostream& os) const;

  Session(Session&&) noexcept = default;
  Session& operator=(Session&&) noexcept = default;

 private:
  Session() = default;

  struct Participant {
    std::string token;
    bool joined = false;
    int join_order = -1;
    int group = -1;
    int member = 0;
    Phase phase = Phase::lobby;
    std::optional<int> switch_risk, switch_ambiguity;
    Color guess_risk = Color::red, guess_ambiguity = Color::red;
    int block = 0;
    int period = 0;
    BlockState state;
    std::optional<Deck> deck;
    std::optional<FlipResult> pending;
    std::vector<MemberBlockLog> blocks;
    bool acked = false;
    std::optional<PaymentStatement> statement;
  };

  struct Group {
    std::vector<int> members;  // participant index by member ID - 1
    int block = 0;
    std::vector<GroupBlockLog> metrics;
    bool done = false;
  };

  Event make_event(std::string actor, std::string type, nlohmann::json payload) const;
  std::vector<Outbound> apply(const Event& e);
  Result commit(Event e);

  std::vector<Outbound> apply_join(int p);
  std::vector<Outbound> apply_elicit(int p, ElicitationList list, int row, Color guess);
  std::vector<Outbound> apply_flip(int p, int n);
  std::vector<Outbound> apply_forecast(int p, Color guess);
  std::vector<Outbound> apply_ack(int p);
  std::vector<Outbound> apply_payment();

  void start_block(int p, int block);
  std::vector<Outbound> end_block(int g);

  nlohmann::json config_message(int p, bool with_token) const;
  nlohmann::json message(std::string_view type) const;
  nlohmann::json error(std::string_view code, std::string_view text, std::uint64_t reply_to) const;
  FeedbackPacket packet_for(int p, int block) const;
  std::vector<SessionLog> group_logs(bool include_current) const;

  SessionConfig config_;
  std::vector<std::string> tokens_;
  std::vector<Participant> participants_;
  std::vector<Group> groups_;
  std::vector<int> join_queue_;  // participants joined but not yet grouped
  int joined_ = 0;
  int selected_block_ = 0;
  bool paid_ = false;
  std::uint64_t next_seq_ = 1;
};

// Owns sessions and their JSONL logs. Each session is guarded by its own
// mutex; deliver() callbacks run while that mutex is held so per-session
// message order matches log order.
class SessionManager {
 public:
  using Deliver = std::function<void(const Outbound&)>;

  // Replays every <id>.jsonl in log_dir (created if missing). An empty
  // log_dir keeps sessions in memory only.
  explicit SessionManager(std::filesystem::path log_dir = {});

  struct Created {
    std::string session_id;
    std::vector<std::string> tokens;
  };
  Created create(SessionConfig config);

  // Returns the participant index on success. bind() runs under the session
  // lock before any message is delivered, so the caller can route replies.
  std::optional<int> join(const std::string& session_id, const std::optional<std::string>& token,
                          std::uint64_t reply_to, const std::function<void(int)>& bind, const Deliver& deliver);
  void handle(const std::string& session_id, int participant, const nlohmann::json& message, const Deliver& deliver);
  std::vector<PaymentStatement> resolve_payment(const std::string& session_id, const Deliver& deliver);

  std::vector<std::string> session_ids() const;
  bool contains(const std::string& session_id) const;

  // Runs fn under the session's lock. Throws InvalidArgument for unknown ids.
  void with_session(const std::string& session_id, const std::function<void(const Session&)>& fn) const;

  std::string event_log(const std::string& session_id) const;

 private:
  struct Slot {
    mutable std::mutex mutex;
    std::unique_ptr<Session> session;
    std::vector<Event> events;
  };
  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  void persist(Slot& slot, const std::vector<Event>& events);

  std::filesystem::path log_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

// Session ids are 1-64 characters of [A-Za-z0-9_-].
bool valid_session_id(std::string_view id) noexcept;

}  // namespace evidencelab
