// SPDX-License-Identifier: Apache-2.0
#include "gex/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

namespace gex::gateway {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
namespace fs = std::filesystem;
using tcp = net::ip::tcp;
using nlohmann::json;
using ojson = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

ojson make_error(const json& seq, const std::string& message) {
  ojson j;
  j["type"] = "error";
  j["seq"] = seq;
  j["message"] = message;
  return j;
}

ojson make_ack(const json& seq, const std::string& of) {
  ojson j;
  j["type"] = "ack";
  j["seq"] = seq;
  j["of"] = of;
  return j;
}

namespace {

constexpr std::size_t kSnapshotCapacity = 4;
constexpr std::size_t kMaxIntervals = 100000;
constexpr auto kCloseTimeout = std::chrono::milliseconds(1000);

struct Snapshot {
  teleop::TickReport report;
  bool recording = false;
  bool replaying = false;
};

using Message = std::shared_ptr<const std::string>;

Message to_message(const ojson& j) { return std::make_shared<const std::string>(j.dump()); }

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

ojson joint_list(const HandModel& m) {
  auto arr = ojson::array();
  for (const auto* j : m.joints()) {
    arr.push_back({{"name", j->name}, {"lo_deg", deg(j->limit_lo)}, {"hi_deg", deg(j->limit_hi)}});
  }
  return arr;
}

}  // namespace

class Client;

struct Service::Impl {
  explicit Impl(GatewayConfig c) : config(std::move(c)) {}

  GatewayConfig config;

  // I/O thread state.
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  net::steady_timer broadcast_timer{ioc};
  std::set<std::shared_ptr<Client>> clients;
  teleop::Scene scene_for_clients;
  std::uint64_t server_seq = 0;

  // Control thread state.
  std::unique_ptr<teleop::Session> session;
  std::optional<GesturePlayer> replay;
  std::optional<std::weak_ptr<Client>> replay_owner;
  struct Recording {
    std::ofstream gesture, hand;
    fs::path gesture_path, hand_path;
    std::size_t records = 0;
  };
  std::optional<Recording> recording;
  std::optional<teleop::Scene> scene_changed;  // announced after the ack of the change

  // Channels.
  std::mutex snap_mu;
  std::deque<std::shared_ptr<const Snapshot>> snapshots;
  struct Command {
    std::weak_ptr<Client> client;
    json msg;
  };
  std::mutex cmd_mu;
  std::deque<Command> mailbox;

  // Lifecycle.
  std::thread io_thread, control_thread;
  std::atomic<bool> stopping{false};
  std::atomic<bool> started{false};
  std::uint16_t bound_port = 0;
  std::mutex life_mu;
  std::condition_variable life_cv;
  bool stopped = false;

  // Statistics.
  mutable std::mutex stats_mu;
  std::deque<double> intervals;
  std::atomic<std::size_t> ticks{0}, snapshots_dropped{0}, states_dropped{0}, states_sent{0}, client_count{0};

  // I/O side.
  void do_accept();
  void schedule_broadcast();
  void broadcast_state();
  void send_scene(const std::shared_ptr<Client>& c);
  void broadcast_scene(teleop::Scene scene);
  void on_open(const std::shared_ptr<Client>& c);
  void on_close(const std::shared_ptr<Client>& c);
  void on_text(const std::shared_ptr<Client>& c, const std::string& text);
  void shutdown_io();

  // Control side.
  void control_loop();
  void apply_commands();
  void reply(const std::weak_ptr<Client>& to, const ojson& msg);
  ojson handle(const Command& cmd);
  ojson handle_set_glove_q(const json& seq, const json& msg);
  ojson handle_replay(const json& seq, const json& msg, const std::weak_ptr<Client>& from);
  ojson handle_record(const json& seq, const json& msg);
  ojson handle_set_scene(const json& seq, const json& msg);
  ojson handle_set_params(const json& seq, const json& msg);
  void stop_recording();
  fs::path resolve_input(const std::string& p) const;
};

// ---- one websocket connection ----

class Client : public std::enable_shared_from_this<Client> {
 public:
  Client(tcp::socket socket, Service::Impl& owner) : ws_(std::move(socket)), owner_(owner) {}

  void run() {
    beast::get_lowest_layer(ws_).expires_after(std::chrono::seconds(10));
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
  }

  /// Queues a text message. Droppable messages (state) give way to newer ones when the outbox is full.
  void send(Message msg, bool droppable) {
    if (!open_) return;
    outbox_.push_back({std::move(msg), droppable});
    const std::size_t cap = owner_.config.service.client_queue;
    std::size_t droppable_count = 0;
    for (const auto& e : outbox_) droppable_count += e.droppable;
    // The front entry may be in flight and must stay.
    for (auto it = outbox_.begin() + (writing_ ? 1 : 0); droppable_count > cap && it != outbox_.end();) {
      if (it->droppable) {
        it = outbox_.erase(it);
        --droppable_count;
        ++owner_.states_dropped;
      } else {
        ++it;
      }
    }
    if (!writing_) write_next();
  }

  /// Ends the connection; `done` runs once the socket is closed.
  void close(std::function<void()> done) {
    if (!open_) {
      done();
      return;
    }
    open_ = false;
    if (writing_) {
      // A write is pending on a peer that is not reading; a close frame cannot be queued behind it.
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(ws_).socket().close(ec);
      done();
      return;
    }
    ws_.async_close(websocket::close_code::going_away, [self = shared_from_this(), done](beast::error_code) {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().close(ec);
      done();
    });
  }

 private:
  struct Outgoing {
    Message msg;
    bool droppable;
  };

  void on_request(beast::error_code ec) {
    if (ec) return;
    if (!websocket::is_upgrade(request_) || request_.target() != "/ws") {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "websocket endpoint is /ws\n";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
        beast::error_code ignored;
        beast::get_lowest_layer(self->ws_).socket().shutdown(tcp::socket::shutdown_both, ignored);
      });
      return;
    }
    beast::get_lowest_layer(ws_).expires_never();
    websocket::stream_base::timeout opt{};
    opt.handshake_timeout = kCloseTimeout;
    opt.idle_timeout = websocket::stream_base::none();
    opt.keep_alive_pings = false;
    ws_.set_option(opt);
    ws_.text(true);
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void on_accept(beast::error_code ec) {
    if (ec || owner_.stopping) return;
    open_ = true;
    owner_.on_open(shared_from_this());
    read_next();
  }

  void read_next() {
    ws_.async_read(read_buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        self->owner_.on_close(self);
        return;
      }
      const std::string text = beast::buffers_to_string(self->read_buffer_.data());
      self->read_buffer_.consume(self->read_buffer_.size());
      self->owner_.on_text(self, text);
      self->read_next();
    });
  }

  void write_next() {
    if (outbox_.empty() || !open_) {
      writing_ = false;
      return;
    }
    writing_ = true;
    ws_.async_write(net::buffer(*outbox_.front().msg), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->writing_ = false;
        self->outbox_.clear();
        return;
      }
      if (self->outbox_.front().droppable) ++self->owner_.states_sent;
      self->outbox_.pop_front();
      self->write_next();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Service::Impl& owner_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
  beast::flat_buffer read_buffer_;
  std::deque<Outgoing> outbox_;
  bool writing_ = false;
  bool open_ = false;
};

// ---- I/O side ----

void Service::Impl::do_accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    if (stopping) return;
    beast::error_code opt_ec;
    socket.set_option(net::socket_base::send_buffer_size(config.service.socket_send_buffer), opt_ec);
    socket.set_option(tcp::no_delay(true), opt_ec);
    std::make_shared<Client>(std::move(socket), *this)->run();
    do_accept();
  });
}

void Service::Impl::on_open(const std::shared_ptr<Client>& c) {
  clients.insert(c);
  client_count = clients.size();
  spdlog::info("client connected ({} open)", clients.size());
  send_scene(c);
}

void Service::Impl::on_close(const std::shared_ptr<Client>& c) {
  if (clients.erase(c)) spdlog::info("client disconnected ({} open)", clients.size());
  client_count = clients.size();
}

void Service::Impl::send_scene(const std::shared_ptr<Client>& c) {
  ojson j;
  j["type"] = "scene";
  j["seq"] = ++server_seq;
  const ojson s = teleop::scene_to_json(scene_for_clients);
  j["object"] = s["object"];
  j["tip_radius"] = s["tip_radius"];
  j["glove_joints"] = joint_list(config.glove_model);
  j["hand_joints"] = joint_list(config.hand_model);
  j["fingers"] = ojson::array();
  for (const auto& f : config.hand_model.fingers) j["fingers"].push_back(f.name);
  j["control_rate_hz"] = config.control_rate_hz();
  j["state_rate_hz"] = config.service.state_rate_hz;
  c->send(to_message(j), false);
}

void Service::Impl::broadcast_scene(teleop::Scene scene) {
  scene_for_clients = std::move(scene);
  for (const auto& c : clients) send_scene(c);
}

void Service::Impl::schedule_broadcast() {
  broadcast_timer.expires_after(std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(1.0 / config.service.state_rate_hz)));
  broadcast_timer.async_wait([this](beast::error_code ec) {
    if (ec || stopping) return;
    broadcast_state();
    schedule_broadcast();
  });
}

void Service::Impl::broadcast_state() {
  std::shared_ptr<const Snapshot> latest;
  {
    std::lock_guard lock(snap_mu);
    if (snapshots.empty()) return;
    latest = snapshots.back();
    snapshots.clear();
  }
  if (clients.empty()) return;
  ojson j;
  j["type"] = "state";
  j["seq"] = ++server_seq;
  const ojson body = teleop::to_json(latest->report);
  for (auto it = body.begin(); it != body.end(); ++it) j[it.key()] = it.value();
  j["recording"] = latest->recording;
  j["replaying"] = latest->replaying;
  const Message msg = to_message(j);
  for (const auto& c : clients) c->send(msg, true);
}

void Service::Impl::on_text(const std::shared_ptr<Client>& c, const std::string& text) {
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::parse_error& e) {
    c->send(to_message(make_error(nullptr, std::string("malformed message: ") + e.what())), false);
    return;
  }
  if (!msg.is_object()) {
    c->send(to_message(make_error(nullptr, "message must be an object")), false);
    return;
  }
  const json seq = msg.contains("seq") ? msg["seq"] : json(nullptr);
  if (!msg.contains("type") || !msg["type"].is_string()) {
    c->send(to_message(make_error(seq, "message needs a string 'type'")), false);
    return;
  }
  if (!msg.contains("seq") || !(msg["seq"].is_number_integer() || msg["seq"].is_number_unsigned())) {
    c->send(to_message(make_error(seq, "message needs an integer 'seq'")), false);
    return;
  }
  static const std::set<std::string> kClientTypes{"set_glove_q", "replay", "record", "set_scene", "set_params"};
  const std::string type = msg["type"];
  if (!kClientTypes.count(type)) {
    c->send(to_message(make_error(seq, "unknown message type '" + type + "'")), false);
    return;
  }
  std::lock_guard lock(cmd_mu);
  mailbox.push_back({c, std::move(msg)});
}

void Service::Impl::shutdown_io() {
  beast::error_code ec;
  acceptor.close(ec);
  broadcast_timer.cancel();
  // Peers that never answer the close handshake, or never finish their upgrade, must not hold
  // the thread: the guard stops the context once every close is done or the timeout expires.
  auto guard = std::make_shared<net::steady_timer>(ioc, kCloseTimeout + std::chrono::milliseconds(200));
  guard->async_wait([this, guard](beast::error_code) { ioc.stop(); });
  auto pending = std::make_shared<std::size_t>(clients.size());
  if (*pending == 0) guard->cancel();
  for (const auto& c : clients) {
    c->close([pending, guard] {
      if (--*pending == 0) guard->cancel();
    });
  }
  clients.clear();
  client_count = 0;
}

// ---- control side ----

void Service::Impl::reply(const std::weak_ptr<Client>& to, const ojson& msg) {
  net::post(ioc, [to, m = to_message(msg)] {
    if (auto c = to.lock()) c->send(m, false);
  });
}

fs::path Service::Impl::resolve_input(const std::string& p) const {
  const fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (!config.source.empty()) {
    const fs::path alt = config.source.parent_path() / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

ojson Service::Impl::handle_set_glove_q(const json& seq, const json& msg) {
  if (replay) return make_error(seq, "set_glove_q: replay in progress");
  if (!msg.contains("q") || !msg["q"].is_array()) return make_error(seq, "set_glove_q: 'q' must be an array");
  const auto joints = config.glove_model.joints();
  if (msg["q"].size() != joints.size()) {
    return make_error(seq, "set_glove_q: expected " + std::to_string(joints.size()) + " values");
  }
  std::vector<double> q;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto& v = msg["q"][i];
    if (!v.is_number()) return make_error(seq, "set_glove_q: q[" + std::to_string(i) + "] is not a number");
    const double d = v.get<double>();
    if (!std::isfinite(d) || d < deg(joints[i]->limit_lo) || d > deg(joints[i]->limit_hi)) {
      return make_error(seq, "set_glove_q: q[" + std::to_string(i) + "] outside joint limits");
    }
    q.push_back(d);
  }
  session->set_glove_target(to_radians(q));
  return make_ack(seq, "set_glove_q");
}

ojson Service::Impl::handle_replay(const json& seq, const json& msg, const std::weak_ptr<Client>& from) {
  if (!msg.contains("path") || !msg["path"].is_string()) return make_error(seq, "replay: 'path' must be a string");
  const fs::path path = resolve_input(msg["path"].get<std::string>());
  std::vector<GestureRecord> g;
  try {
    g = load_gesture(path.string(), config.glove_model.dof());
    if (g.empty()) return make_error(seq, "replay: gesture has no records");
  } catch (const Error& e) {
    return make_error(seq, std::string("replay: ") + e.what());
  }
  replay.emplace(std::move(g), config.session.control_dt);
  replay_owner = from;
  ojson a = make_ack(seq, "replay");
  a["path"] = path.string();
  a["ticks"] = replay->ticks();
  return a;
}

void Service::Impl::stop_recording() {
  if (!recording) return;
  recording->gesture.close();
  recording->hand.close();
  spdlog::info("recorded {} samples to {}", recording->records, recording->gesture_path.string());
  recording.reset();
}

ojson Service::Impl::handle_record(const json& seq, const json& msg) {
  bool on = false;
  if (msg.contains("on") && msg["on"].is_boolean()) {
    on = msg["on"].get<bool>();
  } else if (msg.contains("on") && msg["on"].is_string() && (msg["on"] == "on" || msg["on"] == "off")) {
    on = msg["on"] == "on";
  } else {
    return make_error(seq, "record: 'on' must be true/false or \"on\"/\"off\"");
  }
  ojson a = make_ack(seq, "record");
  a["on"] = on;
  if (!on) {
    if (!recording) return make_error(seq, "record: not recording");
    a["path"] = recording->gesture_path.string();
    a["hand_path"] = recording->hand_path.string();
    a["records"] = recording->records;
    stop_recording();
    return a;
  }
  if (recording) return make_error(seq, "record: already recording to " + recording->gesture_path.string());
  if (!msg.contains("path") || !msg["path"].is_string()) return make_error(seq, "record: 'path' must be a string");
  Recording r;
  r.gesture_path = msg["path"].get<std::string>();
  r.hand_path = fs::path(r.gesture_path).replace_extension(".hand.jsonl");
  r.gesture.open(r.gesture_path);
  r.hand.open(r.hand_path);
  if (!r.gesture || !r.hand) return make_error(seq, "record: cannot write " + r.gesture_path.string());
  // The recorded stream must retarget offline exactly as it did live, so the live solver starts cold.
  session->reset_retarget();
  recording = std::move(r);
  a["path"] = recording->gesture_path.string();
  a["hand_path"] = recording->hand_path.string();
  return a;
}

ojson Service::Impl::handle_set_scene(const json& seq, const json& msg) {
  json doc = json::object();
  doc["object"] = msg.contains("object") ? msg["object"] : json(nullptr);
  if (msg.contains("tip_radius")) doc["tip_radius"] = msg["tip_radius"];
  try {
    teleop::Scene s = teleop::load_scene(doc.dump());
    session->set_scene(s);
    scene_changed = s;
  } catch (const Error& e) {
    return make_error(seq, std::string("set_scene: ") + e.what());
  }
  return make_ack(seq, "set_scene");
}

ojson Service::Impl::handle_set_params(const json& seq, const json& msg) {
  try {
    // Validate everything before applying anything.
    const auto& cfg = session->config();
    const auto det = msg.contains("detector") ? detector_from_json(msg["detector"], cfg.detector) : cfg.detector;
    const auto imp = msg.contains("impedance") ? impedance_from_json(msg["impedance"], cfg.impedance) : cfg.impedance;
    imp.validate(config.glove_profile.rated_torque);
    for (const auto& [k, v] : msg.items()) {
      if (k != "type" && k != "seq" && k != "detector" && k != "impedance") {
        return make_error(seq, "set_params: unknown section '" + k + "'");
      }
    }
    session->set_detector(det);
    session->set_impedance(imp);
    ojson a = make_ack(seq, "set_params");
    a["detector"] = to_json(det);
    a["impedance"] = to_json(imp);
    return a;
  } catch (const Error& e) {
    return make_error(seq, std::string("set_params: ") + e.what());
  }
}

ojson Service::Impl::handle(const Command& cmd) {
  const json& m = cmd.msg;
  const json& seq = m["seq"];
  const std::string type = m["type"];
  if (type == "set_glove_q") return handle_set_glove_q(seq, m);
  if (type == "replay") return handle_replay(seq, m, cmd.client);
  if (type == "record") return handle_record(seq, m);
  if (type == "set_scene") return handle_set_scene(seq, m);
  return handle_set_params(seq, m);
}

void Service::Impl::apply_commands() {
  std::deque<Command> batch;
  {
    std::lock_guard lock(cmd_mu);
    batch.swap(mailbox);
  }
  for (const auto& cmd : batch) {
    reply(cmd.client, handle(cmd));
    if (scene_changed) {
      net::post(ioc, [this, s = std::move(*scene_changed)] { broadcast_scene(s); });
      scene_changed.reset();
    }
  }
}

void Service::Impl::control_loop() {
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(config.session.control_dt));
  auto next = Clock::now();
  std::optional<Clock::time_point> last;
  while (!stopping) {
    std::this_thread::sleep_until(next);
    const auto start = Clock::now();
    if (last) {
      std::lock_guard lock(stats_mu);
      intervals.push_back(std::chrono::duration<double>(start - *last).count());
      if (intervals.size() > kMaxIntervals) intervals.pop_front();
    }
    last = start;

    apply_commands();
    if (replay) {
      session->set_glove_target(to_radians(replay->next()));
      if (replay->done()) {
        ojson done;
        done["type"] = "ack";
        done["seq"] = nullptr;
        done["of"] = "replay";
        done["done"] = true;
        if (replay_owner) reply(*replay_owner, done);
        replay.reset();
        replay_owner.reset();
      }
    }

    auto snap = std::make_shared<Snapshot>();
    try {
      snap->report = session->tick();
    } catch (const Error& e) {
      spdlog::error("tick failed: {}", e.what());
      const Message m = to_message(make_error(nullptr, std::string("tick failed: ") + e.what()));
      net::post(ioc, [this, m] {
        for (const auto& c : clients) c->send(m, false);
      });
      replay.reset();
      next += period;
      continue;
    }
    ++ticks;
    if (recording) {
      const auto& r = snap->report;
      recording->gesture << gesture_line({r.timestamp, r.q_glove}) << '\n';
      recording->hand << trajectory_line(r.timestamp, r.q_hand_cmd) << '\n';
      ++recording->records;
    }
    snap->recording = recording.has_value();
    snap->replaying = replay.has_value();
    {
      std::lock_guard lock(snap_mu);
      snapshots.push_back(std::move(snap));
      while (snapshots.size() > kSnapshotCapacity) {
        snapshots.pop_front();
        ++snapshots_dropped;
      }
    }
    next += period;
    // After a long stall resume the cadence instead of bursting to catch up.
    if (Clock::now() - next > 10 * period) next = Clock::now() + period;
  }
  stop_recording();
}

// ---- public surface ----

Service::Service(GatewayConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

std::uint16_t Service::start() {
  auto& s = *impl_;
  if (s.started.exchange(true)) throw ServiceError("service already started");
  s.session = make_session(s.config);
  s.scene_for_clients = s.config.scene;

  beast::error_code ec;
  const auto address = net::ip::make_address(s.config.service.host, ec);
  if (ec) throw ServiceError("invalid host '" + s.config.service.host + "'");
  const tcp::endpoint ep(address, s.config.service.port);
  s.acceptor.open(ep.protocol(), ec);
  if (!ec) s.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(ep, ec);
  if (!ec) s.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw ServiceError("cannot listen on " + s.config.service.host + ":" + std::to_string(s.config.service.port) +
                       ": " + ec.message());
  }
  s.bound_port = s.acceptor.local_endpoint().port();
  s.do_accept();
  s.schedule_broadcast();
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  s.control_thread = std::thread([&s] { s.control_loop(); });
  spdlog::info("serving ws://{}:{}/ws", s.config.service.host, s.bound_port);
  return s.bound_port;
}

void Service::stop() {
  auto& s = *impl_;
  if (!s.started || s.stopping.exchange(true)) return;
  if (s.control_thread.joinable()) s.control_thread.join();
  net::post(s.ioc, [&s] { s.shutdown_io(); });
  if (s.io_thread.joinable()) s.io_thread.join();
  {
    std::lock_guard lock(s.life_mu);
    s.stopped = true;
  }
  s.life_cv.notify_all();
  spdlog::info("service stopped after {} ticks", s.ticks.load());
}

void Service::wait() {
  auto& s = *impl_;
  std::unique_lock lock(s.life_mu);
  s.life_cv.wait(lock, [&s] { return s.stopped; });
}

bool Service::running() const { return impl_->started && !impl_->stopping; }

std::uint16_t Service::port() const { return impl_->bound_port; }

TickStats Service::tick_stats() const {
  std::vector<double> iv;
  {
    std::lock_guard lock(impl_->stats_mu);
    iv.assign(impl_->intervals.begin(), impl_->intervals.end());
  }
  TickStats t;
  t.period = impl_->config.session.control_dt;
  t.intervals = iv.size();
  if (iv.empty()) return t;
  std::vector<double> dev;
  double sq = 0.0;
  for (double x : iv) {
    t.mean_interval += x;
    sq += (x - t.period) * (x - t.period);
    dev.push_back(std::abs(x - t.period));
  }
  t.mean_interval /= static_cast<double>(iv.size());
  t.rms_jitter = std::sqrt(sq / static_cast<double>(iv.size()));
  std::sort(dev.begin(), dev.end());
  t.max_deviation = dev.back();
  const auto quantile = [&](double q) {
    return dev[std::min(dev.size() - 1, static_cast<std::size_t>(q * static_cast<double>(dev.size())))];
  };
  t.p95_deviation = quantile(0.95);
  t.p99_deviation = quantile(0.99);
  return t;
}

ServiceCounters Service::counters() const {
  const auto& s = *impl_;
  return {s.ticks, s.snapshots_dropped, s.states_dropped, s.states_sent, s.client_count};
}

}  // namespace gex::gateway
