#pragma once

#include "pmp/env.hpp"
#include "pmp/wire.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <thread>

namespace pmp {

// The simulated robot behind the teleop service. Single-threaded: the server's
// sim loop is the only caller.
class TeleopSession {
 public:
  TeleopSession(const RobotModel& robot, const SimConfig& sim_config, const EnvConfig& env_config, const MotionDataset& dataset,
                PolicyModel policy, PolicyMeta meta, const CVAEModel* prior)
      : sim_(robot, sim_config), env_(env_config), dataset_(&dataset), policy_(std::move(policy)), meta_(meta), prior_(prior) {
    H_ = prior_ ? prior_->config.H : meta_.H;
    W_ = prior_ ? prior_->config.W : env_config.window;
    if (policy_.obs_dim != observation_size(robot.n_lower, robot.n_upper, H_) || policy_.act_dim != robot.n_lower)
      throw CompatibilityError("teleop: policy dimensions do not match the robot and motion prior");
    if (static_cast<int>(dataset.joint_names.size()) != robot.n_upper)
      throw CompatibilityError("teleop: dataset upper-joint count does not match the robot");
    cmd_ = standing_command(robot.base.nominal_height);
    reset();
  }

  // Queues a client message for the next control step. Rejected messages get
  // an error reply and change nothing.
  std::optional<wire::Error> submit(const wire::Message& m, bool authority) {
    if (std::holds_alternative<wire::State>(m) || std::holds_alternative<wire::Error>(m) ||
        (std::holds_alternative<wire::Clips>(m) && std::get<wire::Clips>(m).ids))
      return wire::Error{std::string("'") + wire::type_name(m) + "' is a server message"};
    if (std::holds_alternative<wire::Clips>(m)) return std::nullopt;
    if (!authority) return wire::Error{std::string("read-only connection: '") + wire::type_name(m) + "' ignored"};
    if (const auto* s = std::get_if<wire::SelectClip>(&m); s && !find_clip(s->clip_id))
      return wire::Error{"unknown clip '" + s->clip_id + "'"};
    pending_.push_back(m);
    return std::nullopt;
  }

  // Applies queued messages, then advances one control step unless paused.
  // Divergence resets the robot and is reported.
  std::optional<wire::Error> step() {
    for (const auto& m : pending_) apply(m);
    pending_.clear();
    if (paused_) return std::nullopt;
    try {
      advance();
    } catch (const DivergenceError& e) {
      reset();
      return wire::Error{std::string("simulation diverged, robot reset: ") + e.what()};
    }
    return std::nullopt;
  }

  void reset() {
    state_ = sim_.initial_state();
    phase_ = 0.0;
    clip_time_ = 0.0;
    a_prev_ = Vec::Zero(robot().n_lower);
    ring_.reset(W_, robot().default_upper());
  }

  wire::State snapshot() const {
    wire::State s;
    s.t = state_.time;
    s.base = {state_.base_pos.x(), state_.base_pos.y(), state_.pitch};
    s.q.assign(state_.q.data(), state_.q.data() + state_.q.size());
    s.qdot_norm = state_.qdot.norm();
    s.contacts.assign(state_.foot_contact.begin(), state_.foot_contact.end());
    s.command = {cmd_.vx, cmd_.h, cmd_.pitch};
    s.metrics = {std::abs(cmd_.vx - state_.base_vel.x()), std::abs(std::sin(state_.pitch))};
    s.alpha = 1.0;
    return s;
  }

  wire::Clips clip_list() const { return wire::Clips{dataset_->ids()}; }

  const RobotModel& robot() const { return sim_.robot(); }
  const SimState& state() const { return state_; }
  const Command& command() const { return cmd_; }
  bool paused() const { return paused_; }
  double dt_control() const { return sim_.config().dt_control(); }
  const MotionClip* clip() const { return clip_; }
  double speed() const { return speed_; }

 private:
  const MotionClip* find_clip(const std::string& id) const {
    for (const auto& c : dataset_->clips)
      if (c.id == id) return &c;
    return nullptr;
  }

  void apply(const wire::Message& m) {
    const double nominal = robot().base.nominal_height;
    if (const auto* c = std::get_if<wire::Cmd>(&m)) {
      cmd_ = clamp_command({c->vx, c->h, c->pitch}, env_.commands, nominal);
    } else if (const auto* s = std::get_if<wire::SelectClip>(&m)) {
      clip_ = find_clip(s->clip_id);
      speed_ = s->speed;
      clip_time_ = 0.0;
    } else if (const auto* p = std::get_if<wire::Push>(&m)) {
      state_ = apply_push(state_, p->vel);
    } else if (std::holds_alternative<wire::Reset>(m)) {
      reset();
    } else if (const auto* p = std::get_if<wire::Pause>(&m)) {
      paused_ = p->on;
    }
  }

  void advance() {
    Vec upper = robot().default_upper();
    if (clip_) {
      // clips loop during teleoperation
      const double duration = (clip_->length() - 1) / (clip_->frame_rate_hz * speed_);
      upper = upper_target_at(*clip_, duration > 0.0 ? std::fmod(clip_time_, duration) : 0.0, speed_);
    }
    ring_.push(upper);
    const Vec z = prior_ ? pmp_latent(*prior_, ring_) : Vec::Zero(H_);
    const Vec obs = build_observation(state_, cmd_, phase_, z, a_prev_);
    const Vec a = mlp_forward(policy_.actor, obs.transpose()).y.row(0).transpose().cwiseMax(-meta_.action_clip).cwiseMin(meta_.action_clip);
    const Vec lower = robot().default_lower() + meta_.action_scale * a;
    state_ = sim_.control_step(state_, lower, upper);
    phase_ = advance_phase(phase_, dt_control(), cmd_, env_.gait);
    clip_time_ += dt_control();
    a_prev_ = a;
  }

  PlanarSim sim_;
  EnvConfig env_;
  const MotionDataset* dataset_;
  PolicyModel policy_;
  PolicyMeta meta_;
  const CVAEModel* prior_;
  int H_ = 64, W_ = 50;

  SimState state_;
  Command cmd_;  // held until the next cmd message
  double phase_ = 0.0, clip_time_ = 0.0, speed_ = 1.0;
  bool paused_ = false;
  const MotionClip* clip_ = nullptr;  // none: upper body holds the default pose
  Vec a_prev_;
  TargetRing ring_;
  std::vector<wire::Message> pending_;
};

// WebSocket service around a TeleopSession. One I/O thread handles sockets;
// one sim thread owns the session. They exchange data through the inbound
// queue and posted outbound frames.
class TeleopServer {
  using tcp = boost::asio::ip::tcp;
  using Clock = std::chrono::steady_clock;

 public:
  TeleopServer(TeleopSession& session, std::string host, unsigned short port, double state_hz, nlohmann::json model)
      : session_(session), host_(std::move(host)), port_(port), state_hz_(state_hz), model_(std::move(model)) {}
  ~TeleopServer() { stop(); }
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  void start() {
    tcp::endpoint ep(boost::asio::ip::make_address(host_), port_);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    accept();
    running_ = true;
    start_time_ = Clock::now();
    io_thread_ = std::thread([this] { ioc_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
    spdlog::info("teleop: listening on ws://{}:{}", host_, port_);
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (sim_thread_.joinable()) sim_thread_.join();
    std::promise<void> closed;
    boost::asio::post(ioc_, [this, &closed] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      for (auto& [id, w] : conns_)
        if (auto c = w.lock()) c->close();
      closed.set_value();
    });
    closed.get_future().wait();
    work_.reset();
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

  unsigned short port() const { return port_; }
  double sim_seconds() const { return sim_seconds_.load(); }
  double wall_seconds() const { return std::chrono::duration<double>(Clock::now() - start_time_).count(); }

 private:
  struct Conn : std::enable_shared_from_this<Conn> {
    Conn(TeleopServer& s, tcp::socket sock, std::uint64_t id) : srv(s), ws(std::move(sock)), id(id) {}
    TeleopServer& srv;
    boost::beast::websocket::stream<boost::beast::tcp_stream> ws;
    boost::beast::flat_buffer buf;
    std::deque<std::string> outq;
    std::uint64_t id;
    bool open = false;

    void accept(boost::beast::http::request<boost::beast::http::string_body> req) {
      ws.async_accept(req, [self = shared_from_this()](boost::beast::error_code ec) {
        if (ec) return;
        self->open = true;
        self->srv.on_open(self);
        self->read();
      });
    }
    void read() {
      ws.async_read(buf, [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        if (ec) {
          self->open = false;
          self->srv.on_close(self->id);
          return;
        }
        auto text = boost::beast::buffers_to_string(self->buf.data());
        self->buf.consume(self->buf.size());
        self->srv.on_frame(*self, text);
        self->read();
      });
    }
    void send(std::string text) {
      if (!open) return;
      if (outq.size() >= 64) outq.pop_back();  // slow reader: drop the newest queued frame
      outq.push_back(std::move(text));
      if (outq.size() == 1) write();
    }
    void write() {
      ws.text(true);
      ws.async_write(boost::asio::buffer(outq.front()), [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        if (ec) return;
        self->outq.pop_front();
        if (!self->outq.empty()) self->write();
      });
    }
    void close() {
      boost::beast::error_code ec;
      boost::beast::get_lowest_layer(ws).socket().close(ec);
    }
  };

  struct Inbound {
    std::uint64_t conn;
    bool authority;
    wire::Message msg;
  };

  void accept() {
    acceptor_.async_accept([this](boost::beast::error_code ec, tcp::socket sock) {
      if (ec) return;
      serve_http(std::make_shared<boost::beast::tcp_stream>(std::move(sock)));
      accept();
    });
  }

  // Plain HTTP: websocket upgrade or the model geometry at /model.
  void serve_http(std::shared_ptr<boost::beast::tcp_stream> stream) {
    namespace http = boost::beast::http;
    auto buf = std::make_shared<boost::beast::flat_buffer>();
    auto req = std::make_shared<http::request<http::string_body>>();
    http::async_read(*stream, *buf, *req, [this, stream, buf, req](boost::beast::error_code ec, std::size_t) {
      if (ec) return;
      if (boost::beast::websocket::is_upgrade(*req)) {
        auto c = std::make_shared<Conn>(*this, stream->release_socket(), next_id_++);
        c->accept(std::move(*req));
        return;
      }
      auto res = std::make_shared<http::response<http::string_body>>();
      res->version(req->version());
      res->keep_alive(false);
      if (req->method() == http::verb::get && req->target() == "/model") {
        res->result(http::status::ok);
        res->set(http::field::content_type, "application/json");
        res->set(http::field::access_control_allow_origin, "*");
        res->body() = model_.dump();
      } else {
        res->result(http::status::not_found);
        res->set(http::field::content_type, "text/plain");
        res->body() = "not found\n";
      }
      res->prepare_payload();
      http::async_write(*stream, *res, [stream, res](boost::beast::error_code, std::size_t) {
        boost::beast::error_code ignored;
        stream->socket().shutdown(tcp::socket::shutdown_both, ignored);
      });
    });
  }

  // I/O thread from here on.
  void on_open(const std::shared_ptr<Conn>& c) {
    conns_[c->id] = c;
    spdlog::info("teleop: client {} connected{}", c->id, authority_id() == c->id ? " (command authority)" : " (read-only)");
    c->send(wire::serialize(clips_));
  }

  void on_close(std::uint64_t id) {
    conns_.erase(id);
    spdlog::info("teleop: client {} disconnected", id);
  }

  std::uint64_t authority_id() const {
    for (const auto& [id, w] : conns_)
      if (auto c = w.lock(); c && c->open) return id;
    return 0;
  }

  void on_frame(Conn& c, const std::string& text) {
    wire::Message m;
    try {
      m = wire::parse(text);
    } catch (const wire::ProtocolError& e) {
      spdlog::debug("teleop: client {} sent a malformed frame: {}", c.id, e.what());
      c.send(wire::serialize(wire::Error{e.what()}));
      return;
    }
    if (const auto* cl = std::get_if<wire::Clips>(&m); cl && !cl->ids) {
      c.send(wire::serialize(clips_));
      return;
    }
    std::lock_guard<std::mutex> lock(in_mu_);
    inbound_.push_back({c.id, authority_id() == c.id, std::move(m)});
  }

  void send_to(std::uint64_t id, std::string text) {
    boost::asio::post(ioc_, [this, id, text = std::move(text)]() mutable {
      if (auto it = conns_.find(id); it != conns_.end())
        if (auto c = it->second.lock()) c->send(std::move(text));
    });
  }

  void broadcast(std::string text) {
    boost::asio::post(ioc_, [this, text = std::move(text)] {
      for (auto& [id, w] : conns_)
        if (auto c = w.lock()) c->send(text);
    });
  }

  // Sim thread: fixed-rate loop on absolute deadlines.
  void sim_loop() {
    const double dt = session_.dt_control();
    const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(dt));
    auto next = Clock::now();
    double until_broadcast = 0.0;
    while (running_) {
      std::deque<Inbound> batch;
      {
        std::lock_guard<std::mutex> lock(in_mu_);
        batch.swap(inbound_);
      }
      for (const auto& in : batch)
        if (auto err = session_.submit(in.msg, in.authority)) send_to(in.conn, wire::serialize(*err));
      if (auto err = session_.step()) {
        spdlog::warn("teleop: {}", err->msg);
        broadcast(wire::serialize(*err));
      }
      if (!session_.paused()) sim_seconds_ = sim_seconds_.load() + dt;
      until_broadcast -= dt;
      if (until_broadcast <= 1e-9) {
        broadcast(wire::serialize(session_.snapshot()));
        until_broadcast += 1.0 / state_hz_;
      }
      next += period;
      const auto now = Clock::now();
      if (now - next > std::chrono::milliseconds(250)) next = now;  // fell far behind; do not burst
      std::this_thread::sleep_until(next);
    }
  }

  TeleopSession& session_;
  std::string host_;
  unsigned short port_;
  double state_hz_;
  nlohmann::json model_;
  wire::Clips clips_ = session_.clip_list();

  boost::asio::io_context ioc_;
  std::optional<boost::asio::executor_work_guard<boost::asio::io_context::executor_type>> work_{ioc_.get_executor()};
  tcp::acceptor acceptor_{ioc_};
  std::map<std::uint64_t, std::weak_ptr<Conn>> conns_;
  std::uint64_t next_id_ = 1;

  std::mutex in_mu_;
  std::deque<Inbound> inbound_;
  std::atomic<bool> running_{false};
  std::atomic<double> sim_seconds_{0.0};
  Clock::time_point start_time_;
  std::thread io_thread_, sim_thread_;
};

}  // namespace pmp
