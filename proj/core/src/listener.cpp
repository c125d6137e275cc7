#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <list>

#include <spdlog/spdlog.h>

#include "joulemark/error.hpp"
#include "joulemark/session.hpp"

namespace joulemark {

namespace {

struct Connection {
  int fd = -1;
  std::string buffer;
  MarkerStreamValidator validator;
  std::string session_id;
};

void send_line(int fd, const std::string& line) {
  std::string out = line + "\n";
  std::size_t off = 0;
  while (off < out.size()) {
    ssize_t n = ::send(fd, out.data() + off, out.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

MarkerListener::MarkerListener(std::filesystem::path socket_path, SessionRecorder& recorder, const Clock& clock,
                               bool close_on_goodbye)
    : path_(std::move(socket_path)), recorder_(recorder), clock_(clock), close_on_goodbye_(close_on_goodbye) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const std::string p = path_.string();
  if (p.empty() || p.size() >= sizeof(addr.sun_path)) {
    throw Error(ErrorCode::BindFailed, "socket path is empty or too long: " + p);
  }
  std::memcpy(addr.sun_path, p.c_str(), p.size() + 1);

  std::error_code ec;
  const auto status = std::filesystem::symlink_status(path_, ec);
  if (!ec && std::filesystem::exists(status)) {
    if (status.type() != std::filesystem::file_type::socket) {
      throw Error(ErrorCode::BindFailed, p + " exists and is not a socket");
    }
    std::filesystem::remove(path_, ec);
  }

  listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::BindFailed, std::string("socket: ") + std::strerror(errno));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::BindFailed, p + ": " + why);
  }
  thread_ = std::jthread([this](std::stop_token st) { serve(st); });
}

MarkerListener::~MarkerListener() { stop(); }

void MarkerListener::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

void MarkerListener::serve(std::stop_token stop) {
  std::list<Connection> conns;

  auto handle_line = [&](Connection& c, std::string_view line) {
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) return;
    const std::int64_t now = clock_.now_ns();
    Marker marker;
    try {
      marker = parse_marker(line);
    } catch (const Error& e) {
      recorder_.add_protocol_error(e.what());
      send_line(c.fd, make_error(e.what()));
      return;
    }
    // The validator only advances once the recorder has accepted the marker.
    MarkerStreamValidator next = c.validator;
    try {
      next.accept(marker);
      if (marker.kind == MarkerKind::Hello) {
        auto violations = recorder_.apply_marker(marker, now);
        if (!violations.empty()) {
          spdlog::warn("rejected hello from {}: {}", marker.session_id, violations.front());
          send_line(c.fd, make_reject(marker.session_id, violations));
          return;
        }
        c.session_id = marker.session_id;
        c.validator = next;
        send_line(c.fd, make_ack(marker.session_id));
        return;
      }
      recorder_.apply_marker(marker, now);
    } catch (const Error& e) {
      recorder_.add_protocol_error(e.what());
      send_line(c.fd, make_error(e.what()));
      return;
    }
    c.validator = next;
    if (marker.kind == MarkerKind::Goodbye && close_on_goodbye_) recorder_.close(clock_.now_ns());
  };

  auto drop = [&](Connection& c) {
    if (c.validator.greeted() && !c.validator.finished()) {
      const std::int64_t now = clock_.now_ns();
      spdlog::warn("marker connection for {} dropped without goodbye", c.session_id);
      recorder_.add_flag(std::string(kFlagUncleanShutdown));
      if (close_on_goodbye_) {
        recorder_.close(now);
        if (auto last = recorder_.last_sample_ns()) recorder_.close_open_phase(*last);
      } else {
        recorder_.close_open_phase(now);
      }
    }
    ::close(c.fd);
    c.fd = -1;
  };

  while (!stop.stop_requested()) {
    std::vector<pollfd> fds;
    fds.push_back({listen_fd_, POLLIN, 0});
    for (auto& c : conns) fds.push_back({c.fd, POLLIN, 0});
    int rc = ::poll(fds.data(), fds.size(), 50);
    if (rc < 0) {
      if (errno == EINTR) continue;
      spdlog::error("marker listener poll failed: {}", std::strerror(errno));
      break;
    }
    if (rc == 0) continue;

    if (fds[0].revents & POLLIN) {
      int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd >= 0) conns.push_back(Connection{fd, {}, {}, {}});
    }
    std::size_t i = 1;
    for (auto it = conns.begin(); it != conns.end(); ++i) {
      if (i >= fds.size() || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) {
        ++it;
        continue;
      }
      char buf[4096];
      ssize_t n = ::recv(it->fd, buf, sizeof(buf), 0);
      if (n > 0) {
        it->buffer.append(buf, static_cast<std::size_t>(n));
        std::size_t pos;
        while ((pos = it->buffer.find('\n')) != std::string::npos) {
          std::string line = it->buffer.substr(0, pos);
          it->buffer.erase(0, pos + 1);
          handle_line(*it, line);
        }
        ++it;
      } else if (n < 0 && errno == EINTR) {
        ++it;
      } else {
        if (!it->buffer.empty()) {
          handle_line(*it, it->buffer);
          it->buffer.clear();
        }
        drop(*it);
        it = conns.erase(it);
      }
    }
  }
  for (auto& c : conns) ::close(c.fd);
}

}  // namespace joulemark
