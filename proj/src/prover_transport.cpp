#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>

#include "dsp/prover.hpp"

namespace dsp::prover {

namespace {

void ignore_sigpipe() {
  // A peer that exits mid-write must surface as an error, not kill us.
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// Line-oriented channel over a pair of file descriptors.
class LineChannel {
 public:
  LineChannel(int in_fd, int out_fd) : in_(in_fd), out_(out_fd) {}

  void send(const std::string& line) {
    if (!write_all(out_, line + "\n")) {
      throw SessionDead(std::string("write to prover failed: ") + std::strerror(errno));
    }
  }

  std::string receive(std::int64_t deadline_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(deadline_ms);
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) {
        throw SessionDead("prover did not answer within " + std::to_string(deadline_ms) + " ms");
      }
      pollfd p{in_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::min<std::int64_t>(left, 1 << 30)));
      if (r < 0 && errno != EINTR) {
        throw SessionDead(std::string("poll failed: ") + std::strerror(errno));
      }
      if (r <= 0) {
        continue;
      }
      char chunk[4096];
      const ssize_t n = ::read(in_, chunk, sizeof chunk);
      if (n == 0) {
        throw SessionDead("prover closed the connection");
      }
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) {
          continue;
        }
        throw SessionDead(std::string("read from prover failed: ") + std::strerror(errno));
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  Json roundtrip(const Json& frame, std::int64_t deadline_ms) {
    send(frame.dump());
    const std::string line = receive(deadline_ms);
    try {
      return Json::parse(line);
    } catch (const Json::parse_error&) {
      throw SessionDead("malformed response frame from prover: " + line.substr(0, 200));
    }
  }

 private:
  int in_;
  int out_;
  std::string buffer_;
};

class LoopbackTransport : public Transport {
 public:
  explicit LoopbackTransport(std::shared_ptr<FrameHandler> handler) : handler_(std::move(handler)) {}
  Json roundtrip(const Json& frame, std::int64_t) override {
    return Json::parse(handler_->handle(Json::parse(frame.dump())).dump());
  }

 private:
  std::shared_ptr<FrameHandler> handler_;
};

class ExecTransport : public Transport {
 public:
  explicit ExecTransport(const std::string& command) {
    ignore_sigpipe();
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
      throw ConnectError(std::string("pipe failed: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      throw ConnectError(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    channel_ = std::make_unique<LineChannel>(read_fd_, write_fd_);
  }

  ~ExecTransport() override {
    if (write_fd_ >= 0) {
      ::close(write_fd_);  // EOF asks a well-behaved backend to exit
    }
    if (read_fd_ >= 0) {
      ::close(read_fd_);
    }
    if (pid_ > 0) {
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  Json roundtrip(const Json& frame, std::int64_t deadline_ms) override {
    return channel_->roundtrip(frame, deadline_ms);
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::unique_ptr<LineChannel> channel_;
};

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(const std::string& host_port) {
    ignore_sigpipe();
    const auto colon = host_port.rfind(':');
    if (colon == std::string::npos) {
      throw ConnectError("tcp backend address must be host:port, got '" + host_port + "'");
    }
    const std::string host = host_port.substr(0, colon);
    const std::string port = host_port.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw ConnectError("cannot resolve " + host_port + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no addresses";
    for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) {
        last_error = std::strerror(errno);
        continue;
      }
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        fd_ = fd;
        break;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) {
      throw ConnectError("cannot connect to " + host_port + ": " + last_error);
    }
    channel_ = std::make_unique<LineChannel>(fd_, fd_);
  }

  ~TcpTransport() override {
    if (fd_ >= 0) {
      ::close(fd_);
    }
  }

  Json roundtrip(const Json& frame, std::int64_t deadline_ms) override {
    return channel_->roundtrip(frame, deadline_ms);
  }

 private:
  int fd_ = -1;
  std::unique_ptr<LineChannel> channel_;
};

}  // namespace

void serve_stream(FrameHandler& handler, int in_fd, int out_fd) {
  ignore_sigpipe();
  std::string buffer;
  char chunk[4096];
  while (true) {
    auto nl = buffer.find('\n');
    if (nl == std::string::npos) {
      const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) {
        continue;
      }
      if (n <= 0) {
        return;
      }
      buffer.append(chunk, static_cast<std::size_t>(n));
      continue;
    }
    const std::string line = buffer.substr(0, nl);
    buffer.erase(0, nl + 1);
    if (line.empty()) {
      continue;
    }
    Json reply;
    bool quit = false;
    try {
      const Json frame = Json::parse(line);
      quit = frame.value("cmd", std::string()) == "quit";
      reply = handler.handle(frame);
    } catch (const Json::exception& e) {
      reply = Json{{"id", nullptr}, {"status", "fail"}, {"reason", std::string("malformed frame: ") + e.what()}};
    }
    if (!write_all(out_fd, reply.dump() + "\n") || quit) {
      return;
    }
  }
}

std::unique_ptr<Transport> make_loopback_transport(std::shared_ptr<FrameHandler> handler) {
  return std::make_unique<LoopbackTransport>(std::move(handler));
}

std::unique_ptr<Transport> make_exec_transport(const std::string& command) {
  return std::make_unique<ExecTransport>(command);
}

std::unique_ptr<Transport> make_tcp_transport(const std::string& host_port) {
  return std::make_unique<TcpTransport>(host_port);
}

}  // namespace dsp::prover
