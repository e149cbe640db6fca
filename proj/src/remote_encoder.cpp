#include "ptsynth/remote_encoder.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <json.hpp>

#include "ptsynth/error.hpp"

namespace ptsynth {

std::string make_encode_request(std::span<const std::string> texts) {
  nlohmann::json j{{"op", "encode"}, {"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  return j.dump();
}

std::string make_error_response(std::string_view message) {
  return nlohmann::json{{"error", std::string(message)}}.dump();
}

FeatureMatrix parse_encode_response(std::string_view line, std::size_t expected_rows) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ProviderFailure, std::string("malformed response: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ProviderFailure, "response is not an object");
  if (j.contains("error")) {
    throw Error(ErrorCode::ProviderFailure,
                j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump());
  }
  if (!j.contains("dim") || !j["dim"].is_number_unsigned() || !j.contains("embeddings") ||
      !j["embeddings"].is_array()) {
    throw Error(ErrorCode::ProviderFailure, "response needs dim and embeddings");
  }
  const auto dim = j["dim"].get<std::size_t>();
  const auto& rows = j["embeddings"];
  if (dim == 0) throw Error(ErrorCode::ProviderFailure, "response dim is zero");
  if (rows.size() != expected_rows) {
    throw Error(ErrorCode::ProviderFailure, "expected " + std::to_string(expected_rows) +
                                                " embeddings, got " + std::to_string(rows.size()));
  }
  std::vector<float> data;
  data.reserve(expected_rows * dim);
  std::vector<std::string> ids;
  ids.reserve(expected_rows);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.size() != dim) {
      throw Error(ErrorCode::ProviderFailure, "embedding " + std::to_string(r) + " has wrong length");
    }
    for (const auto& x : row) {
      if (!x.is_number()) throw Error(ErrorCode::ProviderFailure, "non-numeric embedding value");
      const auto v = static_cast<float>(x.get<double>());
      if (!std::isfinite(v)) throw Error(ErrorCode::ProviderFailure, "non-finite embedding value");
      data.push_back(v);
    }
    ids.push_back(std::to_string(r));
  }
  return FeatureMatrix(dim, std::move(data), std::move(ids), false);
}

std::string handle_provider_request(EncoderProvider& provider, std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object() || j.value("op", "") != "encode" || !j.contains("texts") ||
        !j["texts"].is_array()) {
      return make_error_response("expected {\"op\":\"encode\",\"texts\":[...]}");
    }
    const auto texts = j["texts"].get<std::vector<std::string>>();
    const auto m = provider.encode_texts(texts);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = m.row(r);
      rows.push_back(std::vector<float>(row.begin(), row.end()));
    }
    return nlohmann::json{{"dim", provider.dim()}, {"embeddings", std::move(rows)}}.dump();
  } catch (const std::exception& e) {
    return make_error_response(e.what());
  }
}

FdTransport::FdTransport(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {}

FdTransport::~FdTransport() {
  if (write_fd_ != read_fd_) ::close(write_fd_);
  ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

void FdTransport::send_line(std::string_view line) {
  std::string payload(line);
  payload.push_back('\n');
  std::size_t sent = 0;
  while (sent < payload.size()) {
    const ssize_t n = ::write(write_fd_, payload.data() + sent, payload.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::ProviderFailure, std::string("write: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string FdTransport::recv_line() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[1 << 14];
    const ssize_t n = ::read(read_fd_, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::ProviderFailure, std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) throw Error(ErrorCode::ProviderFailure, "provider closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port) {
  ::signal(SIGPIPE, SIG_IGN);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::ProviderFailure, "cannot resolve " + host);
  }
  int fd = -1;
  for (addrinfo* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw Error(ErrorCode::ProviderFailure, "cannot connect to " + host + ":" + service);
  return std::make_unique<FdTransport>(fd, fd);
}

std::unique_ptr<LineTransport> connect_unix(const std::string& path) {
  ::signal(SIGPIPE, SIG_IGN);
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw Error(ErrorCode::ProviderFailure, "socket path too long");
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) throw Error(ErrorCode::ProviderFailure, "socket() failed");
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw Error(ErrorCode::ProviderFailure, "cannot connect to unix:" + path);
  }
  return std::make_unique<FdTransport>(fd, fd);
}

std::unique_ptr<LineTransport> spawn_process(const std::string& command) {
  ::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw Error(ErrorCode::ProviderFailure, "pipe() failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorCode::ProviderFailure, "pipe() failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::ProviderFailure, "fork() failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return std::make_unique<FdTransport>(from_child[0], to_child[1], pid);
}

std::unique_ptr<LineTransport> open_endpoint(const std::string& address) {
  if (address.starts_with("unix:")) return connect_unix(address.substr(5));
  if (address.starts_with("exec:")) return spawn_process(address.substr(5));
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw Error(ErrorCode::InvalidArgument, "endpoint must be host:port, unix:<path> or exec:<cmd>");
  }
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad port in '" + address + "'");
  }
  return connect_tcp(address.substr(0, colon), port);
}

RemoteEncoder::RemoteEncoder(std::unique_ptr<LineTransport> transport)
    : transport_(std::move(transport)) {}

FeatureMatrix RemoteEncoder::round_trip(std::span<const std::string> texts) {
  transport_->send_line(make_encode_request(texts));
  auto m = parse_encode_response(transport_->recv_line(), texts.size());
  if (dim_ && *dim_ != m.dim()) throw Error(ErrorCode::ProviderFailure, "provider changed dimension");
  dim_ = m.dim();
  return m;
}

std::size_t RemoteEncoder::dim() {
  std::lock_guard lock(mutex_);
  if (!dim_) {
    const std::string probe = "a";
    round_trip(std::span<const std::string>(&probe, 1));
  }
  return *dim_;
}

FeatureMatrix RemoteEncoder::encode_texts(std::span<const std::string> texts) {
  std::lock_guard lock(mutex_);
  return round_trip(texts);
}

}  // namespace ptsynth
