#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ptsynth/encoder.hpp"

namespace ptsynth {

// Newline-delimited JSON provider protocol.
//   request:  {"op":"encode","texts":[...]}
//   response: {"dim":D,"embeddings":[[f32...],...]}
//   error:    {"error":"<msg>"}
std::string make_encode_request(std::span<const std::string> texts);
std::string make_error_response(std::string_view message);
// Throws ProviderFailure on error responses, malformed JSON or shape problems.
FeatureMatrix parse_encode_response(std::string_view line, std::size_t expected_rows);

// Server side: answers one request line with one response line (no newline).
// Never throws; failures become error responses.
std::string handle_provider_request(EncoderProvider& provider, std::string_view line);

class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  virtual std::string recv_line() = 0;
};

// Owns a read and a write descriptor (may be the same socket) and an optional child pid.
class FdTransport final : public LineTransport {
 public:
  FdTransport(int read_fd, int write_fd, int child_pid = -1);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void send_line(std::string_view line) override;
  std::string recv_line() override;

 private:
  int read_fd_;
  int write_fd_;
  int child_pid_;
  std::string buffer_;
};

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port);
std::unique_ptr<LineTransport> connect_unix(const std::string& path);
// Runs `command` via /bin/sh -c with its stdin/stdout wired to the transport.
std::unique_ptr<LineTransport> spawn_process(const std::string& command);

// Out-of-process encoder speaking the protocol above. Calls are serialized.
class RemoteEncoder final : public EncoderProvider {
 public:
  explicit RemoteEncoder(std::unique_ptr<LineTransport> transport);

  std::size_t dim() override;
  FeatureMatrix encode_texts(std::span<const std::string> texts) override;

 private:
  FeatureMatrix round_trip(std::span<const std::string> texts);

  std::mutex mutex_;
  std::unique_ptr<LineTransport> transport_;
  std::optional<std::size_t> dim_;
};

// "host:port", "unix:/path/to.sock" or "exec:<shell command>".
std::unique_ptr<LineTransport> open_endpoint(const std::string& address);

}  // namespace ptsynth
