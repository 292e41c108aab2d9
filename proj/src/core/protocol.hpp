#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "core/model.hpp"
#include "core/tokenizer.hpp"

namespace covobf {

// Newline-delimited JSON over TCP, one object per line, UTF-8.
// Request:  {"type":"generate","prompt":"...","max_new_tokens":N}
// Response: {"type":"result","text":"...","token_ids":[...]}
//           {"type":"error","message":"..."}
// token_ids / text cover the generated continuation only; the server always
// produces exactly max_new_tokens. It cannot stop at eos without knowing the
// client's token mapping, so truncation happens client-side after decoding.
class InferenceServer {
 public:
  InferenceServer(ModelWeights model, Tokenizer tokenizer);
  ~InferenceServer();

  // Binds and starts the accept loop; port 0 picks an ephemeral port.
  void start(const std::string& host, int port);
  int port() const { return port_; }
  // Blocks until stop() is called from another thread.
  void wait();
  void stop();

  // One request against a locally held model, same code path the socket
  // handler uses.
  std::string handle_line(const std::string& line) const;

 private:
  void accept_loop();
  void serve_connection(int fd);

  ModelWeights model_;
  Tokenizer tokenizer_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex conn_mutex_;
  std::vector<std::thread> conn_threads_;
  std::vector<int> conn_fds_;
};

struct GenerateResponse {
  std::string text;
  TokenSequence token_ids;
};

// Sends one raw request line (newline appended if missing) and returns the
// raw response line. Exposed so tests can scan the exact wire bytes.
std::string request_raw(const std::string& host, int port, const std::string& line);

GenerateResponse request_generate(const std::string& host, int port,
                                  const std::string& prompt, int max_new);

// "host:port" -> pair
std::pair<std::string, int> parse_addr(const std::string& addr);

}  // namespace covobf
