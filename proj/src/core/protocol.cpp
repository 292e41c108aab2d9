#include "core/protocol.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include <nlohmann/json.hpp>

#include "core/errors.hpp"

using ordered_json = nlohmann::ordered_json;

namespace covobf {

namespace {

std::string error_line(const std::string& message) {
  ordered_json j;
  j["type"] = "error";
  j["message"] = message;
  return j.dump();
}

void send_all(int fd, const std::string& data) {
  size_t sent = 0;
  while (sent < data.size()) {
    ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) throw DataError("send failed");
    sent += static_cast<size_t>(n);
  }
}

}  // namespace

InferenceServer::InferenceServer(ModelWeights model, Tokenizer tokenizer)
    : model_(std::move(model)), tokenizer_(std::move(tokenizer)) {
  validate_weights(model_);
  if (tokenizer_.size() != model_.config.n_vocab)
    throw DataError("server: vocab size does not match model");
}

InferenceServer::~InferenceServer() { stop(); }

void InferenceServer::start(const std::string& host, int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw DataError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw DataError("bad bind address: " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw DataError("bind failed on " + host + ":" + std::to_string(port));
  }
  if (::listen(listen_fd_, 16) != 0) throw DataError("listen failed");

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);

  running_ = true;
  accept_thread_ = std::thread(&InferenceServer::accept_loop, this);
}

void InferenceServer::accept_loop() {
  while (running_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    std::lock_guard<std::mutex> lock(conn_mutex_);
    if (!running_) {
      ::close(fd);
      break;
    }
    conn_fds_.push_back(fd);
    conn_threads_.emplace_back(&InferenceServer::serve_connection, this, fd);
  }
}

void InferenceServer::serve_connection(int fd) {
  std::string buffer;
  char chunk[4096];
  for (;;) {
    size_t nl;
    while ((nl = buffer.find('\n')) == std::string::npos) {
      ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n <= 0) return;
      buffer.append(chunk, static_cast<size_t>(n));
    }
    std::string line = buffer.substr(0, nl);
    buffer.erase(0, nl + 1);
    try {
      send_all(fd, handle_line(line) + "\n");
    } catch (const std::exception&) {
      return;  // client went away
    }
  }
}

std::string InferenceServer::handle_line(const std::string& line) const {
  ordered_json req = ordered_json::parse(line, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return error_line("malformed JSON");
  if (req.value("type", "") != "generate")
    return error_line("unknown request type");
  if (!req.contains("prompt") || !req["prompt"].is_string())
    return error_line("missing prompt");
  int max_new = req.value("max_new_tokens", -1);
  if (max_new < 0) return error_line("missing or negative max_new_tokens");

  TokenSequence prompt_ids = tokenizer_.tokenize(req["prompt"].get<std::string>());
  if (prompt_ids.empty()) return error_line("empty prompt");
  if (static_cast<int>(prompt_ids.size()) + max_new > model_.config.max_seq)
    return error_line("prompt plus max_new_tokens exceeds max_seq");

  TokenSequence full = generate(prompt_ids, model_, max_new);
  TokenSequence fresh(full.begin() + static_cast<long>(prompt_ids.size()), full.end());

  ordered_json resp;
  resp["type"] = "result";
  resp["text"] = tokenizer_.detokenize(fresh);
  resp["token_ids"] = fresh;
  return resp.dump();
}

void InferenceServer::wait() {
  if (accept_thread_.joinable()) accept_thread_.join();
}

void InferenceServer::stop() {
  bool was_running = running_.exchange(false);
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (was_running) {
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(conn_mutex_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    for (std::thread& t : conn_threads_) t.join();
    for (int fd : conn_fds_) ::close(fd);
    conn_threads_.clear();
    conn_fds_.clear();
  }
}

std::string request_raw(const std::string& host, int port, const std::string& line) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw DataError("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw DataError("bad address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw DataError("connect failed to " + host + ":" + std::to_string(port));
  }
  try {
    std::string out = line;
    if (out.empty() || out.back() != '\n') out += '\n';
    send_all(fd, out);
    std::string buffer;
    char chunk[4096];
    size_t nl;
    while ((nl = buffer.find('\n')) == std::string::npos) {
      ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n <= 0) throw DataError("connection closed before response");
      buffer.append(chunk, static_cast<size_t>(n));
    }
    ::close(fd);
    return buffer.substr(0, nl);
  } catch (...) {
    ::close(fd);
    throw;
  }
}

GenerateResponse request_generate(const std::string& host, int port,
                                  const std::string& prompt, int max_new) {
  ordered_json req;
  req["type"] = "generate";
  req["prompt"] = prompt;
  req["max_new_tokens"] = max_new;
  std::string line = request_raw(host, port, req.dump());
  ordered_json resp = ordered_json::parse(line, nullptr, false);
  if (resp.is_discarded()) throw DataError("malformed response from server");
  if (resp.value("type", "") == "error")
    throw DataError("server error: " + resp.value("message", "unknown"));
  if (resp.value("type", "") != "result") throw DataError("unexpected response type");
  GenerateResponse out;
  out.text = resp.at("text").get<std::string>();
  out.token_ids = resp.at("token_ids").get<TokenSequence>();
  return out;
}

std::pair<std::string, int> parse_addr(const std::string& addr) {
  size_t colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 >= addr.size())
    throw DataError("address must be host:port");
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (...) {
    throw DataError("bad port in address");
  }
  return {addr.substr(0, colon), port};
}

}  // namespace covobf
