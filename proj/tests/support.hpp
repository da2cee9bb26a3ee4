#pragma once

// Shared test helpers: scratch directories and a local chat-completions stub.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace testing_support {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "srlab") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Concatenated contents of every regular file below `dir`.
inline std::string slurp_tree(const fs::path& dir) {
  std::string all;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) all += slurp(entry.path());
  }
  return all;
}

/// Minimal chat-completions server on 127.0.0.1 and a random port.
/// The first `fail_first` requests get `fail_status`; later ones succeed with
/// a reply that echoes the requested score.
class ChatStub {
 public:
  struct Request {
    std::chrono::steady_clock::time_point at;
    std::string authorization;
    nlohmann::json body;
  };

  ChatStub(int fail_first = 0, int fail_status = 429) : fail_first_(fail_first), fail_status_(fail_status) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      Request r;
      r.at = std::chrono::steady_clock::now();
      r.authorization = req.get_header_value("Authorization");
      r.body = nlohmann::json::parse(req.body, nullptr, false);
      int index = 0;
      {
        std::lock_guard<std::mutex> lock(mu_);
        requests_.push_back(r);
        index = static_cast<int>(requests_.size()) - 1;
      }
      if (index < fail_first_ || fail_first_ < 0) {
        res.status = fail_status_;
        res.set_content(R"({"error":{"message":"try later"}})", "application/json");
        return;
      }
      const std::string content = r.body.is_discarded()
                                      ? std::string("bad request")
                                      : r.body["messages"][0]["content"].get<std::string>();
      const bool top = content.find("10 out of 10") != std::string::npos;
      const std::string text = top ? "Okay, here is a 10-score answer: the best answer for" + content.substr(content.size() - 8)
                                   : "a plain answer for" + content.substr(content.size() - 8);
      nlohmann::json reply{{"id", "stub"},
                           {"object", "chat.completion"},
                           {"choices", nlohmann::json::array({nlohmann::json{
                                           {"index", 0},
                                           {"message", {{"role", "assistant"}, {"content", text}}},
                                           {"finish_reason", "stop"}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ChatStub() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  ChatStub(const ChatStub&) = delete;
  ChatStub& operator=(const ChatStub&) = delete;

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::vector<Request> requests() const {
    std::lock_guard<std::mutex> lock(mu_);
    return requests_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int fail_first_;
  int fail_status_;
  mutable std::mutex mu_;
  std::vector<Request> requests_;
};

}  // namespace testing_support
