#pragma once

// Byte transports between edge and cloud. MemoryTransport hands buffers over
// in-process; LoopbackTransport pushes length-prefixed frames through a
// local socket pair with the reader on its own thread.

#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "streamweave/error.hpp"
#include "streamweave/wire.hpp"

namespace streamweave::wire {

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::span<const std::uint8_t> bytes) = 0;
  /// Blocks until a message is available; empty once the transport is closed and drained.
  virtual std::optional<std::vector<std::uint8_t>> receive() = 0;
  virtual void close() = 0;
};

class MemoryTransport final : public Transport {
 public:
  void send(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(mu_);
    if (closed_) throw Error(Errc::IoError, "send on closed transport");
    queue_.emplace_back(bytes.begin(), bytes.end());
  }
  std::optional<std::vector<std::uint8_t>> receive() override {
    std::lock_guard lock(mu_);
    if (queue_.empty()) return std::nullopt;
    auto out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }
  void close() override {
    std::lock_guard lock(mu_);
    closed_ = true;
  }

 private:
  std::mutex mu_;
  std::deque<std::vector<std::uint8_t>> queue_;
  bool closed_ = false;
};

class LoopbackTransport final : public Transport {
 public:
  LoopbackTransport() {
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds_) != 0) {
      throw Error(Errc::IoError, std::string("socketpair: ") + std::strerror(errno));
    }
    reader_ = std::thread([this] { read_loop(); });
  }
  LoopbackTransport(const LoopbackTransport&) = delete;
  LoopbackTransport& operator=(const LoopbackTransport&) = delete;
  ~LoopbackTransport() override {
    close();
    if (reader_.joinable()) reader_.join();
    ::close(fds_[1]);
  }

  void send(std::span<const std::uint8_t> bytes) override {
    const auto framed = frame(bytes);
    std::lock_guard lock(write_mu_);
    if (write_closed_) throw Error(Errc::IoError, "send on closed transport");
    std::size_t off = 0;
    while (off < framed.size()) {
      const ssize_t n = ::write(fds_[0], framed.data() + off, framed.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::IoError, std::string("write: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::vector<std::uint8_t>> receive() override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || eof_; });
    if (!error_.empty()) throw Error(Errc::IoError, error_);
    if (queue_.empty()) return std::nullopt;
    auto out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  void close() override {
    std::lock_guard lock(write_mu_);
    if (!write_closed_) {
      ::shutdown(fds_[0], SHUT_WR);
      ::close(fds_[0]);
      write_closed_ = true;
    }
  }

 private:
  bool read_exact(std::uint8_t* dst, std::size_t n) {
    std::size_t off = 0;
    while (off < n) {
      const ssize_t r = ::read(fds_[1], dst + off, n - off);
      if (r == 0) {
        if (off != 0) throw Error(Errc::Truncated, "frame cut short");
        return false;
      }
      if (r < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::IoError, std::string("read: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(r);
    }
    return true;
  }

  void read_loop() {
    try {
      for (;;) {
        std::uint8_t len_bytes[4];
        if (!read_exact(len_bytes, 4)) break;
        const std::uint32_t len = static_cast<std::uint32_t>(len_bytes[0]) | (std::uint32_t{len_bytes[1]} << 8) |
                                  (std::uint32_t{len_bytes[2]} << 16) | (std::uint32_t{len_bytes[3]} << 24);
        std::vector<std::uint8_t> body(len);
        if (len > 0 && !read_exact(body.data(), len)) throw Error(Errc::Truncated, "frame body missing");
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(body));
        cv_.notify_one();
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      error_ = e.what();
    }
    std::lock_guard lock(mu_);
    eof_ = true;
    cv_.notify_all();
  }

  int fds_[2] = {-1, -1};
  std::thread reader_;
  std::mutex write_mu_;
  bool write_closed_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> queue_;
  bool eof_ = false;
  std::string error_;
};

}  // namespace streamweave::wire
