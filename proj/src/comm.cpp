#include "trellis/comm.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>

namespace trellis {

namespace detail {

namespace {
double env_timeout_default() {
  if (const char* s = std::getenv("TRELLIS_COMM_TIMEOUT_S")) {
    char* end = nullptr;
    double v = std::strtod(s, &end);
    if (end != s && v > 0) return v;
  }
  return 30.0;
}
}  // namespace

/// Shared in-memory message fabric for one launch. Internally synchronized;
/// every blocking wait carries the deadlock timeout.
class Transport {
 public:
  Transport(int size, double timeout_s)
      : size_(size), timeout_(timeout_s > 0 ? timeout_s : env_timeout_default()) {}

  int size() const { return size_; }

  void send(int src, int dst, int tag, Bytes payload) {
    check_rank(dst, "send destination");
    std::lock_guard<std::mutex> lock(mu_);
    throw_if_aborted();
    queues_[key(src, dst, tag)].push_back(std::move(payload));
    cv_.notify_all();
  }

  Bytes recv(int dst, int src, int tag) {
    check_rank(src, "recv source");
    std::unique_lock<std::mutex> lock(mu_);
    auto& q = queues_[key(src, dst, tag)];
    wait(lock, [&] { return !q.empty(); },
         "rank " + std::to_string(dst) + " blocked in recv(source=" + std::to_string(src) +
             ", tag=" + std::to_string(tag) + ")");
    Bytes payload = std::move(q.front());
    q.pop_front();
    return payload;
  }

  /// One collective round: every rank contributes a payload under the same
  /// operation name; all ranks receive all P payloads. Rounds are matched by
  /// the per-rank sequence number, so a rank that skips a collective leaves
  /// its peers waiting and the timeout fires.
  std::vector<Bytes> collective(int rank, std::uint64_t round, const char* op, Bytes contribution) {
    std::unique_lock<std::mutex> lock(mu_);
    throw_if_aborted();
    Round& r = rounds_[round];
    if (r.parts.empty()) {
      r.op = op;
      r.parts.resize(static_cast<std::size_t>(size_));
    } else if (r.op != op) {
      abort_locked("collective mismatch at round " + std::to_string(round) + ": rank " + std::to_string(rank) +
                   " called " + op + " while another rank called " + r.op);
      throw_if_aborted();
    }
    r.parts[static_cast<std::size_t>(rank)] = std::move(contribution);
    ++r.arrived;
    cv_.notify_all();
    wait(lock, [&] { return r.arrived == size_; },
         "rank " + std::to_string(rank) + " blocked in collective " + std::string(op) + " (round " +
             std::to_string(round) + ", " + std::to_string(r.arrived) + "/" + std::to_string(size_) +
             " ranks arrived)");
    std::vector<Bytes> result = r.parts;
    if (++r.consumed == size_) rounds_.erase(round);
    return result;
  }

  void abort(const std::string& reason) {
    std::lock_guard<std::mutex> lock(mu_);
    abort_locked(reason);
  }

 private:
  struct Round {
    std::string op;
    std::vector<Bytes> parts;
    int arrived = 0;
    int consumed = 0;
  };

  static std::tuple<int, int, int> key(int src, int dst, int tag) { return {src, dst, tag}; }

  void check_rank(int r, const char* what) const {
    TRELLIS_REQUIRE(r >= 0 && r < size_, std::string(what) + " rank " + std::to_string(r) +
                                             " out of range [0, " + std::to_string(size_) + ")");
  }

  void abort_locked(const std::string& reason) {
    if (!aborted_) {
      aborted_ = true;
      abort_reason_ = reason;
    }
    cv_.notify_all();
  }

  void throw_if_aborted() const {
    if (aborted_) throw PeerAbort("launch aborted: " + abort_reason_);
  }

  template <typename Pred>
  void wait(std::unique_lock<std::mutex>& lock, Pred pred, const std::string& where) {
    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(timeout_));
    while (!pred()) {
      throw_if_aborted();
      if (cv_.wait_until(lock, deadline) == std::cv_status::timeout && !pred()) {
        throw_if_aborted();
        throw Error("deadlock detected after " + format_seconds(timeout_) + ": " + where);
      }
    }
    throw_if_aborted();
  }

  static std::string format_seconds(double s) {
    std::ostringstream os;
    os << s << " s";
    return os.str();
  }

  int size_;
  double timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::tuple<int, int, int>, std::deque<Bytes>> queues_;
  std::map<std::uint64_t, Round> rounds_;
  bool aborted_ = false;
  std::string abort_reason_;
};

std::shared_ptr<Transport> make_transport(int size, double timeout_s) {
  return std::make_shared<Transport>(size, timeout_s);
}

}  // namespace detail

struct CommContext::RankState {
  int rank = 0;
  std::shared_ptr<detail::Transport> transport;
  std::uint64_t round = 0;
};

CommContext detail_make_context(int rank, std::shared_ptr<detail::Transport> transport) {
  CommContext ctx;
  ctx.state_ = std::make_shared<CommContext::RankState>();
  ctx.state_->rank = rank;
  ctx.state_->transport = std::move(transport);
  return ctx;
}

int CommContext::rank() const {
  TRELLIS_REQUIRE(state_ != nullptr, "CommContext used before launch");
  return state_->rank;
}

int CommContext::size() const {
  TRELLIS_REQUIRE(state_ != nullptr, "CommContext used before launch");
  return state_->transport->size();
}

void CommContext::send(int dest, int tag, std::span<const std::byte> payload) const {
  state_->transport->send(state_->rank, dest, tag, Bytes(payload.begin(), payload.end()));
}

Bytes CommContext::recv(int source, int tag) const { return state_->transport->recv(state_->rank, source, tag); }

std::vector<Bytes> CommContext::all_gather(std::span<const std::byte> local) const {
  const std::uint64_t round = state_->round++;
  return state_->transport->collective(state_->rank, round, "all_gather", Bytes(local.begin(), local.end()));
}

std::vector<Real> CommContext::all_reduce(std::span<const Real> local, ReduceOp op) const {
  Bytes buf;
  put_span<Real>(buf, local);
  const std::uint64_t round = state_->round++;
  const char* name = op == ReduceOp::sum ? "all_reduce(sum)" : op == ReduceOp::max ? "all_reduce(max)" : "all_reduce(min)";
  std::vector<Bytes> parts = state_->transport->collective(state_->rank, round, name, std::move(buf));

  std::vector<Real> acc;
  for (int r = 0; r < static_cast<int>(parts.size()); ++r) {
    ByteReader reader(parts[static_cast<std::size_t>(r)]);
    std::vector<Real> contrib = reader.get_vector<Real>();
    if (r == 0) {
      acc = std::move(contrib);
      continue;
    }
    TRELLIS_REQUIRE(contrib.size() == acc.size(), "all_reduce length mismatch across ranks");
    for (std::size_t i = 0; i < acc.size(); ++i) {
      switch (op) {
        case ReduceOp::sum: acc[i] += contrib[i]; break;
        case ReduceOp::max: acc[i] = std::max(acc[i], contrib[i]); break;
        case ReduceOp::min: acc[i] = std::min(acc[i], contrib[i]); break;
      }
    }
  }
  return acc;
}

Real CommContext::all_reduce_scalar(Real local, ReduceOp op) const {
  return all_reduce(std::span<const Real>(&local, 1), op)[0];
}

std::int64_t CommContext::all_reduce_scalar(std::int64_t local, ReduceOp op) const {
  auto gathered = all_gather_values<std::int64_t>(std::span<const std::int64_t>(&local, 1));
  std::int64_t acc = gathered[0][0];
  for (std::size_t r = 1; r < gathered.size(); ++r) {
    switch (op) {
      case ReduceOp::sum: acc += gathered[r][0]; break;
      case ReduceOp::max: acc = std::max(acc, gathered[r][0]); break;
      case ReduceOp::min: acc = std::min(acc, gathered[r][0]); break;
    }
  }
  return acc;
}

Bytes CommContext::broadcast(int root, std::span<const std::byte> payload) const {
  TRELLIS_REQUIRE(root >= 0 && root < size(), "broadcast root out of range");
  Bytes contribution = state_->rank == root ? Bytes(payload.begin(), payload.end()) : Bytes{};
  const std::uint64_t round = state_->round++;
  std::vector<Bytes> parts = state_->transport->collective(state_->rank, round, "broadcast", std::move(contribution));
  return parts[static_cast<std::size_t>(root)];
}

void CommContext::barrier() const {
  const std::uint64_t round = state_->round++;
  state_->transport->collective(state_->rank, round, "barrier", Bytes{});
}

int default_rank_count() {
  if (const char* s = std::getenv("TRELLIS_RANKS")) {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end != s && v >= 1 && v <= 1024) return static_cast<int>(v);
  }
  return 4;
}

namespace detail {

void run_ranks(int P, const std::function<void(CommContext&)>& program, double timeout_s) {
  TRELLIS_REQUIRE(P >= 1, "launch requires at least one rank");
  auto transport = make_transport(P, timeout_s);

  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(P));
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(P));
  for (int r = 0; r < P; ++r) {
    workers.emplace_back([&, r] {
      CommContext ctx = detail_make_context(r, transport);
      try {
        program(ctx);
      } catch (...) {
        failures[static_cast<std::size_t>(r)] = std::current_exception();
        transport->abort("rank " + std::to_string(r) + " failed");
      }
    });
  }
  for (auto& w : workers) w.join();

  // Prefer the lowest-ranked original failure over secondary peer aborts.
  std::exception_ptr peer_abort;
  for (const auto& f : failures) {
    if (!f) continue;
    try {
      std::rethrow_exception(f);
    } catch (const PeerAbort&) {
      if (!peer_abort) peer_abort = f;
    } catch (...) {
      std::rethrow_exception(f);
    }
  }
  if (peer_abort) std::rethrow_exception(peer_abort);
}

}  // namespace detail

}  // namespace trellis
