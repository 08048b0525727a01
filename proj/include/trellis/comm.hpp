#pragma once

#include "trellis/bytes.hpp"
#include "trellis/common.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace trellis {

namespace detail {
class Transport;
}

enum class ReduceOp { sum, max, min };

/// Raised on a rank when another rank of the same launch failed first; the
/// launcher rethrows the original failure instead of this one.
class PeerAbort : public Error {
 public:
  using Error::Error;
};

/// Per-rank communicator handle over P simulated in-process ranks.
///
/// A CommContext is confined to the rank it was created for. Copies share the
/// rank's collective sequence counter, so any copy may be stored inside Maps
/// or solvers on that rank. Messages between a fixed (source, destination,
/// tag) triple are delivered in send order. Collectives must be entered by
/// every rank in the same order; a mismatch or a missing participant ends in
/// a deadlock diagnostic, never silent corruption.
class CommContext {
 public:
  CommContext() = default;

  int rank() const;
  int size() const;

  void send(int dest, int tag, std::span<const std::byte> payload) const;
  Bytes recv(int source, int tag) const;

  template <typename T>
  void send_values(int dest, int tag, std::span<const T> values) const {
    static_assert(std::is_trivially_copyable_v<T>);
    Bytes buf;
    put_span<T>(buf, values);
    send(dest, tag, buf);
  }

  template <typename T>
  std::vector<T> recv_values(int source, int tag) const {
    Bytes buf = recv(source, tag);
    ByteReader r(buf);
    auto vs = r.get_vector<T>();
    TRELLIS_REQUIRE(r.exhausted(), "recv_values: trailing bytes in payload");
    return vs;
  }

  /// Elementwise reduction over all ranks; every rank receives the result.
  /// The reduction is applied in rank order 0..P-1, so results are bitwise
  /// reproducible run to run.
  std::vector<Real> all_reduce(std::span<const Real> local, ReduceOp op) const;
  Real all_reduce_scalar(Real local, ReduceOp op) const;
  std::int64_t all_reduce_scalar(std::int64_t local, ReduceOp op) const;

  /// Every rank receives all P payloads indexed by contributing rank.
  std::vector<Bytes> all_gather(std::span<const std::byte> local) const;

  template <typename T>
  std::vector<std::vector<T>> all_gather_values(std::span<const T> values) const {
    Bytes buf;
    put_span<T>(buf, values);
    std::vector<Bytes> parts = all_gather(buf);
    std::vector<std::vector<T>> out(parts.size());
    for (std::size_t r = 0; r < parts.size(); ++r) {
      ByteReader reader(parts[r]);
      out[r] = reader.get_vector<T>();
    }
    return out;
  }

  Bytes broadcast(int root, std::span<const std::byte> payload) const;
  void barrier() const;

 private:
  friend CommContext detail_make_context(int rank, std::shared_ptr<detail::Transport> transport);

  struct RankState;
  std::shared_ptr<RankState> state_;
};

struct LaunchOptions {
  /// Deadlock timeout in seconds; 0 or negative picks the default
  /// (TRELLIS_COMM_TIMEOUT_S environment variable, else 30 s).
  double timeout_s = 0.0;
};

namespace detail {
std::shared_ptr<Transport> make_transport(int size, double timeout_s);
void run_ranks(int P, const std::function<void(CommContext&)>& program, double timeout_s);
}  // namespace detail

CommContext detail_make_context(int rank, std::shared_ptr<detail::Transport> transport);

/// Number of ranks the harness uses by default (TRELLIS_RANKS, default 4).
int default_rank_count();

/// Run `program(ctx)` once per rank on P workers sharing one transport and
/// return the per-rank results indexed by rank. The first per-rank failure
/// (lowest rank among original, non-secondary failures) is rethrown after
/// all workers have stopped.
template <typename F>
auto launch(int P, F&& program, LaunchOptions opts = {}) {
  using R = std::invoke_result_t<F&, CommContext&>;
  if constexpr (std::is_void_v<R>) {
    detail::run_ranks(P, std::function<void(CommContext&)>(std::forward<F>(program)), opts.timeout_s);
  } else {
    std::vector<std::optional<R>> slots(static_cast<std::size_t>(P));
    auto wrapper = [&slots, &program](CommContext& ctx) { slots[static_cast<std::size_t>(ctx.rank())].emplace(program(ctx)); };
    detail::run_ranks(P, std::function<void(CommContext&)>(wrapper), opts.timeout_s);
    std::vector<R> results;
    results.reserve(slots.size());
    for (auto& s : slots) results.push_back(std::move(*s));
    return results;
  }
}

}  // namespace trellis
