#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "trellis/comm.hpp"

#include <numeric>

using namespace trellis;

namespace {
LaunchOptions fast_timeout() {
  LaunchOptions opts;
  opts.timeout_s = 0.25;
  return opts;
}
}  // namespace

TEST_CASE("launch runs one program per rank and indexes results by rank") {
  auto one = launch(1, [](CommContext& ctx) { return ctx.rank(); });
  CHECK(one == std::vector<int>{0});

  auto four = launch(4, [](CommContext& ctx) { return ctx.rank(); });
  CHECK(four == std::vector<int>{0, 1, 2, 3});

  CHECK_THROWS_AS(launch(0, [](CommContext&) { return 0; }), Error);
}

TEST_CASE("send/recv is FIFO per (source, dest, tag) triple") {
  launch(2, [](CommContext& ctx) {
    if (ctx.rank() == 0) {
      const double a[3] = {1, 2, 3};
      ctx.send_values<double>(1, 7, a);
      const double b[2] = {4, 5};
      ctx.send_values<double>(1, 7, b);
    } else {
      auto first = ctx.recv_values<double>(0, 7);
      auto second = ctx.recv_values<double>(0, 7);
      CHECK(first == std::vector<double>{1, 2, 3});
      CHECK(second == std::vector<double>{4, 5});
    }
  });
}

TEST_CASE("self-send is buffered") {
  launch(2, [](CommContext& ctx) {
    const double v[1] = {double(ctx.rank())};
    ctx.send_values<double>(ctx.rank(), 3, v);
    auto got = ctx.recv_values<double>(ctx.rank(), 3);
    CHECK(got[0] == double(ctx.rank()));
  });
}

TEST_CASE("recv with no matching send hits the deadlock diagnostic") {
  CHECK_THROWS_WITH_AS(
      launch(2,
             [](CommContext& ctx) {
               if (ctx.rank() == 0) (void)ctx.recv(1, 9);
             },
             fast_timeout()),
      doctest::Contains("deadlock"), Error);
}

TEST_CASE("recv with wrong tag never matches and times out") {
  CHECK_THROWS_WITH_AS(
      launch(2,
             [](CommContext& ctx) {
               if (ctx.rank() == 0) {
                 const double v[1] = {1.0};
                 ctx.send_values<double>(1, 5, v);
                 ctx.barrier();
               } else {
                 (void)ctx.recv(0, 6);
                 ctx.barrier();
               }
             },
             fast_timeout()),
      doctest::Contains("deadlock"), Error);
}

TEST_CASE("invalid ranks are rejected") {
  CHECK_THROWS_AS(launch(2,
                         [](CommContext& ctx) {
                           const double v[1] = {0.0};
                           ctx.send_values<double>(5, 0, v);
                         }),
                  Error);
}

TEST_CASE("all_reduce over rank values") {
  auto sums = launch(4, [](CommContext& ctx) {
    const Real local[1] = {Real(ctx.rank())};
    return ctx.all_reduce(local, ReduceOp::sum);
  });
  for (const auto& s : sums) CHECK(s == std::vector<Real>{6.0});

  auto identity = launch(1, [](CommContext& ctx) {
    const Real local[2] = {3.5, -1.0};
    return ctx.all_reduce(local, ReduceOp::sum);
  });
  CHECK(identity[0] == std::vector<Real>{3.5, -1.0});

  auto maxes = launch(4, [](CommContext& ctx) {
    const Real vals[4] = {3, 1, 4, 1};
    const Real local[1] = {vals[ctx.rank()]};
    return ctx.all_reduce(local, ReduceOp::max);
  });
  for (const auto& s : maxes) CHECK(s == std::vector<Real>{4.0});
}

TEST_CASE("all_reduce is bitwise reproducible run to run") {
  auto run = [] {
    return launch(4, [](CommContext& ctx) {
      std::vector<Real> local(8);
      for (int i = 0; i < 8; ++i) local[i] = 0.1 * (ctx.rank() + 1) * (i + 1) + 1e-17 * ctx.rank();
      return ctx.all_reduce(local, ReduceOp::sum);
    });
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("all_reduce length mismatch is an error, not a hang") {
  CHECK_THROWS_AS(launch(2,
                         [](CommContext& ctx) {
                           std::vector<Real> local(ctx.rank() == 0 ? 2 : 3, 1.0);
                           (void)ctx.all_reduce(local, ReduceOp::sum);
                         },
                         fast_timeout()),
                  Error);
}

TEST_CASE("all_gather returns payloads indexed by rank") {
  launch(3, [](CommContext& ctx) {
    const std::int32_t id[1] = {ctx.rank()};
    auto parts = ctx.all_gather_values<std::int32_t>(id);
    REQUIRE(parts.size() == 3);
    for (int r = 0; r < 3; ++r) {
      REQUIRE(parts[r].size() == 1);
      CHECK(parts[r][0] == r);
    }
  });
}

TEST_CASE("broadcast delivers the root payload everywhere") {
  launch(3, [](CommContext& ctx) {
    std::vector<double> payload;
    if (ctx.rank() == 2) payload = {42.0, 43.0};
    Bytes buf;
    put_span<double>(buf, payload);
    Bytes got = ctx.broadcast(2, buf);
    ByteReader reader(got);
    auto vs = reader.get_vector<double>();
    CHECK(vs == std::vector<double>{42.0, 43.0});
  });
}

TEST_CASE("barrier with one rank returns immediately") {
  launch(1, [](CommContext& ctx) { ctx.barrier(); });
}

TEST_CASE("a rank skipping a collective triggers the deadlock diagnostic") {
  CHECK_THROWS_WITH_AS(
      launch(3,
             [](CommContext& ctx) {
               if (ctx.rank() != 1) ctx.barrier();
             },
             fast_timeout()),
      doctest::Contains("deadlock"), Error);
}

TEST_CASE("mismatched collective kinds abort with a diagnostic") {
  CHECK_THROWS_WITH_AS(
      launch(2,
             [](CommContext& ctx) {
               if (ctx.rank() == 0) {
                 ctx.barrier();
               } else {
                 const Real v[1] = {1.0};
                 (void)ctx.all_reduce(v, ReduceOp::sum);
               }
             },
             fast_timeout()),
      doctest::Contains("collective mismatch"), Error);
}

TEST_CASE("the first per-rank failure propagates") {
  CHECK_THROWS_WITH_AS(launch(4,
                              [](CommContext& ctx) {
                                if (ctx.rank() == 2) throw Error("boom from rank 2");
                                ctx.barrier();
                              },
                              fast_timeout()),
                       doctest::Contains("boom from rank 2"), Error);
}

TEST_CASE("launch supports void programs") {
  launch(2, [](CommContext& ctx) { ctx.barrier(); });
}
