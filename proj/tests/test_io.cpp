#include <doctest.h>

#include <cmath>
#include <limits>

#include "scope/core/binary_io.hpp"
#include "scope/core/error.hpp"

using namespace scope;

TEST_CASE("byte writer is little-endian") {
  io::ByteWriter w;
  w.u32(0x01020304u);
  w.u16(0xA0B0u);
  const auto& b = w.buffer();
  REQUIRE(b.size() == 6);
  CHECK(b[0] == 0x04);
  CHECK(b[3] == 0x01);
  CHECK(b[4] == 0xB0);
}

TEST_CASE("round trip of every primitive") {
  io::ByteWriter w;
  w.u8(7);
  w.i32(-5);
  w.u64(1ULL << 60);
  w.f64(-0.0);
  w.f64(std::numeric_limits<double>::infinity());
  w.string("hello");
  w.f64_array(std::vector<double>{1.5, -2.25});
  io::ByteReader r(w.buffer());
  CHECK(r.u8() == 7);
  CHECK(r.i32() == -5);
  CHECK(r.u64() == (1ULL << 60));
  const double nz = r.f64();
  CHECK(nz == 0.0);
  CHECK(std::signbit(nz));
  CHECK(std::isinf(r.f64()));
  CHECK(r.string() == "hello");
  CHECK(r.f64_array(2) == std::vector<double>{1.5, -2.25});
  CHECK(r.remaining() == 0);
}

TEST_CASE("truncation reports the offset") {
  io::ByteWriter w;
  w.u32(1);
  w.u16(2);
  io::ByteReader r(w.buffer());
  r.u32();
  try {
    r.u64();
    FAIL("expected TruncationError");
  } catch (const TruncationError& e) {
    CHECK(e.offset() == 4);
  }
}

TEST_CASE("header validation") {
  io::ByteWriter w;
  io::write_header(w, "ABCDEFGH", 2);
  {
    io::ByteReader r(w.buffer());
    CHECK(io::read_header(r, "ABCDEFGH", 3) == 2);
  }
  {
    io::ByteReader r(w.buffer());
    CHECK_THROWS_AS(io::read_header(r, "ZZZZZZZZ", 3), FormatError);
  }
  {
    io::ByteReader r(w.buffer());
    CHECK_THROWS_AS(io::read_header(r, "ABCDEFGH", 1), VersionError);
  }
}
