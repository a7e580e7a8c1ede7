#include <catch2/catch_amalgamated.hpp>

#include <trialign/binio.hpp>
#include <trialign/embedding.hpp>
#include <trialign/error.hpp>
#include <trialign/linalg3.hpp>
#include <trialign/rng.hpp>

#include <cstring>
#include <filesystem>

using namespace trialign;

TEST_CASE("normalize scales a 3-4-5 vector", "[embedding]") {
  std::vector<double> v{3.0, 4.0, 0.0, 0.0};
  const auto out = normalize(v);
  CHECK(out[0] == Catch::Approx(0.6).margin(1e-15));
  CHECK(out[1] == Catch::Approx(0.8).margin(1e-15));
  CHECK(out[2] == 0.0);
}

TEST_CASE("normalize is idempotent on unit vectors", "[embedding]") {
  RngEngine rng = make_rng(77);
  std::vector<double> v(16);
  for (double& x : v) x = gauss(rng, 0.0, 1.0);
  const auto u = normalize(v);
  const auto u2 = normalize(u);
  for (size_t i = 0; i < u.size(); ++i) CHECK(std::abs(u2[i] - u[i]) < 1e-12);
}

TEST_CASE("normalize output is unit and parallel to the input", "[embedding]") {
  RngEngine rng = make_rng(1);
  std::vector<double> v(12);
  for (double& x : v) x = gauss(rng, 0.0, 2.0);
  const auto out = normalize(v);
  CHECK(norm2(out) == Catch::Approx(1.0).margin(1e-12));
  // parallel: out * ||v|| == v elementwise
  const double n = norm2(v);
  for (size_t i = 0; i < v.size(); ++i) CHECK(out[i] * n == Catch::Approx(v[i]).margin(1e-9));
}

TEST_CASE("normalize rejects degenerate and non-finite input", "[embedding]") {
  std::vector<double> zeros(8, 0.0);
  CHECK_THROWS_AS(normalize(zeros), Error);
  std::vector<double> bad{1.0, std::nan(""), 0.0};
  CHECK_THROWS_AS(normalize(bad), Error);
  try {
    normalize(zeros);
  } catch (const Error& e) {
    CHECK(std::string(e.category_name()) == "invalid-input");
  }
}

TEST_CASE("cosine of identical, orthogonal and antipodal embeddings", "[embedding]") {
  Embedding a = make_embedding(std::vector<double>{1.0, 0.0, 0.0}, Modality::Image);
  Embedding b = make_embedding(std::vector<double>{0.0, 1.0, 0.0}, Modality::Pose2D);
  Embedding c = make_embedding(std::vector<double>{-1.0, 0.0, 0.0}, Modality::Pose3D);
  CHECK(cosine(a, a) == Catch::Approx(1.0).margin(1e-15));
  CHECK(cosine(a, b) == Catch::Approx(0.0).margin(1e-15));
  CHECK(cosine(a, c) == Catch::Approx(-1.0).margin(1e-15));
}

TEST_CASE("triplet positivity depends on index agreement", "[embedding]") {
  Embedding e = make_embedding(std::vector<double>{1.0, 1.0}, Modality::Image);
  CHECK(make_triplet(e, e, e, 4, 4, 4).is_positive());
  CHECK_FALSE(make_triplet(e, e, e, 4, 4, 5).is_positive());
}

TEST_CASE("identical rows in a triplet give top eigenvalue 3", "[embedding]") {
  RngEngine rng = make_rng(21);
  std::vector<double> v(10);
  for (double& x : v) x = gauss(rng, 0.0, 1.0);
  Embedding e = make_embedding(v, Modality::Image);
  const TripletMatrix t = make_triplet(e, e, e, 0, 0, 0);
  CHECK(top_eigenvalue(t.rows) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("interpolate returns the exact endpoints", "[embedding]") {
  RngEngine rng = make_rng(3);
  std::vector<double> va(8), vb(8);
  for (double& x : va) x = gauss(rng, 0.0, 1.0);
  for (double& x : vb) x = gauss(rng, 0.0, 1.0);
  Embedding a = make_embedding(va, Modality::Pose3D);
  Embedding b = make_embedding(vb, Modality::Pose3D);
  const Embedding at0 = interpolate(a, b, 0.0);
  const Embedding at1 = interpolate(a, b, 1.0);
  REQUIRE(at0.values == a.values);  // bitwise
  REQUIRE(at1.values == b.values);
}

TEST_CASE("interpolate midpoint of orthogonal embeddings", "[embedding]") {
  Embedding a = make_embedding(std::vector<double>{1.0, 0.0, 0.0, 0.0}, Modality::Pose3D);
  Embedding b = make_embedding(std::vector<double>{0.0, 1.0, 0.0, 0.0}, Modality::Pose3D);
  const Embedding mid = interpolate(a, b, 0.5);
  const double want = 1.0 / std::sqrt(2.0);
  CHECK(mid.values[0] == Catch::Approx(want).margin(1e-12));
  CHECK(mid.values[1] == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("interpolate moves at constant angular speed", "[embedding]") {
  RngEngine rng = make_rng(13);
  std::vector<double> va(16), vb(16);
  for (double& x : va) x = gauss(rng, 0.0, 1.0);
  for (double& x : vb) x = gauss(rng, 0.0, 1.0);
  Embedding a = make_embedding(va, Modality::Pose3D);
  Embedding b = make_embedding(vb, Modality::Pose3D);
  std::vector<Embedding> path;
  for (int s = 0; s <= 10; ++s) path.push_back(interpolate(a, b, s / 10.0));
  double first_chord = -1.0;
  for (int s = 0; s + 1 <= 10; ++s) {
    double chord = 0.0;
    for (int c = 0; c < 16; ++c) {
      const double d = path[static_cast<size_t>(s) + 1].values[static_cast<size_t>(c)] -
                       path[static_cast<size_t>(s)].values[static_cast<size_t>(c)];
      chord += d * d;
    }
    chord = std::sqrt(chord);
    if (first_chord < 0)
      first_chord = chord;
    else
      REQUIRE(chord == Catch::Approx(first_chord).margin(1e-6));
  }
}

TEST_CASE("interpolate rejects antipodal endpoints", "[embedding]") {
  Embedding a = make_embedding(std::vector<double>{1.0, 0.0}, Modality::Pose3D);
  Embedding b = make_embedding(std::vector<double>{-1.0, 0.0}, Modality::Pose3D);
  CHECK_THROWS_AS(interpolate(a, b, 0.5), Error);
}

TEST_CASE("modality names are stable", "[embedding]") {
  CHECK(std::string(modality_name(Modality::Image)) == "image");
  CHECK(std::string(modality_name(Modality::Pose2D)) == "pose2d");
  CHECK(std::string(modality_name(Modality::Pose3D)) == "pose3d");
}

TEST_CASE("byte writer/reader round-trips primitives", "[embedding]") {
  ByteWriter w;
  w.put_magic("TESTMAG1");
  w.put_u8(7);
  w.put_u32(123456u);
  w.put_i32(-99);
  w.put_u64(0xDEADBEEFCAFEull);
  w.put_f64(3.5);
  std::vector<double> xs{1.0, -2.0, 0.25};
  w.put_f64_span(xs);

  ByteReader r{std::span<const uint8_t>(w.bytes.data(), w.bytes.size())};
  REQUIRE(r.check_magic("TESTMAG1"));
  CHECK(r.get_u8() == 7);
  CHECK(r.get_u32() == 123456u);
  CHECK(r.get_i32() == -99);
  CHECK(r.get_u64() == 0xDEADBEEFCAFEull);
  CHECK(r.get_f64() == 3.5);
  std::vector<double> back(3);
  r.get_f64_span(back);
  CHECK(back == xs);
}

TEST_CASE("truncated reads throw invalid-input", "[embedding]") {
  ByteWriter w;
  w.put_u32(1);
  ByteReader r{std::span<const uint8_t>(w.bytes.data(), 2)};
  CHECK_THROWS_AS(r.get_u32(), Error);
}

TEST_CASE("crc seal detects corruption", "[embedding]") {
  ByteWriter w;
  w.put_u64(42);
  w.put_f64(1.25);
  std::vector<uint8_t> sealed = seal_with_crc(std::move(w));
  // intact payload unseals
  const auto payload = unseal_checked(sealed);
  CHECK(payload.size() == sealed.size() - 4);
  // flip one byte -> crc error
  std::vector<uint8_t> bad = sealed;
  bad[3] ^= 0x40;
  CHECK_THROWS_AS(unseal_checked(bad), Error);
}

TEST_CASE("atomic file write leaves no temp droppings and round-trips", "[embedding]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "trialign_binio_test";
  fs::create_directories(dir);
  const fs::path p = dir / "blob.bin";
  std::vector<uint8_t> bytes{1, 2, 3, 4, 5};
  atomic_write_file(p, bytes);
  CHECK(read_file_bytes(p) == bytes);
  int files = 0;
  for (auto const& ent : fs::directory_iterator(dir)) {
    (void)ent;
    ++files;
  }
  CHECK(files == 1);
  fs::remove_all(dir);
}

TEST_CASE("missing file read throws invalid-state", "[embedding]") {
  try {
    read_file_bytes("/nonexistent/trialign/nope.bin");
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(std::string(e.category_name()) == "invalid-state");
  }
}

TEST_CASE("derived seeds are deterministic and tag-sensitive", "[embedding]") {
  CHECK(derive_seed(42, 1) == derive_seed(42, 1));
  CHECK(derive_seed(42, 1) != derive_seed(42, 2));
  CHECK(derive_seed(42, 1, 5) != derive_seed(42, 1, 6));
  RngEngine a = make_rng(derive_seed(9, 0x7217));
  RngEngine b = make_rng(derive_seed(9, 0x7217));
  for (int i = 0; i < 16; ++i) REQUIRE(a() == b());
}

TEST_CASE("uniform_int covers an inclusive range", "[embedding]") {
  RngEngine rng = make_rng(4);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 2000; ++i) {
    const int v = uniform_int(rng, 2, 5);
    REQUIRE(v >= 2);
    REQUIRE(v <= 5);
    saw_lo |= (v == 2);
    saw_hi |= (v == 5);
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("error categories map to their names", "[embedding]") {
  CHECK_THROWS_AS(throw_invalid_input("x"), Error);
  CHECK_THROWS_AS(throw_invalid_state("x"), Error);
  CHECK_THROWS_AS(throw_numerical("x"), Error);
  try {
    throw_numerical("boom");
  } catch (const Error& e) {
    CHECK(std::string(e.category_name()) == "numerical-failure");
    CHECK(std::string(e.what()).find("boom") != std::string::npos);
  }
}
