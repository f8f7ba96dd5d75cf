#include <doctest.h>

#include <cstring>
#include <fstream>

#include "recap/dataset.hpp"
#include "recap/errors.hpp"
#include "recap/util.hpp"
#include "support.hpp"

using namespace recap;
using testing::TempDir;

namespace {

std::string random_text(Rng& rng) {
  // ASCII, escapes and multi-byte UTF-8.
  static const char* pieces[] = {"a", "Z", " ", "\"", "\\", "\n", "\t", "\xc3\xa9", "\xe6\x97\xa5",
                                 "\xf0\x9f\x93\xb7", "{", "}", "0", "/"};
  std::string s;
  const std::size_t n = rng.below(24);
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.below(std::size(pieces))];
  return s;
}

double random_double(Rng& rng) {
  switch (rng.below(4)) {
    case 0: return rng.normal(0.0, 1e6);
    case 1: return rng.uniform();
    case 2: return static_cast<double>(rng.below(100)) - 50.0;
    default: {
      // Arbitrary finite bit pattern.
      for (;;) {
        const std::uint64_t bits = rng.next_u64();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        if (std::isfinite(d)) return d;
      }
    }
  }
}

PreferencePair random_pair(Rng& rng, std::size_t i) {
  PreferencePair p;
  p.record_id = "r" + std::to_string(i) + random_text(rng);
  p.prompt = random_text(rng);
  p.chosen = "c" + random_text(rng);
  p.rejected = "r" + random_text(rng);
  p.chosen_length = rng.below(1000);
  p.rejected_length = rng.below(1000);
  p.rejected_score = random_double(rng);
  p.chosen_score = p.rejected_score + std::abs(rng.normal());
  return p;
}

CaptionRecord random_record(Rng& rng, std::size_t i) {
  CaptionRecord r;
  r.id = "id-" + std::to_string(i);
  r.image_ref = random_text(rng);
  if (rng.below(2)) r.alt_text = random_text(rng);
  if (rng.below(2)) r.caption = random_text(rng);
  r.source = static_cast<CaptionSource>(rng.below(5));
  if (r.source == CaptionSource::candidate && !r.caption) r.caption = "";
  return r;
}

CandidateSet random_set(Rng& rng, std::size_t i) {
  CandidateSet s;
  s.record_id = "s" + std::to_string(i);
  s.prompt = random_text(rng);
  const std::size_t k = 1 + rng.below(8);
  for (std::size_t j = 0; j < k; ++j) s.candidates.push_back({random_text(rng), rng.below(50), random_double(rng)});
  s.sampler = {0.01 + 0.99 * rng.uniform(), 1 + rng.below(50), 2 * rng.uniform(), 2 + rng.below(8), rng.next_u64()};
  return s;
}

DatasetManifest manifest(Stage stage, std::size_t n) {
  DatasetManifest m;
  m.stage = stage;
  m.count = n;
  m.seed = 0xfedcba9876543210ULL;
  m.config_hash = sha256_hex("cfg");
  m.created_at = "1970-01-01T00:00:00Z";
  m.length_mode = LengthMode::model_tokens;
  m.extra = {{"note", "x"}};
  return m;
}

template <class Record, class Make>
void round_trip(Stage stage, Make make) {
  TempDir dir;
  Rng rng(99);
  std::vector<Record> records;
  for (std::size_t i = 0; i < 1000; ++i) records.push_back(make(rng, i));
  const auto path = dir / "f.jsonl";
  const auto m = manifest(stage, records.size());
  const auto bytes = write_jsonl(path, m, records);
  CHECK(bytes == read_file(path).size());
  const auto back = read_jsonl<Record>(path, stage);
  CHECK(back.manifest == m);
  REQUIRE(back.records.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(back.records[i] == records[i]);
  // Re-encoding gives the same bytes.
  CHECK(encode_jsonl(back.manifest, std::span<const Record>(back.records)) == read_file(path));
}

}  // namespace

TEST_CASE("round trip: 1000 random pairs, records and candidate sets") {
  round_trip<PreferencePair>(Stage::pairs, random_pair);
  round_trip<CaptionRecord>(Stage::ingested, random_record);
  round_trip<CandidateSet>(Stage::candidates, random_set);
}

TEST_CASE("empty body: manifest only") {
  TempDir dir;
  const auto path = dir / "e.jsonl";
  write_jsonl(path, manifest(Stage::balanced, 0), std::vector<PreferencePair>{});
  const auto text = read_file(path);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  const auto d = read_jsonl<PreferencePair>(path, Stage::balanced);
  CHECK(d.records.empty());
  CHECK(d.manifest.stage == Stage::balanced);
}

TEST_CASE("three pairs come back in order") {
  TempDir dir;
  Rng rng(1);
  std::vector<PreferencePair> pairs{random_pair(rng, 0), random_pair(rng, 1), random_pair(rng, 2)};
  write_jsonl(dir / "p.jsonl", manifest(Stage::pairs, 3), pairs);
  JsonlReader<PreferencePair> reader(dir / "p.jsonl", Stage::pairs);
  for (const auto& want : pairs) {
    const auto got = reader.next();
    REQUIRE(got);
    CHECK(*got == want);
  }
  CHECK_FALSE(reader.next());
}

TEST_CASE("errors carry line numbers and stage mismatches are typed") {
  TempDir dir;
  Rng rng(2);
  std::vector<PreferencePair> pairs{random_pair(rng, 0), random_pair(rng, 1)};
  write_jsonl(dir / "p.jsonl", manifest(Stage::pairs, 2), pairs);
  auto text = read_file(dir / "p.jsonl");
  // Truncate the first record (line 2).
  const auto first_nl = text.find('\n');
  const auto second_nl = text.find('\n', first_nl + 1);
  auto broken = text.substr(0, first_nl + 1) + text.substr(first_nl + 1, 20) + text.substr(second_nl);
  write_file_atomic(dir / "b.jsonl", broken);
  try {
    (void)read_jsonl<PreferencePair>(dir / "b.jsonl", Stage::pairs);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(read_jsonl<PreferencePair>(dir / "p.jsonl", Stage::balanced), StageMismatch);
  CHECK_THROWS_AS(read_jsonl<CaptionRecord>(dir / "p.jsonl", Stage::pairs), StageMismatch);
  CHECK_THROWS_AS(read_jsonl<PreferencePair>(dir / "missing.jsonl", Stage::pairs), IoError);

  // Body shorter than the manifest count.
  write_file_atomic(dir / "short.jsonl", text.substr(0, second_nl + 1));
  CHECK_THROWS_AS(read_jsonl<PreferencePair>(dir / "short.jsonl", Stage::pairs), ParseError);
  // Schema version.
  auto wrong_v = text;
  wrong_v.replace(wrong_v.find("\"v\":1"), 5, "\"v\":2");
  write_file_atomic(dir / "v.jsonl", wrong_v);
  CHECK_THROWS(read_jsonl<PreferencePair>(dir / "v.jsonl", Stage::pairs));
}

TEST_CASE("writer refuses a count mismatch and duplicate ids") {
  TempDir dir;
  Rng rng(3);
  std::vector<PreferencePair> pairs{random_pair(rng, 0)};
  CHECK_THROWS_AS(write_jsonl(dir / "x.jsonl", manifest(Stage::pairs, 2), pairs), InvalidArgument);
  CHECK_FALSE(std::filesystem::exists(dir / "x.jsonl"));
  std::vector<CaptionRecord> dup{random_record(rng, 1), random_record(rng, 1)};
  CHECK_THROWS_AS(write_jsonl(dir / "y.jsonl", manifest(Stage::ingested, 2), dup), InvalidArgument);
  CHECK_THROWS_AS(write_jsonl(dir / "z.jsonl", manifest(Stage::ingested, 1), pairs), StageMismatch);
  write_file_atomic(dir / "plain", "x");
  CHECK_THROWS_AS(write_jsonl(dir / "plain/f.jsonl", manifest(Stage::pairs, 1), pairs), IoError);
}

TEST_CASE("record invariants are enforced on read") {
  PreferencePair p{"r", "x", "same", 1, "same", 1, 1.0, 0.0};
  CHECK_THROWS(p.validate());
  p.rejected = "other";
  p.chosen_score = -1.0;
  CHECK_THROWS(p.validate());
  SamplerParams s;
  CHECK(s == SamplerParams{1.0, 20, 1.0, 8, 0});
  s.top_p = 0.0;
  CHECK_THROWS(s.validate());
}

TEST_CASE("config hash is a pure function of the serialized text") {
  CHECK(config_hash_of("a = 1\n") == config_hash_of("a = 1\n"));
  CHECK(config_hash_of("a = 1\n") != config_hash_of("a = 2\n"));
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
