#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "partseg/archive.hpp"
#include "partseg/config.hpp"
#include "testutil.hpp"

using namespace partseg;
using testutil::scratch_dir;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint64_t bits_of(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof(u));
  return u;
}

}  // namespace

TEST_CASE("archives round-trip doubles bit for bit") {
  std::string dir = scratch_dir("archive_rt");
  std::string path = dir + "/a.ckpt";

  Tensor tricky({2, 4});
  tricky[0] = -0.0;
  tricky[1] = std::numeric_limits<double>::denorm_min();
  tricky[2] = -1.7976931348623157e308;
  tricky[3] = std::numeric_limits<double>::quiet_NaN();
  tricky[4] = 1.0 / 3.0;
  tricky[5] = -2.2250738585072014e-308;
  tricky[6] = 0.1 + 0.2;
  tricky[7] = 4503599627370497.0;  // needs all 52 mantissa bits
  Tensor vec = Tensor::from({3}, {1.5, -2.5, 3.5});

  save_archive(path, {{"weights", tricky}, {"bias", vec}}, 1234, "cafebabe");
  Archive a = load_archive(path);
  CHECK(a.step == 1234);
  CHECK(a.config_hash == "cafebabe");
  REQUIRE(a.arrays.size() == 2);
  CHECK(a.arrays[0].first == "weights");
  CHECK(a.arrays[1].first == "bias");
  CHECK(a.has("bias"));
  CHECK_FALSE(a.has("nope"));
  CHECK_THROWS_AS(a.get("nope"), CorruptArchive);

  const Tensor& back = a.get("weights");
  REQUIRE(back.shape() == tricky.shape());
  for (std::int64_t i = 0; i < tricky.size(); ++i)
    CHECK(bits_of(back[i]) == bits_of(tricky[i]));
  CHECK(a.get("bias").checksum() == vec.checksum());
}

TEST_CASE("archive byte layout is magic, length, manifest, payload") {
  std::string dir = scratch_dir("archive_layout");
  std::string path = dir + "/a.ckpt";
  Tensor t = Tensor::from({2}, {42.5, -7.25});
  save_archive(path, {{"x", t}}, 5, "h");

  std::string bytes = slurp(path);
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 8) == "PSEGAR01");
  std::uint64_t mlen = 0;
  for (int i = 7; i >= 0; --i)
    mlen = (mlen << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
  REQUIRE(bytes.size() == 16 + mlen + 2 * sizeof(double));

  double first;
  std::memcpy(&first, bytes.data() + 16 + mlen, sizeof(double));
  CHECK(first == 42.5);
}

TEST_CASE("any archive damage is reported as corruption") {
  std::string dir = scratch_dir("archive_damage");
  std::string path = dir + "/a.ckpt";
  Tensor t({4});
  for (int i = 0; i < 4; ++i) t[i] = i + 0.5;
  save_archive(path, {{"x", t}}, 9, "hash");
  std::string good = slurp(path);

  auto expect_corrupt = [&](const std::string& bytes, const std::string& tag) {
    std::string p = dir + "/bad_" + tag + ".ckpt";
    spit(p, bytes);
    CHECK_THROWS_AS(load_archive(p), CorruptArchive);
  };

  expect_corrupt(good.substr(0, 4), "mid_magic");
  expect_corrupt(good.substr(0, 12), "mid_length");
  expect_corrupt(good.substr(0, 20), "mid_manifest");
  expect_corrupt(good.substr(0, good.size() - 1), "mid_payload");

  std::string flipped = good;
  flipped[flipped.size() - 3] ^= 0x01;  // payload bit -> checksum mismatch
  expect_corrupt(flipped, "payload_bit");

  std::string bad_magic = good;
  bad_magic[0] = 'Q';
  expect_corrupt(bad_magic, "magic");

  std::string bad_manifest = good;
  bad_manifest[16] = 'X';  // manifest starts with '{'
  expect_corrupt(bad_manifest, "manifest");

  CHECK_THROWS_AS(load_archive(dir + "/never_written.ckpt"), CorruptArchive);
}

TEST_CASE("configs start from registry defaults") {
  RunConfig cfg;
  CHECK(cfg.get_int("model.embed_dim") == 8);
  CHECK(cfg.get_int("model.image_size") == 64);
  CHECK(cfg.get_double("loss.lambda_sep") == 0.1);
  CHECK(cfg.get_bool("attn.enhance_on_normalized"));
  CHECK(cfg.get_bool("attn.count_all_categories"));
  CHECK(cfg.get_u64("synth.seed") == 7);
  CHECK(cfg.get("train.select_protocol") == "oracle_obj");
  CHECK(cfg.get("data.root").empty());

  auto objs = cfg.get_list("synth.objects");
  REQUIRE(objs.size() == 3);
  CHECK(objs[0] == "blobA");
  CHECK(objs[2] == "blobC");
  CHECK(cfg.get_list("data.root").empty());
}

TEST_CASE("unknown keys are rejected by name") {
  RunConfig cfg;
  try {
    cfg.set("train.lr", "0.1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key == "train.lr");
  }
  CHECK_THROWS_AS(cfg.get("nonsense.key"), ConfigError);
  CHECK_THROWS_AS(cfg.set_kv("no equals sign here"), ConfigError);
  CHECK_NOTHROW(cfg.set_kv("  loss.lambda_sep =  0.25 "));
  CHECK(cfg.get_double("loss.lambda_sep") == 0.25);
}

TEST_CASE("typed getters validate their input") {
  RunConfig cfg;
  cfg.set("train.total_iters", "12x");
  CHECK_THROWS_AS(cfg.get_int("train.total_iters"), ConfigError);
  cfg.set("train.base_lr", "fast");
  CHECK_THROWS_AS(cfg.get_double("train.base_lr"), ConfigError);
  cfg.set("eval.include_background", "maybe");
  CHECK_THROWS_AS(cfg.get_bool("eval.include_background"), ConfigError);
  cfg.set("synth.seed", "-1");
  CHECK_THROWS_AS(cfg.get_u64("synth.seed"), ConfigError);

  cfg.set("eval.include_background", "1");
  CHECK(cfg.get_bool("eval.include_background"));
  cfg.set("eval.include_background", "0");
  CHECK_FALSE(cfg.get_bool("eval.include_background"));
}

TEST_CASE("echo lists every key sorted and feeds the hash") {
  RunConfig cfg;
  std::string echo = cfg.echo();

  std::istringstream ss(echo);
  std::string line, prev_key;
  int n_lines = 0;
  while (std::getline(ss, line)) {
    ++n_lines;
    auto sep = line.find(" = ");
    REQUIRE(sep != std::string::npos);
    std::string key = line.substr(0, sep);
    CHECK(RunConfig::registry().count(key) == 1);
    CHECK(prev_key < key);
    prev_key = key;
  }
  CHECK(n_lines == static_cast<int>(RunConfig::registry().size()));

  CHECK(cfg.hash() == to_hex(fnv1a64(echo)));
  RunConfig same;
  CHECK(same.hash() == cfg.hash());
  same.set("train.seed", "2");
  CHECK(same.hash() != cfg.hash());
}

TEST_CASE("config files allow comments and reject malformed rows") {
  std::string dir = scratch_dir("config_file");
  spit(dir + "/good.cfg",
       "# full line comment\n"
       "\n"
       "train.base_lr = 0.002   # trailing comment\n"
       "  synth.objects = a, b  \n");
  RunConfig cfg;
  cfg.load_file(dir + "/good.cfg");
  CHECK(cfg.get_double("train.base_lr") == 0.002);
  auto objs = cfg.get_list("synth.objects");
  REQUIRE(objs.size() == 2);
  CHECK(objs[1] == "b");

  spit(dir + "/noeq.cfg", "train.base_lr 0.002\n");
  CHECK_THROWS_AS(cfg.load_file(dir + "/noeq.cfg"), ConfigError);
  spit(dir + "/unknown.cfg", "bogus.key = 1\n");
  CHECK_THROWS_AS(cfg.load_file(dir + "/unknown.cfg"), ConfigError);
  CHECK_THROWS_AS(cfg.load_file(dir + "/absent.cfg"), ConfigError);
}
