#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "tapid/dataio.hpp"
#include "tapid/encoding.hpp"
#include "tapid/protocol.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = tapid::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tapid_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, GenSeqCoversAllTriples) {
  const auto r = run({"gen-seq", "--k", "6", "--n", "3", "--verify", "--fixed"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0,1,2,3,4,5,0,2,4,5,1,3,0,4,1,2,5,3,0,2,0,5,1,3,4"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("coverage 20/20"), std::string::npos);
  const auto g = run({"gen-seq", "--k", "7", "--n", "3", "--verify"});
  EXPECT_EQ(g.code, 0);
  EXPECT_NE(g.out.find("coverage 35/35"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
  EXPECT_EQ(run({"synth"}).code, 2);
  EXPECT_EQ(run({"pretrain", "-i", "x", "-o", "y", "--depth", "7"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"identify", "--help"}).code, 0);
}

TEST(Cli, SynthIsDeterministic) {
  const auto dir = temp_dir("synth");
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl";
  ASSERT_EQ(run({"synth", "-o", a.string(), "--users", "3", "--taps", "4"}).code, 0);
  ASSERT_EQ(run({"synth", "-o", b.string(), "--users", "3", "--taps", "4"}).code, 0);
  EXPECT_EQ(tapid::read_file(a), tapid::read_file(b));
  EXPECT_EQ(tapid::load_sessions(a).size(), 12u);
  ASSERT_EQ(run({"synth", "-o", b.string(), "--users", "3", "--taps", "4", "--seed", "99"}).code, 0);
  EXPECT_NE(tapid::read_file(a), tapid::read_file(b));
}

TEST(Cli, RuntimeFailuresExitOne) {
  const auto dir = temp_dir("fail");
  const auto s = dir / "s.jsonl";
  ASSERT_EQ(run({"synth", "-o", s.string(), "--users", "2", "--taps", "2"}).code, 0);
  const auto r = run({"encode", "-i", s.string(), "--out-dir", (dir / "missing").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  tapid::write_file_atomic(dir / "bad.jsonl", "{\"user_id\": 3}\n");
  EXPECT_EQ(run({"encode", "-i", (dir / "bad.jsonl").string(), "--out-dir", dir.string()}).code, 1);
  EXPECT_EQ(run({"synth", "-o", s.string(), "--users", "0"}).code, 1);
}

TEST(Cli, EncodeWritesImages) {
  const auto dir = temp_dir("encode");
  const auto s = dir / "s.jsonl";
  ASSERT_EQ(run({"synth", "-o", s.string(), "--users", "2", "--taps", "3"}).code, 0);
  ASSERT_EQ(run({"encode", "-i", s.string(), "--out-dir", dir.string(), "--limit", "4"}).code, 0);
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(dir)) pgm += e.path().extension() == ".pgm";
  EXPECT_EQ(pgm, 4u);
  std::ifstream in(dir / "u000_0000.pgm", std::ios::binary);
  const auto img = tapid::read_pgm(in);
  EXPECT_EQ(img.pixels.size(), 25u * 150u);
}

TEST(Cli, SmallPipeline) {
  const auto dir = temp_dir("pipeline");
  const auto s = (dir / "s.jsonl").string(), ck = (dir / "m.ckpt").string(), em = (dir / "e.bin").string();
  ASSERT_EQ(run({"synth", "-o", s, "--users", "6", "--taps", "12"}).code, 0);
  auto p = run({"pretrain", "-i", s, "-o", ck, "--epochs", "2", "--embed", "128", "--log",
                (dir / "log.csv").string(), "--summary", (dir / "summary.json").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto ckpt = tapid::load_checkpoint(ck);
  EXPECT_EQ(ckpt.class_users.size(), 3u);
  EXPECT_EQ(ckpt.spec.embedding_width, 128u);
  ASSERT_EQ(run({"embed", "--checkpoint", ck, "-i", s, "-o", em}).code, 0);
  const auto batch = tapid::load_embeddings(em);
  EXPECT_EQ(batch.count(), 72u);
  EXPECT_EQ(batch.width, 128u);

  const std::vector<std::string> counts{"--train-pos", "4", "--train-neg", "8", "--test-pos", "4", "--test-neg", "8"};
  auto cnn = std::vector<std::string>{"identify", "-i", s, "--embeddings", em, "-o", (dir / "cnn").string()};
  auto hand = std::vector<std::string>{"identify", "-i", s, "--handcrafted", "-o", (dir / "hand").string()};
  cnn.insert(cnn.end(), counts.begin(), counts.end());
  hand.insert(hand.end(), counts.begin(), counts.end());
  const auto rc = run(cnn);
  ASSERT_EQ(rc.code, 0) << rc.err;
  ASSERT_EQ(run(hand).code, 0);
  const auto report = tapid::report_from_json(nlohmann::json::parse(tapid::read_file(dir / "cnn.json")));
  EXPECT_EQ(report.per_task.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "cnn.csv"));
  const auto cmp = run({"compare", (dir / "cnn.json").string(), (dir / "hand.json").string(), "-o",
                        (dir / "cmp.json").string()});
  EXPECT_EQ(cmp.code, 0) << cmp.err;
  EXPECT_NE(cmp.out.find("mcnemar pooled"), std::string::npos) << cmp.out;

  EXPECT_EQ(run({"identify", "-i", s, "-o", (dir / "x").string()}).code, 1);  // needs a feature source
}
