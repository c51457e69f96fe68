// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "m3d/binary_io.hpp"
#include "m3d/cli.hpp"
#include "m3d/corpus.hpp"

using namespace m3d;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "m3ddm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("m3d_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("blob hashes match git") {
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("level lists") {
  CHECK(parse_levels("30,15,1") == std::vector<std::size_t>{30, 15, 1});
  CHECK(parse_levels("2") == std::vector<std::size_t>{2});
  for (const char* bad : {"", "0", "3,,1", "a,1", "-2,1", "2.5"}) CHECK_THROWS_AS(parse_levels(bad), std::invalid_argument);
}

TEST_CASE("plan prints the default schedule") {
  const auto r = run({"plan", "--length", "451"});
  CHECK(r.code == 0);
  CHECK(r.err.empty());
  CHECK(r.out.ends_with("calls=33 chain_depth=4\n"));
  const auto dense = run({"plan", "--length", "451", "--mode", "dense"});
  CHECK(dense.out.ends_with("calls=30 chain_depth=30\n"));

  const auto dir = scratch("plan");
  CHECK(run({"plan", "--length", "100", "--levels", "6,1", "--out", dir.string()}).code == 0);
  const auto files = tree(dir);
  CHECK(files.size() == 3);
  const auto m = nlohmann::json::parse(files.at("manifest.json"));
  CHECK(m["command"] == "plan");
  CHECK(m["outputs"] == nlohmann::json::array({"plan.csv", "plan.txt"}));
  fs::remove_all(dir);
}

TEST_CASE("bad invocations fail with one line") {
  for (const auto& args : std::vector<std::vector<std::string>>{{"plan", "--length", "10", "--bogus"},
                                                                {"plan"},
                                                                {"nonsense"},
                                                                {"plan", "--length", "ten"}}) {
    const auto r = run(args);
    CHECK(r.code == 2);
    CHECK(lines(r.err) == 1);
    CHECK(r.err.starts_with("m3ddm: error: "));
  }
  const auto bad_levels = run({"plan", "--length", "10", "--levels", "3,x"});
  CHECK(bad_levels.code == 1);
  CHECK(lines(bad_levels.err) == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing inputs leave no outputs behind") {
  const auto dir = scratch("missing");
  const auto r = run({"outpaint", "--checkpoint", (dir / "nope.ckpt").string(), "--video",
                      (dir / "nope.m3dv").string(), "--out", (dir / "out").string()});
  CHECK(r.code == 1);
  CHECK(lines(r.err) == 1);
  CHECK(r.err.find("nope") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
  const auto t = run({"train", "--corpus", (dir / "nope.m3dv").string(), "--out", (dir / "t").string()});
  CHECK(t.code == 1);
  CHECK_FALSE(fs::exists(dir / "t"));
}

TEST_CASE("corpus generation is reproducible and described by its manifest") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  for (const auto& d : {a, b})
    CHECK(run({"gen-corpus", "--out", d.string(), "--count", "5", "--seed", "3", "--motif", "panning-texture"}).code == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta == tb);
  const auto m = nlohmann::json::parse(ta.at("manifest.json"));
  CHECK(m["format_version"] == 1);
  CHECK(m["seed"] == 3);
  CHECK(m["config"]["count"] == 5);
  CHECK(m["output_hashes"]["corpus.m3dv"] == git_blob_sha1(ta.at("corpus.m3dv")));
  const auto videos = decode_corpus(ta.at("corpus.m3dv"));
  CHECK(videos.size() == 5);
  SyntheticSpec spec;
  spec.motif = Motif::PanningTexture;
  spec.seed = 3;
  CHECK(videos == generate_corpus(spec, 5));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train, outpaint and eval end to end") {
  const auto dir = scratch("e2e");
  REQUIRE(run({"gen-corpus", "--out", (dir / "data").string(), "--count", "4", "--seed", "1"}).code == 0);
  const auto corpus = (dir / "data" / "corpus.m3dv").string();
  const auto tr = run({"train", "--corpus", corpus, "--out", (dir / "model").string(), "--steps", "3", "--batch", "1",
                       "--widths", "8,16", "--global-frames", "4", "--log-every", "1"});
  REQUIRE(tr.code == 0);
  CHECK(lines(tr.out) == 4);
  const auto mt = nlohmann::json::parse(read_file(dir / "model" / "manifest.json"));
  CHECK(mt["checkpoint_sha1"] == git_blob_sha1(read_file(dir / "model" / "model.ckpt")));
  CHECK(mt["input_hashes"]["corpus"] == git_blob_sha1(read_file(corpus)));

  auto outpaint = [&](const std::string& name, const char* threads) {
    ::setenv("M3DDM_THREADS", threads, 1);
    return run({"outpaint", "--checkpoint", (dir / "model" / "model.ckpt").string(), "--video", corpus, "--index", "2",
                "--out", (dir / name).string(), "--levels", "2,1", "--sample-steps", "3", "--seed", "9"});
  };
  const auto r1 = outpaint("o1", "1");
  const auto r4 = outpaint("o4", "4");
  ::unsetenv("M3DDM_THREADS");
  REQUIRE(r1.code == 0);
  CHECK(r1.out.starts_with("calls="));
  auto t1 = tree(dir / "o1"), t4 = tree(dir / "o4");
  CHECK(t1.count("timing.csv") == 1);
  t1.erase("timing.csv");
  t4.erase("timing.csv");
  CHECK(t1 == t4);
  for (const char* f : {"output.m3dv", "mask.pgm", "calls.csv", "plan.txt", "metrics.csv", "frames/frame_0000.pgm",
                        "frames/frame_0031.pgm", "manifest.json"})
    CHECK_MESSAGE(t1.count(f) == 1, f);

  const auto ev = run({"eval", "--pred", (dir / "o1" / "output.m3dv").string(), "--truth", corpus, "--out",
                       (dir / "ev").string()});
  CHECK(ev.code == 0);
  const auto csv = read_file(dir / "ev" / "metrics.csv");
  CHECK(csv.starts_with("name,region,mse,psnr,ssim,jitter_ratio\n"));
  CHECK(lines(csv) == 3);
  fs::remove_all(dir);
}
