#include <doctest.h>

#include <set>
#include <sstream>

#include "helpers.hpp"
#include "sptm/cli.hpp"
#include "sptm/error.hpp"
#include "sptm/model.hpp"

using namespace sptm;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int c = cli::run(args, o, e);
  return {c, o.str(), e.str()};
}

}  // namespace

TEST_CASE("cli eval: identical files score 1.0000") {
  auto dir = th::scratch("cli_eval");
  write_file_atomic(dir / "h", "a b c d e\nf g h i\n");
  auto r = invoke({"eval", "--hyp", (dir / "h").string(), "--ref", (dir / "h").string()});
  CHECK(r.code == cli::kOk);
  CHECK(r.out == "1.0000\n");
  write_file_atomic(dir / "h2", "0 ||| x ||| a b c d e\n1 ||| y ||| f g h i\n");
  r = invoke({"eval", "--hyp", (dir / "h").string(), "--ref", (dir / "h2").string()});
  CHECK(r.out == "1.0000\n");
  write_file_atomic(dir / "h3", "a b c d e\n");
  CHECK(invoke({"eval", "--hyp", (dir / "h").string(), "--ref", (dir / "h3").string()}).code != cli::kOk);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cli gradcheck --seed 7 passes") {
  auto r = invoke({"gradcheck", "--seed", "7"});
  CHECK(r.code == cli::kOk);
  CHECK(r.out.find("max relative error") != std::string::npos);
}

TEST_CASE("cli gradcheck: impossible tolerance fails with its own code") {
  auto r = invoke({"gradcheck", "--seed", "7", "--configs", "2", "--tol", "0"});
  CHECK(r.code == cli::kCheckFailed);
}

TEST_CASE("cli: unknown subcommand prints usage and fails") {
  auto r = invoke({"frobnicate"});
  CHECK(r.code == cli::kUsage);
  CHECK((r.err + r.out).find("sptm") != std::string::npos);
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"eval", "--bogus-flag"}).code == cli::kUsage);
}

TEST_CASE("cli --help documents every subcommand") {
  auto r = invoke({"--help"});
  CHECK(r.code == cli::kOk);
  for (auto s : {"synthgen", "train", "rerank", "eval", "gradcheck", "tune-lambda", "export-embeddings"})
    CHECK(r.out.find(s) != std::string::npos);
}

TEST_CASE("cli: distinct exit codes for distinct failures") {
  auto dir = th::scratch("cli_codes");
  std::set<int> codes;
  // missing file
  auto io = invoke({"eval", "--hyp", (dir / "nope").string(), "--ref", (dir / "nope").string()});
  CHECK(io.code == cli::kIo);
  codes.insert(io.code);
  // malformed n-best
  write_file_atomic(dir / "bad.nbest", "0 ||| a ||| 0\n");
  write_file_atomic(dir / "r", "0 ||| x ||| a\n");
  write_file_atomic(dir / "l", "1\n1\n");
  auto fmt = invoke({"train", "--nbest", (dir / "bad.nbest").string(), "--refs", (dir / "r").string(), "--lambda",
                  (dir / "l").string(), "--model-out", (dir / "m").string()});
  CHECK(fmt.code == cli::kFormat);
  CHECK(fmt.err.find("line 1") != std::string::npos);
  codes.insert(fmt.code);
  // lambda with the wrong length
  write_file_atomic(dir / "ok.nbest", "0 ||| a ||| 0 ||| [ x # a ]\n0 ||| b ||| 1 ||| [ x # b ]\n");
  write_file_atomic(dir / "l3", "1\n1\n1\n");
  auto shape = invoke({"train", "--nbest", (dir / "ok.nbest").string(), "--refs", (dir / "r").string(), "--lambda",
                    (dir / "l3").string(), "--model-out", (dir / "m").string()});
  CHECK(shape.code == cli::kShape);
  codes.insert(shape.code);
  // usage
  codes.insert(invoke({"nope"}).code);
  // failed check
  codes.insert(invoke({"gradcheck", "--configs", "1", "--tol", "0"}).code);
  CHECK(codes.size() == 5);
  CHECK_FALSE(codes.count(0));
  std::filesystem::remove_all(dir);
}

TEST_CASE("merge_config: flags win on conflict") {
  auto merged = cli::merge_config({"train", "--k1", "5"}, "# comment\nk1 = 9\nk2=7\n\nseed=3\n");
  CHECK(merged == std::vector<std::string>{"train", "--k1", "5", "--k2=7", "--seed=3"});
  CHECK_THROWS_AS(cli::merge_config({}, "novalue\n"), FormatError);
}

TEST_CASE("cli: synthgen, train, rerank, tune-lambda, export round") {
  auto dir = th::scratch("cli_e2e");
  const auto p = (dir / "d").string();
  REQUIRE(invoke({"synthgen", "--out", p, "--sentences", "30", "--seed", "2"}).code == cli::kOk);
  write_file_atomic(dir / "cfg", "k1=5\nk2=5\nmax-iter=5\n");
  auto tr = invoke({"--config", (dir / "cfg").string(), "train", "--nbest", p + ".nbest", "--refs", p + ".ref", "--lambda",
                 p + ".lambda", "--model-out", (dir / "m").string(), "--log", (dir / "log").string(),
                 "--deterministic-log", "--k2", "4"});
  REQUIRE(tr.code == cli::kOk);
  auto m = load_model(dir / "m");
  CHECK(m.params.k1() == 5);
  CHECK(m.params.w2.cols() == 4);
  const auto log = read_file(dir / "log");
  CHECK(log.rfind("iter\tloss\txbleu\tgradnorm\tseconds\n", 0) == 0);

  auto rr = invoke({"rerank", "--nbest", p + ".nbest", "--model", (dir / "m").string(), "--lambda", p + ".lambda",
                 "--refs", p + ".ref"});
  CHECK(rr.code == cli::kOk);
  CHECK(rr.out.find("0 ||| ") == 0);
  CHECK(rr.out.find("baseline") != std::string::npos);
  CHECK(rr.out.find("oracle") != std::string::npos);

  auto tl = invoke({"tune-lambda", "--nbest", p + ".nbest", "--refs", p + ".ref", "--model", (dir / "m").string(),
                 "--lambda", p + ".lambda", "--out", (dir / "tuned").string()});
  CHECK(tl.code == cli::kOk);
  CHECK(load_lambda(dir / "tuned").weights.size() == 4);

  auto ex = invoke({"export-embeddings", "--model", (dir / "m").string(), "--nbest", p + ".nbest"});
  CHECK(ex.code == cli::kOk);
  const auto first = ex.out.substr(0, ex.out.find('\n'));
  const auto tab = first.find('\t');
  REQUIRE(tab != std::string::npos);
  std::istringstream vals(first.substr(tab + 1));
  int n = 0;
  for (double x; vals >> x;) ++n;
  CHECK(n == 4);

  auto gc = invoke({"gradcheck", "--nbest", p + ".nbest", "--refs", p + ".ref", "--lambda", p + ".lambda", "--model",
                 (dir / "m").string()});
  CHECK(gc.code == cli::kOk);
  std::filesystem::remove_all(dir);
}
