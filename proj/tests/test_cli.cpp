#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <string>

#include <nlohmann/json.hpp>

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(MARTREP_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string data(const std::string& name) { return std::string(MARTREP_DATA_DIR) + "/" + name; }

using nlohmann::json;

}  // namespace

TEST_CASE("emm subcommand reports the binomial point") {
  RunResult r = run("emm --market " + data("binomial.json"));
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["dimension"] == 0);
  CHECK(j["unique"] == true);
  CHECK(j["reference"]["u"] == "1/3");
  CHECK(j["reference"]["d"] == "2/3");
}

TEST_CASE("emm subcommand reports the trinomial segment") {
  RunResult r = run("emm --market " + data("trinomial.json"));
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["dimension"] == 1);
  CHECK(j["unique"] == false);
}

TEST_CASE("hedge subcommand: success, failure, expectation flag") {
  RunResult ok = run("hedge --market " + data("binomial.json") + " --claim " +
                     data("claim_up.json") + " --bound 1");
  REQUIRE(ok.exit_code == 0);
  json j = json::parse(ok.out);
  CHECK(j["hedgeable"] == true);
  CHECK(j["initial_value"] == "1/3");
  CHECK(j["max_abs_gain"] == "2/3");

  RunResult miss = run("hedge --market " + data("trinomial.json") + " --claim " +
                       data("claim_mid.json") + " --bound 1");
  REQUIRE(miss.exit_code == 0);
  CHECK(json::parse(miss.out)["hedgeable"] == false);

  RunResult expect = run("hedge --market " + data("trinomial.json") + " --claim " +
                         data("claim_mid.json") + " --bound 1 --expect-hedgeable");
  REQUIRE(expect.exit_code == 1);
}

TEST_CASE("missing input files exit with code 2") {
  CHECK(run("emm --market /nonexistent/market.json").exit_code == 2);
  CHECK(run("hedge --market " + data("binomial.json") + " --claim /nope.json --bound 1")
            .exit_code == 2);
  CHECK(run("definitely-not-a-subcommand").exit_code == 2);
}

TEST_CASE("check-martingale and sigma agree on the fixtures") {
  RunResult drift = run("check-martingale --market " + data("binomial.json") + " --process X");
  REQUIRE(drift.exit_code == 0);
  json dj = json::parse(drift.out);
  CHECK(dj["martingale"] == false);
  CHECK(dj["violation"] == "1/4");

  RunResult fair = run("check-martingale --market " + data("binomial.json") +
                       " --process X --measure " + data("q_binomial.json"));
  CHECK(json::parse(fair.out)["martingale"] == true);

  RunResult sw = run("sigma --market " + data("binomial.json") + " --process X");
  CHECK(json::parse(sw.out)["sigma_martingale"] == false);
  RunResult sw2 = run("sigma --market " + data("binomial.json") +
                      " --process X --measure " + data("q_binomial.json"));
  CHECK(json::parse(sw2.out)["sigma_martingale"] == true);
}

TEST_CASE("integrate matches the telescoping identity") {
  RunResult r = run("integrate --market " + data("binomial.json") +
                    " --integrand X --against X");
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["integral"]["root"] == "0");
  CHECK(j["integral"]["u"] == "1");      // 1 * (2 - 1)
  CHECK(j["integral"]["d"] == "-1/2");   // 1 * (1/2 - 1)
}

TEST_CASE("extreme subcommand distinguishes the fixtures") {
  RunResult bin = run("extreme --market " + data("binomial.json") + " --measure " +
                      data("q_binomial.json"));
  REQUIRE(bin.exit_code == 0);
  CHECK(json::parse(bin.out)["extreme"] == true);
  // physical trinomial measure is an interior martingale measure
  RunResult tri = run("extreme --market " + data("trinomial.json"));
  REQUIRE(tri.exit_code == 0);
  CHECK(json::parse(tri.out)["extreme"] == false);
}

TEST_CASE("represent and reconstruct run end to end") {
  RunResult rep = run("represent --market " + data("binomial.json") + " --claim " +
                      data("claim_up.json"));
  REQUIRE(rep.exit_code == 0);
  json rj = json::parse(rep.out);
  CHECK(rj["representable"] == true);
  CHECK(rj["initial_value"] == "1/3");
  CHECK(rj["one_stage_integrands"]["X"]["root"] == "2/3");

  RunResult rec = run("reconstruct --market " + data("binomial.json") + " --claim " +
                      data("claim_up.json"));
  REQUIRE(rec.exit_code == 0);
  json cj = json::parse(rec.out);
  CHECK(cj["replay_exact"] == true);
  CHECK(cj["trace"]["float_qv_residual"].get<double>() <= 1e-9);

  RunResult bad = run("reconstruct --market " + data("trinomial.json") + " --claim " +
                      data("claim_mid.json"));
  REQUIRE(bad.exit_code == 0);
  CHECK(json::parse(bad.out)["replay_exact"] == false);
}

TEST_CASE("diagonalize emits per-cell diagnostics") {
  RunResult r = run("diagonalize --market " + data("binomial.json"));
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  REQUIRE(j["cells"].size() == 1);
  CHECK(j["cells"][0]["node"] == "root");
  CHECK(j["cells"][0]["residuals"]["diagonality"].get<double>() <= 1e-9);
}

TEST_CASE("lemma53 subcommand reports the equivalences") {
  RunResult r = run("lemma53 --market " + data("binomial.json") + " --process X --q " +
                    data("q_binomial.json"));
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["q_martingale"] == true);
  CHECK(j["product_p_martingale"] == true);
  CHECK(j["equivalence"] == true);
}

TEST_CASE("emery subcommand is deterministic for a fixed seed") {
  const std::string args = "emery --epsilon 1e-3 --cap 1 --samples 20000 --seed 5";
  RunResult a = run(args);
  RunResult b = run(args);
  REQUIRE(a.exit_code == 0);
  REQUIRE(a.out == b.out);
  json j = json::parse(a.out);
  CHECK(j["sigma_residual"].get<double>() <= 1e-12);
  CHECK(std::fabs(j["I"].get<double>() - 6.1121) < 1e-3);
  RunResult sharded = run(args + " --shards 4");
  REQUIRE(sharded.out == a.out);
}

TEST_CASE("MARTREP_SEED overrides the seed flag") {
  RunResult flag9 = run("emery --epsilon 1e-2 --cap 1 --samples 5000 --seed 9");
  RunResult env9 = run("emery --epsilon 1e-2 --cap 1 --samples 5000 --seed 3",
                       "MARTREP_SEED=9");
  REQUIRE(flag9.out == env9.out);
  RunResult plain3 = run("emery --epsilon 1e-2 --cap 1 --samples 5000 --seed 3");
  REQUIRE(plain3.out != env9.out);
}

TEST_CASE("sweep emits rows plus a summary and shards identically") {
  const std::string args = "sweep --seed 4 --count 12 --depth 2 --branch 3 --assets 2";
  RunResult one = run(args);
  REQUIRE(one.exit_code == 0);
  json j = json::parse(one.out);
  REQUIRE(j["rows"].size() == 12);
  CHECK(j["summary"]["instances"] == 12);
  CHECK(j["summary"]["failures"] == 0);
  RunResult four = run(args + " --shards 4");
  REQUIRE(four.out == one.out);
}

TEST_CASE("crosscheck works on a market file and on a corpus") {
  RunResult single = run("crosscheck --market " + data("trinomial.json"));
  REQUIRE(single.exit_code == 0);
  json sj = json::parse(single.out);
  CHECK(sj["agree"] == true);
  CHECK(sj["unique"] == false);

  RunResult corpus = run("crosscheck --seed 4 --count 10 --depth 2 --branch 3 --assets 2");
  REQUIRE(corpus.exit_code == 0);
  CHECK(json::parse(corpus.out)["summary"]["failures"] == 0);
}

TEST_CASE("text format renders floats at full precision") {
  RunResult r = run("emery --epsilon 1e-3 --cap 1 --samples 1000 --seed 2 --format text");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("I = 6.112") != std::string::npos);
}
