#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "../temp_dir.hpp"

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(METACOG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("exit codes") {
  testing::TempDir dir;
  const std::string out = " --out " + dir.path().string();
  CHECK(cli("synth --systems 2 --world-states 3 -q" + out) == 0);
  CHECK(cli("synth --set count_bounds=5,1" + out) == 2);
  CHECK(cli("synth --systems zero" + out) == 2);
  CHECK(cli("synth --set flavour=mint" + out) == 2);
  CHECK(cli("bogus") == 2);
  CHECK(cli("run " + dir.path().string() + "/missing.jsonl" + out) == 3);
  CHECK(cli("report " + dir.path().string() + "/missing.jsonl" + out) == 3);
  CHECK(cli("synth --systems 1 --out /proc/metacog-cannot-write") == 4);
}

TEST_CASE("flags override the config file") {
  testing::TempDir dir;
  {
    std::ofstream conf(dir.path() / "c.conf");
    conf << "systems=3\nworld_states=2\nseed=5\n";
  }
  const std::string base = "synth -q --config " + (dir.path() / "c.conf").string();
  REQUIRE(cli(base + " --out " + (dir.path() / "a").string()) == 0);
  REQUIRE(cli(base + " --systems 1 --out " + (dir.path() / "b").string()) == 0);
  auto count = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    return n;
  };
  CHECK(count(dir.path() / "a" / "corpus.jsonl") == 4);
  CHECK(count(dir.path() / "b" / "corpus.jsonl") == 2);
}
