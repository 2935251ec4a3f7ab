#include <doctest.h>

#include <algorithm>
#include <csignal>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <spawn.h>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include "densal/hsi.hpp"

extern char** environ;

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "densal_cli_test";

struct Outcome {
    int code = -1;
    std::string output;
};

pid_t spawn(const std::vector<std::string>& args, const fs::path& log) {
    std::vector<std::string> full{DENSAL_CLI};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : full) argv.push_back(a.data());
    argv.push_back(nullptr);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&actions, 1, 2);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, DENSAL_CLI, &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    REQUIRE(rc == 0);
    return pid;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int wait_exit(pid_t pid) {
    int status = 0;
    waitpid(pid, &status, 0);
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

Outcome cli(const std::vector<std::string>& args) {
    const auto log = kWork / "last.log";
    const int code = wait_exit(spawn(args, log));
    return {code, slurp(log)};
}

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
    }
    ~Workspace() { fs::remove_all(kWork); }
};

std::vector<std::string> quick_run(const std::string& dir) {
    return {"-q", "--seed", "3", "run", "--run-dir", (kWork / dir).string(), "--set", "epochs=3"};
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    Workspace w;
    auto r = cli({"run", "--strategy", "bogus", "--run-dir", (kWork / "x").string()});
    CHECK(r.code == 2);
    CHECK(r.output.find("valid strategies are predicted-loss, max-entropy, random") != std::string::npos);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({}).code == 2);
    CHECK(cli({"run", "--set", "no_such_key=1"}).code == 2);
    CHECK(cli({"--simd", "neon", "synth", "-o", (kWork / "s.hsic").string()}).code == 2);
    CHECK(cli({"eval", "--checkpoint", (kWork / "missing.ckpt").string()}).code == 1);
}

TEST_CASE("run writes its artifacts and is reproducible") {
    Workspace w;
    auto a = cli(quick_run("a"));
    REQUIRE(a.code == 0);
    auto b = cli(quick_run("b"));
    REQUIRE(b.code == 0);
    for (const auto* name : {"config.toml", "manifest.json", "metrics.csv", "map.u16", "map.png", "model.ckpt",
                             "campaign.state", "labeled.txt"})
        CHECK(fs::exists(kWork / "a" / name));
    const auto csv = slurp(kWork / "a" / "metrics.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
    CHECK(csv == slurp(kWork / "b" / "metrics.csv"));
    CHECK(slurp(kWork / "a" / "labeled.txt") == slurp(kWork / "b" / "labeled.txt"));
    const auto labeled = slurp(kWork / "a" / "labeled.txt");
    CHECK(std::count(labeled.begin(), labeled.end(), '\n') == 48);
    CHECK(slurp(kWork / "a" / "manifest.json").find("\"complete\": true") != std::string::npos);

    SUBCASE("eval reads the checkpoint back") {
        std::ofstream pixels(kWork / "pixels.txt");
        std::istringstream lines(labeled);
        std::string line;
        while (std::getline(lines, line)) pixels << line.substr(0, line.find(' ')) << '\n';
        pixels.close();
        auto e = cli({"eval", "--checkpoint", (kWork / "a" / "model.ckpt").string(), "--pixels",
                      (kWork / "pixels.txt").string(), "--csv", (kWork / "eval.csv").string()});
        CHECK(e.code == 0);
        CHECK(e.output.find("samples 48") != std::string::npos);
        CHECK(slurp(kWork / "eval.csv").rfind("round,labeled_count,OA,AA,kappa", 0) == 0);
    }
}

TEST_CASE("synth is deterministic and convert round-trips") {
    Workspace w;
    REQUIRE(cli({"--seed", "4", "synth", "-o", (kWork / "one.hsic").string(), "--height", "10", "--width", "9"}).code == 0);
    REQUIRE(cli({"--seed", "4", "synth", "-o", (kWork / "two.hsic").string(), "--height", "10", "--width", "9"}).code == 0);
    CHECK(slurp(kWork / "one.hsic") == slurp(kWork / "two.hsic"));

    const auto d = densal::load_hsic((kWork / "one.hsic").string());
    CHECK(d.height == 10);
    CHECK(d.width == 9);
    {
        std::ofstream cube(kWork / "cube.raw", std::ios::binary);
        cube.write(reinterpret_cast<const char*>(d.cube.data()), static_cast<std::streamsize>(d.cube.size() * 4));
        std::ofstream labels(kWork / "labels.raw", std::ios::binary);
        labels.write(reinterpret_cast<const char*>(d.labels.data()), static_cast<std::streamsize>(d.labels.size() * 2));
    }
    auto r = cli({"convert", "--cube", (kWork / "cube.raw").string(), "--labels", (kWork / "labels.raw").string(),
                  "--height", "10", "--width", "9", "--bands", "8", "--label-dtype", "uint16", "-o",
                  (kWork / "back.hsic").string()});
    REQUIRE(r.code == 0);
    const auto back = densal::load_hsic((kWork / "back.hsic").string());
    CHECK(back.cube == d.cube);
    CHECK(back.labels == d.labels);
}

TEST_CASE("serve refuses the simulated oracle") {
    Workspace w;
    auto r = cli({"serve", "--port", "0", "--state-dir", (kWork / "serve").string()});
    CHECK(r.code == 2);
    CHECK(r.output.find("human") != std::string::npos);
}

TEST_CASE("an interrupted run resumes to the uninterrupted result") {
    Workspace w;
    REQUIRE(cli(quick_run("full")).code == 0);

    const auto dir = kWork / "cut";
    const pid_t pid = spawn(quick_run("cut"), kWork / "cut.log");
    // The state file appears once the first query batch is open.
    for (int i = 0; i < 600 && !fs::exists(dir / "campaign.state"); ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    REQUIRE(fs::exists(dir / "campaign.state"));
    kill(pid, SIGINT);
    const int code = wait_exit(pid);
    if (code == 0) {
        MESSAGE("the run finished before the interrupt arrived");
    } else {
        CHECK(code == 1);
        CHECK(slurp(kWork / "cut.log").find("--resume") != std::string::npos);
        CHECK_FALSE(fs::exists(dir / "metrics.csv"));
        REQUIRE(cli({"-q", "run", "--resume", dir.string()}).code == 0);
    }
    CHECK(slurp(dir / "metrics.csv") == slurp(kWork / "full" / "metrics.csv"));
    CHECK(slurp(dir / "labeled.txt") == slurp(kWork / "full" / "labeled.txt"));
}
