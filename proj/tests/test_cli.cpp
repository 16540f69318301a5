#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + QUANTACT_CLI + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("quantact_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Cli, ToyWritesSummaryCsvSvgAndConfig) {
    const auto out = scratch("toy");
    ASSERT_EQ(run("toy --tasks 5 --activation relu --seed 3 --out " + out.string()), 0);
    for (const char* f : {"toy_summary.json", "toy_accuracy.csv", "toy_histogram.svg", "config.ini", "config.sha1"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(slurp(out / "config.sha1").size(), 41u);

    const auto again = scratch("toy2");
    ASSERT_EQ(run("toy --tasks 5 --activation relu --seed 3 --out " + again.string()), 0);
    EXPECT_EQ(slurp(out / "toy_summary.json"), slurp(again / "toy_summary.json"));
    fs::remove_all(out);
    fs::remove_all(again);
}

TEST(Cli, ConfigErrorsExitTwo) {
    const auto out = scratch("cfg");
    EXPECT_EQ(run("toy --activation gelu --out " + out.string()), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("toy --tasks notanumber"), 2);
    fs::create_directories(out);
    std::ofstream(out / "bad.ini") << "[toy]\nno_such_key = 1\n";
    EXPECT_EQ(run("toy --config " + (out / "bad.ini").string() + " --out " + out.string()), 2);
    EXPECT_EQ(run("report --out " + out.string()), 2);
    fs::remove_all(out);
}

TEST(Cli, MissingDataExitsThree) {
    const auto out = scratch("data");
    EXPECT_EQ(run("train --out " + out.string(), "QUANTACT_DATA=" + (out / "nowhere").string()), 3);
    EXPECT_EQ(run("eval --out " + (out / "eval").string()), 3);
    EXPECT_EQ(run("report " + (out / "missing.json").string() + " --out " + out.string()), 3);
    fs::remove_all(out);
}
