// SPDX-License-Identifier: Apache-2.0
// End-to-end checks of the raum command-line tool.
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "raum/fileio.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
    const fs::path log = fs::temp_directory_path() / "raum_cli_stdout.txt";
    const std::string cmd = env + " " RAUM_CLI " " + args + " > " + log.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, raum::fileio::read_text(log)};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("raum_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const std::string kSmoke = std::string(" --config ") + RAUM_CONFIG_DIR + "/smoke.ini ";

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("").code == 1);
    CHECK(run("no-such-command").code == 1);
    CHECK(run("train --bogus-flag").code == 1);
    const auto dir = scratch("badcfg");
    raum::fileio::write_text(dir / "bad.ini", "[data]\nbogus = 1\n");
    CHECK(run("gen-data --config " + (dir / "bad.ini").string() + " --out " + (dir / "d").string()).code == 1);
    CHECK(run("train" + kSmoke + "--ablation nothing --out " + (dir / "t").string()).code == 1);
    CHECK(run("gen-data" + kSmoke, "env -u RAUM_OUT_ROOT").code == 1); // no --out and no root
}

TEST_CASE("gen-data") {
    const auto dir = scratch("gen");
    SUBCASE("running twice gives byte-identical directories") {
        REQUIRE(run("gen-data" + kSmoke + "--out " + (dir / "a").string()).code == 0);
        REQUIRE(run("gen-data" + kSmoke + "--out " + (dir / "b").string()).code == 0);
        for (auto f : {"manifest.tsv", "images.bin", "config.json"})
            CHECK(raum::fileio::read_bytes(dir / "a" / f) == raum::fileio::read_bytes(dir / "b" / f));
    }
    SUBCASE("missing parent directory is a runtime error") {
        CHECK(run("gen-data" + kSmoke + "--out " + (dir / "missing" / "child").string()).code == 2);
        CHECK_FALSE(fs::exists(dir / "missing"));
    }
    SUBCASE("ten classes of 100 give 1000 training rows") {
        REQUIRE(run("gen-data --set data.test_per_class=1 --out " + (dir / "full").string()).code == 0);
        const auto manifest = raum::fileio::read_text(dir / "full" / "manifest.tsv");
        std::size_t train_rows = 0, labeled = 0;
        std::size_t pos = 0;
        while ((pos = manifest.find('\n', pos)) != std::string::npos) {
            ++pos;
            const auto line = manifest.substr(pos, manifest.find('\n', pos) - pos);
            if (line.find("\tlabeled\t") != std::string::npos) ++labeled;
            if (line.find("\tlabeled\t") != std::string::npos || line.find("\tunlabeled\t") != std::string::npos)
                ++train_rows;
        }
        CHECK(train_rows == 1000);
        CHECK(labeled == 100);
    }
    SUBCASE("relative output resolves under RAUM_OUT_ROOT") {
        REQUIRE(run("gen-data" + kSmoke + "--out rel", "RAUM_OUT_ROOT=" + dir.string()).code == 0);
        CHECK(fs::exists(dir / "rel" / "manifest.tsv"));
        REQUIRE(run("gen-data" + kSmoke, "RAUM_OUT_ROOT=" + dir.string()).code == 0);
        CHECK(fs::exists(dir / "data" / "images.bin"));
    }
}

TEST_CASE("train and eval") {
    const auto dir = scratch("train");
    REQUIRE(run("gen-data" + kSmoke + "--out " + (dir / "data").string()).code == 0);
    const std::string data = " --data " + (dir / "data").string();

    const auto t0 = std::chrono::steady_clock::now();
    const auto a = run("train" + kSmoke + data + " --out " + (dir / "a").string());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(a.code == 0);
    CHECK(seconds < 60.0);
    CHECK(a.out.find("final_test_acc") != std::string::npos);
    REQUIRE(run("train" + kSmoke + data + " --out " + (dir / "b").string()).code == 0);
    const auto metrics = raum::fileio::read_bytes(dir / "a" / "metrics.csv");
    CHECK(metrics == raum::fileio::read_bytes(dir / "b" / "metrics.csv"));
    CHECK(count_lines(raum::fileio::read_text(dir / "a" / "metrics.csv")) == 3);

    SUBCASE("training without --data generates the same dataset") {
        REQUIRE(run("train" + kSmoke + "--out " + (dir / "c").string()).code == 0);
        CHECK(raum::fileio::read_bytes(dir / "c" / "metrics.csv") == metrics);
    }
    SUBCASE("the echoed config reproduces the run") {
        REQUIRE(run("train --config " + (dir / "a" / "config.ini").string() + data + " --out " + (dir / "d").string())
                    .code == 0);
        CHECK(raum::fileio::read_text(dir / "d" / "config.ini") == raum::fileio::read_text(dir / "a" / "config.ini"));
        CHECK(raum::fileio::read_bytes(dir / "d" / "metrics.csv") == metrics);
    }
    SUBCASE("the ablation flag overrides the config file") {
        REQUIRE(run("train" + kSmoke + data + " --ablation backbone_only --out " + (dir / "e").string()).code == 0);
        CHECK(raum::fileio::read_text(dir / "e" / "config.ini").find("ablation = backbone_only") != std::string::npos);
    }
    SUBCASE("eval reproduces the final accuracy") {
        const auto e = run("eval" + kSmoke + data + " --checkpoint " + (dir / "a" / "final.ckpt").string());
        REQUIRE(e.code == 0);
        const auto last = a.out.substr(a.out.find("final_test_acc") + 15);
        CHECK(e.out.substr(e.out.find("test_acc") + 9) == last);
    }
    SUBCASE("a dataset that does not match the config is rejected") {
        CHECK(run("train" + kSmoke + data + " --set data.num_classes=5 --out " + (dir / "f").string()).code == 1);
        CHECK(run("eval" + kSmoke + data + " --checkpoint " + (dir / "nothing.ckpt").string()).code == 2);
    }
}

TEST_CASE("sweep-tau-u and ablate") {
    const auto dir = scratch("multi");
    REQUIRE(run("sweep-tau-u" + kSmoke + "--grid 0.5,0,0.05 --seeds 1,2 --out " + (dir / "s").string()).code == 0);
    const auto sweep = raum::fileio::read_text(dir / "s" / "sweep.csv");
    CHECK(count_lines(sweep) == 4);
    CHECK(sweep.find("\n0,2,") != std::string::npos);

    REQUIRE(run("ablate" + kSmoke + "--seeds 1 --out " + (dir / "t").string()).code == 0);
    const auto table = raum::fileio::read_text(dir / "t" / "table.csv");
    CHECK(count_lines(table) == 5);
    for (auto name : {"\nbackbone_only,", "\nno_ra,", "\nno_bu,", "\nfull,"}) CHECK(table.find(name) != std::string::npos);
    CHECK(run("sweep-tau-u" + kSmoke + "--out " + (dir / "u").string()).code == 1); // --grid is required
}

TEST_CASE("gradcheck") {
    const auto ok = run("gradcheck --seeds 2");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("model_16x16_2blocks") != std::string::npos);
    CHECK(ok.out.find("FAIL") == std::string::npos);
    const auto bad = run("gradcheck --seeds 2 --inject-fault");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("faulty_square") != std::string::npos);
    CHECK(bad.out.find("FAIL") != std::string::npos);
}
