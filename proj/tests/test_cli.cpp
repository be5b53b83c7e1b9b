#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fedafa/data.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("FEDAFA_CLI");
    REQUIRE_MESSAGE(env != nullptr, "FEDAFA_CLI must point at the CLI binary");
    return env;
}

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing " << path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string first_line(const fs::path& path) {
    const std::string text = slurp(path);
    return text.substr(0, text.find('\n'));
}

const char* kTinyConfig =
    "[data]\n"
    "classes = 4\n"
    "dim = 8\n"
    "samples_per_class = 60\n"
    "test_per_class = 20\n"
    "cluster_spread = 0.3\n"
    "imbalance_factor = 8\n"
    "[partition]\n"
    "clients = 4\n"
    "alpha = 0.4\n"
    "seed = 3\n"
    "[model]\n"
    "hidden = 16,12\n"
    "boundary_index = 0\n"
    "[train]\n"
    "method = fedafa\n"
    "rounds = 4\n"
    "clients_per_round = 2\n"
    "local_epochs = 2\n"
    "batch_size = 32\n"
    "lr = 0.05\n"
    "eval_every = 2\n"
    "[personalize]\n"
    "epochs = 2\n"
    "batch_size = 32\n"
    "lr = 0.02\n"
    "[fedafa]\n"
    "lambda = 0.6\n"
    "drop_probability = 0.4\n";

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("fedafa_cli_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("CLI pipeline: gen-data, partition, train, personalize, sweep, report") {
    TempDir tmp;
    const fs::path config = tmp.path / "c.ini";
    std::ofstream(config) << kTinyConfig;

    // gen-data
    REQUIRE(run("gen-data --config " + config.string() + " --out-dir " +
                (tmp.path / "data").string()) == 0);
    const fedafa::Dataset train = fedafa::load_dataset(tmp.path / "data" / "train.fdst");
    const fedafa::Dataset test = fedafa::load_dataset(tmp.path / "data" / "test_global.fdst");
    CHECK(train.size() == 4 * 60);
    CHECK(test.size() == 4 * 20);

    // partition
    REQUIRE(run("partition --config " + config.string() + " --data " +
                (tmp.path / "data" / "train.fdst").string() + " --out-dir " +
                (tmp.path / "parts").string()) == 0);
    CHECK(fs::exists(tmp.path / "parts" / "client_00.fdst"));
    CHECK(fs::exists(tmp.path / "parts" / "client_03.fdst"));
    const std::string manifest = slurp(tmp.path / "parts" / "partition.json");
    CHECK(manifest.find("class_counts") != std::string::npos);
    CHECK(manifest.find("imbalance_factor") != std::string::npos);

    // train, twice with the same seed, plus once elsewhere
    REQUIRE(run("train --config " + config.string() + " --out-dir " +
                (tmp.path / "run_a").string()) == 0);
    REQUIRE(run("train --config " + config.string() + " --out-dir " +
                (tmp.path / "run_b").string()) == 0);
    for (const char* name : {"rounds.csv", "clients.csv", "class_acc.csv", "manifest.json"}) {
        CHECK(slurp(tmp.path / "run_a" / name) == slurp(tmp.path / "run_b" / name));
    }
    CHECK(slurp(tmp.path / "run_a" / "global.fafa") == slurp(tmp.path / "run_b" / "global.fafa"));

    // golden headers
    CHECK(first_line(tmp.path / "run_a" / "rounds.csv") == "round,mean_acc,std_acc");
    CHECK(first_line(tmp.path / "run_a" / "clients.csv") == "client_id,n_k,acc");
    CHECK(first_line(tmp.path / "run_a" / "class_acc.csv") == "class_id,global_count,acc");

    // a different seed changes the results
    REQUIRE(run("train --config " + config.string() + " --seed 77 --out-dir " +
                (tmp.path / "run_c").string()) == 0);
    CHECK(slurp(tmp.path / "run_a" / "clients.csv") != slurp(tmp.path / "run_c" / "clients.csv"));

    // personalize from the saved checkpoint and shards
    REQUIRE(run("personalize --config " + config.string() + " --model " +
                (tmp.path / "run_a" / "global.fafa").string() + " --data-dir " +
                (tmp.path / "parts").string() + " --global-test " +
                (tmp.path / "data" / "test_global.fdst").string() + " --out-dir " +
                (tmp.path / "pers").string()) == 0);
    CHECK(fs::exists(tmp.path / "pers" / "clients.csv"));
    CHECK(fs::exists(tmp.path / "pers" / "client_03.fafa"));

    // sweep over two lambda values emits one row per value
    REQUIRE(run("sweep --config " + config.string() + " --param lambda --values 0,0.6 "
                "--out-dir " + (tmp.path / "sweep").string()) == 0);
    const std::string sweep_csv = slurp(tmp.path / "sweep" / "sweep.csv");
    CHECK(first_line(tmp.path / "sweep" / "sweep.csv") == "param,value,mean_acc,std_acc");
    CHECK(std::count(sweep_csv.begin(), sweep_csv.end(), '\n') == 3); // header + 2 rows

    // report re-emits the sweep CSV and joins two runs per class
    REQUIRE(run("report --sweep " + (tmp.path / "sweep").string() + " --out " +
                (tmp.path / "sweep_report.csv").string()) == 0);
    CHECK(slurp(tmp.path / "sweep_report.csv") == sweep_csv);
    REQUIRE(run("report --baseline " + (tmp.path / "run_a").string() + " --run " +
                (tmp.path / "pers").string() + " --out " +
                (tmp.path / "per_class.csv").string()) == 0);
    CHECK(first_line(tmp.path / "per_class.csv") ==
          "class_id,global_count,acc_baseline,acc_method,delta");
}

TEST_CASE("CLI exit codes separate usage, config, and io failures") {
    TempDir tmp;
    const fs::path config = tmp.path / "c.ini";
    std::ofstream(config) << kTinyConfig;

    CHECK(run("no-such-command") == 2);
    CHECK(run("train --config " + config.string() + " --bogus-flag 1 --out-dir x") == 2);
    CHECK(run("train") == 2); // missing required flags

    const fs::path bad_config = tmp.path / "bad.ini";
    std::ofstream(bad_config) << "[fedafa]\nlambda = 3\n";
    CHECK(run("train --config " + bad_config.string() + " --out-dir " +
              (tmp.path / "x").string()) == 3);

    CHECK(run("train --config " + (tmp.path / "missing.ini").string() + " --out-dir " +
              (tmp.path / "x").string()) == 4);
    CHECK(run("partition --config " + config.string() + " --data " +
              (tmp.path / "missing.fdst").string() + " --out-dir " +
              (tmp.path / "x").string()) == 4);

    // sweep value validation happens before any run
    CHECK(run("sweep --config " + config.string() + " --param lambda --values 0,2 --out-dir " +
              (tmp.path / "s").string()) == 3);
    CHECK(run("sweep --config " + config.string() + " --param nope --values 0 --out-dir " +
              (tmp.path / "s").string()) == 3);
}

TEST_CASE("the augmentation debug dump emits per-client JSON lines") {
    TempDir tmp;
    const fs::path config = tmp.path / "c.ini";
    std::ofstream(config) << kTinyConfig << "debug_dump = true\n";
    REQUIRE(run("train --config " + config.string() + " --out-dir " +
                (tmp.path / "run").string()) == 0);
    bool found = false;
    for (const auto& entry : fs::directory_iterator(tmp.path / "run")) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("aug_debug_client_", 0) == 0) {
            found = true;
            const std::string first = first_line(entry.path());
            CHECK(first.find("\"target_class\"") != std::string::npos);
            CHECK(first.find("\"confidence\"") != std::string::npos);
            CHECK(first.find("\"accepted\"") != std::string::npos);
        }
    }
    CHECK(found);
}

TEST_CASE("FEDAFA_SEED environment variable overrides the config seed") {
    TempDir tmp;
    const fs::path config = tmp.path / "c.ini";
    std::ofstream(config) << kTinyConfig;

    setenv("FEDAFA_SEED", "77", 1);
    REQUIRE(run("train --config " + config.string() + " --out-dir " +
                (tmp.path / "env_run").string()) == 0);
    unsetenv("FEDAFA_SEED");
    REQUIRE(run("train --config " + config.string() + " --seed 77 --out-dir " +
                (tmp.path / "flag_run").string()) == 0);
    CHECK(slurp(tmp.path / "env_run" / "clients.csv") ==
          slurp(tmp.path / "flag_run" / "clients.csv"));
}
