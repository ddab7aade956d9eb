#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

std::string g_cli;
fs::path g_work;

int run(const std::string& args, const fs::path& stdout_file = {}) {
    std::string cmd = g_cli + " " + args;
    if (!stdout_file.empty()) cmd += " > " + stdout_file.string() + " 2>&1";
    else cmd += " > /dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_config(const fs::path& p, const std::string& extra = "") {
    std::ofstream out(p);
    out << R"({
  "gen": {
    "vocab_size": 300, "num_documents": 60, "paragraphs_per_doc": 2,
    "tokens_per_paragraph_min": 6, "tokens_per_paragraph_max": 8,
    "questions_per_doc": 2, "signature_length": 1,
    "distractor_rate": 0.0, "noise_rate": 0.0,
    "fine_frac": 0.4, "coarse_frac": 0.2, "dev_frac": 0.2, "test_frac": 0.2,
    "seed": 5
  },
  "model": {"d_emb": 8, "d_hid": 16},
  "train": {
    "objective": "supervised", "fine_batch_size": 8, "coarse_batch_size": 4,
    "paragraphs_sampled_per_example": 2, "max_steps": 200, "eval_every": 50,
    "patience": 4, "max_span_len": 3, "seed": 2
  },
  "alpha_grid": [0.1, 1.0], "seeds": [1, 2], "jobs": 2)"
        << extra << "\n}\n";
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("bogus-subcommand") == 2);
    CHECK(run("gen-data") == 2);  // missing required options
    CHECK(run("train --config /nonexistent.json --data x --out y") == 2);
}

TEST_CASE("gen-data writes a deterministic dataset with a manifest") {
    fs::path cfg = g_work / "config.json";
    write_config(cfg);
    fs::path d1 = g_work / "data1";
    fs::path d2 = g_work / "data2";
    CHECK(run("gen-data --config " + cfg.string() + " --out " + d1.string()) == 0);
    CHECK(run("gen-data --config " + cfg.string() + " --out " + d2.string()) == 0);
    for (const char* f : {"fine_train.jsonl", "coarse_train.jsonl", "dev_fine.jsonl",
                          "test_fine.jsonl", "manifest.json"})
        CHECK(slurp(d1 / f) == slurp(d2 / f));
}

TEST_CASE("gen-data rejects unknown config keys") {
    fs::path cfg = g_work / "bad_config.json";
    write_config(cfg, ", \"typo_key\": 1");
    CHECK(run("gen-data --config " + cfg.string() + " --out " + (g_work / "x").string()) == 2);
}

TEST_CASE("train is deterministic and notes when coarse data is ignored") {
    fs::path cfg = g_work / "config.json";
    fs::path data = g_work / "data1";
    fs::path r1 = g_work / "run1";
    fs::path r2 = g_work / "run2";
    fs::path log = g_work / "train.log";
    CHECK(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
                  r1.string() + " --objective supervised",
              log) == 0);
    CHECK(slurp(log).find("coarse split ignored") != std::string::npos);
    for (const char* f : {"resolved_config.json", "record.txt", "summary.json", "checkpoint.txt"})
        CHECK(fs::exists(r1 / f));

    CHECK(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
              r2.string() + " --objective supervised") == 0);
    for (const char* f : {"resolved_config.json", "record.txt", "summary.json", "checkpoint.txt"})
        CHECK(slurp(r1 / f) == slurp(r2 / f));

    // coarse objectives train without the supervised notice
    fs::path r3 = g_work / "run3";
    CHECK(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
                  r3.string() + " --objective mtl --alpha 1.0",
              log) == 0);
    CHECK(slurp(log).find("coarse split ignored") == std::string::npos);

    CHECK(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
              (g_work / "rx").string() + " --objective nonsense") == 2);
}

TEST_CASE("analyze checks the checkpoint against the dataset") {
    fs::path data = g_work / "data1";
    fs::path ckpt = g_work / "run1" / "checkpoint.txt";
    fs::path out = g_work / "analysis";
    CHECK(run("analyze --checkpoint " + ckpt.string() + " --data " + data.string() + " --out " +
              out.string()) == 0);
    CHECK(fs::exists(out / "analysis.txt"));
    CHECK(fs::exists(out / "analysis.json"));

    // dataset with a different vocabulary: config error
    fs::path cfg2 = g_work / "config2.json";
    {
        std::ofstream o(cfg2);
        o << R"({"gen": {"vocab_size": 77, "num_documents": 10, "paragraphs_per_doc": 2,
                 "tokens_per_paragraph_min": 6, "tokens_per_paragraph_max": 8,
                 "signature_length": 1, "fine_frac": 0.3, "coarse_frac": 0.2,
                 "dev_frac": 0.2, "test_frac": 0.2, "seed": 1}})" << "\n";
    }
    fs::path data2 = g_work / "data_other";
    CHECK(run("gen-data --config " + cfg2.string() + " --out " + data2.string()) == 0);
    CHECK(run("analyze --checkpoint " + ckpt.string() + " --data " + data2.string() +
              " --out " + (g_work / "a2").string()) == 2);
}

TEST_CASE("report regenerates the text table from the json summary") {
    fs::path summary = g_work / "analysis" / "analysis.json";
    fs::path out = g_work / "regen.txt";
    CHECK(run("report --summary " + summary.string() + " --out " + out.string()) == 0);
    CHECK(slurp(out) == slurp(g_work / "analysis" / "analysis.txt"));

    CHECK(run("report --summary /nonexistent.json --out " + out.string()) == 2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-mixedqa-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    g_work = fs::temp_directory_path() / "mixedqa_cli_test";
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    doctest::Context context;
    int rc = context.run();
    fs::remove_all(g_work);
    return rc;
}
