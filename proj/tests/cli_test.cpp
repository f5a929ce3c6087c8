#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "aida/model.hpp"
#include "aida/synth.hpp"
#include "aida/trainer.hpp"

#ifndef AIDA_CLI_PATH
#error "AIDA_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(AIDA_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) output += buf.data();
  const int status = pclose(pipe);
  return CliResult{WEXITSTATUS(status), output};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("aida_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Per-dimension scales are permutations of one multiset (half the dims high,
// half low), so every domain has identical intrinsic retrieval difficulty;
// which dims are amplified, and the offset, are the only style differences.
// The target's pattern and offset sit outside the source hull.
void write_benchmark_config(const fs::path& path, const fs::path& data_dir,
                            std::size_t epochs_sup = 4, std::size_t epochs_aida = 2) {
  const auto src = [&](int high_start, bool high_even, double offset) {
    json scale = json::array();
    for (int d = 0; d < 12; ++d) {
      const bool high = high_even ? (d % 2 == 0) : ((d - high_start + 12) % 12 < 6);
      scale.push_back(high ? 1.6 : 0.625);
    }
    return json{{"num_identities", 6}, {"samples_per_identity", 6}, {"num_cameras", 3},
                {"feature_dim", 12},   {"style_scale", scale},      {"style_offset", offset},
                {"camera_jitter", 1.2}, {"noise_sigma", 0.55}};
  };
  const json cfg = {
      {"format_version", 1},
      {"seed", 11},
      {"gen",
       {{"sources", json::array({src(0, false, -0.5), src(4, false, 0.0), src(8, false, 0.5)})},
        {"target", src(0, true, 1.25)}}},
      {"train",
       {{"sources", json::array({(data_dir / "source_0.json").string(),
                                 (data_dir / "source_1.json").string(),
                                 (data_dir / "source_2.json").string()})},
        {"epochs_sup", epochs_sup},
        {"epochs_aida", epochs_aida},
        {"epochs_sf", 2},
        {"batch_p", 6},
        {"batch_k", 3},
        {"hidden_dims", json::array({16})},
        {"embed_dim", 8}}},
      {"ablate", {{"seeds", json::array({5, 6})}}}};
  std::ofstream(path) << cfg.dump(1);
}

}  // namespace

TEST_CASE("gen-data is reproducible and the manifest counts are honest") {
  const fs::path dir1 = fresh_dir("gen1");
  const fs::path dir2 = fresh_dir("gen2");
  const fs::path cfg = dir1 / "config.json";
  write_benchmark_config(cfg, dir1);

  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir1.string()).exit_code == 0);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir2.string()).exit_code == 0);

  const json m1 = json::parse(slurp(dir1 / "manifest.json"));
  const json m2 = json::parse(slurp(dir2 / "manifest.json"));
  REQUIRE(m1.at("files").size() == 4);  // K=3 sources + target

  for (std::size_t i = 0; i < 4; ++i) {
    // Same checksums across reruns; recount samples straight from the files.
    CHECK(m1.at("files")[i].at("checksum") == m2.at("files")[i].at("checksum"));
    const std::string name = m1.at("files")[i].at("path").get<std::string>();
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
    const aida::DomainDataset ds = aida::load_dataset((dir1 / name).string());
    CHECK(ds.size() == m1.at("files")[i].at("samples").get<std::size_t>());
    CHECK(ds.size() == 36);  // 6 identities x 6 samples
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("train writes a full trace and is byte-idempotent") {
  const fs::path dir = fresh_dir("train");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir.string()).exit_code == 0);

  const fs::path run1 = dir / "run1", run2 = dir / "run2";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run1.string()).exit_code == 0);
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run2.string()).exit_code == 0);

  SECTION("csv row count equals the step count") {
    const auto trace = aida::read_trace_csv((run1 / "metrics.csv").string());
    // 3 domains x 36 samples = 108; batch 6x3 = 18 -> 6 batches/epoch; 6 epochs.
    CHECK(trace.size() == (4 + 2) * 6);
    std::size_t sup = 0, aida_steps = 0;
    for (const auto& r : trace) {
      if (r.stage == "sup") ++sup;
      if (r.stage == "aida") ++aida_steps;
    }
    CHECK(sup == 4 * 6);
    CHECK(aida_steps == 2 * 6);
  }
  SECTION("outputs are byte-identical across reruns") {
    for (const char* name : {"checkpoint.bin", "metrics.csv", "loss.svg", "controller.svg"}) {
      INFO(name);
      CHECK(slurp(run1 / name) == slurp(run2 / name));
    }
  }
  SECTION("--stage sup skips stage 2") {
    const fs::path sup_run = dir / "sup_run";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + sup_run.string() +
                    " --stage sup")
                .exit_code == 0);
    for (const auto& r : aida::read_trace_csv((sup_run / "metrics.csv").string())) {
      CHECK(r.stage == "sup");
    }
  }
  SECTION("--stage aida trains stage 2 from a fresh initialization") {
    const fs::path aida_run = dir / "aida_run";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + aida_run.string() +
                    " --stage aida")
                .exit_code == 0);
    for (const auto& r : aida::read_trace_csv((aida_run / "metrics.csv").string())) {
      CHECK(r.stage == "aida");
    }
  }
  SECTION("rerunning eval into the same directory stays byte-identical") {
    const fs::path ev = dir / "ev_idem";
    const std::string args = "eval --checkpoint " + (run1 / "checkpoint.bin").string() +
                             " --dataset " + (dir / "target.json").string() + " --out " +
                             ev.string();
    REQUIRE(run_cli(args).exit_code == 0);
    const std::string first = slurp(ev / "eval.csv");
    REQUIRE(run_cli(args).exit_code == 0);
    CHECK(slurp(ev / "eval.csv") == first);
  }
  SECTION("checkpoint is loadable and architecture round-trips") {
    const aida::ModelParams p = aida::load_checkpoint((run1 / "checkpoint.bin").string());
    CHECK(p.config.embed_dim == 8);
    CHECK(p.config.num_classes == 18);  // 3 x 6 identities
  }
  SECTION("missing dataset file fails with the path in the message") {
    json broken = json::parse(slurp(cfg));
    broken["train"]["sources"][0] = (dir / "nope.json").string();
    const fs::path bad_cfg = dir / "broken.json";
    std::ofstream(bad_cfg) << broken.dump();
    const CliResult r =
        run_cli("train --config " + bad_cfg.string() + " --out " + (dir / "x").string());
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("nope.json") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("strict config parsing names the offending key") {
  const fs::path dir = fresh_dir("strict");
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << R"({"format_version": 1, "seed": 3, "trian": {}})";
  const CliResult r =
      run_cli("gen-data --config " + cfg.string() + " --out " + (dir / "o").string());
  CHECK(r.exit_code != 0);
  CHECK(r.output.find("trian") != std::string::npos);

  std::ofstream(cfg) << R"({"format_version": 1, "train": {"epochs_spu": 3}})";
  const CliResult r2 =
      run_cli("train --config " + cfg.string() + " --out " + (dir / "o").string());
  CHECK(r2.exit_code != 0);
  CHECK(r2.output.find("epochs_spu") != std::string::npos);

  std::ofstream(cfg) << R"({"format_version": 7})";
  const CliResult r3 =
      run_cli("train --config " + cfg.string() + " --out " + (dir / "o").string());
  CHECK(r3.exit_code != 0);
  CHECK(r3.output.find("format_version") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("adapt guards source freedom and reports before/after") {
  const fs::path dir = fresh_dir("adapt");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir.string()).exit_code == 0);
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()).exit_code == 0);

  SECTION("guard triggers when the config references sources") {
    const CliResult r = run_cli("adapt --config " + cfg.string() + " --checkpoint " +
                                (run / "checkpoint.bin").string() + " --target " +
                                (dir / "target.json").string() + " --out " +
                                (dir / "adapt_bad").string());
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("source-free") != std::string::npos);
  }
  SECTION("runs with a clean config, outputs loadable, both mAPs reported") {
    const fs::path clean = dir / "adapt.json";
    std::ofstream(clean) << R"({"format_version": 1, "seed": 11,
      "train": {"epochs_sf": 2, "batch_p": 6, "batch_k": 3}})";
    const fs::path out = dir / "adapt_run";
    const CliResult r = run_cli("adapt --config " + clean.string() + " --checkpoint " +
                                (run / "checkpoint.bin").string() + " --target " +
                                (dir / "target.json").string() + " --out " + out.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("before refinement") != std::string::npos);
    CHECK(r.output.find("after refinement") != std::string::npos);
    const aida::ModelParams p = aida::load_checkpoint((out / "checkpoint.bin").string());
    CHECK(p.config.embed_dim == 8);
    const json before = json::parse(slurp(out / "eval_before.json"));
    const json after = json::parse(slurp(out / "eval_after.json"));
    CHECK(before.contains("map"));
    CHECK(after.contains("map"));
  }
  fs::remove_all(dir);
}

TEST_CASE("eval prints exactly what it persists, deterministically") {
  const fs::path dir = fresh_dir("eval");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir.string()).exit_code == 0);
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string() + " --stage sup")
              .exit_code == 0);

  const std::string eval_args = "eval --checkpoint " + (run / "checkpoint.bin").string() +
                                " --dataset " + (dir / "target.json").string();
  const CliResult r1 = run_cli(eval_args + " --out " + (dir / "ev").string());
  const CliResult r2 = run_cli(eval_args);
  REQUIRE(r1.exit_code == 0);
  CHECK(r1.output == r2.output);  // deterministic output

  // Printed table lines carry the same full-precision values as the JSON.
  const json persisted = json::parse(slurp(dir / "ev" / "metrics.json"));
  for (const char* key : {"rank1", "rank5", "rank10", "map", "nmi", "silhouette"}) {
    const std::string line_value = aida::format_double(persisted.at(key).get<double>());
    INFO(key << " -> " << line_value);
    CHECK(r1.output.find(line_value) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("eval on a training domain beats the unseen target at fixed seed") {
  const fs::path dir = fresh_dir("eval_vs");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir, 8, 4);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir.string()).exit_code == 0);
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()).exit_code == 0);

  const auto rank1_of = [&](const std::string& dataset) {
    const fs::path out = dir / ("ev_" + fs::path(dataset).stem().string());
    REQUIRE(run_cli("eval --checkpoint " + (run / "checkpoint.bin").string() + " --dataset " +
                    (dir / dataset).string() + " --out " + out.string())
                .exit_code == 0);
    return json::parse(slurp(out / "metrics.json")).at("rank1").get<double>();
  };
  CHECK(rank1_of("source_0.json") >= rank1_of("target.json"));
  fs::remove_all(dir);
}

TEST_CASE("ablate emits the four-setting table with a recomputable gain column") {
  const fs::path dir = fresh_dir("ablate");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir, 2, 1);  // tiny epochs; structure is what matters here
  const fs::path out = dir / "ab";
  REQUIRE(run_cli("ablate --config " + cfg.string() + " --out " + out.string()).exit_code == 0);

  std::ifstream csv(out / "table.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "setting,msidg,pmr,dfc,rank1,map,avg_gain_vs_A");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  REQUIRE(rows.size() == 4);
  CHECK(rows[0][0] == "A");
  CHECK(rows[3][0] == "D");
  // avg_gain recomputable from the row values.
  const double r1_a = std::stod(rows[0][4]), map_a = std::stod(rows[0][5]);
  for (const auto& row : rows) {
    const double expect = 0.5 * ((std::stod(row[4]) - r1_a) + (std::stod(row[5]) - map_a));
    CHECK(std::stod(row[6]) == Catch::Approx(expect).margin(1e-12));
  }
  CHECK(fs::exists(out / "table.md"));
  fs::remove_all(dir);
}

TEST_CASE("report renders from the persisted csv only") {
  const fs::path dir = fresh_dir("report");
  const fs::path cfg = dir / "config.json";
  write_benchmark_config(cfg, dir);
  REQUIRE(run_cli("gen-data --config " + cfg.string() + " --out " + dir.string()).exit_code == 0);
  const fs::path run = dir / "run";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run.string()).exit_code == 0);

  SECTION("report parses every row and labels final values from the csv") {
    REQUIRE(run_cli("report --out " + run.string()).exit_code == 0);
    const std::string md = slurp(run / "report.md");
    const auto trace = aida::read_trace_csv((run / "metrics.csv").string());
    CHECK(md.find("steps: " + std::to_string(trace.size())) != std::string::npos);
    CHECK(md.find(aida::format_double(trace.back().loss_total)) != std::string::npos);

    // Plotted final values equal the csv's last row (at svg label precision).
    const std::string svg = slurp(run / "controller.svg");
    char want[32];
    std::snprintf(want, sizeof(want), "%.6g", trace.back().lambda_pmr);
    CHECK(svg.find("data-series=\"lambda_pmr\" data-final=\"" + std::string(want) + "\"") !=
          std::string::npos);
  }
  SECTION("missing csv is a clear error") {
    const CliResult r = run_cli("report --out " + (dir / "empty").string());
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("metrics.csv") != std::string::npos);
  }
  fs::remove_all(dir);
}
