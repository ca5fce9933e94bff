#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tcace/cli.hpp"

using namespace tcace;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tcace_cli_" + name);
  fs::remove_all(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

const char* const kPhantom = R"({"image_size": 16, "case_count": 10, "radius": [2.0, 4.0]})";
const char* const kTrain = R"({"epochs": 2, "warmup_epochs": 1, "batch_size": 4, "base_lr": 0.01,
  "model": {"image_size": 16, "patch_size": 4, "embed_dim": 8, "depth": 1, "head_count": 2,
            "signal_latent": 8, "signal_hidden": [8, 4]}})";

struct Workspace {
  fs::path root = scratch("ws");
  fs::path data = root / "data";
  fs::path phantom_cfg = root / "phantom.json";
  fs::path train_cfg = root / "train.json";
  Workspace() {
    fs::create_directories(root);
    write_text(phantom_cfg, kPhantom);
    write_text(train_cfg, kTrain);
    REQUIRE(run_cli({"generate", "--config", phantom_cfg.string(), "--out", data.string()}) == kExitOk);
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run_cli(std::vector<std::string>{}) == kExitUsage);
  CHECK(run_cli({"frobnicate"}) == kExitUsage);
  CHECK(run_cli({"generate"}) == kExitUsage);
  CHECK(run_cli({"evaluate", "--data", "x", "--out", "y", "--split", "holdout"}) == kExitUsage);
  CHECK(run_cli({"--help"}) == kExitOk);

  const fs::path bad = scratch("bad.json");
  write_text(bad, R"({"case_cont": 3})");
  CHECK(run_cli({"generate", "--config", bad.string(), "--out", scratch("never").string()}) == kExitUsage);
  write_text(bad, "{not json");
  CHECK(run_cli({"generate", "--config", bad.string(), "--out", scratch("never").string()}) == kExitUsage);
  fs::remove(bad);
}

TEST_CASE("generate writes a manifest and refuses to overwrite") {
  Workspace ws;
  CHECK(fs::exists(ws.data / "manifest.json"));
  const nlohmann::json run = read_json(ws.data / "run.json");
  CHECK(run.at("command") == "generate");
  CHECK(run.contains("build_id"));
  CHECK(read_json(ws.data / "manifest.json").at("cases").size() == 10);

  CHECK(run_cli({"generate", "--config", ws.phantom_cfg.string(), "--out", ws.data.string()}) == kExitUsage);
  CHECK(run_cli({"generate", "--config", ws.phantom_cfg.string(), "--out", ws.data.string(), "--force"}) ==
        kExitOk);
}

TEST_CASE("train, evaluate, synthesize") {
  Workspace ws;
  const fs::path run = ws.root / "run";
  CHECK(run_cli({"train", "--config", ws.train_cfg.string(), "--data", ws.data.string(), "--out", run.string(),
                 "--epochs", "1"}) == kExitOk);
  CHECK(fs::exists(run / "checkpoint" / "index.json"));
  CHECK(fs::exists(run / "run.json"));
  std::ifstream log(run / "train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto rec = nlohmann::json::parse(line);
    for (const char* k : {"epoch", "lr", "l_syn", "l_seg", "l_cls", "l_tcc", "l_total", "val_psnr", "val_dice",
                          "val_acc"}) {
      CHECK(rec.contains(k));
    }
    ++lines;
  }
  CHECK(lines == 1);

  CHECK(run_cli({"train", "--data", ws.data.string(), "--out", (ws.root / "missing").string(), "--config",
                 ws.train_cfg.string(), "--ablation", "everything"}) == kExitUsage);
  CHECK(run_cli({"train", "--config", ws.train_cfg.string(), "--data", (ws.root / "nodata").string(), "--out",
                 (ws.root / "r2").string()}) == kExitIncompatible);

  const fs::path report = ws.root / "eval" / "report.json";
  CHECK(run_cli({"evaluate", "--checkpoint", (run / "checkpoint").string(), "--data", ws.data.string(), "--out",
                 report.string(), "--dump-attention"}) == kExitOk);
  const nlohmann::json r = read_json(report);
  CHECK(r.at("split") == "test");
  CHECK(r.at("case_count") == r.at("cases").size());
  CHECK(fs::exists(ws.root / "eval" / "report.run.json"));
  const std::string first_id = r.at("cases")[0].at("id");
  std::ifstream csv(ws.root / "eval" / "report_attention" / (first_id + "_delay.csv"));
  std::getline(csv, line);
  CHECK(line == "query_block,key_block,weight");

  CHECK(run_cli({"evaluate", "--checkpoint", (run / "checkpoint").string(), "--data", ws.data.string(), "--out",
                 report.string()}) == kExitUsage);

  const fs::path oracle = ws.root / "oracle.json";
  CHECK(run_cli({"evaluate", "--oracle", "--data", ws.data.string(), "--out", oracle.string()}) == kExitOk);
  CHECK(read_json(oracle).at("aggregate").at("phases").at("delay").at("mse") == 0.0);

  // A dataset with a different manifest is rejected unless explicitly allowed.
  const fs::path other = ws.root / "other";
  REQUIRE(run_cli({"generate", "--config", ws.phantom_cfg.string(), "--out", other.string(), "--seed", "7"}) ==
          kExitOk);
  CHECK(run_cli({"evaluate", "--checkpoint", (run / "checkpoint").string(), "--data", other.string(), "--out",
                 (ws.root / "o.json").string()}) == kExitIncompatible);
  CHECK(run_cli({"evaluate", "--checkpoint", (run / "checkpoint").string(), "--data", other.string(), "--out",
                 (ws.root / "o.json").string(), "--allow-other-data"}) == kExitOk);

  const fs::path syn = ws.root / "syn";
  CHECK(run_cli({"synthesize", "--checkpoint", (run / "checkpoint").string(), "--data", ws.data.string(), "--out",
                 syn.string(), "--limit", "1", "--dump-attention"}) == kExitOk);
  std::size_t case_dirs = 0;
  for (const auto& entry : fs::directory_iterator(syn)) {
    if (!entry.is_directory()) continue;
    ++case_dirs;
    for (const char* f : {"art.pgm", "pv.pgm", "delay.pgm", "mask.pgm", "class.json", "attention_art.csv",
                          "attention_pv.csv", "attention_delay.csv"}) {
      CHECK(fs::exists(entry.path() / f));
    }
  }
  CHECK(case_dirs == 1);
}

TEST_CASE("ablate writes five rows in table order") {
  Workspace ws;
  const fs::path out = ws.root / "ablate";
  CHECK(run_cli({"ablate", "--config", ws.train_cfg.string(), "--data", ws.data.string(), "--out", out.string(),
                 "--epochs", "1"}) == kExitOk);
  const nlohmann::json j = read_json(out / "ablation.json");
  const auto& rows = j.at("rows");
  REQUIRE(rows.size() == 5);
  const char* order[] = {"baseline", "no_dtam", "no_cte", "no_t_encoding", "full"};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rows[i].at("variant") == order[i]);
    CHECK(rows[i].at("manifest_hash") == rows[0].at("manifest_hash"));
    for (const char* k : {"mse", "psnr", "ssim", "dsc", "iou", "hd95", "acc", "sens", "spec", "f1"}) {
      CHECK(rows[i].contains(k));
    }
    CHECK(fs::exists(out / order[i] / "report.json"));
  }
  std::ifstream txt(out / "ablation.txt");
  std::string header;
  std::getline(txt, header);
  CHECK(header.find("PSNR") != std::string::npos);
  CHECK(header.find("HD95") != std::string::npos);
}
