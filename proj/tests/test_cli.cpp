// End-to-end tests for the command-line tool: the full synth → split →
// pretrain → adapt-channels → finetune → evaluate chain, byte-identical
// reports across repeat runs, and the exit-code contract.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include <cropseg/cropseg.hpp>
#include <nlohmann/json.hpp>

using namespace cropseg;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cropseg_cli_test";

struct RunOutcome {
  int exit_code;
  std::string out, err;
};

RunOutcome run_cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out_file = kRoot / "stdout.txt", err_file = kRoot / "stderr.txt";
  const std::string cmd = std::string(CROPSEG_CLI_PATH) + " " + args + " >" +
                          out_file.string() + " 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  RunOutcome r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  read_file_text(out_file, r.out);
  read_file_text(err_file, r.err);
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_file_bytes(path, text.data(), text.size());
}

std::string slurp(const fs::path& path) {
  std::string text;
  REQUIRE(read_file_text(path, text));
  return text;
}

ojson slurp_json(const fs::path& path) { return ojson::parse(slurp(path)); }

// One shared pipeline so the expensive training runs happen once.
struct Pipeline {
  fs::path dir = kRoot / "chain";

  Pipeline() {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string() + "/";

    write_text(dir / "synth_src.json",
               R"({"preset":"rice_like","n_patches":12,"patch_size":32,"time_steps":8,
                   "features":["VH"],"noise_sigma":0.08,"region":"source","seed":7})");
    REQUIRE(run_cli("synth --config " + d + "synth_src.json --out " + d + "src_ds").exit_code == 0);
    REQUIRE(run_cli("split " + d + "src_ds --ratio 0.75 --seed 11 --out " + d + "src").exit_code == 0);

    write_text(dir / "pretrain.json",
               R"({"dataset":")" + d + R"(src/train",
                   "model":{"patch_size":32,"depth":2,"base_channels":8},
                   "train":{"epochs":2,"batch_size":4,"learning_rate":0.001},"seed":5})");
    REQUIRE(run_cli("pretrain --config " + d + "pretrain.json --out " + d + "pre").exit_code == 0);

    write_text(dir / "synth_tgt.json",
               R"({"preset":"rice_like","n_patches":10,"patch_size":32,"time_steps":8,
                   "features":["VH"],"noise_sigma":0.12,"region":"target",
                   "target_shift":-0.08,"seed":21})");
    REQUIRE(run_cli("synth --config " + d + "synth_tgt.json --out " + d + "tgt_ds").exit_code == 0);
    REQUIRE(run_cli("split " + d + "tgt_ds --ratio 0.6 --seed 3 --out " + d + "tgt").exit_code == 0);

    write_text(dir / "ft_e.json",
               R"({"checkpoint":")" + d + R"(pre/checkpoint","dataset":")" + d + R"(tgt/train",
                   "mode":"ft_e","seeds":[1,2],
                   "train":{"epochs":2,"batch_size":2,"learning_rate":0.0005}})");
    REQUIRE(run_cli("finetune --config " + d + "ft_e.json --out " + d + "ft_e").exit_code == 0);

    write_text(dir / "ri.json",
               R"({"checkpoint":")" + d + R"(pre/checkpoint","dataset":")" + d + R"(tgt/train",
                   "mode":"ri","seeds":[1,2],
                   "train":{"epochs":2,"batch_size":2,"learning_rate":0.001}})");
    REQUIRE(run_cli("finetune --config " + d + "ri.json --out " + d + "ri").exit_code == 0);

    // Seed 2 listed before seed 1 on purpose: the report must sort by seed.
    write_text(dir / "eval.json",
               R"({"test_dataset":")" + d + R"(tgt/test","scenario_id":3,
                   "rf":{"train_dataset":")" + d + R"(tgt/train","n_trees":25,"seeds":[1]},
                   "methods":[
                     {"name":"RI","checkpoints":[")" + d + R"(ri/seed_2/checkpoint",")" +
                   d + R"(ri/seed_1/checkpoint"]},
                     {"name":"FT_E","checkpoints":[")" + d + R"(ft_e/seed_1/checkpoint",")" +
                   d + R"(ft_e/seed_2/checkpoint"]}],
                   "early_steps":[2,4,8]})");
    REQUIRE(run_cli("evaluate --config " + d + "eval.json --out " + d + "eval1").exit_code == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("cli: full chain produces a well-formed report") {
  const fs::path dir = pipeline().dir;
  const ojson report = slurp_json(dir / "eval1" / "report.json");

  CHECK(report.at("scenario").at("id").get<int>() == 3);
  CHECK(report.at("scenario").at("finetune_region").get<std::string>() == "Spain");
  CHECK(report.at("scenario").at("test_region").get<std::string>() == "France");
  CHECK(report.contains("reference_values"));
  CHECK(report.at("reference_values").at("RF").at("iou").get<double>() == doctest::Approx(0.63));
  CHECK(report.at("reference_values").at("FT_E").at("f1").get<double>() ==
        doctest::Approx(0.772));

  const ojson& methods = report.at("methods");
  REQUIRE(methods.size() == 3);
  CHECK(methods[0].at("name") == "RF");
  CHECK(methods[1].at("name") == "RI");
  CHECK(methods[2].at("name") == "FT_E");

  for (const auto& m : methods) {
    for (const auto& e : m.at("per_seed")) {
      for (const char* key : {"iou", "recall", "precision", "f1"}) {
        const double v = e.at(key).get<double>();
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(m.at("mean").contains("iou"));
  }

  // Aggregation sorted by seed even though checkpoints were listed 2,1.
  const ojson& ri = methods[1];
  CHECK(ri.at("seeds").get<std::vector<int>>() == std::vector<int>{1, 2});
  CHECK(ri.at("per_seed")[0].at("seed").get<int>() == 1);
  CHECK(ri.at("per_seed")[1].at("seed").get<int>() == 2);

  // Early-prediction sweep covers the requested horizons for network methods.
  for (size_t i = 1; i < methods.size(); ++i) {
    std::vector<int> ts;
    for (const auto& e : methods[i].at("early_sweep")) ts.push_back(e.at("t_avail").get<int>());
    CHECK(ts == std::vector<int>{2, 4, 8});
  }
  CHECK(!methods[0].contains("early_sweep"));  // RF has no temporal axis
}

TEST_CASE("cli: run manifests list outputs that exist; timings stay out of the report") {
  const fs::path dir = pipeline().dir;
  for (const char* stage : {"pre", "ft_e", "ri", "eval1"}) {
    const ojson m = slurp_json(dir / stage / "run_manifest.json");
    CHECK(m.at("version").get<std::string>() == "cropseg/0.1.0");
    CHECK(m.contains("timings_ms"));
    CHECK(m.at("timings_ms").contains("total"));
    for (const auto& out : m.at("outputs"))
      CHECK(fs::exists(out.get<std::string>()));
  }
  const std::string report_text = slurp(dir / "eval1" / "report.json");
  CHECK(report_text.find("timings") == std::string::npos);
}

TEST_CASE("cli: repeat evaluation is byte-identical") {
  const fs::path dir = pipeline().dir;
  const std::string d = dir.string() + "/";
  REQUIRE(run_cli("evaluate --config " + d + "eval.json --out " + d + "eval2").exit_code == 0);
  CHECK(slurp(dir / "eval1" / "report.json") == slurp(dir / "eval2" / "report.json"));

  std::vector<std::uint8_t> m1, m2;
  REQUIRE(read_file_bytes(dir / "eval1" / "mosaic.ppm", m1));
  REQUIRE(read_file_bytes(dir / "eval2" / "mosaic.ppm", m2));
  CHECK(m1 == m2);
}

TEST_CASE("cli: repeat pretraining reproduces the checkpoint bitwise") {
  const fs::path dir = pipeline().dir;
  const std::string d = dir.string() + "/";
  REQUIRE(run_cli("pretrain --config " + d + "pretrain.json --out " + d + "pre_again").exit_code ==
          0);
  std::vector<std::uint8_t> a, b;
  REQUIRE(read_file_bytes(dir / "pre" / "checkpoint" / "params.bin", a));
  REQUIRE(read_file_bytes(dir / "pre_again" / "checkpoint" / "params.bin", b));
  CHECK(a == b);
  CHECK(slurp(dir / "pre" / "history.jsonl") == slurp(dir / "pre_again" / "history.jsonl"));
}

TEST_CASE("cli: adapt-channels then verify-checkpoint confirms the duplication identity") {
  const fs::path dir = pipeline().dir;
  const std::string d = dir.string() + "/";
  REQUIRE(run_cli("adapt-channels " + d + "pre/checkpoint --features VH,VH --out " + d +
                  "adapted").exit_code == 0);
  const RunOutcome v =
      run_cli("verify-checkpoint " + d + "adapted/checkpoint --base " + d + "pre/checkpoint");
  CHECK(v.exit_code == 0);
  CHECK(v.out.find("duplication identity") != std::string::npos);

  const CheckpointBundle adapted = load_checkpoint(dir / "adapted" / "checkpoint");
  CHECK(adapted.feature_names == std::vector<std::string>{"VH", "VH"});
  CHECK(adapted.provenance.at("expanded_from").get<std::vector<std::string>>() ==
        std::vector<std::string>{"VH"});
}

TEST_CASE("cli: predict writes one PGM mask per patch and horizon") {
  const fs::path dir = pipeline().dir;
  const std::string d = dir.string() + "/";
  REQUIRE(run_cli("predict " + d + "ft_e/seed_1/checkpoint " + d + "tgt/test --out " + d +
                  "preds --early-steps 4,8").exit_code == 0);
  const PatchDataset test = load_dataset(dir / "tgt" / "test");
  for (const char* t : {"t4", "t8"}) {
    for (const auto& s : test.samples) {
      const fs::path mask = dir / "preds" / t / ("mask_" + s.id + ".pgm");
      REQUIRE(fs::exists(mask));
      CHECK(slurp(mask).rfind("P5\n32 32\n255\n", 0) == 0);
    }
  }
}

TEST_CASE("cli: config errors exit 2 with a single parsable line") {
  const fs::path dir = kRoot / "errors";
  fs::create_directories(dir);
  const std::string d = dir.string() + "/";

  write_text(dir / "nokey.json", R"({"model":{}})");
  RunOutcome r = run_cli("pretrain --config " + d + "nokey.json --out " + d + "x");
  CHECK(r.exit_code == 2);
  CHECK(r.err.rfind("error: [config]", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  write_text(dir / "notjson.json", "not json");
  r = run_cli("pretrain --config " + d + "notjson.json --out " + d + "x");
  CHECK(r.exit_code == 2);
  CHECK(r.err.rfind("error: [config]", 0) == 0);

  r = run_cli("pretrain --no-such-flag");
  CHECK(r.exit_code == 2);
  CHECK(r.err.rfind("error: [config]", 0) == 0);

  r = run_cli("--help");
  CHECK(r.exit_code == 0);
}

TEST_CASE("cli: missing data exits 3") {
  const fs::path dir = kRoot / "errors";
  const std::string d = dir.string() + "/";
  write_text(dir / "nodata.json", R"({"dataset":"/nonexistent/path"})");
  const RunOutcome r = run_cli("pretrain --config " + d + "nodata.json --out " + d + "x");
  CHECK(r.exit_code == 3);
  CHECK(r.err.rfind("error: [data]", 0) == 0);
}

TEST_CASE("cli: corrupted checkpoint exits 4 and names the entry") {
  const fs::path dir = pipeline().dir;
  const fs::path corrupt = kRoot / "errors" / "corrupt_ckpt";
  fs::remove_all(corrupt);
  fs::copy(dir / "pre" / "checkpoint", corrupt, fs::copy_options::recursive);
  std::vector<std::uint8_t> params;
  REQUIRE(read_file_bytes(corrupt / "params.bin", params));
  params.resize(params.size() / 2);
  write_file_bytes(corrupt / "params.bin", params.data(), params.size());

  const RunOutcome r = run_cli("verify-checkpoint " + corrupt.string());
  CHECK(r.exit_code == 4);
  CHECK(r.err.rfind("error: [integrity]", 0) == 0);
  CHECK(r.err.find("entry:") != std::string::npos);
}

TEST_CASE("cli: divergent pretraining exits 5; divergent fine-tuning is reported at exit 0") {
  const fs::path dir = pipeline().dir;
  const std::string d = dir.string() + "/";
  const fs::path edir = kRoot / "errors";
  const std::string e = edir.string() + "/";

  write_text(edir / "explode.json",
             R"({"dataset":")" + d + R"(src/train",
                 "model":{"patch_size":32,"depth":2,"base_channels":8},
                 "train":{"epochs":1,"batch_size":4,"learning_rate":1e9},"seed":5})");
  RunOutcome r = run_cli("pretrain --config " + e + "explode.json --out " + e + "x");
  CHECK(r.exit_code == 5);
  CHECK(r.err.rfind("error: [divergence]", 0) == 0);

  write_text(edir / "ftd_explode.json",
             R"({"checkpoint":")" + d + R"(pre/checkpoint","dataset":")" + d + R"(tgt/train",
                 "mode":"ft_d","seeds":[1],
                 "train":{"epochs":1,"batch_size":2,"learning_rate":1e9}})");
  r = run_cli("finetune --config " + e + "ftd_explode.json --out " + e + "ftd_div");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("DIVERGED") != std::string::npos);
  const ojson m = slurp_json(edir / "ftd_div" / "run_manifest.json");
  CHECK(m.at("seeds")[0].at("diverged").get<bool>());
  CHECK(m.at("seeds")[0].at("diverged_step").get<int>() >= 1);
}

TEST_CASE("cli: fine-tune regimes log their weight policy") {
  const fs::path dir = pipeline().dir;
  const ojson ri = slurp_json(dir / "ri" / "run_manifest.json");
  CHECK(ri.at("seeds")[0].at("pretrained_weights").get<std::string>() == "discarded");

  const ojson fte = slurp_json(dir / "ft_e" / "run_manifest.json");
  CHECK(fte.at("seeds")[0].at("frozen_unchanged").get<bool>());

  // FT_E freezes the decoder: those tensors are bitwise identical to the base.
  const CheckpointBundle base = load_checkpoint(dir / "pre" / "checkpoint");
  const CheckpointBundle tuned = load_checkpoint(dir / "ft_e" / "seed_1" / "checkpoint");
  bool decoder_same = true, encoder_moved = false;
  for (size_t i = 0; i < base.params.specs.size(); ++i) {
    if (base.params.specs[i].group == ParamGroup::decoder)
      decoder_same = decoder_same && tuned.params.values[i].bitwise_equal(base.params.values[i]);
    else
      encoder_moved = encoder_moved || !tuned.params.values[i].bitwise_equal(base.params.values[i]);
  }
  CHECK(decoder_same);
  CHECK(encoder_moved);
}
