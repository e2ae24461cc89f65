#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "vseg_cli/cli.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result vseg_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vseg_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small phantoms keep the training commands fast.
fs::path small_spec() {
  PhantomSpec s;
  s.extents = {8, 16, 16};
  s.lesion_radius = {1.5, 2.5};
  const fs::path p = fs::temp_directory_path() / "vseg_cli" / "small_spec.txt";
  fs::create_directories(p.parent_path());
  std::ofstream(p) << cli::phantom_spec_to_text(s);
  return p;
}

fs::path small_data(const std::string& name, int count = 2) {
  const fs::path dir = fresh_dir(name);
  const Result r = vseg_run({"gen-data", "--spec", small_spec().string(), "--count", std::to_string(count),
                             "--seed", "3", "--out", dir.string()});
  REQUIRE(r.code == 0);
  return dir;
}

std::vector<std::string> tiny_train_flags() {
  return {"--base", "2", "--patch", "8x16x16", "--steps", "3", "--seed", "5", "--deterministic"};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("phantom spec text round trip") {
    PhantomSpec s;
    s.extents = {8, 24, 40};
    s.noise = 2.5;
    s.lesion_band = {-700.0, -50.0};
    const PhantomSpec back = cli::phantom_spec_from_text(cli::phantom_spec_to_text(s));
    CHECK(cli::phantom_spec_to_text(back) == cli::phantom_spec_to_text(s));
    CHECK_THROWS_AS(cli::phantom_spec_from_text("sky=blue\n"), ConfigError);
  }

  TEST_CASE("gen-data is deterministic and writes the manifest") {
    const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
    REQUIRE(vseg_run({"gen-data", "--count", "4", "--seed", "7", "--out", a.string()}).code == 0);
    REQUIRE(vseg_run({"gen-data", "--count", "4", "--seed", "7", "--out", b.string()}).code == 0);
    CHECK(fs::exists(a / "manifest.txt"));
    for (const char* name : {"sample_0000.vvol", "sample_0001.vvol", "sample_0002.vvol", "sample_0003.vvol"}) {
      CAPTURE(name);
      REQUIRE(fs::exists(a / name));
      CHECK(slurp(a / name) == slurp(b / name));
    }
    CHECK_FALSE(fs::exists(a / "sample_0004.vvol"));
    for (const auto& s : cli::load_dataset(a)) {
      for (std::size_t i = 0; i < s.sample.lesion_mask.voxels.size(); ++i)
        if (s.sample.lesion_mask.voxels[i]) CHECK(s.sample.lung_mask.voxels[i] == 1);
    }
    const std::string manifest = slurp(a / "manifest.txt");
    CHECK(manifest.find("# command=gen-data") != std::string::npos);
    CHECK(manifest.find("# seed=7") != std::string::npos);
    CHECK(cli::phantom_spec_from_text(manifest).extents == Extent3{16, 32, 32});
  }

  TEST_CASE("validation and I/O exit codes") {
    CHECK(vseg_run({"gen-data", "--count", "0", "--out", fresh_dir("zero").string()}).code == cli::kExitFailure);
    CHECK_FALSE(fs::exists(fs::temp_directory_path() / "vseg_cli" / "zero"));
    const Result bad = vseg_run({"gen-data", "--out", "/proc/vseg_cannot_write"});
    CHECK(bad.code == cli::kExitIo);
    CHECK(bad.err.find("/proc/vseg_cannot_write") != std::string::npos);
    CHECK(vseg_run({"gen-data"}).code == cli::kExitFailure);
    CHECK(vseg_run({"frobnicate"}).code == cli::kExitFailure);
    CHECK(vseg_run({"train", "--data", "/nonexistent", "--out", fresh_dir("t0").string()}).code == cli::kExitIo);
  }

  TEST_CASE("gradcheck passes, and the fault hook makes it fail") {
    const Result ok = vseg_run({"gradcheck", "--max-elements", "1"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("fv+paspp") != std::string::npos);
    CHECK(ok.out.find("PASS") != std::string::npos);

    const Result bad = vseg_run({"gradcheck", "--max-elements", "1", "--fault", "relu"});
    CHECK(bad.code == cli::kExitFailure);
    CHECK(bad.err.find("fv+paspp: ") != std::string::npos);

    const fs::path cfg = fs::temp_directory_path() / "vseg_cli" / "base8.txt";
    std::ofstream(cfg) << "base_channels=8\n";
    const Result big = vseg_run({"gradcheck", "--config", cfg.string()});
    CHECK(big.code == cli::kExitFailure);
    CHECK(big.err.find("base_channels") != std::string::npos);
  }

  TEST_CASE("train twice gives byte-identical logs") {
    const fs::path data = small_data("train_data");
    const fs::path a = fresh_dir("train_a"), b = fresh_dir("train_b");
    auto args = [&](const fs::path& out) {
      std::vector<std::string> v{"train", "--data", data.string(), "--out", out.string()};
      for (const auto& f : tiny_train_flags()) v.push_back(f);
      return v;
    };
    REQUIRE(vseg_run(args(a)).code == 0);
    REQUIRE(vseg_run(args(b)).code == 0);
    CHECK(slurp(a / "train_log.tsv") == slurp(b / "train_log.tsv"));
    CHECK(slurp(a / "final.vseg") == slurp(b / "final.vseg"));

    // The manifest is a complete config: passing it back repeats the run.
    const fs::path c = fresh_dir("train_c");
    REQUIRE(vseg_run({"train", "--data", data.string(), "--out", c.string(), "--config",
                      (a / "manifest.txt").string()})
                .code == 0);
    CHECK(slurp(c / "train_log.tsv") == slurp(a / "train_log.tsv"));
  }

  TEST_CASE("infer writes a mask and a slice; eval compares directories") {
    const fs::path data = small_data("infer_data");
    const fs::path run = fresh_dir("infer_run");
    std::vector<std::string> train_args{"train", "--data", data.string(), "--out", run.string()};
    for (const auto& f : tiny_train_flags()) train_args.push_back(f);
    REQUIRE(vseg_run(train_args).code == 0);

    const fs::path pred = fresh_dir("infer_pred");
    const Result r = vseg_run({"infer", "--ckpt", (run / "final.vseg").string(), "--in",
                               (data / "sample_0000.vvol").string(), "--out", (pred / "sample_0000.vvol").string()});
    REQUIRE(r.code == 0);
    const VolumeSample mask = load_volume(pred / "sample_0000.vvol");
    CHECK(mask.lesion_mask.size() == 8 * 16 * 16);
    CHECK(mask.lung_mask.size() == 0);
    CHECK(fs::exists(pred / "sample_0000.pgm"));

    const Result self = vseg_run({"eval", "--pred", data.string(), "--ref", data.string()});
    CHECK(self.code == 0);
    CHECK(self.out.find("mean\tlesion\t1.000000\t1.000000\t1.000000") != std::string::npos);

    const Result ev = vseg_run({"eval", "--pred", pred.string(), "--ref", data.string()});
    CHECK(ev.code == 0);
    CHECK(ev.out.rfind("case_id\ttask", 0) == 0);

    fs::copy_file(data / "sample_0001.vvol", pred / "extra_case.vvol");
    const Result missing = vseg_run({"eval", "--pred", pred.string(), "--ref", data.string()});
    CHECK(missing.code != 0);
    CHECK(missing.err.find("extra_case") != std::string::npos);
  }

  TEST_CASE("infer rejects a checkpoint expecting other inputs") {
    NetConfig c;
    c.base_channels = 2;
    c.in_channels = 2;
    const fs::path dir = fresh_dir("mismatch");
    fs::create_directories(dir);
    save_checkpoint(dir / "two.vseg", Network(c, 1));
    save_volume(dir / "v.vvol", generate_phantom(PhantomSpec{}, 1));
    const Result r = vseg_run({"infer", "--ckpt", (dir / "two.vseg").string(), "--in", (dir / "v.vvol").string(),
                               "--out", (dir / "m.vvol").string()});
    CHECK(r.code == cli::kExitFailure);
    CHECK(r.err.find("input channels") != std::string::npos);
  }

  TEST_CASE("ablate emits nine rows of six metrics") {
    const fs::path data = small_data("ablate_data");
    const fs::path out = fresh_dir("ablate_out");
    const Result r = vseg_run({"ablate", "--data", data.string(), "--out", out.string(), "--base", "2", "--patch",
                               "8x16x16", "--steps", "1"});
    REQUIRE(r.code == 0);
    std::istringstream is(slurp(out / "ablation.tsv"));
    std::string line;
    std::getline(is, line);
    CHECK(line == cli::kAblationHeader);
    int rows = 0;
    while (std::getline(is, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), '\t') == 6);
    }
    CHECK(rows == 9);
    CHECK(r.out == slurp(out / "ablation.tsv"));
  }
}
