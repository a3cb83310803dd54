// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "ivtune/analysis.hpp"
#include "ivtune/checkpoint.hpp"
#include "ivtune/dataset.hpp"

using namespace ivtune;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout
  std::string err;  // stderr
};

struct WorkDir {
  fs::path path = fs::temp_directory_path() / ("ivtune_cli_test_" + std::to_string(::getpid()));
  WorkDir() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~WorkDir() { fs::remove_all(path); }
};

const fs::path& work_dir() {
  static const WorkDir dir;
  return dir.path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Run run(const std::string& args) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(IVTUNE_CLI_PATH) + " " + args + " 2>" + err.string();
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

// Small geometry shared by the training runs.
const std::string kSmall =
    "--set depth=2 --set width=8 --set heads=2 --set mlp_ratio=2 --set d_alpha=4 --set d_beta=4 --set epochs=1 "
    "--set batch_size=4 --quiet";

const fs::path& small_data() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "small";
    const Run r = run("gen-data --n 8 --n-val 4 --size 8 --patch 4 --out " + d.string());
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

bool one_error_line(const Run& r) {
  return r.err.starts_with("error: ") && std::count(r.err.begin(), r.err.end(), '\n') == 1 && r.err.ends_with("\n");
}

}  // namespace

TEST_CASE("gen-data defaults and determinism") {
  const fs::path a = work_dir() / "gen_a", b = work_dir() / "gen_b";
  const Run ra = run("gen-data --out " + a.string());
  CHECK(ra.code == 0);
  CHECK(run("gen-data --out " + b.string()).code == 0);
  CHECK(fs::exists(a / "manifest.txt"));
  const Dataset d = read_dataset(a);
  CHECK(d.train.size() == 512);
  CHECK(d.val.size() == 128);
  for (const char* f : {"manifest.txt", "train.ivtn", "val.ivtn"}) CHECK(slurp(a / f) == slurp(b / f));

  const Run e = run("gen-data --n 0 --out " + (work_dir() / "empty").string());
  CHECK(e.code == 1);
  CHECK(one_error_line(e));
  CHECK(e.err.find("empty dataset") != std::string::npos);
}

TEST_CASE("train variants select their trainable sets") {
  struct Case {
    const char* variant;
    TrainPolicy policy;
    Variant arch;
  };
  for (const Case c : {Case{"standard", TrainPolicy::prompt, Variant::standard},
                       Case{"vis_only", TrainPolicy::prompt, Variant::vis_only},
                       Case{"uni_fusion", TrainPolicy::prompt, Variant::uni_fusion},
                       Case{"fft", TrainPolicy::full, Variant::standard},
                       Case{"frozen", TrainPolicy::head_only, Variant::standard}}) {
    CAPTURE(c.variant);
    const fs::path out = work_dir() / (std::string("train_") + c.variant);
    const Run r = run("train --data " + small_data().string() + " --variant " + c.variant + " " + kSmall +
                      " --out " + out.string());
    REQUIRE(r.code == 0);
    for (const char* f : {"config.txt", "metrics.csv", "checkpoint.ivtn"}) CHECK(fs::exists(out / f));
    CHECK(slurp(out / "config.txt").find(std::string("run_variant=") + c.variant) != std::string::npos);
    const Checkpoint ck = load_checkpoint(out / "checkpoint.ivtn");
    CHECK(ck.model.policy() == c.policy);
    CHECK(ck.model.config().variant == c.arch);
    for (const auto& p : ck.model.params().all()) {
      const std::string g = param_group(p.name);
      bool want = false;
      switch (c.policy) {
        case TrainPolicy::full: want = true; break;
        case TrainPolicy::head_only: want = g == "head"; break;
        case TrainPolicy::prompt: want = g != "vis_embed" && !g.starts_with("encoder."); break;
      }
      CHECK(p.trainable == want);
    }
  }
}

TEST_CASE("the architecture key alone selects the variant") {
  const fs::path out = work_dir() / "alias";
  REQUIRE(run("train --data " + small_data().string() + " " + kSmall + " --set variant=uni_fusion --out " +
              out.string())
              .code == 0);
  CHECK(load_checkpoint(out / "checkpoint.ivtn").model.config().variant == Variant::uni_fusion);
  CHECK(slurp(out / "config.txt").find("run_variant=uni_fusion") != std::string::npos);
}

TEST_CASE("same-seed training runs produce identical metrics") {
  const fs::path a = work_dir() / "rep_a", b = work_dir() / "rep_b";
  const std::string base = "train --data " + small_data().string() + " " + kSmall + " --set epochs=2 --out ";
  REQUIRE(run(base + a.string()).code == 0);
  REQUIRE(run(base + b.string()).code == 0);
  const std::string m = slurp(a / "metrics.csv");
  CHECK(m.starts_with("# ivtune metrics v1\nepoch,split,loss,accuracy,miou\n"));
  CHECK(m == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "checkpoint.ivtn") == slurp(b / "checkpoint.ivtn"));

  // The written config reproduces the run.
  const fs::path c = work_dir() / "rep_c";
  REQUIRE(run("train --config " + (a / "config.txt").string() + " --quiet --out " + c.string()).code == 0);
  CHECK(slurp(c / "metrics.csv") == m);
}

TEST_CASE("evaluate and sweep") {
  const fs::path t = work_dir() / "train_standard";
  if (!fs::exists(t / "checkpoint.ivtn"))
    REQUIRE(run("train --data " + small_data().string() + " " + kSmall + " --out " + t.string()).code == 0);
  const Run e = run("evaluate --checkpoint " + (t / "checkpoint.ivtn").string() + " --data " + small_data().string());
  CHECK(e.code == 0);
  CHECK(e.out.starts_with("split=val loss="));

  const fs::path s = work_dir() / "sweep";
  const Run r = run("train --data " + small_data().string() + " " + kSmall + " --sweep d_beta=2,4 --out " + s.string());
  CHECK(r.code == 0);
  CHECK(load_checkpoint(s / "d_beta_2" / "checkpoint.ivtn").model.config().d_beta == 2);
  CHECK(load_checkpoint(s / "d_beta_4" / "checkpoint.ivtn").model.config().d_beta == 4);
}

TEST_CASE("analyze writes the three reports") {
  const fs::path out = work_dir() / "analysis";
  const Run p = run("analyze --params --out " + out.string());
  CHECK(p.code == 0);
  CHECK(slurp(out / "params.csv") == params_csv(param_report(preset_config("toy"))));

  const fs::path frozen = work_dir() / "untrained";
  REQUIRE(run("train --data " + small_data().string() + " --variant frozen " + kSmall +
              " --set epochs=0 --out " + frozen.string())
              .code == 0);
  const Run a = run("analyze --pca --spectrum --checkpoint " + (frozen / "checkpoint.ivtn").string() + " --data " +
                    small_data().string() + " --bands 4 --out " + out.string());
  CHECK(a.code == 0);
  const std::string pca = slurp(out / "pca.csv");
  CHECK(pca.starts_with("# ivtune pca v1\nlayer,rank_index,ratio\n"));
  CHECK(pca.find("\n2,1,") != std::string::npos);  // both layers reported
  const std::string spec = slurp(out / "spectrum.csv");
  CHECK(spec.starts_with("# ivtune spectrum v1\nsource,band_lo,band_hi,energy\nir,"));
  for (const char* src : {"\nvis,", "\nir+conv3x3,", "\nir+linear_projection,"}) CHECK(spec.find(src) != std::string::npos);
}

TEST_CASE("errors are one line with a nonzero exit code") {
  const std::string d = small_data().string();
  const Run bad_variant = run("train --data " + d + " --variant bogus --out " + (work_dir() / "x").string());
  CHECK(bad_variant.code == 1);
  CHECK(one_error_line(bad_variant));
  CHECK(bad_variant.err.starts_with("error: config: "));

  const Run bad_key = run("train --data " + d + " --set nonsense=1 --out " + (work_dir() / "x").string());
  CHECK(bad_key.code == 1);
  CHECK(one_error_line(bad_key));

  const Run missing = run("evaluate --checkpoint /nonexistent.ivtn --data " + d);
  CHECK(missing.code == 1);
  CHECK(one_error_line(missing));

  const Run usage = run("gen-data");
  CHECK(usage.code == 2);
  CHECK(one_error_line(usage));
  CHECK(usage.err.starts_with("error: usage: "));

  CHECK(run("frobnicate").code == 2);

  // Checkpoint geometry that does not match the dataset.
  const fs::path big = work_dir() / "big";
  REQUIRE(run("gen-data --n 2 --n-val 1 --size 16 --out " + big.string()).code == 0);
  const Run mismatch = run("analyze --pca --checkpoint " + (work_dir() / "untrained" / "checkpoint.ivtn").string() +
                           " --data " + big.string() + " --out " + (work_dir() / "y").string());
  CHECK(mismatch.code == 1);
  CHECK(one_error_line(mismatch));
  const fs::path three = work_dir() / "three";
  REQUIRE(run("gen-data --n 2 --n-val 1 --size 8 --classes 3 --out " + three.string()).code == 0);
  const Run classes = run("evaluate --checkpoint " + (work_dir() / "untrained" / "checkpoint.ivtn").string() +
                          " --data " + three.string());
  CHECK(classes.code == 1);
  CHECK(one_error_line(classes));
  CHECK(run("--help").code == 0);
}
