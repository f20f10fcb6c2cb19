// Copyright 2026 The STCN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the built command-line tool as a subprocess.

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace
{

namespace fs = std::filesystem;

const char * kTiny =
  "data.patterns = 3\ndata.per_pattern = 10\ndata.joints = 2\ndata.observed = 4\ndata.horizon = 5\n"
  "data.frame_rate = 10\nmodel.d_model = 6\nmodel.l_dim = 3\nmodel.latent_rows = 2\nmodel.ode_hidden = 6\n"
  "model.cond_dim = 3\nmodel.readout_hidden = 6\nmodel.refine_hidden = 6\nmodel.codebook_size = 6\n"
  "model.anchors = 3\nsolver.method = rk4\nsolver.step = 0.1\ntrain.batch_size = 8\ntrain.epochs = 2\n"
  "train.lr = 0.003\neval.samples = 3\neval.mm_samples = 2\neval.top = 2\n";

class Cli : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir = fs::temp_directory_path() / ("stcn_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.cfg") << kTiny;
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(const std::string & args) const
  {
    const std::string cmd = "cd '" + dir.string() + "' && '" STCN_CLI_PATH "' " + args + " >>log.txt 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string & rel) const
  {
    std::ifstream is(dir / rel, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  }

  int pipeline(const std::string & out, const std::string & seed) const
  {
    const std::string c = " --config tiny.cfg --seed " + seed;
    if (int rc = run("generate" + c + " -o " + out + ".stcm"); rc != 0) return rc;
    if (int rc = run("train" + c + " --data " + out + ".stcm --out " + out); rc != 0) return rc;
    if (int rc = run("sample --out " + out + " --index 1 --samples 2 -o " + out + "/samples.csv"); rc != 0) return rc;
    if (int rc = run("eval --out " + out); rc != 0) return rc;
    return run("export-plots --out " + out);
  }

  fs::path dir;
};

TEST_F(Cli, BadInputExitsTwo)
{
  EXPECT_EQ(run("generate --config tiny.cfg --patterns 0 -o d.stcm"), 2);
  EXPECT_EQ(run("generate --set nonsense=1"), 2);
  EXPECT_EQ(run("generate --config missing.cfg"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("generate --config tiny.cfg -o d.stcm"), 0);
  EXPECT_EQ(run("train --config tiny.cfg --data d.stcm --solver leapfrog"), 2);
  EXPECT_EQ(run("train --config tiny.cfg --data d.stcm --set data.horizon=40"), 2);
  EXPECT_NE(slurp("log.txt").find("T + H = 44 required"), std::string::npos);
}

TEST_F(Cli, MissingArtifactsExitThree)
{
  EXPECT_EQ(run("train --config tiny.cfg --data absent.stcm"), 3);
  EXPECT_EQ(run("generate --config tiny.cfg -o d.stcm"), 0);
  EXPECT_EQ(run("train --config tiny.cfg --data d.stcm --out r --stage 2"), 3);
  EXPECT_NE(slurp("log.txt").find("stage1.ckpt"), std::string::npos);
  EXPECT_EQ(run("eval --config tiny.cfg --data d.stcm --out r"), 3);
}

TEST_F(Cli, NumericalFailureExitsFour)
{
  ASSERT_EQ(run("generate --config tiny.cfg -o d.stcm"), 0);
  EXPECT_EQ(run("train --config tiny.cfg --data d.stcm --out r --stage 1 --solver dopri5 --rtol 1e-12 "
                "--atol 1e-12 --set solver.max_steps=3"),
            4);
  EXPECT_NE(slurp("log.txt").find("epoch 0 batch 1"), std::string::npos);
}

TEST_F(Cli, FullPipelineIsByteIdenticalAcrossRuns)
{
  ASSERT_EQ(pipeline("a", "5"), 0) << slurp("log.txt");
  ASSERT_EQ(pipeline("b", "5"), 0) << slurp("log.txt");
  for (const char * f : {".stcm", ".stcm.json"}) EXPECT_EQ(slurp(std::string("a") + f), slurp(std::string("b") + f));
  for (const char * f : {"stage1.ckpt", "stage2.ckpt", "anchors.csv", "stage1_loss.csv", "stage2_loss.csv",
                         "samples.csv", "metrics.json", "results.csv", "plots/latents.csv", "plots/order.csv",
                         "plots/metrics_table.csv"}) {
    const std::string a = slurp(std::string("a/") + f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(std::string("b/") + f)) << f;
  }
  ASSERT_EQ(pipeline("c", "6"), 0);
  EXPECT_NE(slurp("a/stage2.ckpt"), slurp("c/stage2.ckpt"));
}

TEST_F(Cli, FlagsOverrideConfigFileInManifest)
{
  ASSERT_EQ(run("generate --config tiny.cfg -o d.stcm"), 0);
  ASSERT_EQ(run("train --config tiny.cfg --data d.stcm --out r --epochs 1 --set train.lr=0.01 --anchors 2"), 0);
  const auto m = nlohmann::json::parse(slurp("r/manifest.json"));
  EXPECT_EQ(m["config"]["train.epochs"], "1");
  EXPECT_EQ(m["config"]["train.lr"], "0.01");
  EXPECT_EQ(m["config"]["model.anchors"], "2");
  EXPECT_EQ(m["config"]["model.d_model"], "6");
  EXPECT_EQ(m["config"]["train.batch_size"], "8");
  EXPECT_EQ(m["config"]["solver.method"], "rk4");
  // Stage two alone picks the dimensions back up from the run directory.
  EXPECT_EQ(run("train --data d.stcm --out r --stage 2 --epochs 1"), 0) << slurp("log.txt");
  std::ifstream loss(dir / "r/stage2_loss.csv");
  std::string header;
  std::getline(loss, header);
  EXPECT_EQ(header, "epoch,lr,total,nll,anchor,re");
}

TEST_F(Cli, SampleRowsAndInputFile)
{
  ASSERT_EQ(pipeline("a", "1"), 0) << slurp("log.txt");
  // N = 3 anchors x M = 2 draws x H = 5 frames plus the header.
  const std::string s = slurp("a/samples.csv");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 3 * 2 * 5 + 1);
  {
    std::ofstream os(dir / "obs.csv");
    for (int f = 0; f < 4; ++f) os << "0.1,0.2,0.3,0.4,0.5,0.6\n";
  }
  EXPECT_EQ(run("sample --out a --input obs.csv --anchors 1 --samples 1 --noiseless -o one.csv"), 0);
  const std::string one = slurp("one.csv");
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 5 + 1);
  {
    std::ofstream os(dir / "short.csv");
    os << "0.1,0.2\n";
  }
  EXPECT_EQ(run("sample --out a --input short.csv"), 2);
  EXPECT_EQ(run("sample --out a --input none.csv"), 3);
}

}  // namespace
