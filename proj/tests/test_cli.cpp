#include "dreamer/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dreamer;
using namespace dreamer::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
	const auto dir = fs::temp_directory_path() / ("dreamer_cli_" + name);
	fs::remove_all(dir);
	return dir;
}

ConfigArgs tiny_args(const std::string& env = "pendulum")
{
	ConfigArgs a;
	a.env = env;
	a.overrides = {"deter=16", "stoch=4", "hidden=32", "layers=1", "cnn_depth=4", "actor_layers=1", "value_layers=1",
		"batch=4", "seq_len=8", "horizon=5", "collect_interval=3", "seed_episodes=2"};
	return a;
}

// One tiny trained run shared by the read-only commands.
const fs::path& trained_run()
{
	static const fs::path dir = [] {
		auto d = fresh_dir("run");
		TrainArgs t;
		t.config = tiny_args();
		t.config.steps = 800;
		t.logdir = d;
		std::ostringstream out;
		cmd_train(t, out);
		return d;
	}();
	return dir;
}

std::size_t count_lines(const fs::path& p)
{
	std::ifstream in(p);
	std::size_t n = 0;
	for (std::string line; std::getline(in, line);)
	{
		++n;
	}
	return n;
}

} // namespace

TEST(BuildConfig, FlagsAndOverridesLayerOnTheProfile)
{
	ConfigArgs a;
	a.profile = "paper";
	a.repr = "nce";
	a.seed = 7;
	a.overrides = {"horizon=5", "discount_head=true", "env=chain"};
	const auto c = build_config(a);
	EXPECT_EQ(c.batch, 50);
	EXPECT_EQ(c.seq_len, 50);
	EXPECT_EQ(c.horizon, 5);
	EXPECT_EQ(c.seed, 7u);
	EXPECT_TRUE(c.discount_head);
	EXPECT_EQ(c.env, "chain");
	EXPECT_EQ(to_string(c.objective()), std::string("nce"));

	ConfigArgs bad;
	bad.overrides = {"horizn=5"};
	try
	{
		build_config(bad);
		FAIL();
	}
	catch (const ConfigError& e)
	{
		EXPECT_NE(std::string(e.what()).find("horizn"), std::string::npos);
	}
	bad.overrides = {"novalue"};
	EXPECT_THROW(build_config(bad), ConfigError);
	bad.overrides = {"batch=\"many\""};
	EXPECT_THROW(build_config(bad), ConfigError);
}

TEST(BuildConfig, FileThenFlags)
{
	const auto dir = fresh_dir("cfgfile");
	fs::create_directories(dir);
	io::write_text(dir / "c.json", R"({"profile": "discrete", "horizon": 7})");
	ConfigArgs a;
	a.config_file = (dir / "c.json").string();
	a.seed = 3;
	const auto c = build_config(a);
	EXPECT_EQ(c.env, "grid_cliff");
	EXPECT_EQ(c.horizon, 7);
	EXPECT_EQ(c.seed, 3u);
	io::write_text(dir / "broken.json", "{");
	a.config_file = (dir / "broken.json").string();
	EXPECT_THROW(build_config(a), ConfigError);
	fs::remove_all(dir);
}

TEST(Train, ProducesTheRunArtifacts)
{
	const auto& dir = trained_run();
	for (const char* name : {"metrics.jsonl", "metrics.csv", "config.json", "manifest.json", "run_end.json", "events.log"})
	{
		EXPECT_TRUE(fs::exists(dir / name)) << name;
	}
	EXPECT_TRUE(fs::exists(dir / "checkpoints" / "latest" / "manifest.json"));
	const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
	EXPECT_EQ(manifest.at("version"), DREAMER_VERSION);
	EXPECT_EQ(manifest.at("config").at("env"), "pendulum");
	// config.json alone reproduces the run
	EXPECT_EQ(run_config(dir).to_json(), manifest.at("config"));
}

TEST(Train, RefusesToOverwriteARun)
{
	TrainArgs t;
	t.config = tiny_args();
	t.logdir = trained_run();
	std::ostringstream out;
	EXPECT_THROW(cmd_train(t, out), UsageError);
	t.logdir.clear();
	EXPECT_THROW(cmd_train(t, out), UsageError);
	t.logdir = trained_run();
	t.resume = true;
	EXPECT_THROW(cmd_train(t, out), UsageError); // config flags are not allowed with --resume
}

TEST(Train, LogsTheContrastiveObjective)
{
	const auto dir = fresh_dir("nce");
	TrainArgs t;
	t.config = tiny_args();
	t.config.repr = "nce";
	t.config.steps = 0;
	t.logdir = dir;
	std::ostringstream out;
	EXPECT_EQ(cmd_train(t, out), exit_ok);
	EXPECT_NE(out.str().find("objective nce"), std::string::npos);
	EXPECT_EQ(run_config(dir).repr, "nce");
	fs::remove_all(dir);
}

TEST(Eval, DeterministicPerSeedAndBounded)
{
	EvalArgs a;
	a.logdir = trained_run();
	a.episodes = 1;
	a.seed = 11;
	const auto x = evaluate_run(a);
	const auto y = evaluate_run(a);
	EXPECT_EQ(x.returns, y.returns);
	a.episodes = 3;
	const auto z = evaluate_run(a);
	EXPECT_EQ(z.returns.front(), x.returns.front());
	for (double r : z.returns)
	{
		EXPECT_GE(r, 0.0);
		EXPECT_LE(r, z.max_return);
	}
	EXPECT_EQ(z.max_return, 200);
	std::ostringstream out;
	EXPECT_EQ(cmd_eval(a, out), exit_ok);
	EXPECT_NE(out.str().find("mean "), std::string::npos);
}

TEST(Eval, DumpsEpisodesOutsideTheRun)
{
	EvalArgs a;
	a.logdir = trained_run();
	a.episodes = 2;
	a.dump = fresh_dir("dump");
	evaluate_run(a);
	EXPECT_EQ(data::load_episode(a.dump / data::EpisodeDataset::episode_filename(1)).length(), 101);
	a.dump = trained_run() / "dump";
	EXPECT_THROW(evaluate_run(a), UsageError);
	fs::remove_all(fresh_dir("dump"));
}

TEST(Eval, MissingOrCorruptCheckpointIsAnError)
{
	const auto dir = fresh_dir("corrupt");
	fs::copy(trained_run(), dir, fs::copy_options::recursive);
	EvalArgs a;
	a.logdir = dir;
	a.episodes = 1;
	{
		std::ofstream m(dir / "checkpoints" / "latest" / "manifest.json");
		m << "{\"format\": \"dreamer-checkpoint-1\"";
	}
	EXPECT_THROW(evaluate_run(a), CheckpointError);
	fs::remove_all(dir / "checkpoints");
	EXPECT_THROW(evaluate_run(a), CheckpointError);
	fs::remove_all(dir);
	EXPECT_THROW(evaluate_run(a), UsageError);
}

TEST(Gradcheck, PassesOnFreshInitAndFailsUnderFaultInjection)
{
	std::ostringstream ok;
	EXPECT_EQ(cmd_gradcheck({}, ok), exit_ok);
	for (const char* name : {"diffmath", "world_model_recon", "world_model_nce", "world_model_reward", "actor", "critic"})
	{
		EXPECT_NE(ok.str().find(name), std::string::npos) << name;
	}
	EXPECT_NE(ok.str().find("max_rel_error"), std::string::npos);
	GradcheckArgs bad;
	bad.inject_fault = true;
	std::ostringstream fail;
	EXPECT_EQ(cmd_gradcheck(bad, fail), exit_verification);
	EXPECT_NE(fail.str().find("FAIL"), std::string::npos);
}

TEST(Imagine, WritesGridsAndRewardTable)
{
	ImagineArgs a;
	a.logdir = trained_run();
	a.out = fresh_dir("imagine");
	a.context = 5;
	a.horizon = 20;
	const auto r = imagine_run(a);
	EXPECT_EQ(r.csv_rows, 25);
	EXPECT_EQ(count_lines(a.out / "rewards.csv"), 26u);
	for (const char* name : {"context.png", "reconstructions.png", "predicted.png", "true.png", "summary.json"})
	{
		EXPECT_TRUE(fs::exists(a.out / name)) << name;
	}
	const auto grid = io::read_png(a.out / "predicted.png");
	EXPECT_EQ(grid.dim(0), 2 * 33 - 1);
	EXPECT_EQ(grid.dim(1), 10 * 33 - 1);
	EXPECT_GE(r.image_mse, 0.0);
	EXPECT_THROW(imagine_run(a), UsageError); // output directory now exists
	fs::remove_all(a.out);

	a.horizon = 0;
	const auto recon_only = imagine_run(a);
	EXPECT_EQ(recon_only.csv_rows, 5);
	EXPECT_TRUE(fs::exists(a.out / "reconstructions.png"));
	EXPECT_FALSE(fs::exists(a.out / "predicted.png"));
	fs::remove_all(a.out);

	a.horizon = 200;
	EXPECT_THROW(imagine_run(a), UsageError);
	fs::remove_all(a.out);
}

TEST(CompareHorizons, DefaultsToAllVariantsAndEmitsChart)
{
	CompareArgs a;
	a.config = tiny_args("chain");
	a.config.steps = 0;
	a.config.overrides.push_back("cem_candidates=16");
	a.config.overrides.push_back("cem_top_k=4");
	a.config.overrides.push_back("cem_iterations=2");
	a.horizons = {2, 5};
	a.seeds = {0};
	a.episodes = 1;
	a.out = fresh_dir("compare");
	std::ostringstream out;
	EXPECT_EQ(cmd_compare_horizons(a, out), exit_ok);
	EXPECT_EQ(count_lines(a.out / "horizons.csv"), 1u + 3 * 2);
	std::ifstream svg(a.out / "horizons.svg");
	const std::string text((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
	EXPECT_EQ(text.rfind("<svg", 0), 0u);
	std::size_t lines = 0;
	for (auto pos = text.find("<polyline"); pos != std::string::npos; pos = text.find("<polyline", pos + 1))
	{
		++lines;
	}
	EXPECT_EQ(lines, 3u);
	for (const char* v : {"dreamer", "no_value", "cem"})
	{
		EXPECT_NE(text.find(v), std::string::npos);
	}
	a.variants = {"planet"};
	EXPECT_THROW(cmd_compare_horizons(a, out), UsageError);
	fs::remove_all(a.out);
}

TEST(Io, PngRoundTripIsExactAtEightBits)
{
	Tensor<float> img({3, 4, 3});
	for (std::size_t i = 0; i < img.size(); ++i)
	{
		img[i] = static_cast<float>((i * 37) % 256) / 255.0f;
	}
	const auto dir = fresh_dir("png");
	fs::create_directories(dir);
	io::write_png(dir / "a.png", img);
	const auto back = io::read_png(dir / "a.png");
	ASSERT_EQ(back.shape(), img.shape());
	for (std::size_t i = 0; i < img.size(); ++i)
	{
		EXPECT_EQ(back[i], img[i]);
	}
	EXPECT_THROW(io::write_png(dir / "b.png", Tensor<float>({3, 4, 2})), std::invalid_argument);
	fs::remove_all(dir);
}

TEST(Io, TilingPlacesFramesRowMajor)
{
	Tensor<float> frames({3, 2, 2, 1});
	for (int i = 0; i < 3; ++i)
	{
		for (int k = 0; k < 4; ++k)
		{
			frames[static_cast<std::size_t>(i) * 4 + k] = 0.1f * static_cast<float>(i);
		}
	}
	const auto grid = io::tile_frames(frames, 2);
	ASSERT_EQ(grid.shape(), (Shape{5, 5, 1}));
	EXPECT_EQ(grid[0], 0.0f);
	EXPECT_EQ(grid[3], 0.1f);             // row 0, column 3: second frame
	EXPECT_EQ(grid[2], 1.0f);             // gutter
	EXPECT_EQ(grid[3 * 5 + 0], 0.2f);     // third frame starts the second row
	EXPECT_EQ(grid[4 * 5 + 4], 1.0f);     // unused cell stays white
}

TEST(Io, CsvRowsMustMatchTheHeader)
{
	const auto dir = fresh_dir("csv");
	fs::create_directories(dir);
	io::CsvWriter csv(dir / "a.csv", {"x", "y"});
	csv.row({"1", "2"});
	EXPECT_THROW(csv.row({"1"}), std::invalid_argument);
	fs::remove_all(dir);
}

TEST(Io, PearsonMatchesHandComputedValue)
{
	// x = 1..4, y = 2, 4, 5, 9: centred cross sum 11, centred squares 5 and 26
	EXPECT_NEAR(pearson({1, 2, 3, 4}, {2, 4, 5, 9}), 11.0 / std::sqrt(5.0 * 26.0), 1e-12);
	EXPECT_EQ(pearson({1, 1, 1}, {1, 2, 3}), 0.0);
}

TEST(Paths, WithinDetectsNesting)
{
	EXPECT_TRUE(within("/a/b/c", "/a/b"));
	EXPECT_TRUE(within("/a/b", "/a/b"));
	EXPECT_FALSE(within("/a/bc", "/a/b"));
	EXPECT_FALSE(within("/a", "/a/b"));
}
