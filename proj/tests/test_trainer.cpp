#include "dreamer/checkpoint.hpp"
#include "dreamer/config.hpp"
#include "dreamer/trainer.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace dreamer;
namespace fs = std::filesystem;

namespace {

Config tiny_config(const std::string& env = "pendulum")
{
	Config c = profile("desk");
	c.env = env;
	c.deter = 16;
	c.stoch = 4;
	c.hidden = 32;
	c.layers = 1;
	c.cnn_depth = 4;
	c.actor_layers = 1;
	c.value_layers = 1;
	c.batch = 4;
	c.seq_len = 8;
	c.horizon = 5;
	c.seed_episodes = 2;
	c.collect_interval = 5;
	c.eval_every = 1;
	c.eval_episodes = 1;
	c.checkpoint_every = 1;
	c.steps = 1000;
	return c;
}

fs::path fresh_dir(const std::string& name)
{
	const auto dir = fs::temp_directory_path() / ("dreamer_trainer_" + name);
	fs::remove_all(dir);
	return dir;
}

std::vector<MetricsRow> without_kind(const std::vector<MetricsRow>& rows, const std::string& kind)
{
	std::vector<MetricsRow> out;
	for (const auto& r : rows)
	{
		if (r.kind != kind)
		{
			out.push_back(r);
		}
	}
	return out;
}

} // namespace

TEST(Config, ProfilesCarryTheirDefaults)
{
	const auto paper = profile("paper");
	EXPECT_EQ(paper.batch, 50);
	EXPECT_EQ(paper.seq_len, 50);
	EXPECT_EQ(paper.horizon, 15);
	EXPECT_EQ(paper.collect_interval, 100);
	EXPECT_EQ(paper.seed_episodes, 5);
	EXPECT_EQ(paper.action_repeat, 2);
	EXPECT_DOUBLE_EQ(paper.gamma, 0.99);
	EXPECT_DOUBLE_EQ(paper.lambda, 0.95);
	EXPECT_DOUBLE_EQ(paper.lr_model, 6e-4);
	EXPECT_DOUBLE_EQ(paper.lr_value, 8e-5);
	EXPECT_DOUBLE_EQ(paper.lr_action, 8e-5);
	EXPECT_DOUBLE_EQ(paper.grad_clip, 100.0);
	EXPECT_DOUBLE_EQ(paper.expl_noise, 0.3);
	EXPECT_EQ(paper.image_size, 64);
	EXPECT_EQ(paper.channels, 3);
	EXPECT_EQ(paper.stoch, 30);

	const auto desk = profile("desk");
	EXPECT_EQ(desk.batch, 16);
	EXPECT_EQ(desk.seq_len, 16);
	EXPECT_EQ(desk.horizon, 15);
	EXPECT_EQ(desk.image_size, 32);
	EXPECT_EQ(desk.channels, 1);

	const auto discrete = profile("discrete");
	EXPECT_EQ(discrete.horizon, 10);
	EXPECT_DOUBLE_EQ(discrete.beta, 0.1);
	EXPECT_DOUBLE_EQ(discrete.epsilon_start, 0.4);
	EXPECT_DOUBLE_EQ(discrete.epsilon_end, 0.1);
	EXPECT_EQ(discrete.epsilon_steps, 200000);
	EXPECT_TRUE(discrete.discount_head);
	EXPECT_EQ(discrete.seq_len, 2);
	EXPECT_THROW(profile("huge"), ConfigError);
}

TEST(Config, UnknownKeysAndBadTypesAreErrors)
{
	try
	{
		config_from_json({{"horizn", 5}});
		FAIL();
	}
	catch (const ConfigError& e)
	{
		EXPECT_NE(std::string(e.what()).find("horizn"), std::string::npos);
	}
	try
	{
		config_from_json({{"horizon", "five"}});
		FAIL();
	}
	catch (const ConfigError& e)
	{
		EXPECT_NE(std::string(e.what()).find("horizon"), std::string::npos);
	}
	EXPECT_THROW(config_from_json({{"seed", -1}}), ConfigError);
	EXPECT_THROW(config_from_json({{"gamma", 1.5}}), ConfigError);
	EXPECT_THROW(config_from_json({{"repr", "vae"}}), ConfigError);
	EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, JsonRoundTripAndOverrides)
{
	auto c = config_from_json({{"profile", "paper"}, {"horizon", 5}, {"repr", "nce"}});
	EXPECT_EQ(c.batch, 50);
	EXPECT_EQ(c.horizon, 5);
	EXPECT_EQ(c.objective(), ReprObjective::Contrastive);
	EXPECT_EQ(to_string(c.objective()), std::string("nce"));
	const auto back = config_from_json(c.to_json());
	EXPECT_EQ(back.to_json(), c.to_json());
	EXPECT_EQ(config_from_json({{"behavior", "no_value"}}).behavior_config().estimator, ValueEstimator::RewardSum);
	EXPECT_EQ(config_from_json({{"env", "grid_cliff"}}).world_model().action_dim, 4);
}

TEST(Schedule, EpsilonIsLinearBetweenEndpoints)
{
	const auto c = profile("discrete");
	EXPECT_DOUBLE_EQ(epsilon_at(c, 0), 0.4);
	EXPECT_NEAR(epsilon_at(c, 100000), 0.25, 1e-12);
	EXPECT_DOUBLE_EQ(epsilon_at(c, 200000), 0.1);
	EXPECT_DOUBLE_EQ(epsilon_at(c, 900000), 0.1);
}

TEST(Checkpoint, RoundTripIsBitExact)
{
	Checkpoint ck;
	std::mt19937_64 rng(3);
	std::normal_distribution<float> normal;
	Tensor<float> a({3, 5});
	for (auto& v : a.values())
	{
		v = normal(rng);
	}
	a[0] = -0.0f;
	a[1] = std::numeric_limits<float>::denorm_min();
	ck.add("a", a);
	ck.add("b", Tensor<float>({2}, {1.0f, 2.0f}));
	ck.meta["rng"] = rng_state(rng);
	ck.meta["step"] = 17;
	const auto dir = fresh_dir("ckpt");
	save_checkpoint(ck, dir);
	const auto back = load_checkpoint(dir);
	EXPECT_EQ(back.digest(), ck.digest());
	EXPECT_EQ(std::memcmp(back.get("a").data(), a.data(), a.size() * sizeof(float)), 0);
	auto restored = rng_from_state(back.meta.at("rng"));
	EXPECT_EQ(restored(), rng());
	EXPECT_THROW(back.get("missing"), CheckpointError);
	EXPECT_THROW(ck.add("a", a), std::logic_error);
	fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsDetected)
{
	Checkpoint ck;
	ck.add("w", Tensor<float>({4}, {1, 2, 3, 4}));
	const auto dir = fresh_dir("corrupt");
	save_checkpoint(ck, dir);
	{
		std::fstream blob(dir / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
		blob.seekp(5);
		blob.put('\x7f');
	}
	EXPECT_THROW(load_checkpoint(dir), CheckpointError);
	save_checkpoint(ck, dir);
	{
		std::ofstream manifest(dir / "manifest.json");
		manifest << "{\"format\": ";
	}
	EXPECT_THROW(load_checkpoint(dir), CheckpointError);
	fs::remove_all(dir);
	EXPECT_THROW(load_checkpoint(dir), CheckpointError);
}

TEST(Checkpoint, OptimizerStateRoundTrip)
{
	Trainer a(tiny_config());
	a.seed_dataset();
	a.train_step();
	a.train_step();
	const auto dir = fresh_dir("optim");
	a.save(dir);
	Trainer b(tiny_config());
	b.restore(load_checkpoint(dir));
	EXPECT_EQ(b.checkpoint().digest(), a.checkpoint().digest());
	EXPECT_EQ(b.model_optimizer().steps(), 2);
	for (std::size_t i = 0; i < a.model_optimizer().second_moments().size(); ++i)
	{
		const auto& x = a.model_optimizer().second_moments()[i];
		const auto& y = b.model_optimizer().second_moments()[i];
		ASSERT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)), 0);
	}
	fs::remove_all(dir);
}

TEST(Optimizer, ClipScalesGradientsDownToTheThreshold)
{
	nn::ParamSet<float> ps;
	auto w = ps.add("w", Tensor<float>({2}, {0.0f, 0.0f}));
	AdamOptions opt;
	opt.clip_norm = 100.0;
	Adam<float> adam(ps, opt);
	w.mutable_grad()[0] = 120.0f;
	w.mutable_grad()[1] = 160.0f;
	EXPECT_DOUBLE_EQ(adam.step(), 200.0);
	// m = (1 - beta1) * g * 0.5
	EXPECT_NEAR(adam.first_moments()[0][0], 0.1 * 60.0, 1e-4);
	EXPECT_NEAR(adam.first_moments()[0][1], 0.1 * 80.0, 1e-4);
	EXPECT_FALSE(w.has_grad());
}

TEST(Trainer, SeedDatasetCollectsRandomEpisodes)
{
	Trainer a(tiny_config("chain"));
	Trainer b(tiny_config("chain"));
	a.seed_dataset();
	b.seed_dataset();
	ASSERT_EQ(a.dataset().size(), 2u);
	for (std::size_t i = 0; i < 2; ++i)
	{
		const auto& x = a.dataset().episode(i);
		const auto& y = b.dataset().episode(i);
		EXPECT_EQ(x.images, y.images);
		EXPECT_EQ(x.actions, y.actions);
		EXPECT_EQ(x.rewards, y.rewards);
		for (float v : x.actions)
		{
			EXPECT_GE(v, -1.0f);
			EXPECT_LE(v, 1.0f);
		}
	}
	auto c = tiny_config();
	c.seed_episodes = 5;
	Trainer five(c);
	five.seed_dataset();
	EXPECT_EQ(five.dataset().size(), 5u);
}

TEST(Trainer, BehaviorUpdatesLeaveTheWorldModelUntouched)
{
	auto c = tiny_config();
	c.lr_model = 1e-30; // model steps shrink to denormal size
	Trainer t(c);
	t.seed_dataset();
	std::vector<Tensor<float>> model_before, actor_before;
	for (const auto& p : t.model().params().items())
	{
		model_before.push_back(p.var.value());
	}
	for (const auto& p : t.actor_critic().actor_params().items())
	{
		actor_before.push_back(p.var.value());
	}
	for (int i = 0; i < 3; ++i)
	{
		t.train_step();
	}
	for (std::size_t i = 0; i < model_before.size(); ++i)
	{
		const auto& now = t.model().params().items()[i].var.value();
		for (std::size_t k = 0; k < now.size(); ++k)
		{
			ASSERT_LE(std::abs(now[k] - model_before[i][k]), 1e-28f);
		}
	}
	bool actor_changed = false;
	for (std::size_t i = 0; i < actor_before.size(); ++i)
	{
		const auto& now = t.actor_critic().actor_params().items()[i].var.value();
		actor_changed = actor_changed || std::memcmp(now.data(), actor_before[i].data(), now.size() * sizeof(float)) != 0;
	}
	EXPECT_TRUE(actor_changed);
	EXPECT_TRUE(t.freeze_audit_ok());
}

TEST(Trainer, IdenticalSeedsGiveIdenticalMetricStreams)
{
	Trainer a(tiny_config());
	Trainer b(tiny_config());
	a.seed_dataset();
	b.seed_dataset();
	for (int i = 0; i < 100; ++i)
	{
		const auto ra = a.train_step();
		const auto rb = b.train_step();
		ASSERT_TRUE(ra.same_values(rb)) << "diverged at step " << i;
		ASSERT_TRUE(ra.all_finite());
	}
	EXPECT_EQ(a.checkpoint().digest(), b.checkpoint().digest());
	auto other = tiny_config();
	other.seed = 1;
	Trainer c(other);
	Trainer d(tiny_config());
	c.seed_dataset();
	d.seed_dataset();
	EXPECT_NE(c.train_step().model_loss, d.train_step().model_loss);
}

TEST(Trainer, EventLogFollowsTheTrainingOrder)
{
	auto c = tiny_config();
	c.steps = 400 + 200;
	Trainer t(c);
	t.run();
	const auto& ev = t.events();
	ASSERT_FALSE(ev.empty());
	EXPECT_EQ(ev.front().rfind("seed_dataset", 0), 0u);
	std::size_t i = 1;
	for (int step = 1; step <= c.collect_interval; ++step)
	{
		ASSERT_EQ(ev.at(i++), "dynamics step=" + std::to_string(step));
		ASSERT_EQ(ev.at(i++), "behavior step=" + std::to_string(step));
	}
	EXPECT_EQ(ev.at(i++).rfind("interact", 0), 0u);
	EXPECT_EQ(ev.at(i++).rfind("evaluate", 0), 0u);
	EXPECT_EQ(ev.back().rfind("done", 0), 0u);
}

TEST(Trainer, EnvironmentStepsIncludeActionRepeat)
{
	auto c = tiny_config();
	c.steps = 0;
	Trainer t(c);
	t.run();
	EXPECT_EQ(t.gradient_steps(), 0);
	EXPECT_EQ(t.episodes(), 2);
	EXPECT_EQ(t.env_steps(), 2 * 200);
	EXPECT_EQ(t.dataset().steps(), 2 * 100);

	c.steps = 600;
	Trainer u(c);
	u.run();
	EXPECT_EQ(u.episodes(), 3);
	EXPECT_EQ(u.env_steps(), 600);
	EXPECT_EQ(u.gradient_steps(), c.collect_interval);
}

TEST(Trainer, FilteringRestartsEveryEpisode)
{
	Trainer t(tiny_config());
	t.seed_dataset();
	const auto first = t.interact(false, 77);
	t.interact(false, 5);
	const auto again = t.interact(false, 77);
	EXPECT_EQ(first.total_return, again.total_return);
	EXPECT_EQ(first.episode.actions, again.episode.actions);
	EXPECT_EQ(first.episode.images, again.episode.images);
}

TEST(Trainer, ExplorationNoiseStaysInBounds)
{
	Trainer t(tiny_config());
	t.seed_dataset();
	const auto before = t.dataset().size();
	const auto r = t.interact(true);
	EXPECT_EQ(t.dataset().size(), before + 1);
	EXPECT_EQ(r.decisions, 100);
	for (float a : t.dataset().episode(before).actions)
	{
		ASSERT_GE(a, -1.0f);
		ASSERT_LE(a, 1.0f);
	}
}

TEST(Trainer, DiscreteAgentsActWithOneHotActions)
{
	auto c = tiny_config("grid_cliff");
	c.discount_head = true;
	Trainer t(c);
	t.seed_dataset();
	t.train_step();
	t.interact(true);
	const auto& ep = t.dataset().episode(t.dataset().size() - 1);
	for (int s = 1; s < ep.length(); ++s)
	{
		float sum = 0;
		for (int j = 0; j < 4; ++j)
		{
			const float v = ep.actions[static_cast<std::size_t>(s) * 4 + j];
			ASSERT_TRUE(v == 0.0f || v == 1.0f);
			sum += v;
		}
		ASSERT_EQ(sum, 1.0f);
	}
}

TEST(Trainer, ResumedRunMatchesUninterruptedRun)
{
	auto c = tiny_config();
	c.steps = 400 + 3 * 200;
	const auto full_dir = fresh_dir("full");
	const auto split_dir = fresh_dir("split");
	{
		Trainer t(c, full_dir);
		t.run();
	}
	{
		Trainer t(c, split_dir);
		t.run(3);
		EXPECT_EQ(t.episodes(), 3);
	}
	{
		Trainer t(c, split_dir);
		t.run();
	}
	const auto full = without_kind(Trainer::read_metrics(full_dir / "metrics.jsonl"), "");
	const auto split = Trainer::read_metrics(split_dir / "metrics.jsonl");
	ASSERT_EQ(full.size(), split.size());
	for (std::size_t i = 0; i < full.size(); ++i)
	{
		EXPECT_TRUE(full[i].same_values(split[i])) << "row " << i;
	}
	auto a = load_checkpoint(full_dir / "checkpoints" / "latest");
	auto b = load_checkpoint(split_dir / "checkpoints" / "latest");
	// the resumed log carries one extra "resume" event
	EXPECT_EQ(b.meta.at("event_lines").get<long>(), a.meta.at("event_lines").get<long>() + 1);
	a.meta.erase("event_lines");
	b.meta.erase("event_lines");
	EXPECT_EQ(a.digest(), b.digest());
	EXPECT_TRUE(fs::exists(full_dir / "config.json"));
	EXPECT_TRUE(fs::exists(full_dir / "events.log"));

	Trainer::export_csv(full_dir / "metrics.jsonl", full_dir / "metrics.csv");
	std::ifstream csv(full_dir / "metrics.csv");
	std::string header;
	std::getline(csv, header);
	EXPECT_EQ(header.rfind("kind,env_step,gradient_step", 0), 0u);

	auto other = c;
	other.horizon = 3;
	EXPECT_THROW(Trainer(other, full_dir).run(), ConfigError);
	if (!HasFailure())
	{
		fs::remove_all(full_dir);
		fs::remove_all(split_dir);
	}
}

TEST(Trainer, CompareHorizonsTableShape)
{
	auto c = tiny_config("chain");
	c.action_repeat = 2;
	c.steps = 0;
	c.cem_candidates = 20;
	c.cem_top_k = 4;
	c.cem_iterations = 2;
	const auto table = compare_horizons(c, {2, 5}, {"dreamer", "no_value", "cem"}, {0, 1}, 1);
	ASSERT_EQ(table.size(), 6u);
	EXPECT_EQ(table[0].variant, "dreamer");
	EXPECT_EQ(table[0].horizon, 2);
	EXPECT_EQ(table[5].variant, "cem");
	EXPECT_EQ(table[5].horizon, 5);
	for (const auto& row : table)
	{
		EXPECT_EQ(row.returns.size(), 2u);
		EXPECT_GE(row.mean(), 0.0);
		EXPECT_LE(row.mean(), 1.0);
	}
}

TEST(Trainer, VariantsShareWorldModelTrainingUntilBehaviorDiverges)
{
	auto c = tiny_config();
	Trainer a(c);
	c.behavior = "no_value";
	Trainer b(c);
	a.seed_dataset();
	b.seed_dataset();
	const auto ra = a.train_step();
	const auto rb = b.train_step();
	EXPECT_EQ(ra.model_loss, rb.model_loss);
	EXPECT_EQ(ra.obs_loss, rb.obs_loss);
	EXPECT_EQ(ra.kl, rb.kl);
}
