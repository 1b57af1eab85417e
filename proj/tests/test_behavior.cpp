#include "test_support.hpp"

#include <dreamer/gradcheck_suite.hpp>
#include <dreamer/optim.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace dreamer;
using V = ad::Var<double>;
using Td = Tensor<double>;

namespace {

std::vector<V> column(std::initializer_list<double> xs)
{
	std::vector<V> out;
	for (double x : xs)
	{
		out.push_back(V::constant(Td({1}, {x})));
	}
	return out;
}

std::vector<V> constant_discounts(int n, double gamma)
{
	return std::vector<V>(n, V::constant(Td({1}, {gamma})));
}

struct RandomReturnInstance
{
	std::vector<V> rewards, values, discounts;
};

RandomReturnInstance random_instance(int horizon, std::mt19937_64& rng)
{
	std::uniform_real_distribution<double> u(-2, 2), d(0.0, 1.0);
	RandomReturnInstance inst;
	for (int t = 0; t <= horizon; ++t)
	{
		inst.rewards.push_back(V::constant(Td({1}, {u(rng)})));
		inst.values.push_back(V::constant(Td({1}, {u(rng)})));
		inst.discounts.push_back(V::constant(Td({1}, {d(rng)})));
	}
	return inst;
}

/// Stub dynamics: prior_step returns its input, rewards constant.
struct IdentityModel
{
	double reward = 0.25;

	struct Step
	{
		ModelState<double> state;
	};

	Step prior_step(const ModelState<double>& s, const V&, const Td&) const { return {s}; }
	DistParams<double> reward_params(const V& features) const
	{
		const int n = features.shape()[0];
		return DistParams<double>::diag_gaussian(V::constant(Td({n}, reward)), V::constant(Td({n}, 1.0)));
	}
	bool has_discount_head() const { return false; }
	V discount_logits(const V&) const { throw std::logic_error("no discount head"); }
};

struct Fixture
{
	std::mt19937_64 rng{7};
	WorldModelConfig wcfg = tiny_world_model_config(true);
	BehaviorConfig bcfg = tiny_behavior_config(2);
	WorldModel<double> model{wcfg, rng};
	ActorCritic<double> ac{bcfg, model.feature_size(), rng};
	ModelState<double> start;
	ImaginationNoise<double> noise;

	Fixture()
	{
		const auto batch = random_batch<double>(wcfg, 2, 3, rng);
		ad::NoGradGuard guard;
		start = model.observe(batch, standard_normal<double>({3, 2, wcfg.stoch}, rng)).states().detach();
		noise = ImaginationNoise<double>::draw(bcfg.horizon, start.batch(), bcfg.action_dim, wcfg.stoch, false, rng);
	}
};

} // namespace

TEST(ValueEstimates, RewardSumExamples)
{
	auto zeros = value_VR(column({0, 0, 0}));
	for (const auto& v : zeros) EXPECT_EQ(v.item(), 0.0);
	auto vr = value_VR(column({1, 2, 3}));
	EXPECT_EQ(vr[0].item(), 6.0);
	EXPECT_EQ(vr[2].item(), 3.0);
}

TEST(ValueEstimates, KStepExamples)
{
	const auto r = column({1, 2, 0});
	const auto v = column({4, 5, 3});
	const auto d = constant_discounts(3, 0.5);
	EXPECT_DOUBLE_EQ(value_VN(r, v, d, 2)[0].item(), 2.75);
	EXPECT_DOUBLE_EQ(value_VN(r, v, d, 1)[0].item(), 1 + 0.5 * 5);
	EXPECT_DOUBLE_EQ(value_VN(r, v, d, 1)[1].item(), 2 + 0.5 * 3);
	// Beyond the remaining horizon the estimate is clamped at the last state.
	EXPECT_EQ(value_VN(r, v, d, 7)[0].item(), value_VN(r, v, d, 2)[0].item());
	EXPECT_EQ(value_VN(r, v, d, 5)[1].item(), value_VN(r, v, d, 1)[1].item());
	EXPECT_THROW(value_VN(r, v, d, 0), std::invalid_argument);
}

TEST(ValueEstimates, LambdaExamples)
{
	const auto r = column({1, 2, 0});
	const auto v = column({0, 4, 3});
	const auto d = constant_discounts(3, 0.5);
	EXPECT_NEAR(value_lambda(r, v, d, 0.5)[0].item(), 2.875, 1e-6);
	const auto zero = value_lambda(r, v, d, 0.0);
	const auto one = value_lambda(r, v, d, 1.0);
	const auto n1 = value_VN(r, v, d, 1);
	const auto nh = value_VN(r, v, d, 2);
	for (int t = 0; t < 3; ++t)
	{
		EXPECT_EQ(zero[t].item(), n1[t].item());
		EXPECT_EQ(one[t].item(), nh[t].item());
	}
}

TEST(ValueEstimates, RecursionMatchesLiteralSum)
{
	std::mt19937_64 rng(1);
	std::uniform_int_distribution<int> h(1, 15);
	std::uniform_real_distribution<double> lam(0.0, 1.0);
	for (int trial = 0; trial < 1000; ++trial)
	{
		const auto inst = random_instance(h(rng), rng);
		const double l = lam(rng);
		const auto rec = value_lambda(inst.rewards, inst.values, inst.discounts, l);
		const auto lit = value_lambda_literal(inst.rewards, inst.values, inst.discounts, l);
		for (std::size_t t = 0; t < rec.size(); ++t) ASSERT_NEAR(rec[t].item(), lit[t].item(), 1e-5);
	}
}

TEST(ValueEstimates, LambdaIsConvexCombinationOfKStep)
{
	std::mt19937_64 rng(2);
	for (int trial = 0; trial < 200; ++trial)
	{
		const int horizon = 1 + trial % 10;
		const double lam = (trial % 11) / 10.0;
		double wsum = 0;
		for (int n = 1; n <= horizon; ++n)
		{
			wsum += n < horizon ? (1 - lam) * std::pow(lam, n - 1) : std::pow(lam, horizon - 1);
		}
		EXPECT_NEAR(wsum, 1.0, 1e-12);
		const auto inst = random_instance(horizon, rng);
		const auto vl = value_lambda(inst.rewards, inst.values, inst.discounts, lam);
		double lo = 1e300, hi = -1e300;
		for (int k = 1; k <= horizon; ++k)
		{
			const double x = value_VN(inst.rewards, inst.values, inst.discounts, k)[0].item();
			lo = std::min(lo, x);
			hi = std::max(hi, x);
		}
		EXPECT_GE(vl[0].item(), lo - 1e-12);
		EXPECT_LE(vl[0].item(), hi + 1e-12);
	}
}

TEST(Imagination, ShapesForSingleStep)
{
	Fixture f;
	f.bcfg.horizon = 1;
	ActorCritic<double> ac(f.bcfg, f.model.feature_size(), f.rng);
	const auto noise = ImaginationNoise<double>::draw(1, f.start.batch(), 2, f.wcfg.stoch, false, f.rng);
	const auto traj = ac.imagine(f.model, f.start, noise);
	EXPECT_EQ(traj.states.size(), 2u);
	EXPECT_EQ(traj.actions.size(), 1u);
	EXPECT_EQ(traj.rewards.size(), 2u);
	EXPECT_EQ(traj.values.size(), 2u);
	EXPECT_EQ(traj.targets.size(), 2u);
	for (const auto& d : traj.discounts)
	{
		for (double x : d.value().values())
		{
			EXPECT_GE(x, 0.0);
			EXPECT_LE(x, f.bcfg.gamma);
		}
	}
}

TEST(Imagination, IdentityDynamicsKeepStatesAndRewards)
{
	Fixture f;
	IdentityModel stub;
	const auto traj = f.ac.imagine_with(stub, f.start, f.noise);
	for (const auto& s : traj.states) EXPECT_EQ(s.deter.value(), f.start.deter.value());
	for (const auto& r : traj.rewards)
	{
		for (double x : r.value().values()) EXPECT_EQ(x, 0.25);
	}
}

TEST(Imagination, RewardSumGradientReachesActor)
{
	Fixture f;
	nn::FreezeGuard<double> freeze(f.model.params());
	auto loss = [&] {
		const auto traj = f.ac.imagine(f.model, f.start, f.noise);
		V acc = traj.rewards[0];
		for (std::size_t t = 1; t < traj.rewards.size(); ++t) acc = acc + traj.rewards[t];
		return ad::sum(acc);
	};
	GradCheckOptions opt;
	opt.tolerance = 1e-4;
	const auto report = grad_check<double>(loss, f.ac.actor_params().items(), opt);
	EXPECT_GE(report.fraction_within, 0.95);
	ad::backward(loss());
	double total = 0;
	for (const auto& p : f.ac.actor_params().items())
	{
		for (double g : p.var.grad().values()) total += std::abs(g);
	}
	EXPECT_GT(total, 0.0);
	f.ac.actor_params().zero_grad();
}

TEST(ActorLoss, ZeroDiscountCutsLaterTerms)
{
	std::vector<V> discounts = column({0.9, 0.0, 0.9, 0.9});
	const auto w = trajectory_weights(discounts, true);
	EXPECT_EQ(w[0][0], 1.0);
	EXPECT_DOUBLE_EQ(w[1][0], 0.9);
	EXPECT_EQ(w[2][0], 0.0);
	EXPECT_EQ(w[3][0], 0.0);
	const auto ones = trajectory_weights(discounts, false);
	for (const auto& x : ones) EXPECT_EQ(x[0], 1.0);
}

TEST(ActorLoss, UnweightedLossIsNegativeMeanSumOfTargets)
{
	Fixture f;
	std::mt19937_64 rng(8);
	WorldModel<double> model(tiny_world_model_config(false), rng);
	const auto traj = f.ac.imagine(model, f.start, f.noise);
	double acc = 0;
	for (const auto& t : traj.targets)
	{
		for (double x : t.value().values()) acc += x;
	}
	EXPECT_NEAR(f.ac.actor_loss(traj).item(), -acc / traj.batch(), 1e-12);
}

TEST(ActorLoss, MatchesFiniteDifferences)
{
	SuiteOptions opt;
	for (const auto& r : run_gradcheck_suite(opt))
	{
		if (r.name == "actor" || r.name == "critic")
		{
			EXPECT_TRUE(r.passed) << r.name << " " << r.report.fraction_within;
		}
	}
}

TEST(CriticLoss, ZeroWhenValuesMatchTargets)
{
	Fixture f;
	ImaginedTrajectory<double> traj;
	{
		ad::NoGradGuard guard;
		traj = f.ac.imagine(f.model, f.start, f.noise);
	}
	std::vector<V> feats;
	for (const auto& s : traj.states) feats.push_back(s.features());
	const auto values = f.ac.value(ad::concat0<double>(feats)).value();
	const int n = traj.batch();
	traj.targets.clear();
	for (std::size_t t = 0; t < traj.states.size(); ++t)
	{
		traj.targets.push_back(V::constant(values.slice0(static_cast<int>(t) * n, n)));
	}
	EXPECT_EQ(f.ac.critic_loss(traj).item(), 0.0);
}

TEST(CriticLoss, NoGradientReachesActor)
{
	Fixture f;
	nn::FreezeGuard<double> freeze(f.model.params());
	const auto traj = f.ac.imagine(f.model, f.start, f.noise);
	ad::backward(f.ac.critic_loss(traj));
	for (const auto& p : f.ac.actor_params().items())
	{
		if (p.var.has_grad())
		{
			for (double g : p.var.grad().values()) EXPECT_LE(std::abs(g), 1e-12);
		}
	}
	double critic = 0;
	for (const auto& p : f.ac.critic_params().items()) critic += p.var.has_grad() ? p.var.grad().max_abs() : 0.0;
	EXPECT_GT(critic, 0.0);
}

TEST(ActorCriticUpdates, EachStepTouchesOnlyItsOwnParameters)
{
	Fixture f;
	Adam<double> actor_opt(f.ac.actor_params(), {1e-3});
	Adam<double> critic_opt(f.ac.critic_params(), {1e-3});
	const auto model_before = f.model.params().snapshot();
	const auto critic_before = f.ac.critic_params().snapshot();
	const auto actor_before = f.ac.actor_params().snapshot();
	ImaginedTrajectory<double> traj;
	{
		nn::FreezeGuard<double> fm(f.model.params());
		nn::FreezeGuard<double> fc(f.ac.critic_params());
		traj = f.ac.imagine(f.model, f.start, f.noise);
		ad::backward(f.ac.actor_loss(traj));
	}
	actor_opt.step();
	EXPECT_EQ(f.model.params().snapshot(), model_before);
	EXPECT_EQ(f.ac.critic_params().snapshot(), critic_before);
	const auto actor_after = f.ac.actor_params().snapshot();
	EXPECT_NE(actor_after, actor_before);
	{
		nn::FreezeGuard<double> fm(f.model.params());
		nn::FreezeGuard<double> fa(f.ac.actor_params());
		ad::backward(f.ac.critic_loss(traj));
	}
	critic_opt.step();
	EXPECT_EQ(f.model.params().snapshot(), model_before);
	EXPECT_EQ(f.ac.actor_params().snapshot(), actor_after);
	EXPECT_NE(f.ac.critic_params().snapshot(), critic_before);
}

TEST(ActorCriticUpdates, DisabledDiscountHeadIsUnused)
{
	// A model whose disabled discount head would predict arbitrary values gives identical losses.
	struct Wrapped
	{
		const WorldModel<double>& inner;
		mutable std::mt19937_64 rng{6};
		auto prior_step(const ModelState<double>& s, const V& a, const Td& n) const { return inner.prior_step(s, a, n); }
		DistParams<double> reward_params(const V& f) const { return inner.reward_params(f); }
		bool has_discount_head() const { return false; }
		V discount_logits(const V& f) const { return V::constant(test_util::random_normal<double>({f.shape()[0]}, rng)); }
	};
	std::mt19937_64 rng(3);
	auto cfg = tiny_world_model_config(false);
	WorldModel<double> model(cfg, rng);
	auto bcfg = tiny_behavior_config(2);
	ActorCritic<double> ac(bcfg, model.feature_size(), rng);
	const auto batch = random_batch<double>(cfg, 2, 3, rng);
	const auto noise = standard_normal<double>({3, 2, cfg.stoch}, rng);
	ModelState<double> start = model.observe(batch, noise).states().detach();
	const auto imag = ImaginationNoise<double>::draw(bcfg.horizon, start.batch(), 2, cfg.stoch, false, rng);
	const auto plain = ac.imagine(model, start, imag);
	const auto wrapped = ac.imagine_with(Wrapped{model}, start, imag);
	EXPECT_EQ(ac.actor_loss(plain).item(), ac.actor_loss(wrapped).item());
	EXPECT_EQ(ac.critic_loss(plain).item(), ac.critic_loss(wrapped).item());
	for (const auto& w : trajectory_weights(plain.discounts, plain.learned_discounts))
	{
		for (double x : w.values()) EXPECT_EQ(x, 1.0);
	}
}

TEST(Policy, ActModes)
{
	Fixture f;
	const auto eval1 = f.ac.policy_act(f.start, ActorCritic<double>::Mode::Eval, Td());
	const auto eval2 = f.ac.policy_act(f.start, ActorCritic<double>::Mode::Eval, Td());
	EXPECT_EQ(eval1, eval2);
	std::mt19937_64 rng(9);
	for (int i = 0; i < 20; ++i)
	{
		const auto a = f.ac.policy_act(f.start, ActorCritic<double>::Mode::Train, test_util::random_normal<double>({6, 2}, rng, 5.0));
		for (double x : a.values()) EXPECT_LT(std::abs(x), 1.0);
	}

	auto bcfg = tiny_behavior_config(4, true);
	ActorCritic<double> discrete(bcfg, f.model.feature_size(), f.rng);
	const auto one_hot = discrete.policy_act(f.start, ActorCritic<double>::Mode::Eval, Td());
	const auto logits = discrete.action_dist(f.start.features()).logits.value();
	for (int r = 0; r < 6; ++r)
	{
		int best = 0;
		for (int c = 1; c < 4; ++c)
		{
			if (logits(r, c) > logits(r, best)) best = c;
		}
		for (int c = 0; c < 4; ++c) EXPECT_EQ(one_hot(r, c), c == best ? 1.0 : 0.0);
	}
}

TEST(Planner, NoSelectionPressureKeepsMeanNearPrior)
{
	std::mt19937_64 rng(10);
	CemOptions opt{3, 1, 2000, 2000, 0.99};
	Td mean;
	plan_cem<double>([](const Td& seqs) { return Td({seqs.dim(0)}); }, 1, opt, rng, &mean);
	for (double m : mean.values()) EXPECT_NEAR(m, 0.0, 0.05);
}

TEST(Planner, ConvergesToZeroOnNegativeSquaredNorm)
{
	std::mt19937_64 rng(11);
	CemOptions opt{4, 10, 300, 30, 0.99};
	auto score = [](const Td& seqs) {
		const int c = seqs.dim(0);
		const int per = static_cast<int>(seqs.size() / c);
		Td out({c});
		for (int i = 0; i < c; ++i)
		{
			for (int j = 0; j < per; ++j) out[i] -= seqs[i * per + j] * seqs[i * per + j];
		}
		return out;
	};
	Td mean;
	plan_cem<double>(score, 2, opt, rng, &mean);
	double norm = 0;
	for (double m : mean.values()) norm += m * m;
	EXPECT_LT(std::sqrt(norm), 0.1);
}

TEST(Planner, HorizonOneMaximizesImmediateReward)
{
	std::mt19937_64 rng(12);
	CemOptions opt{1, 8, 200, 20, 0.99};
	// Reward peaks at a = 0.6.
	auto score = [](const Td& seqs) {
		Td out({seqs.dim(0)});
		for (int i = 0; i < seqs.dim(0); ++i) out[i] = -(seqs[i] - 0.6) * (seqs[i] - 0.6);
		return out;
	};
	const auto a = plan_cem<double>(score, 1, opt, rng);
	EXPECT_NEAR(a[0], 0.6, 0.05);
}

TEST(Planner, ModelScorerSumsDiscountedRewards)
{
	Fixture f;
	ModelState<double> one{ad::slice0(f.start.deter, 0, 1), ad::slice0(f.start.stoch, 0, 1), {}};
	Td seqs({3, 2, 2});
	std::mt19937_64 rng(13);
	seqs = test_util::random_uniform<double>({3, 2, 2}, rng, -1, 1);
	const auto scores = score_with_model(f.model, one, seqs, 0.5);
	for (int c = 0; c < 3; ++c)
	{
		auto s = one;
		double expected = 0, disc = 1;
		for (int t = 0; t < 2; ++t)
		{
			s = f.model.prior_step(s, V::constant(Td({1, 2}, {seqs[(c * 2 + t) * 2], seqs[(c * 2 + t) * 2 + 1]})), Td({1, f.wcfg.stoch})).state;
			expected += disc * f.model.predict_reward(s).mean.item();
			disc *= 0.5;
		}
		EXPECT_NEAR(scores[c], expected, 1e-12);
	}
}
