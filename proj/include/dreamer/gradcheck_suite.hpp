#pragma once

#include "dreamer/behavior.hpp"
#include "dreamer/gradcheck.hpp"

#include <random>
#include <string>
#include <vector>

namespace dreamer {

struct SuiteOptions
{
	std::uint64_t seed = 0;
	double epsilon = 1e-6;
	double tolerance = 1e-4;
	double min_fraction = 0.95;
	bool corrupt = false; // fault injection: skew the analytic gradients of every check
};

struct SuiteResult
{
	std::string name;
	GradCheckReport report;
	bool passed = false;
};

/// Small 64-bit configuration for finite-difference checks.
inline WorldModelConfig tiny_world_model_config(bool discount_head = true)
{
	WorldModelConfig c;
	c.image_size = 16;
	c.channels = 1;
	c.action_dim = 2;
	c.deter = 4;
	c.stoch = 3;
	c.hidden = 8;
	c.layers = 1;
	c.cnn_depth = 2;
	c.free_nats = 0.0;
	c.discount_head = discount_head;
	return c;
}

inline BehaviorConfig tiny_behavior_config(int action_dim = 2, bool discrete = false)
{
	BehaviorConfig c;
	c.action_dim = action_dim;
	c.discrete = discrete;
	c.hidden = 8;
	c.actor_layers = 2;
	c.value_layers = 2;
	c.horizon = 3;
	c.gamma = 0.9;
	c.lambda = 0.8;
	c.action_init_std = 1.0;
	return c;
}

template <class T>
SequenceBatch<T> random_batch(const WorldModelConfig& c, int b, int l, std::mt19937_64& rng, bool one_hot_actions = false)
{
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	std::uniform_real_distribution<double> sym(-0.9, 0.9);
	SequenceBatch<T> batch{Tensor<T>({b, l, c.image_size, c.image_size, c.channels}), Tensor<T>({b, l, c.action_dim}),
		Tensor<T>({b, l}), Tensor<T>({b, l}, T{1})};
	for (auto& v : batch.observations.values())
	{
		v = static_cast<T>(unit(rng));
	}
	if (one_hot_actions)
	{
		std::uniform_int_distribution<int> pick(0, c.action_dim - 1);
		for (int i = 0; i < b * l; ++i)
		{
			batch.actions[static_cast<std::size_t>(i) * c.action_dim + pick(rng)] = T{1};
		}
	}
	else
	{
		for (auto& v : batch.actions.values())
		{
			v = static_cast<T>(sym(rng));
		}
	}
	for (auto& v : batch.rewards.values())
	{
		v = static_cast<T>(unit(rng));
	}
	for (int i = 0; i < b; ++i)
	{
		if (i % 2 == 1)
		{
			batch.continues(i, l - 1) = T{0};
		}
	}
	return batch;
}

template <class T>
Tensor<T> standard_normal(Shape shape, std::mt19937_64& rng)
{
	std::normal_distribution<double> normal;
	Tensor<T> t(std::move(shape));
	for (auto& v : t.values())
	{
		v = static_cast<T>(normal(rng));
	}
	return t;
}

/// Finite-difference checks of every training loss on a freshly initialized tiny model with frozen noise.
inline std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& opt)
{
	using T = double;
	std::vector<SuiteResult> results;
	GradCheckOptions gc;
	gc.epsilon = opt.epsilon;
	gc.tolerance = opt.tolerance;
	gc.seed = opt.seed;
	gc.corrupt_analytic = opt.corrupt;
	auto record = [&](std::string name, const GradCheckReport& report) {
		results.push_back({std::move(name), report, report.passed(opt.min_fraction)});
	};

	std::mt19937_64 rng(opt.seed);
	{
		// Primitive kernels composed into one scalar: convolution, dense layers, activations, distributions, returns.
		const std::vector<NamedParam<T>> leaves{{"x", ad::Var<T>::parameter(standard_normal<T>({2, 5, 5, 2}, rng))},
			{"kernel", ad::Var<T>::parameter(standard_normal<T>({3, 3, 2, 3}, rng))},
			{"bias", ad::Var<T>::parameter(standard_normal<T>({3}, rng))},
			{"mean", ad::Var<T>::parameter(standard_normal<T>({2, 4}, rng))},
			{"raw_std", ad::Var<T>::parameter(standard_normal<T>({2, 4}, rng))}};
		auto action = standard_normal<T>({2, 4}, rng);
		for (auto& v : action.values())
		{
			v = std::tanh(v) * T(0.9);
		}
		auto composite = [&] {
			auto h = ad::reshape(ad::elu(ad::conv2d(leaves[0].var, leaves[1].var, leaves[2].var, 2)), {2, 12});
			auto mean = leaves[3].var + ad::tanh(ad::slice_last(h, 0, 4));
			auto stddev = ad::add_scalar(ad::softplus(leaves[4].var + ad::sigmoid(ad::slice_last(h, 4, 4))), T(0.1));
			auto p = DistParams<T>::diag_gaussian(mean, stddev);
			auto q = DistParams<T>::diag_gaussian(ad::slice_last(h, 8, 4), ad::add_scalar(ad::exp(ad::scale(leaves[4].var, T(0.5))), T(0.1)));
			auto kl = ad::sum(gaussian_kl(p, q));
			auto logp = ad::sum(tanh_gaussian_log_prob(DistParams<T>::tanh_gaussian(mean, stddev), action));
			std::vector<ad::Var<T>> rewards, values, discounts;
			for (int t = 0; t < 3; ++t)
			{
				rewards.push_back(ad::sum_last(ad::slice_last(mean, t, 1)));
				values.push_back(ad::sum_last(ad::slice_last(stddev, t, 1)));
				discounts.push_back(ad::Var<T>::constant(Tensor<T>({2}, T(0.9))));
			}
			values.push_back(ad::sum_last(ad::slice_last(stddev, 3, 1)));
			auto returns = value_lambda<T>(rewards, values, discounts, 0.7);
			return kl - logp + ad::sum(returns.front()) + ad::sum(logsumexp_last(h));
		};
		record("diffmath", grad_check<T>(composite, leaves, gc));
	}
	const auto wcfg = tiny_world_model_config(true);
	WorldModel<T> model(wcfg, rng);
	const int b = 2;
	const int l = 3;
	const auto batch = random_batch<T>(wcfg, b, l, rng);
	const auto noise = standard_normal<T>({l, b, wcfg.stoch}, rng);

	for (auto objective : {ReprObjective::Reconstruction, ReprObjective::Contrastive, ReprObjective::RewardOnly})
	{
		auto loss = [&] { return model.loss(objective, batch, noise).total; };
		record(std::string("world_model_") + to_string(objective), grad_check<T>(loss, model.params().items(), gc));
	}

	auto bcfg = tiny_behavior_config(wcfg.action_dim);
	ActorCritic<T> ac(bcfg, model.feature_size(), rng);
	ModelState<T> start;
	{
		ad::NoGradGuard guard;
		start = model.observe(batch, noise).states().detach();
	}
	const auto imag_noise =
		ImaginationNoise<T>::draw(bcfg.horizon, start.batch(), bcfg.action_dim, wcfg.stoch, bcfg.discrete, rng);
	{
		nn::FreezeGuard<T> freeze_model(model.params());
		nn::FreezeGuard<T> freeze_critic(ac.critic_params());
		// The weights are a stop-gradient quantity, so they are held at their unperturbed values.
		std::vector<Tensor<T>> weights;
		{
			ad::NoGradGuard guard;
			weights = trajectory_weights(ac.imagine(model, start, imag_noise).discounts, model.has_discount_head());
		}
		auto actor = [&] { return ac.actor_loss(ac.imagine(model, start, imag_noise), weights); };
		record("actor", grad_check<T>(actor, ac.actor_params().items(), gc));
	}
	{
		nn::FreezeGuard<T> freeze_model(model.params());
		nn::FreezeGuard<T> freeze_actor(ac.actor_params());
		ImaginedTrajectory<T> traj;
		{
			ad::NoGradGuard guard;
			traj = ac.imagine(model, start, imag_noise);
		}
		auto critic = [&] { return ac.critic_loss(traj); };
		record("critic", grad_check<T>(critic, ac.critic_params().items(), gc));
	}
	return results;
}

} // namespace dreamer
