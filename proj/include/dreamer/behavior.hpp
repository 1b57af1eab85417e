#pragma once

#include "dreamer/worldmodel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace dreamer {

enum class ValueEstimator
{
	Lambda,  // V_lambda with a learned value model
	RewardSum, // V_R: no value model, imagined rewards summed over the horizon
};

struct BehaviorConfig
{
	int action_dim = 1;
	bool discrete = false;
	int hidden = 128;
	int actor_layers = 3;
	int value_layers = 3;
	int horizon = 15;
	double gamma = 0.99;
	double lambda = 0.95;
	double action_init_std = 5.0;
	double mean_scale = 5.0;
	ValueEstimator estimator = ValueEstimator::Lambda;
	double entropy_scale = 0.0;
	bool target_network = false;
	int target_update_interval = 100;
};

/// Imagined rollout over tau = 0 .. H from N start states. Per-step quantities are [N] vectors.
template <class T>
struct ImaginedTrajectory
{
	std::vector<ModelState<T>> states;  // H + 1
	std::vector<ad::Var<T>> actions;    // H
	std::vector<ad::Var<T>> rewards;    // H + 1 reward means
	std::vector<ad::Var<T>> values;     // H + 1
	std::vector<ad::Var<T>> discounts;  // H + 1, in [0, gamma]
	std::vector<ad::Var<T>> targets;    // H + 1
	std::vector<ad::Var<T>> entropies;  // H, empty unless an entropy bonus is configured
	bool learned_discounts = false;     // discounts come from a discount head rather than the constant gamma

	int horizon() const { return static_cast<int>(actions.size()); }
	int batch() const { return states.front().batch(); }
};

/// Noise for an H-step imagination of N trajectories: action noise [H, N, A] (standard normal for continuous,
/// uniform for discrete actions) and latent noise [H, N, Z].
template <class T>
struct ImaginationNoise
{
	Tensor<T> actions;
	Tensor<T> states;

	static ImaginationNoise draw(int horizon, int n, int action_dim, int stoch, bool discrete, std::mt19937_64& rng)
	{
		ImaginationNoise out{Tensor<T>({horizon, n, action_dim}), Tensor<T>({horizon, n, stoch})};
		std::normal_distribution<double> normal;
		std::uniform_real_distribution<double> uniform;
		for (auto& v : out.actions.values())
		{
			v = static_cast<T>(discrete ? uniform(rng) : normal(rng));
		}
		for (auto& v : out.states.values())
		{
			v = static_cast<T>(normal(rng));
		}
		return out;
	}
};

/// Rolls a model forward with a policy: at each step sample an action, take a prior step, then predict rewards and
/// discounts of every state. `policy(state, tau)` returns the [N, A] action. Gradients flow from every later
/// quantity back to earlier actions.
template <class T, class Model, class Policy>
ImaginedTrajectory<T> imagine(
	const Model& model, const ModelState<T>& start, int horizon, Policy&& policy, const Tensor<T>& state_noise, double gamma)
{
	if (horizon < 1)
	{
		throw std::invalid_argument("imagine: horizon must be at least 1");
	}
	ImaginedTrajectory<T> traj;
	traj.states.push_back(start);
	const int n = start.batch();
	for (int tau = 0; tau < horizon; ++tau)
	{
		auto action = policy(traj.states.back(), tau);
		const Tensor<T> noise = state_noise.slice0(tau, 1).reshape({n, static_cast<int>(state_noise.size() / (horizon * std::size_t(n)))});
		auto next = model.prior_step(traj.states.back(), action, noise).state;
		if (!next.deter.value().all_finite() || !next.stoch.value().all_finite())
		{
			throw NonFiniteError("imagination produced non-finite state at step " + std::to_string(tau + 1));
		}
		traj.actions.push_back(action);
		traj.states.push_back(next);
	}
	std::vector<ad::Var<T>> feats;
	for (const auto& s : traj.states)
	{
		feats.push_back(s.features());
	}
	auto all = ad::concat0<T>(feats);
	auto rewards = model.reward_params(all).mean;
	ad::Var<T> discounts;
	traj.learned_discounts = model.has_discount_head();
	if (traj.learned_discounts)
	{
		discounts = ad::scale(ad::sigmoid(model.discount_logits(all)), static_cast<T>(gamma));
	}
	for (int tau = 0; tau <= horizon; ++tau)
	{
		traj.rewards.push_back(ad::slice0(rewards, tau * n, n));
		traj.discounts.push_back(discounts.defined() ? ad::slice0(discounts, tau * n, n)
													 : ad::Var<T>::constant(Tensor<T>({n}, static_cast<T>(gamma))));
	}
	return traj;
}

/// V_R(s_tau) = sum_{n = tau}^{H} r_n, undiscounted and without a value bootstrap.
template <class T>
std::vector<ad::Var<T>> value_VR(const std::vector<ad::Var<T>>& rewards)
{
	std::vector<ad::Var<T>> out(rewards.size());
	for (int tau = static_cast<int>(rewards.size()) - 1; tau >= 0; --tau)
	{
		out[tau] = tau + 1 < static_cast<int>(rewards.size()) ? rewards[tau] + out[tau + 1] : rewards[tau];
	}
	return out;
}

/// V_N^k(s_tau) = sum_{n=tau}^{h-1} (prod_{j=tau}^{n-1} d_j) r_n + (prod_{j=tau}^{h-1} d_j) v_h, h = min(tau + k, H).
template <class T>
std::vector<ad::Var<T>> value_VN(const std::vector<ad::Var<T>>& rewards, const std::vector<ad::Var<T>>& values,
	const std::vector<ad::Var<T>>& discounts, int k)
{
	if (k < 1)
	{
		throw std::invalid_argument("value_VN: k must be at least 1");
	}
	const int horizon = static_cast<int>(values.size()) - 1;
	std::vector<ad::Var<T>> out;
	for (int tau = 0; tau <= horizon; ++tau)
	{
		const int h = std::min(tau + k, horizon);
		// Backward accumulation: acc = r_n + d_n * acc, seeded with v_h.
		ad::Var<T> acc = values[h];
		for (int n = h - 1; n >= tau; --n)
		{
			acc = rewards[n] + discounts[n] * acc;
		}
		out.push_back(acc);
	}
	return out;
}

/// V_lambda by the backward recursion target_tau = r_tau + d_tau ((1 - lambda) v_{tau+1} + lambda target_{tau+1}),
/// bootstrapped with target_H = v_H.
template <class T>
std::vector<ad::Var<T>> value_lambda(const std::vector<ad::Var<T>>& rewards, const std::vector<ad::Var<T>>& values,
	const std::vector<ad::Var<T>>& discounts, double lambda)
{
	if (!(lambda >= 0.0 && lambda <= 1.0))
	{
		throw std::invalid_argument("value_lambda: lambda must lie in [0, 1]");
	}
	const int horizon = static_cast<int>(values.size()) - 1;
	const T lam = static_cast<T>(lambda);
	std::vector<ad::Var<T>> out(horizon + 1);
	out[horizon] = values[horizon];
	for (int tau = horizon - 1; tau >= 0; --tau)
	{
		auto mix = ad::scale(values[tau + 1], T{1} - lam) + ad::scale(out[tau + 1], lam);
		out[tau] = rewards[tau] + discounts[tau] * mix;
	}
	return out;
}

/// Literal exponentially weighted sum of V_N^1 .. V_N^H; O(H^2), kept as a reference for the recursion.
template <class T>
std::vector<ad::Var<T>> value_lambda_literal(const std::vector<ad::Var<T>>& rewards, const std::vector<ad::Var<T>>& values,
	const std::vector<ad::Var<T>>& discounts, double lambda)
{
	const int horizon = static_cast<int>(values.size()) - 1;
	std::vector<ad::Var<T>> out(horizon + 1);
	for (int n = 1; n <= horizon; ++n)
	{
		const double w = n < horizon ? (1 - lambda) * std::pow(lambda, n - 1) : std::pow(lambda, horizon - 1);
		const auto vn = value_VN(rewards, values, discounts, n);
		for (int tau = 0; tau <= horizon; ++tau)
		{
			auto term = ad::scale(vn[tau], static_cast<T>(w));
			out[tau] = out[tau].defined() ? out[tau] + term : term;
		}
	}
	return out;
}

/// Weights w_0 = 1, w_tau = prod_{j < tau} d_j (detached) when the model predicts discounts; otherwise all ones.
template <class T>
std::vector<Tensor<T>> trajectory_weights(const std::vector<ad::Var<T>>& discounts, bool use_discounts)
{
	const int n = discounts.front().shape()[0];
	std::vector<Tensor<T>> out;
	Tensor<T> w({n}, T{1});
	for (std::size_t tau = 0; tau < discounts.size(); ++tau)
	{
		out.push_back(w);
		if (use_discounts)
		{
			for (int i = 0; i < n; ++i)
			{
				w[i] *= discounts[tau].value()[i];
			}
		}
	}
	return out;
}

template <class T>
class ActorCritic
{
public:
	ActorCritic(const BehaviorConfig& cfg, int feature_size, std::mt19937_64& rng) : cfg_(cfg)
	{
		if (cfg.action_dim < 1 || cfg.horizon < 1)
		{
			throw std::invalid_argument("behavior: action_dim and horizon must be positive");
		}
		const int out = cfg.discrete ? cfg.action_dim : 2 * cfg.action_dim;
		actor_ = nn::Mlp<T>(actor_params_, "actor", feature_size, cfg.hidden, cfg.actor_layers, out, rng);
		value_ = nn::Mlp<T>(critic_params_, "value", feature_size, cfg.hidden, cfg.value_layers, 1, rng);
		if (cfg.target_network)
		{
			target_value_ = nn::Mlp<T>(target_params_, "value", feature_size, cfg.hidden, cfg.value_layers, 1, rng);
			target_params_.copy_values_from(critic_params_);
			target_params_.set_requires_grad(false);
		}
	}

	const BehaviorConfig& config() const { return cfg_; }
	nn::ParamSet<T>& actor_params() { return actor_params_; }
	nn::ParamSet<T>& critic_params() { return critic_params_; }
	nn::ParamSet<T>& target_params() { return target_params_; }
	const nn::ParamSet<T>& actor_params() const { return actor_params_; }
	const nn::ParamSet<T>& critic_params() const { return critic_params_; }
	const nn::ParamSet<T>& target_params() const { return target_params_; }

	DistParams<T> action_dist(const ad::Var<T>& features) const
	{
		auto raw = actor_(features);
		if (cfg_.discrete)
		{
			return DistParams<T>::categorical(raw);
		}
		const int a = cfg_.action_dim;
		const T scale = static_cast<T>(cfg_.mean_scale);
		auto mean = ad::scale(ad::tanh(ad::scale(ad::slice_last(raw, 0, a), T{1} / scale)), scale);
		const T offset = static_cast<T>(std::log(std::expm1(cfg_.action_init_std)));
		auto stddev = ad::add_scalar(ad::softplus(ad::add_scalar(ad::slice_last(raw, a, a), offset)), stddev_floor<T>);
		return DistParams<T>::tanh_gaussian(mean, stddev);
	}

	/// Reparameterized (continuous) or straight-through (discrete) sample.
	ad::Var<T> sample_action(const DistParams<T>& dist, const Tensor<T>& noise) const
	{
		if (cfg_.discrete)
		{
			return categorical_sample_st(dist.logits, noise);
		}
		return tanh_gaussian_sample(dist, noise);
	}

	/// tanh(mean) for continuous actions, one-hot argmax for discrete actions.
	Tensor<T> mode_action(const DistParams<T>& dist) const
	{
		if (cfg_.discrete)
		{
			return categorical_sample_st(dist.logits.detach(), Tensor<T>()).value();
		}
		Tensor<T> out = dist.mean.value();
		const T bound = tanh_sample_bound<T>();
		for (auto& v : out.values())
		{
			v = std::clamp(std::tanh(v), -bound, bound);
		}
		return out;
	}

	enum class Mode
	{
		Train,
		Eval,
	};

	/// Eval returns the mode; train returns a policy sample. Exploration noise is the caller's business.
	Tensor<T> policy_act(const ModelState<T>& state, Mode mode, const Tensor<T>& noise) const
	{
		ad::NoGradGuard guard;
		auto dist = action_dist(state.features());
		if (mode == Mode::Eval)
		{
			return mode_action(dist);
		}
		return sample_action(dist, noise).value();
	}

	ad::Var<T> value(const ad::Var<T>& features) const
	{
		return ad::reshape(value_(features), {features.shape()[0]});
	}

	/// Values used inside the return estimates: the slow copy when a target network is configured.
	ad::Var<T> bootstrap_value(const ad::Var<T>& features) const
	{
		const auto& net = cfg_.target_network ? target_value_ : value_;
		return ad::reshape(net(features), {features.shape()[0]});
	}

	/// Imagination with the actor, then value predictions and return targets for every state.
	ImaginedTrajectory<T> imagine(const WorldModel<T>& model, const ModelState<T>& start, const ImaginationNoise<T>& noise) const
	{
		return imagine_with(model, start, noise);
	}

	template <class Model>
	ImaginedTrajectory<T> imagine_with(const Model& model, const ModelState<T>& start, const ImaginationNoise<T>& noise) const
	{
		const int n = start.batch();
		const int h = cfg_.horizon;
		std::vector<ad::Var<T>> entropies;
		auto policy = [&](const ModelState<T>& s, int tau) {
			auto dist = action_dist(s.features());
			const Tensor<T> eps = noise.actions.slice0(tau, 1).reshape({n, cfg_.action_dim});
			auto a = sample_action(dist, eps);
			if (cfg_.entropy_scale > 0)
			{
				entropies.push_back(cfg_.discrete ? categorical_entropy(dist.logits) : tanh_gaussian_entropy_estimate(dist, a));
			}
			return a;
		};
		auto traj = dreamer::imagine<T>(model, start, h, policy, noise.states, cfg_.gamma);
		traj.entropies = std::move(entropies);
		fill_values(traj);
		return traj;
	}

	/// Value predictions and targets on an existing rollout.
	void fill_values(ImaginedTrajectory<T>& traj) const
	{
		const int n = traj.batch();
		std::vector<ad::Var<T>> feats;
		for (const auto& s : traj.states)
		{
			feats.push_back(s.features());
		}
		auto values = bootstrap_value(ad::concat0<T>(feats));
		traj.values.clear();
		for (int tau = 0; tau <= traj.horizon(); ++tau)
		{
			traj.values.push_back(ad::slice0(values, tau * n, n));
		}
		traj.targets = cfg_.estimator == ValueEstimator::Lambda
			? value_lambda(traj.rewards, traj.values, traj.discounts, cfg_.lambda)
			: value_VR(traj.rewards);
	}

	/// -mean_batch sum_tau w_tau * target_tau (minus an optional entropy bonus). The weights are the detached
	/// cumulative products of predicted discounts when the model has a discount head, and 1 otherwise.
	ad::Var<T> actor_loss(const ImaginedTrajectory<T>& traj) const
	{
		return actor_loss(traj, trajectory_weights(traj.discounts, traj.learned_discounts));
	}

	/// Same with externally supplied per-step weights.
	ad::Var<T> actor_loss(const ImaginedTrajectory<T>& traj, const std::vector<Tensor<T>>& weights) const
	{
		const int n = traj.batch();
		ad::Var<T> acc;
		for (std::size_t tau = 0; tau < traj.targets.size(); ++tau)
		{
			auto term = ad::mul_const(traj.targets[tau], weights[tau]);
			acc = acc.defined() ? acc + term : term;
		}
		auto loss = ad::scale(ad::sum(acc), T{-1} / static_cast<T>(n));
		if (cfg_.entropy_scale > 0 && !traj.entropies.empty())
		{
			ad::Var<T> ent;
			for (std::size_t tau = 0; tau < traj.entropies.size(); ++tau)
			{
				auto term = ad::mul_const(traj.entropies[tau], weights[tau]);
				ent = ent.defined() ? ent + term : term;
			}
			loss = loss - ad::scale(ad::sum(ent), static_cast<T>(cfg_.entropy_scale) / static_cast<T>(n));
		}
		return loss;
	}

	/// Half the weighted squared error between v(s_tau) on detached states and the detached targets, averaged over
	/// batch and tau.
	ad::Var<T> critic_loss(const ImaginedTrajectory<T>& traj) const
	{
		const auto weights = trajectory_weights(traj.discounts, traj.learned_discounts);
		const int n = traj.batch();
		const int steps = static_cast<int>(traj.targets.size());
		std::vector<ad::Var<T>> feats;
		for (const auto& s : traj.states)
		{
			feats.push_back(ad::Var<T>::constant(s.features().value()));
		}
		auto predicted = value(ad::concat0<T>(feats));
		Tensor<T> target({steps * n});
		Tensor<T> weight({steps * n});
		for (int tau = 0; tau < steps; ++tau)
		{
			std::copy_n(traj.targets[tau].value().data(), n, target.data() + tau * n);
			std::copy_n(weights[tau].data(), n, weight.data() + tau * n);
		}
		for (auto& v : target.values())
		{
			v = -v;
		}
		auto err = ad::square(ad::add_const(predicted, target));
		return ad::scale(ad::sum(ad::mul_const(err, weight)), T{0.5} / static_cast<T>(steps * n));
	}

	void update_target(long gradient_step)
	{
		if (cfg_.target_network && cfg_.target_update_interval > 0 && gradient_step % cfg_.target_update_interval == 0)
		{
			target_params_.copy_values_from(critic_params_);
		}
	}

private:
	BehaviorConfig cfg_;
	nn::ParamSet<T> actor_params_;
	nn::ParamSet<T> critic_params_;
	nn::ParamSet<T> target_params_;
	nn::Mlp<T> actor_;
	nn::Mlp<T> value_;
	nn::Mlp<T> target_value_;
};

struct CemOptions
{
	int horizon = 12;
	int iterations = 10;
	int candidates = 1000;
	int top_k = 100;
	double gamma = 0.99;
};

/// Cross-entropy method over action sequences in [-1, 1]^(horizon x A). `score(sequences)` receives
/// [candidates, horizon, A] and returns one score per candidate. Returns the first action of the final mean.
template <class T, class Scorer>
Tensor<T> plan_cem(Scorer&& score, int action_dim, const CemOptions& opt, std::mt19937_64& rng, Tensor<T>* final_mean = nullptr)
{
	if (opt.top_k < 1 || opt.top_k > opt.candidates || opt.horizon < 1 || opt.iterations < 1)
	{
		throw std::invalid_argument("plan_cem: need 1 <= top_k <= candidates, horizon >= 1, iterations >= 1");
	}
	const int dims = opt.horizon * action_dim;
	std::vector<double> mean(dims, 0.0), stddev(dims, 1.0);
	std::normal_distribution<double> normal;
	for (int it = 0; it < opt.iterations; ++it)
	{
		Tensor<T> seqs({opt.candidates, opt.horizon, action_dim});
		for (int c = 0; c < opt.candidates; ++c)
		{
			for (int d = 0; d < dims; ++d)
			{
				seqs[static_cast<std::size_t>(c) * dims + d] = static_cast<T>(std::clamp(mean[d] + stddev[d] * normal(rng), -1.0, 1.0));
			}
		}
		const Tensor<T> scores = score(seqs);
		std::vector<int> order(opt.candidates);
		std::iota(order.begin(), order.end(), 0);
		std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
		for (int d = 0; d < dims; ++d)
		{
			double m = 0;
			for (int i = 0; i < opt.top_k; ++i)
			{
				m += seqs[static_cast<std::size_t>(order[i]) * dims + d];
			}
			m /= opt.top_k;
			double v = 0;
			for (int i = 0; i < opt.top_k; ++i)
			{
				const double e = seqs[static_cast<std::size_t>(order[i]) * dims + d] - m;
				v += e * e;
			}
			mean[d] = m;
			stddev[d] = std::sqrt(v / opt.top_k);
		}
	}
	if (final_mean)
	{
		*final_mean = Tensor<T>({opt.horizon, action_dim}, std::vector<T>(mean.begin(), mean.end()));
	}
	return Tensor<T>({action_dim}, std::vector<T>(mean.begin(), mean.begin() + action_dim));
}

/// Scores action sequences by imagined sum_{n=1}^{H} gamma^{n-1} r(s_n) from a single model state, rolling the
/// prior forward on its means.
template <class T>
Tensor<T> score_with_model(const WorldModel<T>& model, const ModelState<T>& state, const Tensor<T>& seqs, double gamma)
{
	ad::NoGradGuard guard;
	const int c = seqs.dim(0);
	const int h = seqs.dim(1);
	const int a = seqs.dim(2);
	const int z = model.config().stoch;
	auto tile = [c](const ad::Var<T>& v) {
		const Tensor<T>& x = v.value();
		Tensor<T> out({c, x.cols()});
		for (int i = 0; i < c; ++i)
		{
			std::copy_n(x.data(), x.cols(), out.data() + static_cast<std::size_t>(i) * x.cols());
		}
		return ad::Var<T>::constant(std::move(out));
	};
	ModelState<T> s{tile(state.deter), tile(state.stoch), {}};
	const Tensor<T> zero({c, z});
	Tensor<T> total({c});
	double discount = 1.0;
	for (int t = 0; t < h; ++t)
	{
		Tensor<T> act({c, a});
		for (int i = 0; i < c; ++i)
		{
			std::copy_n(seqs.data() + (static_cast<std::size_t>(i) * h + t) * a, a, act.data() + static_cast<std::size_t>(i) * a);
		}
		s = model.prior_step(s, ad::Var<T>::constant(std::move(act)), zero).state;
		const auto r = model.predict_reward(s).mean.value();
		for (int i = 0; i < c; ++i)
		{
			total[i] += static_cast<T>(discount) * r[i];
		}
		discount *= gamma;
	}
	return total;
}

} // namespace dreamer
