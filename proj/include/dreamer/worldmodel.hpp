#pragma once

#include "dreamer/distributions.hpp"
#include "dreamer/nn.hpp"

#include <stdexcept>
#include <string>

namespace dreamer {

enum class ReprObjective
{
	Reconstruction,
	Contrastive,
	RewardOnly,
};

inline const char* to_string(ReprObjective r)
{
	switch (r)
	{
		case ReprObjective::Reconstruction: return "recon";
		case ReprObjective::Contrastive: return "nce";
		case ReprObjective::RewardOnly: return "reward";
	}
	return "?";
}

inline ReprObjective parse_repr(const std::string& s)
{
	if (s == "recon") return ReprObjective::Reconstruction;
	if (s == "nce") return ReprObjective::Contrastive;
	if (s == "reward") return ReprObjective::RewardOnly;
	throw std::invalid_argument("unknown representation objective '" + s + "' (recon, nce, reward)");
}

class NonFiniteError : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

struct WorldModelConfig
{
	int image_size = 32;
	int channels = 1;
	int action_dim = 1;
	int deter = 64;
	int stoch = 16;
	int hidden = 128;
	int layers = 3;
	int cnn_depth = 16;
	double beta = 1.0;
	double free_nats = 3.0;
	double gamma = 0.99;
	bool discount_head = false;
	bool reward_tanh = false;
};

template <class T>
inline constexpr T stddev_floor = static_cast<T>(1e-4);

/// Markov latent state of a batch: rows are independent batch elements.
template <class T>
struct ModelState
{
	ad::Var<T> deter;
	ad::Var<T> stoch;
	DistParams<T> stoch_params;

	int batch() const { return deter.shape()[0]; }

	ad::Var<T> features() const { return ad::concat_last<T>({deter, stoch}); }

	ModelState detach() const { return {deter.detach(), stoch.detach(), stoch_params.detach()}; }
};

/// Training sequences, batch-major: observations [B, L, H, W, C], actions [B, L, A], rewards and continues [B, L].
/// Step t holds the observation o_t, the action that led to it, the reward received on arrival and whether the
/// episode continues past it.
template <class T>
struct SequenceBatch
{
	Tensor<T> observations;
	Tensor<T> actions;
	Tensor<T> rewards;
	Tensor<T> continues;

	int batch() const { return observations.dim(0); }
	int length() const { return observations.dim(1); }
};

/// Loss terms, each already averaged over batch and time. `total` is the optimized scalar.
template <class T>
struct LossTerms
{
	ad::Var<T> total;
	double obs = 0;      // -J_O, or -J_S for the contrastive objective
	double reward = 0;   // -J_R
	double kl = 0;       // raw mean KL(posterior || prior)
	double kl_loss = 0;  // beta * max(kl, free nats)
	double discount = 0; // Bernoulli cross-entropy of the discount head
	double sum() const { return obs + reward + kl_loss + discount; }
};

/// Posterior filtering results for a whole batch, time-major: row t * B + b.
template <class T>
struct Observed
{
	ad::Var<T> deter;
	ad::Var<T> stoch;
	ad::Var<T> embed;
	DistParams<T> prior;
	DistParams<T> posterior;
	int length = 0;
	int batch = 0;

	ModelState<T> states() const { return {deter, stoch, posterior}; }
	ad::Var<T> features() const { return ad::concat_last<T>({deter, stoch}); }
};

template <class T>
struct OpenLoopPrediction
{
	Tensor<T> reconstructions; // [C, H, W, C]
	Tensor<T> predictions;     // [F, H, W, C]
	Tensor<T> rewards;         // [C + F] reward means
};

/// Per-row contrastive log-ratio ln q(s_i | o_i) - ln sum_j q(s_i | o_j) over the contrast set of all rows. Shape [N].
/// A single-row contrast set gives exactly zero.
template <class T>
ad::Var<T> contrastive_log_ratio(const ad::Var<T>& states, const DistParams<T>& state_model)
{
	auto pairwise = pairwise_gaussian_log_prob(states, state_model.mean, state_model.stddev);
	return diagonal(pairwise) - logsumexp_last(pairwise);
}

/// Batch-major [B, L, ...] to time-major [L * B, ...].
template <class T>
Tensor<T> to_time_major(const Tensor<T>& x)
{
	const int b = x.dim(0);
	const int l = x.dim(1);
	const std::size_t per = x.size() / (static_cast<std::size_t>(b) * l);
	Shape shape{l * b};
	shape.insert(shape.end(), x.shape().begin() + 2, x.shape().end());
	Tensor<T> out(shape);
	for (int i = 0; i < b; ++i)
	{
		for (int t = 0; t < l; ++t)
		{
			std::copy_n(x.data() + (static_cast<std::size_t>(i) * l + t) * per, per,
				out.data() + (static_cast<std::size_t>(t) * b + i) * per);
		}
	}
	return out;
}

template <class T>
class WorldModel
{
public:
	WorldModel(const WorldModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg)
	{
		if (cfg.deter < 1 || cfg.stoch < 1 || cfg.hidden < 1 || cfg.action_dim < 1)
		{
			throw std::invalid_argument("world model sizes must be positive");
		}
		const int features = cfg.deter + cfg.stoch;
		encoder_ = nn::ConvEncoder<T>(params_, "encoder", cfg.image_size, cfg.channels, cfg.cnn_depth, rng);
		cell_ = nn::GruCell<T>(params_, "rssm/cell", cfg.stoch + cfg.action_dim, cfg.deter, rng);
		prior_ = nn::Mlp<T>(params_, "rssm/prior", cfg.deter, cfg.hidden, 1, 2 * cfg.stoch, rng);
		posterior_ = nn::Mlp<T>(params_, "rssm/posterior", cfg.deter + encoder_.output_size, cfg.hidden, 1, 2 * cfg.stoch, rng);
		decoder_ = nn::ConvDecoder<T>(params_, "decoder", features, cfg.image_size, cfg.channels, cfg.cnn_depth, rng);
		reward_ = nn::Mlp<T>(params_, "reward", features, cfg.hidden, cfg.layers, 1, rng);
		state_model_ = nn::Mlp<T>(params_, "state_model", encoder_.output_size, cfg.hidden, cfg.layers, 2 * cfg.stoch, rng);
		if (cfg.discount_head)
		{
			discount_ = nn::Mlp<T>(params_, "discount", features, cfg.hidden, cfg.layers, 1, rng);
		}
	}

	const WorldModelConfig& config() const { return cfg_; }
	nn::ParamSet<T>& params() { return params_; }
	const nn::ParamSet<T>& params() const { return params_; }
	int feature_size() const { return cfg_.deter + cfg_.stoch; }
	int embed_size() const { return encoder_.output_size; }

	ModelState<T> initial_state(int batch) const
	{
		auto zero = ad::Var<T>::constant(Tensor<T>({batch, cfg_.stoch}));
		auto unit = ad::Var<T>::constant(Tensor<T>({batch, cfg_.stoch}, T{1}));
		return {ad::Var<T>::constant(Tensor<T>({batch, cfg_.deter})), zero, DistParams<T>::diag_gaussian(zero, unit)};
	}

	/// images [N, H, W, C] in [0, 1] -> embeddings [N, E]
	ad::Var<T> encode(const Tensor<T>& images) const
	{
		Tensor<T> centered = images;
		for (auto& v : centered.values())
		{
			v -= T{0.5};
		}
		return encoder_(ad::Var<T>::constant(std::move(centered)));
	}

	ad::Var<T> advance(const ModelState<T>& prev, const ad::Var<T>& action) const
	{
		return cell_(ad::concat_last<T>({prev.stoch, action}), prev.deter);
	}

	DistParams<T> prior_params(const ad::Var<T>& deter) const { return split_gaussian(prior_(deter)); }

	DistParams<T> posterior_params(const ad::Var<T>& deter, const ad::Var<T>& embed) const
	{
		return split_gaussian(posterior_(ad::concat_last<T>({deter, embed})));
	}

	struct PosteriorStep
	{
		ModelState<T> state;
		DistParams<T> prior;
		DistParams<T> posterior;
	};

	/// One filtering step from an already encoded observation.
	PosteriorStep observe_step(
		const ModelState<T>& prev, const ad::Var<T>& action, const ad::Var<T>& embed, const Tensor<T>& noise) const
	{
		auto deter = advance(prev, action);
		auto prior = prior_params(deter);
		auto post = posterior_params(deter, embed);
		auto stoch = sample(post, noise);
		check_finite(deter, "posterior_step deter");
		check_finite(stoch, "posterior_step stoch");
		return {{deter, stoch, post}, prior, post};
	}

	PosteriorStep posterior_step(
		const ModelState<T>& prev, const ad::Var<T>& action, const Tensor<T>& observation, const Tensor<T>& noise) const
	{
		return observe_step(prev, action, encode(observation), noise);
	}

	struct PriorStep
	{
		ModelState<T> state;
		DistParams<T> prior;
	};

	PriorStep prior_step(const ModelState<T>& prev, const ad::Var<T>& action, const Tensor<T>& noise) const
	{
		auto deter = advance(prev, action);
		auto prior = prior_params(deter);
		auto stoch = sample(prior, noise);
		check_finite(deter, "prior_step deter");
		check_finite(stoch, "prior_step stoch");
		return {{deter, stoch, prior}, prior};
	}

	/// Unit-variance Gaussian over the scalar reward; mean shape [N].
	DistParams<T> predict_reward(const ModelState<T>& state) const { return reward_params(state.features()); }

	DistParams<T> reward_params(const ad::Var<T>& features) const
	{
		auto mean = ad::reshape(reward_(features), {features.shape()[0]});
		return DistParams<T>::diag_gaussian(mean, ad::Var<T>::constant(Tensor<T>(mean.shape(), T{1})));
	}

	bool has_discount_head() const { return cfg_.discount_head; }

	/// Continue-probability logits [N]. Requires the discount head.
	ad::Var<T> discount_logits(const ad::Var<T>& features) const
	{
		if (!cfg_.discount_head)
		{
			throw std::logic_error("predict_discount: discount head is disabled for this model");
		}
		return ad::reshape(discount_(features), {features.shape()[0]});
	}

	/// Bernoulli continue probability in [0, 1]; use sites multiply by gamma.
	DistParams<T> predict_discount(const ModelState<T>& state) const
	{
		return DistParams<T>::bernoulli(ad::sigmoid(discount_logits(state.features())));
	}

	/// Contrastive state model q(s | o) from an embedding.
	DistParams<T> state_model_params(const ad::Var<T>& embed) const { return split_gaussian(state_model_(embed)); }

	/// Decoded image means [N, H, W, C].
	ad::Var<T> decode(const ad::Var<T>& features) const { return decoder_(features); }

	/// Teacher-forced posterior unroll. noise [L, B, Z] standard normal.
	Observed<T> observe(const SequenceBatch<T>& batch, const Tensor<T>& noise) const
	{
		const int b = batch.batch();
		const int l = batch.length();
		if (l < 1 || noise.size() != static_cast<std::size_t>(l) * b * cfg_.stoch)
		{
			throw std::invalid_argument("observe: noise must have shape [L, B, Z]");
		}
		const Tensor<T> obs = to_time_major(batch.observations);
		const Tensor<T> actions = to_time_major(batch.actions);
		auto embed = encode(obs);
		auto state = initial_state(b);
		std::vector<ad::Var<T>> deters, stochs, prior_m, prior_s, post_m, post_s;
		for (int t = 0; t < l; ++t)
		{
			auto step = observe_step(state, ad::Var<T>::constant(actions.slice0(t * b, b)), ad::slice0(embed, t * b, b),
				noise.slice0(t, 1).reshape({b, cfg_.stoch}));
			deters.push_back(step.state.deter);
			stochs.push_back(step.state.stoch);
			prior_m.push_back(step.prior.mean);
			prior_s.push_back(step.prior.stddev);
			post_m.push_back(step.posterior.mean);
			post_s.push_back(step.posterior.stddev);
			state = step.state;
		}
		Observed<T> out;
		out.deter = ad::concat0<T>(deters);
		out.stoch = ad::concat0<T>(stochs);
		out.embed = embed;
		out.prior = DistParams<T>::diag_gaussian(ad::concat0<T>(prior_m), ad::concat0<T>(prior_s));
		out.posterior = DistParams<T>::diag_gaussian(ad::concat0<T>(post_m), ad::concat0<T>(post_s));
		out.length = l;
		out.batch = b;
		return out;
	}

	LossTerms<T> loss(ReprObjective objective, const SequenceBatch<T>& batch, const Tensor<T>& noise, Observed<T>* observed = nullptr) const
	{
		auto obs = observe(batch, noise);
		auto terms = loss_terms(objective, batch, obs);
		if (observed)
		{
			*observed = std::move(obs);
		}
		return terms;
	}

	LossTerms<T> loss_reconstruction(const SequenceBatch<T>& batch, const Tensor<T>& noise, Observed<T>* observed = nullptr) const
	{
		return loss(ReprObjective::Reconstruction, batch, noise, observed);
	}

	LossTerms<T> loss_contrastive(const SequenceBatch<T>& batch, const Tensor<T>& noise, Observed<T>* observed = nullptr) const
	{
		return loss(ReprObjective::Contrastive, batch, noise, observed);
	}

	LossTerms<T> loss_reward_only(const SequenceBatch<T>& batch, const Tensor<T>& noise, Observed<T>* observed = nullptr) const
	{
		return loss(ReprObjective::RewardOnly, batch, noise, observed);
	}

	LossTerms<T> loss_terms(ReprObjective objective, const SequenceBatch<T>& batch, const Observed<T>& obs) const
	{
		const int n = obs.length * obs.batch;
		const T inv_n = T{1} / static_cast<T>(n);
		auto features = obs.features();
		LossTerms<T> terms;
		std::vector<ad::Var<T>> parts;

		if (objective == ReprObjective::Reconstruction)
		{
			const Tensor<T> target = to_time_major(batch.observations);
			auto ll = unit_gaussian_log_prob(decode(features), target);
			auto term = ad::scale(ad::sum(ll), -inv_n);
			terms.obs = checked(term, "observation");
			parts.push_back(term);
		}
		else if (objective == ReprObjective::Contrastive)
		{
			auto js = contrastive_log_ratio(obs.stoch, state_model_params(obs.embed));
			auto term = ad::scale(ad::sum(js), -inv_n);
			terms.obs = checked(term, "contrastive");
			parts.push_back(term);
		}

		Tensor<T> rewards = to_time_major(batch.rewards);
		if (cfg_.reward_tanh)
		{
			for (auto& r : rewards.values())
			{
				r = std::tanh(r);
			}
		}
		auto reward_ll = unit_gaussian_log_prob(reward_params(features).mean, rewards.reshape({n}));
		auto reward_term = ad::scale(ad::sum(reward_ll), -inv_n);
		terms.reward = checked(reward_term, "reward");
		parts.push_back(reward_term);

		auto kl_mean = ad::mean(gaussian_kl(obs.posterior, obs.prior));
		terms.kl = checked(kl_mean, "kl");
		auto kl_term = ad::scale(ad::max_scalar(kl_mean, static_cast<T>(cfg_.free_nats)), static_cast<T>(cfg_.beta));
		terms.kl_loss = static_cast<double>(kl_term.item());
		parts.push_back(kl_term);

		if (cfg_.discount_head)
		{
			Tensor<T> targets = to_time_major(batch.continues).reshape({n});
			for (auto& c : targets.values())
			{
				c *= static_cast<T>(cfg_.gamma);
			}
			auto term = ad::mean(bce_with_logits(discount_logits(features), targets));
			terms.discount = checked(term, "discount");
			parts.push_back(term);
		}

		terms.total = parts[0];
		for (std::size_t i = 1; i < parts.size(); ++i)
		{
			terms.total = terms.total + parts[i];
		}
		checked(terms.total, "total");
		return terms;
	}

	/// Posterior filtering over the context, then a prior rollout under future actions. Uses distribution means.
	/// context_obs [C, H, W, Ch], context_actions [C, A] (action that led to each frame), future_actions [F, A].
	OpenLoopPrediction<T> open_loop_predict(
		const Tensor<T>& context_obs, const Tensor<T>& context_actions, const Tensor<T>& future_actions) const
	{
		ad::NoGradGuard guard;
		const int c = context_obs.dim(0);
		const int f = future_actions.empty() ? 0 : future_actions.dim(0);
		if (c < 1)
		{
			throw std::invalid_argument("open_loop_predict: context must contain at least one frame");
		}
		auto embed = encode(context_obs);
		auto state = initial_state(1);
		const Tensor<T> zero({1, cfg_.stoch});
		std::vector<ad::Var<T>> features;
		for (int t = 0; t < c; ++t)
		{
			auto step = observe_step(state, ad::Var<T>::constant(context_actions.slice0(t, 1).reshape({1, cfg_.action_dim})),
				ad::slice0(embed, t, 1), zero);
			state = step.state;
			features.push_back(state.features());
		}
		OpenLoopPrediction<T> out;
		out.reconstructions = decode(ad::concat0<T>(features)).value();
		std::vector<ad::Var<T>> future;
		for (int t = 0; t < f; ++t)
		{
			auto step = prior_step(state, ad::Var<T>::constant(future_actions.slice0(t, 1).reshape({1, cfg_.action_dim})), zero);
			state = step.state;
			future.push_back(state.features());
			features.push_back(state.features());
		}
		if (f > 0)
		{
			out.predictions = decode(ad::concat0<T>(future)).value();
		}
		out.rewards = reward_params(ad::concat0<T>(features)).mean.value();
		return out;
	}

	static void check_finite(const ad::Var<T>& v, const char* what)
	{
		if (!v.value().all_finite())
		{
			throw NonFiniteError(std::string("non-finite values in ") + what);
		}
	}

private:
	static double checked(const ad::Var<T>& v, const char* term)
	{
		const double x = static_cast<double>(v.item());
		if (!std::isfinite(x))
		{
			throw NonFiniteError(std::string("non-finite world-model loss term '") + term + "'");
		}
		return x;
	}

	DistParams<T> split_gaussian(const ad::Var<T>& raw) const
	{
		const int z = raw.value().cols() / 2;
		auto mean = ad::slice_last(raw, 0, z);
		auto stddev = ad::add_scalar(ad::softplus(ad::slice_last(raw, z, z)), stddev_floor<T>);
		return DistParams<T>::diag_gaussian(mean, stddev);
	}

	static ad::Var<T> sample(const DistParams<T>& p, const Tensor<T>& noise)
	{
		return p.mean + ad::mul_const(p.stddev, noise.reshape(p.mean.shape()));
	}

	WorldModelConfig cfg_;
	nn::ParamSet<T> params_;
	nn::ConvEncoder<T> encoder_;
	nn::GruCell<T> cell_;
	nn::Mlp<T> prior_;
	nn::Mlp<T> posterior_;
	nn::ConvDecoder<T> decoder_;
	nn::Mlp<T> reward_;
	nn::Mlp<T> state_model_;
	nn::Mlp<T> discount_;
};

} // namespace dreamer
