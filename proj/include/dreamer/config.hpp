#pragma once

#include "dreamer/behavior.hpp"
#include "dreamer/worldmodel.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace dreamer {

class ConfigError : public std::invalid_argument
{
public:
	using std::invalid_argument::invalid_argument;
};

/// Flat run configuration. Every field is a JSON key of the same name.
struct Config
{
	std::string profile = "desk";
	std::string env = "pendulum";
	std::string repr = "recon";
	std::string behavior = "dreamer"; // dreamer, no_value, cem
	std::uint64_t seed = 0;
	long steps = 100000; // environment (simulator) step budget

	int seed_episodes = 5;
	int collect_interval = 100;
	int batch = 16;
	int seq_len = 16;
	int horizon = 15;
	double lr_model = 6e-4;
	double lr_value = 8e-5;
	double lr_action = 8e-5;
	double adam_eps = 1e-8;
	double gamma = 0.99;
	double lambda = 0.95;
	double beta = 1.0;
	double free_nats = 3.0;
	double grad_clip = 100.0;
	double expl_noise = 0.3;
	double epsilon_start = 0.4;
	double epsilon_end = 0.1;
	long epsilon_steps = 200000;
	int action_repeat = 2;

	int image_size = 32;
	int channels = 1;
	int deter = 64;
	int stoch = 16;
	int hidden = 128;
	int layers = 3;
	int cnn_depth = 16;
	int actor_layers = 3;
	int value_layers = 3;
	bool discount_head = false;
	bool reward_tanh = false;
	double action_init_std = 5.0;
	double mean_scale = 5.0;
	double entropy_scale = 0.0;
	bool target_network = false;
	int target_update_interval = 100;

	int cem_iterations = 10;
	int cem_candidates = 1000;
	int cem_top_k = 100;

	int eval_every = 10;
	int eval_episodes = 3;
	int checkpoint_every = 10;

	template <class Self, class F>
	static void visit(Self& c, F&& f)
	{
		f("profile", c.profile);
		f("env", c.env);
		f("repr", c.repr);
		f("behavior", c.behavior);
		f("seed", c.seed);
		f("steps", c.steps);
		f("seed_episodes", c.seed_episodes);
		f("collect_interval", c.collect_interval);
		f("batch", c.batch);
		f("seq_len", c.seq_len);
		f("horizon", c.horizon);
		f("lr_model", c.lr_model);
		f("lr_value", c.lr_value);
		f("lr_action", c.lr_action);
		f("adam_eps", c.adam_eps);
		f("gamma", c.gamma);
		f("lambda", c.lambda);
		f("beta", c.beta);
		f("free_nats", c.free_nats);
		f("grad_clip", c.grad_clip);
		f("expl_noise", c.expl_noise);
		f("epsilon_start", c.epsilon_start);
		f("epsilon_end", c.epsilon_end);
		f("epsilon_steps", c.epsilon_steps);
		f("action_repeat", c.action_repeat);
		f("image_size", c.image_size);
		f("channels", c.channels);
		f("deter", c.deter);
		f("stoch", c.stoch);
		f("hidden", c.hidden);
		f("layers", c.layers);
		f("cnn_depth", c.cnn_depth);
		f("actor_layers", c.actor_layers);
		f("value_layers", c.value_layers);
		f("discount_head", c.discount_head);
		f("reward_tanh", c.reward_tanh);
		f("action_init_std", c.action_init_std);
		f("mean_scale", c.mean_scale);
		f("entropy_scale", c.entropy_scale);
		f("target_network", c.target_network);
		f("target_update_interval", c.target_update_interval);
		f("cem_iterations", c.cem_iterations);
		f("cem_candidates", c.cem_candidates);
		f("cem_top_k", c.cem_top_k);
		f("eval_every", c.eval_every);
		f("eval_episodes", c.eval_episodes);
		f("checkpoint_every", c.checkpoint_every);
	}

	nlohmann::json to_json() const
	{
		nlohmann::json j = nlohmann::json::object();
		visit(*this, [&](const char* key, const auto& v) { j[key] = v; });
		return j;
	}

	/// Applies the keys of `j` on top of this config. Unknown keys and mistyped values are errors naming the field.
	void apply(const nlohmann::json& j)
	{
		if (!j.is_object())
		{
			throw ConfigError("config must be a JSON object");
		}
		std::set<std::string> known;
		visit(*this, [&](const char* key, auto&) { known.insert(key); });
		for (const auto& [key, _] : j.items())
		{
			if (!known.count(key))
			{
				throw ConfigError("unknown config key '" + key + "'");
			}
		}
		visit(*this, [&](const char* key, auto& v) {
			if (!j.contains(key))
			{
				return;
			}
			using V = std::decay_t<decltype(v)>;
			const auto& value = j.at(key);
			const bool ok = std::is_same_v<V, std::string> ? value.is_string()
				: std::is_same_v<V, bool>                  ? value.is_boolean()
				: std::is_floating_point_v<V>              ? value.is_number()
				: std::is_unsigned_v<V>                    ? value.is_number_unsigned()
														   : value.is_number_integer();
			if (!ok)
			{
				throw ConfigError("config key '" + std::string(key) + "' has the wrong type: " + value.dump());
			}
			v = value.get<V>();
		});
	}

	void validate() const
	{
		auto require = [](bool ok, const std::string& msg) {
			if (!ok)
			{
				throw ConfigError(msg);
			}
		};
		require(env == "pendulum" || env == "sparse_pendulum" || env == "chain" || env == "grid_cliff",
			"env must be one of pendulum, sparse_pendulum, chain, grid_cliff");
		require(repr == "recon" || repr == "nce" || repr == "reward", "repr must be one of recon, nce, reward");
		require(behavior == "dreamer" || behavior == "no_value" || behavior == "cem", "behavior must be one of dreamer, no_value, cem");
		require(steps >= 0, "steps must be non-negative");
		require(seed_episodes >= 1, "seed_episodes must be at least 1");
		require(collect_interval >= 0, "collect_interval must be non-negative");
		require(batch >= 1 && seq_len >= 1 && horizon >= 1, "batch, seq_len and horizon must be positive");
		require(lr_model > 0 && lr_value > 0 && lr_action > 0, "learning rates must be positive");
		require(gamma > 0 && gamma <= 1, "gamma must lie in (0, 1]");
		require(lambda >= 0 && lambda <= 1, "lambda must lie in [0, 1]");
		require(beta >= 0 && free_nats >= 0, "beta and free_nats must be non-negative");
		require(expl_noise >= 0, "expl_noise must be non-negative");
		require(epsilon_start >= 0 && epsilon_start <= 1 && epsilon_end >= 0 && epsilon_end <= 1, "epsilon bounds must lie in [0, 1]");
		require(epsilon_steps >= 1, "epsilon_steps must be positive");
		require(action_repeat >= 1, "action_repeat must be at least 1");
		require(image_size == 32 || image_size == 64, "image_size must be 32 or 64");
		require(channels == 1 || channels == 3, "channels must be 1 or 3");
		require(deter >= 1 && stoch >= 1 && hidden >= 1 && layers >= 1 && cnn_depth >= 1, "network sizes must be positive");
		require(actor_layers >= 1 && value_layers >= 1, "actor_layers and value_layers must be positive");
		require(action_init_std > 0 && mean_scale > 0, "action_init_std and mean_scale must be positive");
		require(cem_candidates >= 1 && cem_top_k >= 1 && cem_top_k <= cem_candidates && cem_iterations >= 1,
			"cem settings must satisfy 1 <= cem_top_k <= cem_candidates");
		require(eval_every >= 1 && eval_episodes >= 0 && checkpoint_every >= 1, "eval and checkpoint cadences must be positive");
	}

	int action_dim() const { return env == "grid_cliff" ? 4 : 1; }
	bool discrete() const { return env == "grid_cliff"; }

	WorldModelConfig world_model() const
	{
		WorldModelConfig w;
		w.image_size = image_size;
		w.channels = channels;
		w.action_dim = action_dim();
		w.deter = deter;
		w.stoch = stoch;
		w.hidden = hidden;
		w.layers = layers;
		w.cnn_depth = cnn_depth;
		w.beta = beta;
		w.free_nats = free_nats;
		w.gamma = gamma;
		w.discount_head = discount_head;
		w.reward_tanh = reward_tanh;
		return w;
	}

	BehaviorConfig behavior_config() const
	{
		BehaviorConfig b;
		b.action_dim = action_dim();
		b.discrete = discrete();
		b.hidden = hidden;
		b.actor_layers = actor_layers;
		b.value_layers = value_layers;
		b.horizon = horizon;
		b.gamma = gamma;
		b.lambda = lambda;
		b.action_init_std = action_init_std;
		b.mean_scale = mean_scale;
		b.estimator = behavior == "no_value" ? ValueEstimator::RewardSum : ValueEstimator::Lambda;
		b.entropy_scale = entropy_scale;
		b.target_network = target_network;
		b.target_update_interval = target_update_interval;
		return b;
	}

	ReprObjective objective() const { return parse_repr(repr); }
};

/// Named starting points. "paper" carries the published defaults, "desk" the CPU-sized ones, "discrete" the overrides
/// for one-hot action spaces with early termination.
inline Config profile(const std::string& name)
{
	Config c;
	c.profile = name;
	if (name == "desk")
	{
		return c;
	}
	if (name == "paper")
	{
		c.batch = 50;
		c.seq_len = 50;
		c.image_size = 64;
		c.channels = 3;
		c.deter = 200;
		c.stoch = 30;
		c.hidden = 300;
		c.layers = 3;
		c.cnn_depth = 32;
		c.actor_layers = 3;
		c.value_layers = 3;
		c.steps = 1000000;
		return c;
	}
	if (name == "discrete")
	{
		c.env = "grid_cliff";
		c.horizon = 10;
		c.beta = 0.1;
		c.discount_head = true;
		c.action_repeat = 1;
		// Grid episodes can end after one move and the image alone is the full state, so windows of two steps.
		c.seq_len = 2;
		c.batch = 64;
		c.steps = 50000;
		return c;
	}
	throw ConfigError("unknown profile '" + name + "' (desk, paper, discrete)");
}

/// Profile named by the "profile" key (default desk) with the remaining keys applied on top.
inline Config config_from_json(const nlohmann::json& j)
{
	std::string name = "desk";
	if (j.is_object() && j.contains("profile"))
	{
		if (!j.at("profile").is_string())
		{
			throw ConfigError("config key 'profile' must be a string");
		}
		name = j.at("profile").get<std::string>();
	}
	Config c = profile(name);
	c.apply(j);
	c.validate();
	return c;
}

inline Config load_config(const std::string& path)
{
	std::ifstream in(path);
	if (!in)
	{
		throw ConfigError("cannot read config file " + path);
	}
	nlohmann::json j;
	try
	{
		j = nlohmann::json::parse(in);
	}
	catch (const nlohmann::json::exception& e)
	{
		throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
	}
	return config_from_json(j);
}

} // namespace dreamer
