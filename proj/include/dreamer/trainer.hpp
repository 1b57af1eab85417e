#pragma once

#include "dreamer/behavior.hpp"
#include "dreamer/checkpoint.hpp"
#include "dreamer/config.hpp"
#include "dreamer/dataset.hpp"
#include "dreamer/envs.hpp"
#include "dreamer/optim.hpp"
#include "dreamer/worldmodel.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dreamer {

struct MetricsRow
{
	std::string kind; // train, episode, eval
	long env_step = 0;
	long gradient_step = 0;
	int episode = 0;
	double episode_return = 0;
	int episode_length = 0;
	double obs_loss = 0; // reconstruction NLL, or the negated contrastive bound
	double reward_loss = 0;
	double kl = 0;
	double discount_loss = 0;
	double model_loss = 0;
	double actor_loss = 0;
	double critic_loss = 0;
	double mean_target = 0;
	double model_grad_norm = 0;
	double wall_clock = 0; // seconds since the run started

	nlohmann::json to_json() const
	{
		return {{"kind", kind}, {"env_step", env_step}, {"gradient_step", gradient_step}, {"episode", episode},
			{"episode_return", episode_return}, {"episode_length", episode_length}, {"obs_loss", obs_loss},
			{"reward_loss", reward_loss}, {"kl", kl}, {"discount_loss", discount_loss}, {"model_loss", model_loss},
			{"actor_loss", actor_loss}, {"critic_loss", critic_loss}, {"mean_target", mean_target},
			{"model_grad_norm", model_grad_norm}, {"wall_clock", wall_clock}};
	}

	static const std::vector<std::string>& columns()
	{
		static const std::vector<std::string> cols = {"kind", "env_step", "gradient_step", "episode", "episode_return",
			"episode_length", "obs_loss", "reward_loss", "kl", "discount_loss", "model_loss", "actor_loss", "critic_loss",
			"mean_target", "model_grad_norm", "wall_clock"};
		return cols;
	}

	/// Every field except the wall clock, for comparing runs.
	bool same_values(const MetricsRow& o) const
	{
		auto a = to_json();
		auto b = o.to_json();
		a.erase("wall_clock");
		b.erase("wall_clock");
		return a == b;
	}

	bool all_finite() const
	{
		for (double v : {episode_return, obs_loss, reward_loss, kl, discount_loss, model_loss, actor_loss, critic_loss, mean_target})
		{
			if (!std::isfinite(v))
			{
				return false;
			}
		}
		return true;
	}
};

struct EpisodeResult
{
	double total_return = 0;
	int decisions = 0;
	int sim_steps = 0;
	bool terminated = false;
	data::Episode episode;
};

inline double epsilon_at(const Config& c, long gradient_step)
{
	const double frac = std::min(1.0, static_cast<double>(gradient_step) / static_cast<double>(c.epsilon_steps));
	return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac;
}

/// Independent generator streams, each derived from the run seed, so that changing one consumer leaves the others'
/// draws unchanged.
struct RngStreams
{
	std::mt19937_64 init;
	std::mt19937_64 env;
	std::mt19937_64 sample;
	std::mt19937_64 noise;
	std::mt19937_64 explore;

	explicit RngStreams(std::uint64_t seed)
	{
		std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
		std::vector<std::uint64_t> seeds(5);
		std::mt19937_64 root(seq);
		for (auto& s : seeds)
		{
			s = root();
		}
		init.seed(seeds[0]);
		env.seed(seeds[1]);
		sample.seed(seeds[2]);
		noise.seed(seeds[3]);
		explore.seed(seeds[4]);
	}
};

/// The training loop: dataset seeding, then alternating world-model and behavior updates with environment
/// interaction. With an empty logdir nothing is written to disk.
class Trainer
{
public:
	using MetricsSink = std::function<void(const MetricsRow&)>;

	explicit Trainer(Config cfg, std::filesystem::path logdir = {})
		: cfg_(validated(std::move(cfg))), logdir_(std::move(logdir)), rng_(cfg_.seed), env_(make_env()),
		  model_(cfg_.world_model(), rng_.init), ac_(cfg_.behavior_config(), model_.feature_size(), rng_.init),
		  opt_model_(model_.params(), adam(cfg_.lr_model)), opt_actor_(ac_.actor_params(), adam(cfg_.lr_action)),
		  opt_critic_(ac_.critic_params(), adam(cfg_.lr_value)), start_(std::chrono::steady_clock::now())
	{
	}

	const Config& config() const { return cfg_; }
	WorldModel<float>& model() { return model_; }
	ActorCritic<float>& actor_critic() { return ac_; }
	const data::EpisodeDataset& dataset() const { return data_; }
	envs::Env& env() { return *env_; }
	long env_steps() const { return env_steps_; }
	long gradient_steps() const { return grad_steps_; }
	int episodes() const { return episodes_; }
	const std::vector<std::string>& events() const { return events_; }
	const std::vector<MetricsRow>& eval_history() const { return evals_; }
	bool freeze_audit_ok() const { return freeze_ok_; }
	Adam<float>& model_optimizer() { return opt_model_; }
	Adam<float>& actor_optimizer() { return opt_actor_; }
	Adam<float>& critic_optimizer() { return opt_critic_; }
	void set_metrics_sink(MetricsSink sink) { sink_ = std::move(sink); }
	/// Ends run() early (with a final checkpoint) as soon as the predicate accepts an eval row.
	void set_stop_condition(std::function<bool(const MetricsRow&)> stop) { stop_ = std::move(stop); }

	/// S episodes of uniform random actions.
	void seed_dataset()
	{
		event("seed_dataset episodes=" + std::to_string(cfg_.seed_episodes));
		for (int i = 0; i < cfg_.seed_episodes; ++i)
		{
			auto result = run_episode([&](const auto&) { return envs::random_action(*env_, rng_.explore); }, false);
			add_episode(std::move(result));
		}
	}

	/// One gradient step on each of the world model, the actor and the critic, in that order.
	MetricsRow train_step()
	{
		MetricsRow row;
		row.kind = "train";
		auto sampled = data_.sample<float>(cfg_.batch, cfg_.seq_len, rng_.sample);
		const auto noise = standard_normal_tensor({cfg_.seq_len, cfg_.batch, cfg_.stoch}, rng_.noise);

		event("dynamics step=" + std::to_string(grad_steps_ + 1));
		Observed<float> observed;
		auto terms = model_.loss(cfg_.objective(), sampled.batch, noise, &observed);
		row.obs_loss = terms.obs;
		row.reward_loss = terms.reward;
		row.kl = terms.kl;
		row.discount_loss = terms.discount;
		row.model_loss = static_cast<double>(terms.total.value().item());
		ensure_finite(row.model_loss, "world model loss");
		ad::backward(terms.total);
		row.model_grad_norm = opt_model_.step();
		++grad_steps_;

		if (cfg_.behavior != "cem")
		{
			event("behavior step=" + std::to_string(grad_steps_));
			const auto before = param_digest(model_.params());
			const auto start = observed.states().detach();
			const auto imag_noise = ImaginationNoise<float>::draw(
				cfg_.horizon, start.batch(), cfg_.action_dim(), cfg_.stoch, cfg_.discrete(), rng_.noise);
			ImaginedTrajectory<float> traj;
			{
				nn::FreezeGuard<float> freeze_model(model_.params());
				nn::FreezeGuard<float> freeze_critic(ac_.critic_params());
				traj = ac_.imagine(model_, start, imag_noise);
				auto actor_loss = ac_.actor_loss(traj);
				row.actor_loss = static_cast<double>(actor_loss.value().item());
				ensure_finite(row.actor_loss, "actor loss");
				ad::backward(actor_loss);
				opt_actor_.step();
			}
			double mean_target = 0;
			for (const auto& t : traj.targets)
			{
				for (float v : t.value().values())
				{
					mean_target += v;
				}
			}
			row.mean_target = mean_target / (static_cast<double>(traj.targets.size()) * start.batch());
			if (cfg_.behavior == "dreamer")
			{
				nn::FreezeGuard<float> freeze_model(model_.params());
				nn::FreezeGuard<float> freeze_actor(ac_.actor_params());
				auto critic_loss = ac_.critic_loss(traj);
				row.critic_loss = static_cast<double>(critic_loss.value().item());
				ensure_finite(row.critic_loss, "critic loss");
				ad::backward(critic_loss);
				opt_critic_.step();
				ac_.update_target(grad_steps_);
			}
			freeze_ok_ = freeze_ok_ && param_digest(model_.params()) == before;
		}
		row.env_step = env_steps_;
		row.gradient_step = grad_steps_;
		row.episode = episodes_;
		row.wall_clock = elapsed();
		return row;
	}

	/// One episode with exploration (train) or the noise-free policy (eval). Train episodes join the dataset.
	/// The filtering state starts from zeros. `env_seed` overrides the environment seed drawn from the env stream.
	EpisodeResult interact(bool train, std::optional<std::uint64_t> env_seed = std::nullopt)
	{
		event(std::string(train ? "interact" : "evaluate") + " episode=" + std::to_string(episodes_ + 1));
		const double epsilon = epsilon_at(cfg_, grad_steps_);
		auto result = run_episode([&](const ModelState<float>& state) { return act(state, train, epsilon); }, true, env_seed);
		if (train)
		{
			EpisodeResult summary{result.total_return, result.decisions, result.sim_steps, result.terminated, {}};
			add_episode(std::move(result));
			return summary;
		}
		return result;
	}

	double evaluate(int episodes)
	{
		double total = 0;
		for (int i = 0; i < episodes; ++i)
		{
			total += interact(false).total_return;
		}
		return episodes > 0 ? total / episodes : 0.0;
	}

	/// Seed episodes, then alternate collect_interval train steps and one collected episode until the environment
	/// step budget is spent. Resumes from the latest checkpoint in the logdir when one exists. `max_episodes` stops
	/// early (after saving a checkpoint) once that many episodes exist.
	void run(std::optional<int> max_episodes = std::nullopt)
	{
		if (!logdir_.empty())
		{
			std::filesystem::create_directories(logdir_);
			if (resume())
			{
				event("resume episode=" + std::to_string(episodes_));
			}
			else
			{
				write_config();
			}
		}
		if (episodes_ == 0)
		{
			seed_dataset();
			persist_episodes();
		}
		while (env_steps_ < cfg_.steps && !(max_episodes && episodes_ >= *max_episodes))
		{
			MetricsRow acc;
			acc.kind = "train";
			for (int i = 0; i < cfg_.collect_interval; ++i)
			{
				try
				{
					accumulate(acc, train_step(), cfg_.collect_interval);
				}
				catch (const NonFiniteError&)
				{
					acc.env_step = env_steps_;
					acc.gradient_step = grad_steps_;
					acc.episode = episodes_;
					acc.wall_clock = elapsed();
					acc.model_loss = std::numeric_limits<double>::quiet_NaN();
					emit_unchecked(acc);
					throw;
				}
			}
			if (cfg_.collect_interval > 0)
			{
				acc.env_step = env_steps_;
				acc.gradient_step = grad_steps_;
				acc.episode = episodes_;
				acc.wall_clock = elapsed();
				emit(acc);
			}
			const auto result = interact(true);
			MetricsRow ep;
			ep.kind = "episode";
			ep.env_step = env_steps_;
			ep.gradient_step = grad_steps_;
			ep.episode = episodes_;
			ep.episode_return = result.total_return;
			ep.episode_length = result.decisions;
			ep.wall_clock = elapsed();
			emit(ep);
			persist_episodes();
			const int collected = episodes_ - cfg_.seed_episodes;
			if (cfg_.eval_episodes > 0 && collected % cfg_.eval_every == 0)
			{
				MetricsRow ev;
				ev.kind = "eval";
				ev.episode_return = evaluate(cfg_.eval_episodes);
				ev.episode_length = 0;
				ev.env_step = env_steps_;
				ev.gradient_step = grad_steps_;
				ev.episode = episodes_;
				ev.wall_clock = elapsed();
				evals_.push_back(ev);
				emit(ev);
				spdlog::info("env_step {} episode {} eval return {:.2f}", env_steps_, episodes_, ev.episode_return);
				if (stop_ && stop_(ev))
				{
					event("stop env_step=" + std::to_string(env_steps_));
					break;
				}
			}
			if (!logdir_.empty() && collected % cfg_.checkpoint_every == 0)
			{
				save(logdir_ / "checkpoints" / "latest");
			}
		}
		if (!logdir_.empty())
		{
			save(logdir_ / "checkpoints" / "latest");
		}
		event("done env_step=" + std::to_string(env_steps_));
	}

	/// Parameters, optimizer moments, generator states, counters and the config.
	Checkpoint checkpoint() const
	{
		Checkpoint ck;
		ck.add_params("model", model_.params());
		ck.add_params("actor", ac_.actor_params());
		ck.add_params("critic", ac_.critic_params());
		if (cfg_.target_network)
		{
			ck.add_params("target", ac_.target_params());
		}
		ck.add_adam("opt_model", opt_model_);
		ck.add_adam("opt_actor", opt_actor_);
		ck.add_adam("opt_critic", opt_critic_);
		ck.meta["config"] = cfg_.to_json();
		ck.meta["env_steps"] = env_steps_;
		ck.meta["gradient_steps"] = grad_steps_;
		ck.meta["episodes"] = episodes_;
		ck.meta["metrics_lines"] = metrics_lines_;
		ck.meta["event_lines"] = event_lines_;
		ck.meta["freeze_ok"] = freeze_ok_;
		ck.meta["rng"] = {{"init", rng_state(rng_.init)}, {"env", rng_state(rng_.env)}, {"sample", rng_state(rng_.sample)},
			{"noise", rng_state(rng_.noise)}, {"explore", rng_state(rng_.explore)}};
		nlohmann::json evals = nlohmann::json::array();
		for (const auto& e : evals_)
		{
			auto j = e.to_json();
			j.erase("wall_clock"); // keeps the digest a function of the learning state only
			evals.push_back(j);
		}
		ck.meta["evals"] = evals;
		return ck;
	}

	/// Loads parameters and optimizer state; with `full`, also counters and generator states.
	void restore(const Checkpoint& ck, bool full = true)
	{
		ck.restore_params("model", model_.params());
		ck.restore_params("actor", ac_.actor_params());
		ck.restore_params("critic", ac_.critic_params());
		if (cfg_.target_network)
		{
			ck.restore_params("target", ac_.target_params());
		}
		ck.restore_adam("opt_model", opt_model_);
		ck.restore_adam("opt_actor", opt_actor_);
		ck.restore_adam("opt_critic", opt_critic_);
		if (!full)
		{
			return;
		}
		env_steps_ = ck.meta.at("env_steps");
		grad_steps_ = ck.meta.at("gradient_steps");
		episodes_ = ck.meta.at("episodes");
		metrics_lines_ = ck.meta.at("metrics_lines");
		event_lines_ = ck.meta.at("event_lines");
		freeze_ok_ = ck.meta.at("freeze_ok");
		const auto& rng = ck.meta.at("rng");
		rng_.init = rng_from_state(rng.at("init"));
		rng_.env = rng_from_state(rng.at("env"));
		rng_.sample = rng_from_state(rng.at("sample"));
		rng_.noise = rng_from_state(rng.at("noise"));
		rng_.explore = rng_from_state(rng.at("explore"));
		evals_.clear();
		for (const auto& e : ck.meta.at("evals"))
		{
			evals_.push_back(row_from_json(e));
		}
	}

	void save(const std::filesystem::path& dir) const
	{
		save_checkpoint(checkpoint(), dir);
	}

	static MetricsRow row_from_json(const nlohmann::json& j)
	{
		MetricsRow r;
		r.kind = j.at("kind");
		r.env_step = j.at("env_step");
		r.gradient_step = j.at("gradient_step");
		r.episode = j.at("episode");
		r.episode_return = j.at("episode_return");
		r.episode_length = j.at("episode_length");
		r.obs_loss = j.at("obs_loss");
		r.reward_loss = j.at("reward_loss");
		r.kl = j.at("kl");
		r.discount_loss = j.at("discount_loss");
		r.model_loss = j.at("model_loss");
		r.actor_loss = j.at("actor_loss");
		r.critic_loss = j.at("critic_loss");
		r.mean_target = j.at("mean_target");
		r.model_grad_norm = j.at("model_grad_norm");
		r.wall_clock = j.value("wall_clock", 0.0);
		return r;
	}

	static std::vector<MetricsRow> read_metrics(const std::filesystem::path& path)
	{
		std::vector<MetricsRow> rows;
		std::ifstream in(path);
		std::string line;
		while (std::getline(in, line))
		{
			if (!line.empty())
			{
				rows.push_back(row_from_json(nlohmann::json::parse(line)));
			}
		}
		return rows;
	}

	/// Writes metrics.csv next to metrics.jsonl.
	static void export_csv(const std::filesystem::path& jsonl, const std::filesystem::path& csv)
	{
		std::ofstream out(csv);
		const auto& cols = MetricsRow::columns();
		for (std::size_t i = 0; i < cols.size(); ++i)
		{
			out << (i ? "," : "") << cols[i];
		}
		out << '\n';
		for (const auto& row : read_metrics(jsonl))
		{
			const auto j = row.to_json();
			for (std::size_t i = 0; i < cols.size(); ++i)
			{
				out << (i ? "," : "");
				const auto& v = j.at(cols[i]);
				if (v.is_string())
				{
					out << v.get<std::string>();
				}
				else
				{
					out << v.dump();
				}
			}
			out << '\n';
		}
	}

	/// Chooses an action from a filtered model state.
	Tensor<float> act(const ModelState<float>& state, bool train, double epsilon)
	{
		Tensor<float> action;
		if (cfg_.behavior == "cem")
		{
			CemOptions opt;
			opt.horizon = cfg_.horizon;
			opt.iterations = cfg_.cem_iterations;
			opt.candidates = cfg_.cem_candidates;
			opt.top_k = cfg_.cem_top_k;
			opt.gamma = cfg_.gamma;
			auto score = [&](const Tensor<float>& seqs) { return score_with_model(model_, state, seqs, cfg_.gamma); };
			action = plan_cem<float>(score, cfg_.action_dim(), opt, rng_.explore);
			if (cfg_.discrete())
			{
				action = one_hot_argmax(action);
			}
		}
		else
		{
			action = ac_.policy_act(state, ActorCritic<float>::Mode::Eval, Tensor<float>()).reshape({cfg_.action_dim()});
		}
		if (!train)
		{
			return action;
		}
		if (cfg_.discrete())
		{
			std::uniform_real_distribution<double> u(0.0, 1.0);
			if (u(rng_.explore) < epsilon)
			{
				action.fill(0.0f);
				action[std::uniform_int_distribution<int>(0, cfg_.action_dim() - 1)(rng_.explore)] = 1.0f;
			}
			return action;
		}
		std::normal_distribution<double> normal(0.0, cfg_.expl_noise);
		for (auto& v : action.values())
		{
			v = static_cast<float>(std::clamp(static_cast<double>(v) + normal(rng_.explore), -1.0, 1.0));
		}
		return action;
	}

private:
	static Config validated(Config c)
	{
		c.validate();
		return c;
	}

	std::unique_ptr<envs::Env> make_env() const
	{
		return envs::make_env(cfg_.env, cfg_.image_size, cfg_.channels, cfg_.action_repeat);
	}

	AdamOptions adam(double lr) const
	{
		AdamOptions o;
		o.lr = lr;
		o.eps = cfg_.adam_eps;
		o.clip_norm = cfg_.grad_clip;
		return o;
	}

	static Tensor<float> standard_normal_tensor(Shape shape, std::mt19937_64& rng)
	{
		std::normal_distribution<double> normal;
		Tensor<float> t(std::move(shape));
		for (auto& v : t.values())
		{
			v = static_cast<float>(normal(rng));
		}
		return t;
	}

	static Tensor<float> one_hot_argmax(const Tensor<float>& x)
	{
		Tensor<float> out(x.shape());
		std::size_t best = 0;
		for (std::size_t i = 1; i < x.size(); ++i)
		{
			if (x[i] > x[best])
			{
				best = i;
			}
		}
		out[best] = 1.0f;
		return out;
	}

	static std::uint64_t param_digest(const nn::ParamSet<float>& params)
	{
		std::uint64_t h = fnv1a(nullptr, 0);
		for (const auto& p : params.items())
		{
			h = fnv1a(p.var.value().data(), p.var.size() * sizeof(float), h);
		}
		return h;
	}

	static void ensure_finite(double v, const char* what)
	{
		if (!std::isfinite(v))
		{
			throw NonFiniteError(std::string(what) + " is not finite");
		}
	}

	/// Runs one episode, filtering the posterior online. `choose(state)` picks each action from the state that
	/// has seen the current observation; the state starts from zeros every episode.
	template <class Choose>
	EpisodeResult run_episode(Choose&& choose, bool filter, std::optional<std::uint64_t> env_seed = std::nullopt)
	{
		const std::uint64_t seed = env_seed ? *env_seed : rng_.env();
		auto obs = env_->reset(seed);
		data::EpisodeBuilder builder(*env_, seed, obs);
		EpisodeResult result;
		ad::NoGradGuard guard;
		auto state = model_.initial_state(1);
		Tensor<float> prev_action({1, cfg_.action_dim()});
		const Tensor<float> zero({1, cfg_.stoch});
		envs::StepResult step;
		do
		{
			if (filter)
			{
				const auto quantized = builder.episode().frame(builder.episode().length() - 1);
				state = model_.posterior_step(state, ad::Var<float>::constant(prev_action),
											quantized.reshape({1, cfg_.image_size, cfg_.image_size, cfg_.channels}), zero)
							.state;
			}
			const Tensor<float> action = choose(state);
			step = env_->step(action);
			builder.add(action, step);
			result.total_return += step.reward;
			result.sim_steps += step.sim_steps;
			++result.decisions;
			prev_action = action.reshape({1, cfg_.action_dim()});
		} while (!step.done);
		result.terminated = step.terminal;
		result.episode = builder.release();
		return result;
	}

	void add_episode(EpisodeResult result)
	{
		env_steps_ += result.sim_steps;
		++episodes_;
		data_.add(std::move(result.episode));
	}

	void accumulate(MetricsRow& acc, const MetricsRow& row, int n)
	{
		acc.obs_loss += row.obs_loss / n;
		acc.reward_loss += row.reward_loss / n;
		acc.kl += row.kl / n;
		acc.discount_loss += row.discount_loss / n;
		acc.model_loss += row.model_loss / n;
		acc.actor_loss += row.actor_loss / n;
		acc.critic_loss += row.critic_loss / n;
		acc.mean_target += row.mean_target / n;
		acc.model_grad_norm += row.model_grad_norm / n;
	}

	void emit(const MetricsRow& row)
	{
		emit_unchecked(row);
		if (!row.all_finite())
		{
			throw NonFiniteError("non-finite metrics at gradient step " + std::to_string(row.gradient_step));
		}
	}

	void emit_unchecked(const MetricsRow& row)
	{
		if (sink_)
		{
			sink_(row);
		}
		if (!logdir_.empty())
		{
			std::ofstream out(logdir_ / "metrics.jsonl", std::ios::app);
			out << row.to_json().dump() << '\n';
			++metrics_lines_;
		}
	}

	void event(const std::string& what)
	{
		events_.push_back(what);
		if (!logdir_.empty())
		{
			std::ofstream out(logdir_ / "events.log", std::ios::app);
			out << what << '\n';
			++event_lines_;
		}
	}

	double elapsed() const
	{
		return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
	}

	void write_config() const
	{
		const auto path = logdir_ / "config.json";
		const auto tmp = logdir_ / "config.json.tmp";
		{
			std::ofstream out(tmp);
			out << cfg_.to_json().dump(2) << '\n';
		}
		std::filesystem::rename(tmp, path);
	}

	void persist_episodes() const
	{
		if (!logdir_.empty())
		{
			data_.save(logdir_ / "episodes");
		}
	}

	static void truncate_lines(const std::filesystem::path& path, long lines)
	{
		std::vector<std::string> kept;
		{
			std::ifstream in(path);
			std::string line;
			while (static_cast<long>(kept.size()) < lines && std::getline(in, line))
			{
				kept.push_back(line);
			}
		}
		std::ofstream out(path, std::ios::trunc);
		for (const auto& l : kept)
		{
			out << l << '\n';
		}
	}

	bool resume()
	{
		const auto dir = logdir_ / "checkpoints" / "latest";
		if (!std::filesystem::exists(dir / "manifest.json"))
		{
			return false;
		}
		const auto ck = load_checkpoint(dir);
		if (ck.meta.at("config") != cfg_.to_json())
		{
			throw ConfigError("logdir " + logdir_.string() + " holds a run with a different config");
		}
		restore(ck, true);
		data_ = data::EpisodeDataset::load(logdir_ / "episodes", static_cast<std::size_t>(episodes_));
		truncate_lines(logdir_ / "metrics.jsonl", metrics_lines_);
		truncate_lines(logdir_ / "events.log", event_lines_);
		// wall_clock keeps counting active training time across interruptions
		const auto rows = read_metrics(logdir_ / "metrics.jsonl");
		if (!rows.empty())
		{
			start_ = std::chrono::steady_clock::now() -
				std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(rows.back().wall_clock));
		}
		return true;
	}

	Config cfg_;
	std::filesystem::path logdir_;
	RngStreams rng_;
	std::unique_ptr<envs::Env> env_;
	WorldModel<float> model_;
	ActorCritic<float> ac_;
	Adam<float> opt_model_;
	Adam<float> opt_actor_;
	Adam<float> opt_critic_;
	data::EpisodeDataset data_;
	std::chrono::steady_clock::time_point start_;
	MetricsSink sink_;
	std::function<bool(const MetricsRow&)> stop_;
	std::vector<std::string> events_;
	std::vector<MetricsRow> evals_;
	long env_steps_ = 0;
	long grad_steps_ = 0;
	int episodes_ = 0;
	long metrics_lines_ = 0;
	long event_lines_ = 0;
	bool freeze_ok_ = true;
};

struct HorizonResult
{
	std::string variant;
	int horizon = 0;
	std::vector<double> returns; // final evaluation return per seed
	double mean() const
	{
		double s = 0;
		for (double r : returns)
		{
			s += r;
		}
		return returns.empty() ? 0.0 : s / returns.size();
	}
};

/// Trains one agent per (variant, horizon, seed) from identical seeds and reports the final evaluation return,
/// averaged over `final_episodes` noise-free episodes.
inline std::vector<HorizonResult> compare_horizons(const Config& base, const std::vector<int>& horizons,
	const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds, int final_episodes,
	const std::function<void(const std::string&)>& progress = {})
{
	std::vector<HorizonResult> table;
	for (const auto& variant : variants)
	{
		for (int h : horizons)
		{
			HorizonResult row{variant, h, {}};
			for (auto seed : seeds)
			{
				Config c = base;
				c.behavior = variant;
				c.horizon = h;
				c.seed = seed;
				Trainer trainer(c);
				trainer.run();
				row.returns.push_back(trainer.evaluate(final_episodes));
				if (progress)
				{
					progress(variant + " H=" + std::to_string(h) + " seed=" + std::to_string(seed) +
						" return=" + std::to_string(row.returns.back()));
				}
			}
			table.push_back(row);
		}
	}
	return table;
}

} // namespace dreamer
