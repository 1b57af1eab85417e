#pragma once

#include "dreamer/gradcheck_suite.hpp"
#include "dreamer/io.hpp"
#include "dreamer/trainer.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#ifndef DREAMER_VERSION
#define DREAMER_VERSION "0.1.0"
#endif

namespace dreamer::cli {

namespace fs = std::filesystem;

enum ExitCode : int
{
	exit_ok = 0,
	exit_usage = 1,
	exit_failure = 2,
	exit_verification = 3,
};

class UsageError : public std::invalid_argument
{
public:
	using std::invalid_argument::invalid_argument;
};

inline std::string utc_timestamp()
{
	const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
	std::tm tm{};
	gmtime_r(&now, &tm);
	std::ostringstream os;
	os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
	return os.str();
}

/// Writes `text` to a sibling temporary file and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& text)
{
	const fs::path tmp = path.string() + ".tmp";
	io::write_text(tmp, text);
	fs::rename(tmp, path);
}

/// Describes a training run. Written once at start; completion is recorded separately in run_end.json.
struct RunManifest
{
	nlohmann::json config;
	std::string version = DREAMER_VERSION;
	std::uint64_t seed = 0;
	std::string started;
	nlohmann::json artifacts = {{"config", "config.json"}, {"metrics", "metrics.jsonl"}, {"metrics_csv", "metrics.csv"},
		{"events", "events.log"}, {"checkpoints", "checkpoints/"}, {"episodes", "episodes/"}};

	nlohmann::json to_json() const
	{
		return {{"config", config}, {"version", version}, {"seed", seed}, {"started", started}, {"artifacts", artifacts}};
	}
};

/// Options that assemble a Config: a JSON file or profile, named flags, then free-form key=value overrides.
struct ConfigArgs
{
	std::string config_file;
	std::optional<std::string> profile;
	std::optional<std::string> env;
	std::optional<std::string> repr;
	std::optional<std::string> behavior;
	std::optional<std::uint64_t> seed;
	std::optional<long> steps;
	std::vector<std::string> overrides; // key=value, value parsed as JSON when possible

	bool empty() const
	{
		return config_file.empty() && !profile && !env && !repr && !behavior && !seed && !steps && overrides.empty();
	}
};

inline Config build_config(const ConfigArgs& a)
{
	nlohmann::json j = nlohmann::json::object();
	if (!a.config_file.empty())
	{
		std::ifstream in(a.config_file);
		if (!in)
		{
			throw ConfigError("cannot read config file " + a.config_file);
		}
		try
		{
			j = nlohmann::json::parse(in);
		}
		catch (const nlohmann::json::exception& e)
		{
			throw ConfigError("config file " + a.config_file + " is not valid JSON: " + e.what());
		}
		if (!j.is_object())
		{
			throw ConfigError("config file " + a.config_file + " must hold a JSON object");
		}
	}
	if (a.profile)
	{
		j["profile"] = *a.profile; // the file's other keys still apply on top of the chosen profile
	}
	if (a.env)
	{
		j["env"] = *a.env;
	}
	if (a.repr)
	{
		j["repr"] = *a.repr;
	}
	if (a.behavior)
	{
		j["behavior"] = *a.behavior;
	}
	if (a.seed)
	{
		j["seed"] = *a.seed;
	}
	if (a.steps)
	{
		j["steps"] = *a.steps;
	}
	for (const auto& kv : a.overrides)
	{
		const auto eq = kv.find('=');
		if (eq == std::string::npos || eq == 0)
		{
			throw ConfigError("override '" + kv + "' must look like key=value");
		}
		const auto key = kv.substr(0, eq);
		const auto text = kv.substr(eq + 1);
		auto value = nlohmann::json::parse(text, nullptr, false);
		j[key] = value.is_discarded() ? nlohmann::json(text) : value;
	}
	return config_from_json(j);
}

inline bool non_empty_dir(const fs::path& p)
{
	return fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

/// True when `inner` lies inside (or equals) `outer`.
inline bool within(const fs::path& inner, const fs::path& outer)
{
	const auto a = fs::weakly_canonical(inner).lexically_normal();
	const auto b = fs::weakly_canonical(outer).lexically_normal();
	const auto rel = a.lexically_relative(b);
	return !rel.empty() && *rel.begin() != "..";
}

inline void prepare_output_dir(const fs::path& out, const fs::path& run_dir)
{
	if (out.empty())
	{
		throw UsageError("--out is required");
	}
	if (!run_dir.empty() && within(out, run_dir))
	{
		throw UsageError("output directory " + out.string() + " lies inside the run directory " + run_dir.string() +
			"; runs are never modified after the fact");
	}
	if (non_empty_dir(out))
	{
		throw UsageError("output directory " + out.string() + " already exists and is not empty");
	}
	fs::create_directories(out);
}

inline std::uint64_t episode_seed(std::uint64_t seed, int index)
{
	std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6576616cu,
		static_cast<std::uint32_t>(index)};
	std::mt19937_64 rng(seq);
	return rng();
}

inline Config run_config(const fs::path& run_dir)
{
	const auto path = run_dir / "config.json";
	if (!fs::exists(path))
	{
		throw UsageError("no config.json in " + run_dir.string());
	}
	return load_config(path.string());
}

// train ----------------------------------------------------------------------------------------------------------

struct TrainArgs
{
	ConfigArgs config;
	fs::path logdir;
	bool resume = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out)
{
	if (a.logdir.empty())
	{
		throw UsageError("--logdir is required (or set LOGDIR)");
	}
	Config cfg;
	if (a.resume)
	{
		if (!a.config.empty())
		{
			throw UsageError("--resume takes its configuration from the run's config.json; drop the config flags");
		}
		cfg = run_config(a.logdir);
	}
	else
	{
		if (non_empty_dir(a.logdir))
		{
			throw UsageError("log directory " + a.logdir.string() + " is not empty; pass --resume to continue that run");
		}
		cfg = build_config(a.config);
	}
	fs::create_directories(a.logdir);
	const auto manifest_path = a.logdir / "manifest.json";
	if (!fs::exists(manifest_path))
	{
		RunManifest m;
		m.config = cfg.to_json();
		m.seed = cfg.seed;
		m.started = utc_timestamp();
		write_atomic(manifest_path, m.to_json().dump(2) + "\n");
	}
	spdlog::info("training {} / {} / {} seed {} for {} env steps into {}", cfg.env, cfg.repr, cfg.behavior, cfg.seed,
		cfg.steps, a.logdir.string());
	Trainer trainer(cfg, a.logdir);
	trainer.run();
	Trainer::export_csv(a.logdir / "metrics.jsonl", a.logdir / "metrics.csv");
	const auto& evals = trainer.eval_history();
	nlohmann::json end = {{"finished", utc_timestamp()}, {"env_steps", trainer.env_steps()},
		{"gradient_steps", trainer.gradient_steps()}, {"episodes", trainer.episodes()}};
	if (!evals.empty())
	{
		end["final_eval_return"] = evals.back().episode_return;
	}
	write_atomic(a.logdir / "run_end.json", end.dump(2) + "\n");
	out << "objective " << to_string(cfg.objective()) << "\n";
	out << "env_steps " << trainer.env_steps() << " gradient_steps " << trainer.gradient_steps() << " episodes "
		<< trainer.episodes() << "\n";
	if (!evals.empty())
	{
		out << "final_eval_return " << evals.back().episode_return << "\n";
	}
	return exit_ok;
}

// eval -----------------------------------------------------------------------------------------------------------

struct EvalArgs
{
	fs::path logdir;
	fs::path checkpoint; // defaults to <logdir>/checkpoints/latest
	int episodes = 10;
	std::uint64_t seed = 0;
	fs::path dump; // optional directory for the evaluated episodes
};

struct EvalResult
{
	std::vector<double> returns;
	double mean = 0;
	double stddev = 0;
	int max_return = 0; // episode length in simulator steps: rewards are bounded by 1 per step
};

inline std::unique_ptr<Trainer> restored_trainer(const fs::path& logdir, const fs::path& checkpoint, std::uint64_t seed)
{
	auto cfg = run_config(logdir);
	cfg.seed = seed;
	const auto ck = load_checkpoint(checkpoint.empty() ? logdir / "checkpoints" / "latest" : checkpoint);
	auto trainer = std::make_unique<Trainer>(cfg);
	trainer->restore(ck, false);
	return trainer;
}

inline EvalResult evaluate_run(const EvalArgs& a)
{
	if (a.logdir.empty())
	{
		throw UsageError("--logdir is required (or set LOGDIR)");
	}
	if (a.episodes < 1)
	{
		throw UsageError("--episodes must be at least 1");
	}
	if (!a.dump.empty())
	{
		prepare_output_dir(a.dump, a.logdir);
	}
	auto trainer = restored_trainer(a.logdir, a.checkpoint, a.seed);
	EvalResult r;
	for (int i = 0; i < a.episodes; ++i)
	{
		const auto ep = trainer->interact(false, episode_seed(a.seed, i));
		r.returns.push_back(ep.total_return);
		r.max_return = std::max(r.max_return, ep.sim_steps);
		if (!a.dump.empty())
		{
			data::save_episode(ep.episode, a.dump / data::EpisodeDataset::episode_filename(static_cast<std::size_t>(i)));
		}
	}
	for (double v : r.returns)
	{
		r.mean += v / static_cast<double>(r.returns.size());
	}
	for (double v : r.returns)
	{
		r.stddev += (v - r.mean) * (v - r.mean) / static_cast<double>(r.returns.size());
	}
	r.stddev = std::sqrt(r.stddev);
	return r;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out)
{
	const auto r = evaluate_run(a);
	for (std::size_t i = 0; i < r.returns.size(); ++i)
	{
		out << "episode " << i << " return " << r.returns[i] << "\n";
	}
	out << "mean " << r.mean << " stddev " << r.stddev << " episodes " << r.returns.size() << "\n";
	return exit_ok;
}

// gradcheck ------------------------------------------------------------------------------------------------------

struct GradcheckArgs
{
	std::uint64_t seed = 0;
	bool inject_fault = false;
	double tolerance = 1e-4;
	double min_fraction = 0.95;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out)
{
	SuiteOptions opt;
	opt.seed = a.seed;
	opt.corrupt = a.inject_fault;
	opt.tolerance = a.tolerance;
	opt.min_fraction = a.min_fraction;
	const auto results = run_gradcheck_suite(opt);
	bool ok = true;
	out << std::left << std::setw(22) << "loss" << std::setw(8) << "coords" << std::setw(16) << "max_rel_error"
		<< std::setw(12) << "within_tol" << "status\n";
	for (const auto& r : results)
	{
		out << std::left << std::setw(22) << r.name << std::setw(8) << r.report.coordinates << std::setw(16)
			<< r.report.max_error << std::setw(12) << r.report.fraction_within << (r.passed ? "pass" : "FAIL") << "\n";
		ok = ok && r.passed;
	}
	out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << a.tolerance << ", required fraction "
		<< a.min_fraction << ")\n";
	return ok ? exit_ok : exit_verification;
}

// imagine --------------------------------------------------------------------------------------------------------

struct ImagineArgs
{
	fs::path logdir;
	fs::path checkpoint;
	fs::path out;
	int context = 5;
	int horizon = 45;
	std::uint64_t seed = 0;
	bool random_actions = false; // drive the held-out episode with uniform random actions instead of the policy
};

struct ImagineResult
{
	double image_mse = 0;         // predicted vs true future frames
	double gray_baseline_mse = 0; // constant image at the mean context intensity vs true future frames
	double reward_correlation = 0;
	int csv_rows = 0;
};

inline double pearson(const std::vector<double>& x, const std::vector<double>& y)
{
	const double n = static_cast<double>(x.size());
	double mx = 0, my = 0;
	for (std::size_t i = 0; i < x.size(); ++i)
	{
		mx += x[i] / n;
		my += y[i] / n;
	}
	double sxy = 0, sxx = 0, syy = 0;
	for (std::size_t i = 0; i < x.size(); ++i)
	{
		sxy += (x[i] - mx) * (y[i] - my);
		sxx += (x[i] - mx) * (x[i] - mx);
		syy += (y[i] - my) * (y[i] - my);
	}
	return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

inline data::Episode random_episode(envs::Env& env, std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	data::EpisodeBuilder b(env, seed, env.reset(seed));
	while (true)
	{
		const auto action = envs::random_action(env, rng);
		const auto step = env.step(action);
		b.add(action, step);
		if (step.done)
		{
			break;
		}
	}
	return b.release();
}

inline Tensor<float> stack_frames(const data::Episode& ep, int begin, int count)
{
	Tensor<float> out({count, ep.image_size, ep.image_size, ep.channels});
	for (int t = 0; t < count; ++t)
	{
		const auto f = ep.frame(begin + t);
		std::copy(f.data(), f.data() + f.size(), out.data() + f.size() * t);
	}
	return out;
}

inline Tensor<float> action_rows(const data::Episode& ep, int begin, int count)
{
	Tensor<float> out({count, ep.action_dim});
	std::copy(ep.actions.begin() + static_cast<std::ptrdiff_t>(begin) * ep.action_dim,
		ep.actions.begin() + static_cast<std::ptrdiff_t>(begin + count) * ep.action_dim, out.data());
	return out;
}

inline ImagineResult imagine_run(const ImagineArgs& a)
{
	if (a.logdir.empty())
	{
		throw UsageError("--logdir is required (or set LOGDIR)");
	}
	if (a.context < 1 || a.horizon < 0)
	{
		throw UsageError("--context must be at least 1 and --horizon non-negative");
	}
	prepare_output_dir(a.out, a.logdir);
	auto trainer = restored_trainer(a.logdir, a.checkpoint, a.seed);
	const auto held_out = episode_seed(a.seed, 1 << 20);
	const data::Episode ep =
		a.random_actions ? random_episode(trainer->env(), held_out) : trainer->interact(false, held_out).episode;
	const int c = a.context;
	const int f = a.horizon;
	if (ep.length() < c + f)
	{
		throw UsageError("held-out episode has " + std::to_string(ep.length()) + " frames, fewer than context + horizon");
	}
	const auto context_frames = stack_frames(ep, 0, c);
	const auto pred = trainer->model().open_loop_predict(context_frames, action_rows(ep, 0, c), action_rows(ep, c, f));
	const int cols = 10;
	io::write_png(a.out / "context.png", io::tile_frames(context_frames, cols));
	io::write_png(a.out / "reconstructions.png", io::tile_frames(pred.reconstructions, cols));
	ImagineResult r;
	if (f > 0)
	{
		const auto truth = stack_frames(ep, c, f);
		io::write_png(a.out / "predicted.png", io::tile_frames(pred.predictions, cols));
		io::write_png(a.out / "true.png", io::tile_frames(truth, cols));
		double gray = 0;
		for (float v : context_frames.values())
		{
			gray += v / static_cast<double>(context_frames.size());
		}
		for (std::size_t i = 0; i < truth.size(); ++i)
		{
			const double d = pred.predictions[i] - truth[i];
			r.image_mse += d * d / static_cast<double>(truth.size());
			r.gray_baseline_mse += (gray - truth[i]) * (gray - truth[i]) / static_cast<double>(truth.size());
		}
	}
	io::CsvWriter csv(a.out / "rewards.csv", {"step", "phase", "predicted_reward", "true_reward"});
	std::vector<double> predicted, actual;
	for (int t = 0; t < c + f; ++t)
	{
		const double p = pred.rewards[static_cast<std::size_t>(t)];
		const double y = ep.rewards[static_cast<std::size_t>(t)];
		csv.row({std::to_string(t), t < c ? "context" : "predicted", io::CsvWriter::number(p), io::CsvWriter::number(y)});
		++r.csv_rows;
		if (t >= c)
		{
			predicted.push_back(p);
			actual.push_back(y);
		}
	}
	r.reward_correlation = pearson(predicted, actual);
	const nlohmann::json summary = {{"context", c}, {"horizon", f}, {"seed", a.seed}, {"image_mse", r.image_mse},
		{"gray_baseline_mse", r.gray_baseline_mse}, {"reward_correlation", r.reward_correlation},
		{"actions", a.random_actions ? "random" : "policy"}};
	write_atomic(a.out / "summary.json", summary.dump(2) + "\n");
	return r;
}

inline int cmd_imagine(const ImagineArgs& a, std::ostream& out)
{
	const auto r = imagine_run(a);
	out << "image_mse " << r.image_mse << " gray_baseline_mse " << r.gray_baseline_mse << " reward_correlation "
		<< r.reward_correlation << " rows " << r.csv_rows << "\n";
	return exit_ok;
}

// compare-horizons -----------------------------------------------------------------------------------------------

struct CompareArgs
{
	ConfigArgs config;
	std::vector<int> horizons = {2, 5, 10, 15};
	std::vector<std::string> variants = {"dreamer", "no_value", "cem"};
	std::vector<std::uint64_t> seeds = {0, 1, 2};
	int episodes = 10;
	fs::path out;
};

inline void write_horizon_table(const std::vector<HorizonResult>& table, const std::vector<std::uint64_t>& seeds,
	const fs::path& out)
{
	std::vector<std::string> header = {"variant", "horizon"};
	for (auto s : seeds)
	{
		header.push_back("seed_" + std::to_string(s));
	}
	header.push_back("mean");
	{
		io::CsvWriter csv(out / "horizons.csv", header);
		for (const auto& row : table)
		{
			std::vector<std::string> cells = {row.variant, std::to_string(row.horizon)};
			for (double v : row.returns)
			{
				cells.push_back(io::CsvWriter::number(v));
			}
			cells.push_back(io::CsvWriter::number(row.mean()));
			csv.row(cells);
		}
	}
	std::vector<io::Series> series;
	for (const auto& row : table)
	{
		auto it = std::find_if(series.begin(), series.end(), [&](const io::Series& s) { return s.label == row.variant; });
		if (it == series.end())
		{
			series.push_back({row.variant, {}, {}});
			it = series.end() - 1;
		}
		it->x.push_back(row.horizon);
		it->y.push_back(row.mean());
	}
	io::write_text(out / "horizons.svg", io::line_chart_svg(series, "Final return vs imagination horizon", "horizon",
		"mean eval return"));
}

inline int cmd_compare_horizons(const CompareArgs& a, std::ostream& out)
{
	const auto cfg = build_config(a.config);
	if (a.horizons.empty() || a.variants.empty() || a.seeds.empty())
	{
		throw UsageError("--horizons, --variants and --seeds must be non-empty");
	}
	for (const auto& v : a.variants)
	{
		if (v != "dreamer" && v != "no_value" && v != "cem")
		{
			throw UsageError("unknown variant '" + v + "' (dreamer, no_value, cem)");
		}
	}
	prepare_output_dir(a.out, {});
	io::write_text(a.out / "config.json", cfg.to_json().dump(2) + "\n");
	const auto table = compare_horizons(cfg, a.horizons, a.variants, a.seeds, a.episodes,
		[](const std::string& line) { spdlog::info("{}", line); });
	write_horizon_table(table, a.seeds, a.out);
	out << std::left << std::setw(10) << "variant" << std::setw(9) << "horizon" << "mean_return\n";
	for (const auto& row : table)
	{
		out << std::left << std::setw(10) << row.variant << std::setw(9) << row.horizon << row.mean() << "\n";
	}
	return exit_ok;
}

} // namespace dreamer::cli
