#include "dreamer/cli.hpp"

#include <CLI11.hpp>
#include <malloc.h>

#include <cstdlib>
#include <iostream>

using namespace dreamer;
using namespace dreamer::cli;

namespace {

void add_config_flags(CLI::App* cmd, ConfigArgs& c)
{
	cmd->add_option("--config", c.config_file, "JSON config file (flat keys)");
	cmd->add_option("--profile", c.profile, "desk, paper or discrete");
	cmd->add_option("--env", c.env, "pendulum, sparse_pendulum, chain or grid_cliff");
	cmd->add_option("--repr", c.repr, "recon, nce or reward");
	cmd->add_option("--behavior", c.behavior, "dreamer, no_value or cem");
	cmd->add_option("--seed", c.seed, "run seed");
	cmd->add_option("--steps", c.steps, "environment step budget");
	cmd->add_option("--set", c.overrides, "config override key=value (repeatable)");
}

std::string default_logdir()
{
	const char* v = std::getenv("LOGDIR");
	return v ? v : "";
}

} // namespace

int main(int argc, char** argv)
{
	// Large tensors are allocated and freed every step; keep them on the heap instead of fresh mappings.
	mallopt(M_MMAP_THRESHOLD, 1 << 30);
	mallopt(M_TRIM_THRESHOLD, 1 << 30);

	CLI::App app{"Latent imagination agent: training, evaluation and diagnostics"};
	app.require_subcommand(1);
	app.set_version_flag("--version", DREAMER_VERSION);
	bool verbose = false;
	app.add_flag("-v,--verbose", verbose, "debug logging");

	TrainArgs train;
	train.logdir = default_logdir();
	auto* train_cmd = app.add_subcommand("train", "train an agent");
	add_config_flags(train_cmd, train.config);
	train_cmd->add_option("--logdir", train.logdir, "run directory (default $LOGDIR)");
	train_cmd->add_flag("--resume", train.resume, "continue the run in --logdir from its latest checkpoint");

	EvalArgs eval;
	eval.logdir = default_logdir();
	auto* eval_cmd = app.add_subcommand("eval", "noise-free evaluation of a checkpoint");
	eval_cmd->add_option("--logdir", eval.logdir, "run directory (default $LOGDIR)");
	eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint directory (default <logdir>/checkpoints/latest)");
	eval_cmd->add_option("--episodes", eval.episodes, "number of episodes")->check(CLI::PositiveNumber);
	eval_cmd->add_option("--seed", eval.seed, "evaluation seed");
	eval_cmd->add_option("--dump", eval.dump, "write the evaluated episodes to this new directory");

	GradcheckArgs grad;
	auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every training loss");
	grad_cmd->add_option("--seed", grad.seed, "initialization seed");
	grad_cmd->add_option("--tolerance", grad.tolerance, "relative error tolerance");
	grad_cmd->add_option("--min-fraction", grad.min_fraction, "required fraction of coordinates within tolerance");
	grad_cmd->add_flag("--inject-fault", grad.inject_fault, "corrupt the analytic gradients (must fail)");

	ImagineArgs imagine;
	imagine.logdir = default_logdir();
	auto* imagine_cmd = app.add_subcommand("imagine", "open-loop video and reward prediction on a held-out episode");
	imagine_cmd->add_option("--logdir", imagine.logdir, "run directory (default $LOGDIR)");
	imagine_cmd->add_option("--checkpoint", imagine.checkpoint, "checkpoint directory");
	imagine_cmd->add_option("--out", imagine.out, "new output directory")->required();
	imagine_cmd->add_option("--context", imagine.context, "observed frames");
	imagine_cmd->add_option("--horizon", imagine.horizon, "predicted frames");
	imagine_cmd->add_option("--seed", imagine.seed, "held-out episode seed");
	imagine_cmd->add_flag("--random-actions", imagine.random_actions, "drive the episode with random actions");

	CompareArgs compare;
	auto* compare_cmd = app.add_subcommand("compare-horizons", "final return per behavior variant and horizon");
	add_config_flags(compare_cmd, compare.config);
	compare_cmd->add_option("--horizons", compare.horizons, "imagination horizons")->delimiter(',');
	compare_cmd->add_option("--variants", compare.variants, "dreamer, no_value, cem")->delimiter(',');
	compare_cmd->add_option("--seeds", compare.seeds, "seeds")->delimiter(',');
	compare_cmd->add_option("--episodes", compare.episodes, "final evaluation episodes per run");
	compare_cmd->add_option("--out", compare.out, "new output directory")->required();

	try
	{
		app.parse(argc, argv);
	}
	catch (const CLI::ParseError& e)
	{
		const int code = app.exit(e);
		return code == 0 ? exit_ok : exit_usage;
	}
	spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

	try
	{
		if (*train_cmd)
		{
			return cmd_train(train, std::cout);
		}
		if (*eval_cmd)
		{
			return cmd_eval(eval, std::cout);
		}
		if (*grad_cmd)
		{
			return cmd_gradcheck(grad, std::cout);
		}
		if (*imagine_cmd)
		{
			return cmd_imagine(imagine, std::cout);
		}
		if (*compare_cmd)
		{
			return cmd_compare_horizons(compare, std::cout);
		}
	}
	catch (const ConfigError& e)
	{
		std::cerr << "config error: " << e.what() << "\n";
		return exit_usage;
	}
	catch (const UsageError& e)
	{
		std::cerr << "usage error: " << e.what() << "\n";
		return exit_usage;
	}
	catch (const std::exception& e)
	{
		std::cerr << "error: " << e.what() << "\n";
		return exit_failure;
	}
	return exit_usage;
}
