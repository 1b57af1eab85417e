#pragma once

#include "dreamer/tensor.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamer::envs {

using Image = Tensor<float>;

struct StepResult
{
	Image observation;
	double reward = 0;
	bool terminal = false; // the episode ended by reaching an absorbing state (continue flag 0)
	bool done = false;     // terminal or time limit
	int sim_steps = 1;     // simulator steps consumed
};

/// Pixel-observation environment. Deterministic given the reset seed and the action sequence.
class Env
{
public:
	virtual ~Env() = default;
	virtual std::string id() const = 0;
	virtual int image_size() const = 0;
	virtual int channels() const = 0;
	virtual int action_dim() const = 0;
	virtual bool discrete() const = 0;
	virtual bool can_terminate() const = 0;
	virtual int time_limit() const = 0; // simulator steps per episode
	virtual Image reset(std::uint64_t seed) = 0;
	virtual StepResult step(const Tensor<float>& action) = 0;
	virtual Image render() const = 0;
};

namespace detail {

/// Coverage-based anti-aliased segment of a given width, drawn with max-blending.
inline void draw_segment(Image& img, double x0, double y0, double x1, double y1, double width, float value)
{
	const int w = img.dim(1);
	const int c = img.dim(2);
	const double dx = x1 - x0;
	const double dy = y1 - y0;
	const double len2 = dx * dx + dy * dy;
	const double half = width / 2;
	const int xmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - half - 1)));
	const int xmax = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + half + 1)));
	const int ymin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - half - 1)));
	const int ymax = std::min(img.dim(0) - 1, static_cast<int>(std::ceil(std::max(y0, y1) + half + 1)));
	for (int py = ymin; py <= ymax; ++py)
	{
		for (int px = xmin; px <= xmax; ++px)
		{
			const double cx = px + 0.5;
			const double cy = py + 0.5;
			double t = len2 > 0 ? ((cx - x0) * dx + (cy - y0) * dy) / len2 : 0.0;
			t = std::clamp(t, 0.0, 1.0);
			const double ex = cx - (x0 + t * dx);
			const double ey = cy - (y0 + t * dy);
			const double dist = std::sqrt(ex * ex + ey * ey);
			const double coverage = std::clamp(half + 0.5 - dist, 0.0, 1.0);
			if (coverage > 0)
			{
				for (int ch = 0; ch < c; ++ch)
				{
					float& p = img[(static_cast<std::size_t>(py) * w + px) * c + ch];
					p = std::max(p, static_cast<float>(coverage) * value);
				}
			}
		}
	}
}

inline void fill_rect(Image& img, int x0, int y0, int x1, int y1, float value)
{
	const int w = img.dim(1);
	const int c = img.dim(2);
	for (int y = std::max(0, y0); y < std::min(img.dim(0), y1); ++y)
	{
		for (int x = std::max(0, x0); x < std::min(w, x1); ++x)
		{
			for (int ch = 0; ch < c; ++ch)
			{
				img[(static_cast<std::size_t>(y) * w + x) * c + ch] = value;
			}
		}
	}
}

inline void check_image_shape(int size, int channels)
{
	if ((size != 32 && size != 64) || (channels != 1 && channels != 3))
	{
		throw std::invalid_argument("image must be 32 or 64 pixels wide with 1 or 3 channels");
	}
}

} // namespace detail

struct PendulumState
{
	double theta = 0; // 0 is upright
	double omega = 0;
};

/// Torque-limited pendulum swing-up rendered as a line. Reward (cos theta + 1) / 2, or the sparse variant
/// 1[cos theta > 0.95].
class PixelPendulum : public Env
{
public:
	static constexpr double g = 10.0;
	static constexpr double m = 1.0;
	static constexpr double l = 1.0;
	static constexpr double dt = 0.05;
	static constexpr double max_speed = 8.0;
	static constexpr double max_torque = 2.0;

	explicit PixelPendulum(bool sparse = false, int size = 32, int channels = 1, int limit = 200)
		: sparse_(sparse), size_(size), channels_(channels), limit_(limit)
	{
		detail::check_image_shape(size, channels);
	}

	std::string id() const override { return sparse_ ? "sparse_pendulum" : "pendulum"; }
	int image_size() const override { return size_; }
	int channels() const override { return channels_; }
	int action_dim() const override { return 1; }
	bool discrete() const override { return false; }
	bool can_terminate() const override { return false; }
	int time_limit() const override { return limit_; }

	Image reset(std::uint64_t seed) override
	{
		std::mt19937_64 rng(seed);
		std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
		std::uniform_real_distribution<double> speed(-1.0, 1.0);
		state_.theta = angle(rng);
		state_.omega = speed(rng);
		t_ = 0;
		return render();
	}

	void set_state(PendulumState s)
	{
		state_ = s;
		t_ = 0;
	}
	const PendulumState& state() const { return state_; }

	double reward_at(double theta) const
	{
		const double c = std::cos(theta);
		return sparse_ ? (c > 0.95 ? 1.0 : 0.0) : (c + 1.0) / 2.0;
	}

	StepResult step(const Tensor<float>& action) override
	{
		double a = action[0];
		if (!(a >= -1.0 && a <= 1.0))
		{
			spdlog::warn("pendulum: action {} outside [-1, 1], clamped", a);
			a = std::isnan(a) ? 0.0 : std::clamp(a, -1.0, 1.0);
		}
		const double u = max_torque * a;
		const double acc = 3 * g / (2 * l) * std::sin(state_.theta) + 3.0 / (m * l * l) * u;
		state_.omega = std::clamp(state_.omega + acc * dt, -max_speed, max_speed);
		state_.theta = std::remainder(state_.theta + state_.omega * dt, 2 * std::numbers::pi);
		++t_;
		StepResult r;
		r.reward = reward_at(state_.theta);
		r.done = t_ >= limit_;
		r.observation = render();
		return r;
	}

	Image render() const override { return render_state(state_.theta); }

	Image render_state(double theta) const
	{
		Image img({size_, size_, channels_});
		const double cx = size_ / 2.0;
		const double cy = size_ / 2.0;
		const double len = 0.4 * size_;
		detail::draw_segment(img, cx, cy, cx + len * std::sin(theta), cy - len * std::cos(theta), 2.0, 1.0f);
		return img;
	}

private:
	bool sparse_;
	int size_;
	int channels_;
	int limit_;
	PendulumState state_;
	int t_ = 0;
};

/// Corridor of cells where only the last cell pays. A continuous action moves right above 1/3, left below -1/3,
/// and stays otherwise. Reaching the goal ends the episode.
class DelayedRewardChain : public Env
{
public:
	static constexpr int cells = 30;
	static constexpr int goal = cells - 1;

	explicit DelayedRewardChain(int size = 32, int channels = 1, int limit = 100) : size_(size), channels_(channels), limit_(limit)
	{
		detail::check_image_shape(size, channels);
	}

	std::string id() const override { return "chain"; }
	int image_size() const override { return size_; }
	int channels() const override { return channels_; }
	int action_dim() const override { return 1; }
	bool discrete() const override { return false; }
	bool can_terminate() const override { return true; }
	int time_limit() const override { return limit_; }

	static int move(int pos, double a)
	{
		if (a > 1.0 / 3.0)
		{
			return std::min(goal, pos + 1);
		}
		if (a < -1.0 / 3.0)
		{
			return std::max(0, pos - 1);
		}
		return pos;
	}

	Image reset(std::uint64_t seed) override
	{
		std::mt19937_64 rng(seed);
		pos_ = std::uniform_int_distribution<int>(0, goal - 1)(rng);
		t_ = 0;
		return render();
	}

	void set_position(int p)
	{
		pos_ = p;
		t_ = 0;
	}
	int position() const { return pos_; }

	StepResult step(const Tensor<float>& action) override
	{
		double a = action[0];
		if (!(a >= -1.0 && a <= 1.0))
		{
			spdlog::warn("chain: action {} outside [-1, 1], clamped", a);
			a = std::isnan(a) ? 0.0 : std::clamp(a, -1.0, 1.0);
		}
		pos_ = move(pos_, a);
		++t_;
		StepResult r;
		r.terminal = pos_ == goal;
		r.reward = r.terminal ? 1.0 : 0.0;
		r.done = r.terminal || t_ >= limit_;
		r.observation = render();
		return r;
	}

	Image render() const override
	{
		Image img({size_, size_, channels_});
		const int s = size_ / 32;
		detail::fill_rect(img, s * (1 + goal), s * 24, s * (2 + goal), s * 28, 0.5f);
		detail::fill_rect(img, s * (1 + pos_), s * 8, s * (2 + pos_), s * 24, 1.0f);
		return img;
	}

private:
	int size_;
	int channels_;
	int limit_;
	int pos_ = 0;
	int t_ = 0;
};

/// 6x6 grid with a cliff along the bottom row between start and goal. One-hot actions: up, right, down, left.
class GridCliff : public Env
{
public:
	static constexpr int rows = 6;
	static constexpr int cols = 6;
	static constexpr std::array<int, 2> start{5, 0};
	static constexpr std::array<int, 2> goal{5, 5};

	explicit GridCliff(int size = 32, int channels = 1, int limit = 50) : size_(size), channels_(channels), limit_(limit)
	{
		detail::check_image_shape(size, channels);
	}

	std::string id() const override { return "grid_cliff"; }
	int image_size() const override { return size_; }
	int channels() const override { return channels_; }
	int action_dim() const override { return 4; }
	bool discrete() const override { return true; }
	bool can_terminate() const override { return true; }
	int time_limit() const override { return limit_; }

	static bool is_cliff(int r, int c) { return r == 5 && c >= 1 && c <= 4; }
	static bool is_goal(int r, int c) { return r == goal[0] && c == goal[1]; }

	static std::array<int, 2> move(std::array<int, 2> p, int action)
	{
		static constexpr int dr[4] = {-1, 0, 1, 0};
		static constexpr int dc[4] = {0, 1, 0, -1};
		const int r = std::clamp(p[0] + dr[action], 0, rows - 1);
		const int c = std::clamp(p[1] + dc[action], 0, cols - 1);
		return {r, c};
	}

	Image reset(std::uint64_t) override
	{
		pos_ = start;
		t_ = 0;
		return render();
	}

	void set_position(std::array<int, 2> p)
	{
		pos_ = p;
		t_ = 0;
	}
	std::array<int, 2> position() const { return pos_; }

	StepResult step(const Tensor<float>& action) override
	{
		if (action.size() != 4)
		{
			throw std::invalid_argument("grid_cliff expects a 4-way one-hot action");
		}
		int a = 0;
		for (int i = 1; i < 4; ++i)
		{
			if (action[i] > action[a])
			{
				a = i;
			}
		}
		pos_ = move(pos_, a);
		++t_;
		StepResult r;
		const bool cliff = is_cliff(pos_[0], pos_[1]);
		const bool at_goal = is_goal(pos_[0], pos_[1]);
		r.terminal = cliff || at_goal;
		r.reward = at_goal ? 1.0 : 0.0;
		r.done = r.terminal || t_ >= limit_;
		r.observation = render();
		return r;
	}

	Image render() const override
	{
		Image img({size_, size_, channels_});
		const int cs = size_ / 32 * 5;
		const int off = (size_ - cs * cols) / 2;
		for (int c = 1; c <= 4; ++c)
		{
			detail::fill_rect(img, off + c * cs, off + 5 * cs, off + (c + 1) * cs, off + 6 * cs, 0.3f);
		}
		detail::fill_rect(img, off + goal[1] * cs, off + goal[0] * cs, off + (goal[1] + 1) * cs, off + (goal[0] + 1) * cs, 0.6f);
		detail::fill_rect(img, off + pos_[1] * cs + 1, off + pos_[0] * cs + 1, off + (pos_[1] + 1) * cs - 1,
			off + (pos_[0] + 1) * cs - 1, 1.0f);
		return img;
	}

private:
	int size_;
	int channels_;
	int limit_;
	std::array<int, 2> pos_ = start;
	int t_ = 0;
};

/// Repeats each action R times, summing rewards and returning the last frame; termination cuts the repeat short.
class ActionRepeat : public Env
{
public:
	ActionRepeat(std::unique_ptr<Env> inner, int repeat) : inner_(std::move(inner)), repeat_(repeat)
	{
		if (repeat < 1)
		{
			throw std::invalid_argument("action repeat must be at least 1");
		}
	}

	std::string id() const override { return inner_->id(); }
	int image_size() const override { return inner_->image_size(); }
	int channels() const override { return inner_->channels(); }
	int action_dim() const override { return inner_->action_dim(); }
	bool discrete() const override { return inner_->discrete(); }
	bool can_terminate() const override { return inner_->can_terminate(); }
	int time_limit() const override { return inner_->time_limit(); }
	int repeat() const { return repeat_; }
	Env& inner() { return *inner_; }

	Image reset(std::uint64_t seed) override { return inner_->reset(seed); }

	StepResult step(const Tensor<float>& action) override
	{
		StepResult total;
		total.sim_steps = 0;
		for (int i = 0; i < repeat_; ++i)
		{
			auto r = inner_->step(action);
			total.reward += r.reward;
			total.sim_steps += r.sim_steps;
			total.terminal = r.terminal;
			total.done = r.done;
			total.observation = std::move(r.observation);
			if (r.done)
			{
				break;
			}
		}
		return total;
	}

	Image render() const override { return inner_->render(); }

private:
	std::unique_ptr<Env> inner_;
	int repeat_;
};

inline std::unique_ptr<Env> make_env(const std::string& id, int size, int channels, int repeat)
{
	std::unique_ptr<Env> env;
	if (id == "pendulum")
	{
		env = std::make_unique<PixelPendulum>(false, size, channels);
	}
	else if (id == "sparse_pendulum")
	{
		env = std::make_unique<PixelPendulum>(true, size, channels);
	}
	else if (id == "chain")
	{
		env = std::make_unique<DelayedRewardChain>(size, channels);
	}
	else if (id == "grid_cliff")
	{
		env = std::make_unique<GridCliff>(size, channels);
	}
	else
	{
		throw std::invalid_argument("unknown environment '" + id + "' (pendulum, sparse_pendulum, chain, grid_cliff)");
	}
	return std::make_unique<ActionRepeat>(std::move(env), repeat);
}

/// Uniform random action: a uniform vector in [-1, 1] or a uniformly chosen one-hot vector.
inline Tensor<float> random_action(const Env& env, std::mt19937_64& rng)
{
	Tensor<float> a({env.action_dim()});
	if (env.discrete())
	{
		a[std::uniform_int_distribution<int>(0, env.action_dim() - 1)(rng)] = 1.0f;
	}
	else
	{
		std::uniform_real_distribution<double> u(-1.0, 1.0);
		for (auto& v : a.values())
		{
			v = static_cast<float>(u(rng));
		}
	}
	return a;
}

} // namespace dreamer::envs
