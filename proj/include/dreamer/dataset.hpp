#pragma once

#include "dreamer/envs.hpp"
#include "dreamer/worldmodel.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamer::data {

static_assert(std::endian::native == std::endian::little, "episode and checkpoint files assume a little-endian host");

inline std::uint8_t quantize(float v)
{
	const float c = std::clamp(v, 0.0f, 1.0f);
	return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float dequantize(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

/// One recorded episode. Step t holds (o_t, a_{t-1}, r_t, c_t); step 0 has a zero action, zero reward and c = 1.
struct Episode
{
	std::string env_id;
	std::uint64_t seed = 0;
	int image_size = 0;
	int channels = 0;
	int action_dim = 0;
	std::vector<std::uint8_t> images;
	std::vector<float> actions;
	std::vector<float> rewards;
	std::vector<std::uint8_t> continues;

	int length() const { return static_cast<int>(rewards.size()); }
	int decisions() const { return length() - 1; }
	std::size_t frame_size() const { return static_cast<std::size_t>(image_size) * image_size * channels; }
	bool terminated() const { return !continues.empty() && continues.back() == 0; }

	double total_reward() const
	{
		double s = 0;
		for (float r : rewards)
		{
			s += r;
		}
		return s;
	}

	Tensor<float> frame(int t) const
	{
		Tensor<float> img({image_size, image_size, channels});
		const auto* src = images.data() + frame_size() * t;
		for (std::size_t i = 0; i < frame_size(); ++i)
		{
			img[i] = dequantize(src[i]);
		}
		return img;
	}

	void append_frame(const Tensor<float>& img)
	{
		if (img.size() != frame_size())
		{
			throw std::invalid_argument("frame size does not match the episode image shape");
		}
		for (float v : img.values())
		{
			images.push_back(quantize(v));
		}
	}
};

/// Accumulates one episode from an environment loop.
class EpisodeBuilder
{
public:
	EpisodeBuilder(const envs::Env& env, std::uint64_t seed, const Tensor<float>& first_obs)
	{
		ep_.env_id = env.id();
		ep_.seed = seed;
		ep_.image_size = env.image_size();
		ep_.channels = env.channels();
		ep_.action_dim = env.action_dim();
		ep_.append_frame(first_obs);
		ep_.actions.assign(ep_.action_dim, 0.0f);
		ep_.rewards.push_back(0.0f);
		ep_.continues.push_back(1);
	}

	void add(const Tensor<float>& action, const envs::StepResult& step)
	{
		if (static_cast<int>(action.size()) != ep_.action_dim)
		{
			throw std::invalid_argument("action size does not match the episode action dimension");
		}
		ep_.append_frame(step.observation);
		for (float a : action.values())
		{
			ep_.actions.push_back(a);
		}
		ep_.rewards.push_back(static_cast<float>(step.reward));
		ep_.continues.push_back(step.terminal ? 0 : 1);
	}

	const Episode& episode() const { return ep_; }
	Episode release() { return std::move(ep_); }

private:
	Episode ep_;
};

inline void save_episode(const Episode& ep, const std::filesystem::path& path)
{
	nlohmann::json header = {{"format", "dreamer-episode-1"}, {"env", ep.env_id}, {"seed", ep.seed}, {"length", ep.length()},
		{"image_shape", {ep.image_size, ep.image_size, ep.channels}}, {"action_dim", ep.action_dim},
		{"arrays", {"images:u8", "actions:f32", "rewards:f32", "continues:u8"}}, {"image_scale", "byte b -> b / 255"}};
	const auto tmp = path.string() + ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary);
		if (!out)
		{
			throw std::runtime_error("cannot write episode file " + tmp);
		}
		out << header.dump() << '\n';
		out.write(reinterpret_cast<const char*>(ep.images.data()), static_cast<std::streamsize>(ep.images.size()));
		out.write(reinterpret_cast<const char*>(ep.actions.data()), static_cast<std::streamsize>(ep.actions.size() * 4));
		out.write(reinterpret_cast<const char*>(ep.rewards.data()), static_cast<std::streamsize>(ep.rewards.size() * 4));
		out.write(reinterpret_cast<const char*>(ep.continues.data()), static_cast<std::streamsize>(ep.continues.size()));
		if (!out)
		{
			throw std::runtime_error("failed writing episode file " + tmp);
		}
	}
	std::filesystem::rename(tmp, path);
}

inline Episode load_episode(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
	{
		throw std::runtime_error("cannot open episode file " + path.string());
	}
	std::string line;
	std::getline(in, line);
	Episode ep;
	try
	{
		const auto header = nlohmann::json::parse(line);
		if (header.at("format") != "dreamer-episode-1")
		{
			throw std::runtime_error("unsupported format");
		}
		ep.env_id = header.at("env");
		ep.seed = header.at("seed");
		const auto shape = header.at("image_shape");
		ep.image_size = shape.at(0);
		ep.channels = shape.at(2);
		ep.action_dim = header.at("action_dim");
		const int n = header.at("length");
		if (n < 1)
		{
			throw std::runtime_error("empty episode");
		}
		ep.images.resize(ep.frame_size() * n);
		ep.actions.resize(static_cast<std::size_t>(n) * ep.action_dim);
		ep.rewards.resize(n);
		ep.continues.resize(n);
	}
	catch (const nlohmann::json::exception& e)
	{
		throw std::runtime_error("bad episode header in " + path.string() + ": " + e.what());
	}
	in.read(reinterpret_cast<char*>(ep.images.data()), static_cast<std::streamsize>(ep.images.size()));
	in.read(reinterpret_cast<char*>(ep.actions.data()), static_cast<std::streamsize>(ep.actions.size() * 4));
	in.read(reinterpret_cast<char*>(ep.rewards.data()), static_cast<std::streamsize>(ep.rewards.size() * 4));
	in.read(reinterpret_cast<char*>(ep.continues.data()), static_cast<std::streamsize>(ep.continues.size()));
	if (!in || in.peek() != std::char_traits<char>::eof())
	{
		throw std::runtime_error("episode file " + path.string() + " has the wrong payload size");
	}
	return ep;
}

struct WindowIndex
{
	int episode = 0;
	int offset = 0;
};

template <class T>
struct SampledBatch
{
	SequenceBatch<T> batch;
	std::vector<WindowIndex> windows;
};

/// Append-only episode store. Sampling works on a snapshot of the episode list, so a writer may append concurrently.
class EpisodeDataset
{
public:
	using EpisodePtr = std::shared_ptr<const Episode>;

	void add(Episode ep)
	{
		auto ptr = std::make_shared<const Episode>(std::move(ep));
		std::lock_guard lock(mutex_);
		if (!episodes_.empty())
		{
			const auto& first = *episodes_.front();
			if (ptr->image_size != first.image_size || ptr->channels != first.channels || ptr->action_dim != first.action_dim)
			{
				throw std::invalid_argument("episode shape differs from the dataset");
			}
		}
		steps_ += ptr->decisions();
		episodes_.push_back(std::move(ptr));
	}

	std::vector<EpisodePtr> snapshot() const
	{
		std::lock_guard lock(mutex_);
		return episodes_;
	}

	std::size_t size() const
	{
		std::lock_guard lock(mutex_);
		return episodes_.size();
	}

	/// Total decision steps over all episodes.
	long steps() const
	{
		std::lock_guard lock(mutex_);
		return steps_;
	}

	const Episode& episode(std::size_t i) const
	{
		std::lock_guard lock(mutex_);
		return *episodes_.at(i);
	}

	/// Number of valid start offsets for windows of length l. A terminal step never starts a window.
	static long windows_in(const Episode& ep, int l)
	{
		long n = ep.length() - l + 1;
		if (n <= 0)
		{
			return 0;
		}
		if (ep.terminated() && l == 1)
		{
			--n;
		}
		return n;
	}

	/// B windows of L consecutive steps, uniform over all eligible (episode, offset) pairs.
	template <class T>
	SampledBatch<T> sample(int b, int l, std::mt19937_64& rng) const
	{
		if (b < 1 || l < 1)
		{
			throw std::invalid_argument("batch size and sequence length must be positive");
		}
		const auto eps = snapshot();
		std::vector<long> cumulative;
		long total = 0;
		for (const auto& ep : eps)
		{
			total += windows_in(*ep, l);
			cumulative.push_back(total);
		}
		if (total == 0)
		{
			throw std::runtime_error("no episode has at least " + std::to_string(l) +
				" steps; collect more seed episodes or shorten the sequence length");
		}
		const auto& first = *eps.front();
		const int w = first.image_size;
		const int c = first.channels;
		const int a = first.action_dim;
		const std::size_t frame = first.frame_size();
		SampledBatch<T> out{SequenceBatch<T>{Tensor<T>({b, l, w, w, c}), Tensor<T>({b, l, a}), Tensor<T>({b, l}), Tensor<T>({b, l})},
			{}};
		std::uniform_int_distribution<long> pick(0, total - 1);
		for (int i = 0; i < b; ++i)
		{
			const long k = pick(rng);
			const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), k);
			const int e = static_cast<int>(it - cumulative.begin());
			const int offset = static_cast<int>(k - (e == 0 ? 0 : cumulative[e - 1]));
			out.windows.push_back({e, offset});
			const Episode& ep = *eps[e];
			for (int t = 0; t < l; ++t)
			{
				const int s = offset + t;
				const std::size_t row = static_cast<std::size_t>(i) * l + t;
				const auto* src = ep.images.data() + frame * s;
				T* dst = out.batch.observations.data() + frame * row;
				for (std::size_t p = 0; p < frame; ++p)
				{
					dst[p] = static_cast<T>(dequantize(src[p]));
				}
				for (int j = 0; j < a; ++j)
				{
					out.batch.actions[row * a + j] = static_cast<T>(ep.actions[static_cast<std::size_t>(s) * a + j]);
				}
				out.batch.rewards[row] = static_cast<T>(ep.rewards[s]);
				out.batch.continues[row] = static_cast<T>(ep.continues[s]);
			}
		}
		return out;
	}

	void save(const std::filesystem::path& dir) const
	{
		std::filesystem::create_directories(dir);
		const auto eps = snapshot();
		for (std::size_t i = 0; i < eps.size(); ++i)
		{
			const auto path = dir / episode_filename(i);
			if (!std::filesystem::exists(path))
			{
				save_episode(*eps[i], path);
			}
		}
	}

	static EpisodeDataset load(const std::filesystem::path& dir, std::size_t count)
	{
		EpisodeDataset d;
		for (std::size_t i = 0; i < count; ++i)
		{
			d.add(load_episode(dir / episode_filename(i)));
		}
		return d;
	}

	static std::string episode_filename(std::size_t i)
	{
		std::string digits = std::to_string(i);
		return "episode_" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits + ".bin";
	}

	EpisodeDataset() = default;
	EpisodeDataset(EpisodeDataset&& other) noexcept { *this = std::move(other); }
	EpisodeDataset& operator=(EpisodeDataset&& other) noexcept
	{
		if (this != &other)
		{
			std::scoped_lock lock(mutex_, other.mutex_);
			episodes_ = std::move(other.episodes_);
			steps_ = other.steps_;
		}
		return *this;
	}

private:
	mutable std::mutex mutex_;
	std::vector<EpisodePtr> episodes_;
	long steps_ = 0;
};

} // namespace dreamer::data
