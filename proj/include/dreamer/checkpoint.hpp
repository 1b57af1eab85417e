#pragma once

#include "dreamer/digest.hpp"
#include "dreamer/nn.hpp"
#include "dreamer/optim.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dreamer {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

class CheckpointError : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

/// Named float32 tensors plus JSON metadata. Stored as manifest.json and one flat blob of row-major floats.
class Checkpoint
{
public:
	nlohmann::json meta = nlohmann::json::object();

	void add(std::string name, const Tensor<float>& t)
	{
		for (const auto& [n, _] : tensors_)
		{
			if (n == name)
			{
				throw std::logic_error("duplicate checkpoint tensor '" + name + "'");
			}
		}
		tensors_.emplace_back(std::move(name), t);
	}

	const Tensor<float>& get(const std::string& name) const
	{
		for (const auto& [n, t] : tensors_)
		{
			if (n == name)
			{
				return t;
			}
		}
		throw CheckpointError("checkpoint has no tensor '" + name + "'");
	}

	bool has(const std::string& name) const
	{
		for (const auto& [n, _] : tensors_)
		{
			if (n == name)
			{
				return true;
			}
		}
		return false;
	}

	const std::vector<std::pair<std::string, Tensor<float>>>& tensors() const { return tensors_; }

	/// FNV-1a over the tensor table (names, shapes) and every value's bytes.
	std::uint64_t digest() const
	{
		std::uint64_t h = fnv1a(nullptr, 0);
		for (const auto& [name, t] : tensors_)
		{
			h = fnv1a(name.data(), name.size(), h);
			for (int d : t.shape())
			{
				h = fnv1a(&d, sizeof d, h);
			}
			h = fnv1a(t.data(), t.size() * sizeof(float), h);
		}
		const auto m = meta.dump();
		return fnv1a(m.data(), m.size(), h);
	}

	void add_params(const std::string& prefix, const nn::ParamSet<float>& params)
	{
		for (const auto& p : params.items())
		{
			add(prefix + "/" + p.name, p.var.value());
		}
	}

	void restore_params(const std::string& prefix, nn::ParamSet<float>& params) const
	{
		for (auto& p : params.items())
		{
			const auto& src = get(prefix + "/" + p.name);
			if (src.shape() != p.var.shape())
			{
				throw CheckpointError("shape mismatch for '" + prefix + "/" + p.name + "': stored " + shape_str(src.shape()) +
					", expected " + shape_str(p.var.shape()));
			}
			p.var.mutable_value() = src;
		}
	}

	void add_adam(const std::string& prefix, const Adam<float>& opt)
	{
		for (std::size_t i = 0; i < opt.first_moments().size(); ++i)
		{
			add(prefix + "/m/" + std::to_string(i), opt.first_moments()[i]);
			add(prefix + "/v/" + std::to_string(i), opt.second_moments()[i]);
		}
		meta["optimizer_steps"][prefix] = opt.steps();
	}

	void restore_adam(const std::string& prefix, Adam<float>& opt) const
	{
		for (std::size_t i = 0; i < opt.first_moments().size(); ++i)
		{
			const auto& m = get(prefix + "/m/" + std::to_string(i));
			const auto& v = get(prefix + "/v/" + std::to_string(i));
			if (m.shape() != opt.first_moments()[i].shape() || v.shape() != opt.second_moments()[i].shape())
			{
				throw CheckpointError("optimizer state shape mismatch in '" + prefix + "'");
			}
			opt.first_moments()[i] = m;
			opt.second_moments()[i] = v;
		}
		opt.set_steps(meta.at("optimizer_steps").at(prefix).get<long>());
	}

private:
	std::vector<std::pair<std::string, Tensor<float>>> tensors_;
};

inline std::string rng_state(const std::mt19937_64& rng)
{
	std::ostringstream os;
	os << rng;
	return os.str();
}

inline std::mt19937_64 rng_from_state(const std::string& s)
{
	std::istringstream is(s);
	std::mt19937_64 rng;
	is >> rng;
	if (!is)
	{
		throw CheckpointError("malformed generator state");
	}
	return rng;
}

/// Writes <dir>/manifest.json and <dir>/tensors.bin. The directory is assembled under a temporary name and renamed.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir)
{
	namespace fs = std::filesystem;
	const fs::path tmp = dir.string() + ".tmp";
	fs::remove_all(tmp);
	fs::create_directories(tmp);
	nlohmann::json table = nlohmann::json::array();
	std::size_t offset = 0;
	{
		std::ofstream blob(tmp / "tensors.bin", std::ios::binary);
		for (const auto& [name, t] : ck.tensors())
		{
			const std::size_t bytes = t.size() * sizeof(float);
			table.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}, {"offset", offset}, {"bytes", bytes}});
			blob.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
			offset += bytes;
		}
		if (!blob)
		{
			throw CheckpointError("failed writing checkpoint blob in " + tmp.string());
		}
	}
	const nlohmann::json manifest = {{"format", "dreamer-checkpoint-1"}, {"byte_order", "little"}, {"blob", "tensors.bin"},
		{"blob_bytes", offset}, {"tensors", table}, {"meta", ck.meta}, {"digest", hex64(ck.digest())}};
	{
		std::ofstream out(tmp / "manifest.json");
		out << manifest.dump(1) << '\n';
		if (!out)
		{
			throw CheckpointError("failed writing checkpoint manifest in " + tmp.string());
		}
	}
	fs::remove_all(dir);
	fs::rename(tmp, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
	const auto manifest_path = dir / "manifest.json";
	std::ifstream in(manifest_path);
	if (!in)
	{
		throw CheckpointError("checkpoint manifest not found: " + manifest_path.string());
	}
	Checkpoint ck;
	try
	{
		const auto manifest = nlohmann::json::parse(in);
		if (manifest.at("format") != "dreamer-checkpoint-1")
		{
			throw CheckpointError("unsupported checkpoint format in " + manifest_path.string());
		}
		const auto blob_path = dir / manifest.at("blob").get<std::string>();
		const auto blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
		if (!std::filesystem::exists(blob_path) || std::filesystem::file_size(blob_path) != blob_bytes)
		{
			throw CheckpointError("checkpoint blob missing or truncated: " + blob_path.string());
		}
		std::vector<char> blob(blob_bytes);
		std::ifstream bin(blob_path, std::ios::binary);
		bin.read(blob.data(), static_cast<std::streamsize>(blob.size()));
		for (const auto& entry : manifest.at("tensors"))
		{
			if (entry.at("dtype") != "float32")
			{
				throw CheckpointError("unsupported tensor dtype in checkpoint");
			}
			const auto shape = entry.at("shape").get<Shape>();
			const auto offset = entry.at("offset").get<std::size_t>();
			const auto bytes = entry.at("bytes").get<std::size_t>();
			if (bytes != shape_size(shape) * sizeof(float) || offset + bytes > blob.size())
			{
				throw CheckpointError("tensor '" + entry.at("name").get<std::string>() + "' lies outside the blob");
			}
			Tensor<float> t(shape);
			std::memcpy(t.data(), blob.data() + offset, bytes);
			ck.add(entry.at("name").get<std::string>(), t);
		}
		ck.meta = manifest.at("meta");
		if (hex64(ck.digest()) != manifest.at("digest").get<std::string>())
		{
			throw CheckpointError("checkpoint digest mismatch in " + dir.string());
		}
	}
	catch (const nlohmann::json::exception& e)
	{
		throw CheckpointError("corrupt checkpoint manifest " + manifest_path.string() + ": " + e.what());
	}
	return ck;
}

} // namespace dreamer
