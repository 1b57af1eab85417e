#pragma once

#include "dreamer/autodiff.hpp"
#include "dreamer/conv.hpp"
#include "dreamer/gradcheck.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamer::nn {

/// Ordered, named collection of trainable leaves. Modules hand out Var handles that share nodes with the set.
template <class T>
class ParamSet
{
public:
	ad::Var<T> add(std::string name, Tensor<T> init)
	{
		for (const auto& p : items_)
		{
			if (p.name == name)
			{
				throw std::logic_error("duplicate parameter name '" + name + "'");
			}
		}
		auto v = ad::Var<T>::parameter(std::move(init));
		items_.push_back({std::move(name), v});
		return v;
	}

	const std::vector<NamedParam<T>>& items() const { return items_; }
	std::vector<NamedParam<T>>& items() { return items_; }

	void set_requires_grad(bool on)
	{
		for (auto& p : items_)
		{
			p.var.set_requires_grad(on);
		}
	}

	void zero_grad()
	{
		for (auto& p : items_)
		{
			p.var.zero_grad();
		}
	}

	std::size_t scalar_count() const
	{
		std::size_t n = 0;
		for (const auto& p : items_)
		{
			n += p.var.size();
		}
		return n;
	}

	void fill(T v)
	{
		for (auto& p : items_)
		{
			p.var.mutable_value().fill(v);
		}
	}

	// Flat copy of every value, for bitwise audits.
	std::vector<T> snapshot() const
	{
		std::vector<T> out;
		out.reserve(scalar_count());
		for (const auto& p : items_)
		{
			out.insert(out.end(), p.var.value().values().begin(), p.var.value().values().end());
		}
		return out;
	}

	void copy_values_from(const ParamSet& other)
	{
		if (other.items_.size() != items_.size())
		{
			throw std::logic_error("copy_values_from: parameter count mismatch");
		}
		for (std::size_t i = 0; i < items_.size(); ++i)
		{
			items_[i].var.mutable_value() = other.items_[i].var.value();
		}
	}

private:
	std::vector<NamedParam<T>> items_;
};

/// RAII freeze: parameters stop requiring gradients for the guard's lifetime.
template <class T>
class FreezeGuard
{
public:
	explicit FreezeGuard(ParamSet<T>& params) : params_(params) { params_.set_requires_grad(false); }
	~FreezeGuard() { params_.set_requires_grad(true); }
	FreezeGuard(const FreezeGuard&) = delete;
	FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
	ParamSet<T>& params_;
};

template <class T>
Tensor<T> glorot_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng)
{
	const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
	std::uniform_real_distribution<double> dist(-limit, limit);
	Tensor<T> t(std::move(shape));
	for (auto& v : t.values())
	{
		v = static_cast<T>(dist(rng));
	}
	return t;
}

template <class T>
struct Dense
{
	ad::Var<T> w;
	ad::Var<T> b;

	Dense() = default;
	Dense(ParamSet<T>& ps, const std::string& name, int in, int out, std::mt19937_64& rng)
		: w(ps.add(name + "/w", glorot_uniform<T>({in, out}, in, out, rng))), b(ps.add(name + "/b", Tensor<T>({out})))
	{
	}

	int in() const { return w.shape()[0]; }
	int out() const { return w.shape()[1]; }
	ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::linear(x, w, b); }
};

/// `layers` hidden dense layers of `width` units with ELU activations, then a linear output layer.
template <class T>
struct Mlp
{
	std::vector<Dense<T>> hidden;
	Dense<T> head;

	Mlp() = default;
	Mlp(ParamSet<T>& ps, const std::string& name, int in, int width, int layers, int out, std::mt19937_64& rng)
	{
		int prev = in;
		for (int i = 0; i < layers; ++i)
		{
			hidden.emplace_back(ps, name + "/h" + std::to_string(i), prev, width, rng);
			prev = width;
		}
		head = Dense<T>(ps, name + "/out", prev, out, rng);
	}

	ad::Var<T> operator()(ad::Var<T> x) const
	{
		for (const auto& layer : hidden)
		{
			x = ad::elu(layer(x));
		}
		return head(x);
	}
};

/// Gated recurrent unit: r and z gates, candidate n = tanh(Wx x + r * (Wh h + bh)), h' = (1 - z) n + z h.
template <class T>
struct GruCell
{
	Dense<T> input;
	Dense<T> recurrent;
	int size = 0;

	GruCell() = default;
	GruCell(ParamSet<T>& ps, const std::string& name, int in, int hidden, std::mt19937_64& rng)
		: input(ps, name + "/input", in, 3 * hidden, rng), recurrent(ps, name + "/recurrent", hidden, 3 * hidden, rng),
		  size(hidden)
	{
	}

	ad::Var<T> operator()(const ad::Var<T>& x, const ad::Var<T>& h) const
	{
		auto gx = input(x);
		auto gh = recurrent(h);
		auto r = ad::sigmoid(ad::slice_last(gx, 0, size) + ad::slice_last(gh, 0, size));
		auto z = ad::sigmoid(ad::slice_last(gx, size, size) + ad::slice_last(gh, size, size));
		auto n = ad::tanh(ad::slice_last(gx, 2 * size, size) + r * ad::slice_last(gh, 2 * size, size));
		return n + z * (h - n);
	}
};

struct ConvLayerSpec
{
	int kernel;
	int depth;
};

/// Stride-2 "valid" convolution stacks. The number of layers follows the image size: 64 -> 4, 32 -> 3, 16 -> 2.
inline std::vector<ConvLayerSpec> encoder_layers(int image_size, int depth)
{
	switch (image_size)
	{
		case 64: return {{4, depth}, {4, 2 * depth}, {4, 4 * depth}, {4, 8 * depth}};
		case 32: return {{4, depth}, {4, 2 * depth}, {4, 4 * depth}};
		case 16: return {{4, depth}, {4, 2 * depth}};
		default: throw std::invalid_argument("unsupported image size " + std::to_string(image_size) + " (16, 32 or 64)");
	}
}

/// Transposed-convolution stack from a 1x1 feature map up to the image size. The first entry's depth is the width
/// of the dense projection feeding the stack; the last entry produces the image channels.
inline std::vector<ConvLayerSpec> decoder_layers(int image_size, int depth, int channels)
{
	switch (image_size)
	{
		case 64: return {{1, 32 * depth}, {5, 4 * depth}, {5, 2 * depth}, {6, depth}, {6, channels}};
		case 32: return {{1, 8 * depth}, {5, 2 * depth}, {6, depth}, {6, channels}};
		case 16: return {{1, 4 * depth}, {5, depth}, {8, channels}};
		default: throw std::invalid_argument("unsupported image size " + std::to_string(image_size) + " (16, 32 or 64)");
	}
}

inline int encoder_output_size(int image_size, int depth)
{
	int size = image_size;
	int channels = 0;
	for (const auto& l : encoder_layers(image_size, depth))
	{
		size = (size - l.kernel) / 2 + 1;
		channels = l.depth;
	}
	return size * size * channels;
}

template <class T>
struct ConvEncoder
{
	struct Layer
	{
		ad::Var<T> w, b;
	};
	std::vector<Layer> layers;
	int image_size = 0;
	int channels = 0;
	int output_size = 0;

	ConvEncoder() = default;
	ConvEncoder(ParamSet<T>& ps, const std::string& name, int image_size_, int channels_, int depth, std::mt19937_64& rng)
		: image_size(image_size_), channels(channels_), output_size(encoder_output_size(image_size_, depth))
	{
		int in = channels;
		int i = 0;
		for (const auto& spec : encoder_layers(image_size, depth))
		{
			const int k = spec.kernel;
			const std::string n = name + "/conv" + std::to_string(i++);
			layers.push_back({ps.add(n + "/w", glorot_uniform<T>({k, k, in, spec.depth}, k * k * in, k * k * spec.depth, rng)),
				ps.add(n + "/b", Tensor<T>({spec.depth}))});
			in = spec.depth;
		}
	}

	/// images [N, H, W, C] -> [N, output_size]
	ad::Var<T> operator()(ad::Var<T> x) const
	{
		const int n = x.shape()[0];
		for (const auto& l : layers)
		{
			x = ad::elu(ad::conv2d(x, l.w, l.b, 2));
		}
		return ad::reshape(x, {n, output_size});
	}
};

template <class T>
struct ConvDecoder
{
	struct Layer
	{
		ad::Var<T> w, b;
	};
	Dense<T> project;
	std::vector<Layer> layers;
	int image_size = 0;
	int channels = 0;
	int project_width = 0;

	ConvDecoder() = default;
	ConvDecoder(ParamSet<T>& ps, const std::string& name, int in, int image_size_, int channels_, int depth,
		std::mt19937_64& rng)
		: image_size(image_size_), channels(channels_)
	{
		const auto specs = decoder_layers(image_size, depth, channels);
		project_width = specs[0].depth;
		project = Dense<T>(ps, name + "/project", in, project_width, rng);
		int prev = project_width;
		for (std::size_t i = 1; i < specs.size(); ++i)
		{
			const int k = specs[i].kernel;
			const int out = specs[i].depth;
			const std::string n = name + "/deconv" + std::to_string(i - 1);
			layers.push_back({ps.add(n + "/w", glorot_uniform<T>({prev, k, k, out}, k * k * prev, k * k * out, rng)),
				ps.add(n + "/b", Tensor<T>({out}))});
			prev = out;
		}
	}

	/// features [N, in] -> image means [N, H, W, C]
	ad::Var<T> operator()(const ad::Var<T>& features) const
	{
		const int n = features.shape()[0];
		auto x = ad::reshape(project(features), {n, 1, 1, project_width});
		for (std::size_t i = 0; i < layers.size(); ++i)
		{
			x = ad::conv_transpose2d(x, layers[i].w, layers[i].b, 2);
			if (i + 1 < layers.size())
			{
				x = ad::elu(x);
			}
		}
		return x;
	}
};

} // namespace dreamer::nn
