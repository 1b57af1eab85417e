#pragma once

#include <dreamer/tensor.hpp>

#include <random>

namespace dreamer::test_util {

template <class T>
Tensor<T> random_normal(Shape shape, std::mt19937_64& rng, double scale = 1.0, double shift = 0.0)
{
	std::normal_distribution<double> dist(shift, scale);
	Tensor<T> t(std::move(shape));
	for (auto& v : t.values())
	{
		v = static_cast<T>(dist(rng));
	}
	return t;
}

template <class T>
Tensor<T> random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi)
{
	std::uniform_real_distribution<double> dist(lo, hi);
	Tensor<T> t(std::move(shape));
	for (auto& v : t.values())
	{
		v = static_cast<T>(dist(rng));
	}
	return t;
}

// Composite Simpson rule on [a, b] with an even number of panels.
template <class F>
double simpson(F&& f, double a, double b, int panels)
{
	if (panels % 2)
	{
		++panels;
	}
	const double h = (b - a) / panels;
	double acc = f(a) + f(b);
	for (int i = 1; i < panels; ++i)
	{
		acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
	}
	return acc * h / 3.0;
}

} // namespace dreamer::test_util
