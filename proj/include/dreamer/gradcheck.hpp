#pragma once

#include "dreamer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamer {

template <class T>
struct NamedParam
{
	std::string name;
	ad::Var<T> var;
};

struct GradCheckOptions
{
	double epsilon = 1e-6;
	double tolerance = 1e-5;
	// 0 checks every coordinate; otherwise a seeded random subset of at most this many per parameter tensor.
	std::size_t max_coords_per_param = 0;
	std::uint64_t seed = 0;
	// Fault injection for exercising the failure path: skews every analytic coordinate.
	bool corrupt_analytic = false;
};

struct GradCheckReport
{
	struct Entry
	{
		std::string name;
		std::vector<double> errors;
		double max_error = 0;
	};
	std::vector<Entry> parameters;
	double max_error = 0;
	double fraction_within = 1;
	double tolerance = 0;
	std::size_t coordinates = 0;

	bool passed(double min_fraction) const { return fraction_within >= min_fraction; }
};

class NonDeterministicLoss : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

inline double relative_error(double analytic, double numeric)
{
	return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares backpropagated gradients against central finite differences, coordinate by coordinate.
template <class T>
GradCheckReport grad_check(
	const std::function<ad::Var<T>()>& loss_fn, const std::vector<NamedParam<T>>& params, const GradCheckOptions& opt = {})
{
	for (const auto& p : params)
	{
		if (!p.var.defined() || !p.var.is_leaf())
		{
			throw std::invalid_argument("grad_check: parameter '" + p.name + "' is not a leaf");
		}
		auto v = p.var;
		v.zero_grad();
		v.set_requires_grad(true);
	}

	ad::Var<T> loss = loss_fn();
	{
		ad::NoGradGuard guard;
		const T again = loss_fn().item();
		if (again != loss.item())
		{
			throw NonDeterministicLoss("grad_check: loss changed between identical evaluations (" +
				std::to_string(static_cast<double>(loss.item())) + " vs " + std::to_string(static_cast<double>(again)) +
				"); freeze all sampling noise");
		}
	}
	ad::backward(loss);

	GradCheckReport report;
	report.tolerance = opt.tolerance;
	std::size_t within = 0;
	std::mt19937_64 rng(opt.seed);
	for (const auto& p : params)
	{
		auto var = p.var;
		Tensor<T> analytic = var.has_grad() ? var.grad() : Tensor<T>(var.shape());
		if (opt.corrupt_analytic)
		{
			for (auto& g : analytic.values())
			{
				g = g * T{1.5} + T{1e-2};
			}
		}
		std::vector<std::size_t> coords(var.size());
		for (std::size_t i = 0; i < coords.size(); ++i)
		{
			coords[i] = i;
		}
		if (opt.max_coords_per_param > 0 && coords.size() > opt.max_coords_per_param)
		{
			std::shuffle(coords.begin(), coords.end(), rng);
			coords.resize(opt.max_coords_per_param);
			std::sort(coords.begin(), coords.end());
		}
		GradCheckReport::Entry entry{p.name, {}, 0};
		ad::NoGradGuard guard;
		for (std::size_t i : coords)
		{
			T& x = var.mutable_value()[i];
			const T saved = x;
			x = saved + static_cast<T>(opt.epsilon);
			const double up = loss_fn().item();
			x = saved - static_cast<T>(opt.epsilon);
			const double down = loss_fn().item();
			x = saved;
			const double numeric = (up - down) / (2 * opt.epsilon);
			const double err = relative_error(static_cast<double>(analytic[i]), numeric);
			entry.errors.push_back(err);
			entry.max_error = std::max(entry.max_error, err);
			within += err <= opt.tolerance ? 1 : 0;
		}
		report.max_error = std::max(report.max_error, entry.max_error);
		report.coordinates += entry.errors.size();
		report.parameters.push_back(std::move(entry));
	}
	report.fraction_within = report.coordinates ? static_cast<double>(within) / report.coordinates : 1.0;
	for (const auto& p : params)
	{
		auto v = p.var;
		v.zero_grad();
	}
	return report;
}

} // namespace dreamer
