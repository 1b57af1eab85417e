#pragma once

#include "dreamer/nn.hpp"

#include <cmath>
#include <vector>

namespace dreamer {

struct AdamOptions
{
	double lr = 1e-3;
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
	double clip_norm = 100.0; // global norm over the group; <= 0 disables
};

/// Adam over one parameter group, with global-norm gradient clipping across the group.
template <class T>
class Adam
{
public:
	Adam() = default;
	Adam(nn::ParamSet<T>& params, AdamOptions opt) : params_(&params), opt_(opt)
	{
		for (const auto& p : params.items())
		{
			m_.emplace_back(p.var.shape());
			v_.emplace_back(p.var.shape());
		}
	}

	const AdamOptions& options() const { return opt_; }
	long steps() const { return step_; }

	/// Global L2 norm of the current gradients (missing gradients count as zero).
	double grad_norm() const
	{
		double sq = 0;
		for (const auto& p : params_->items())
		{
			if (p.var.has_grad())
			{
				for (T g : p.var.grad().values())
				{
					sq += static_cast<double>(g) * g;
				}
			}
		}
		return std::sqrt(sq);
	}

	/// Applies one update from the accumulated gradients, then clears them. Returns the pre-clip gradient norm.
	double step()
	{
		const double norm = grad_norm();
		const double scale = opt_.clip_norm > 0 && norm > opt_.clip_norm ? opt_.clip_norm / norm : 1.0;
		++step_;
		const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
		const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
		auto& items = params_->items();
		for (std::size_t i = 0; i < items.size(); ++i)
		{
			auto& var = items[i].var;
			if (!var.has_grad())
			{
				continue;
			}
			auto& value = var.mutable_value();
			const auto& grad = var.grad();
			auto& m = m_[i];
			auto& v = v_[i];
			for (std::size_t j = 0; j < value.size(); ++j)
			{
				const double g = static_cast<double>(grad[j]) * scale;
				const double mj = opt_.beta1 * m[j] + (1 - opt_.beta1) * g;
				const double vj = opt_.beta2 * v[j] + (1 - opt_.beta2) * g * g;
				m[j] = static_cast<T>(mj);
				v[j] = static_cast<T>(vj);
				const double update = opt_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + opt_.eps);
				value[j] = static_cast<T>(static_cast<double>(value[j]) - update);
			}
		}
		params_->zero_grad();
		return norm;
	}

	std::vector<Tensor<T>>& first_moments() { return m_; }
	std::vector<Tensor<T>>& second_moments() { return v_; }
	const std::vector<Tensor<T>>& first_moments() const { return m_; }
	const std::vector<Tensor<T>>& second_moments() const { return v_; }
	void set_steps(long s) { step_ = s; }

private:
	nn::ParamSet<T>* params_ = nullptr;
	AdamOptions opt_;
	std::vector<Tensor<T>> m_;
	std::vector<Tensor<T>> v_;
	long step_ = 0;
};

} // namespace dreamer
