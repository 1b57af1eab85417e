#pragma once

// Distribution families used by the world model and the action model, with their differentiable log-densities,
// divergences and reparameterized samplers. Every sampler takes its noise as an argument.

#include "dreamer/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dreamer {

enum class DistKind
{
	DiagGaussian,
	TanhGaussian,
	Categorical,
	Bernoulli,
};

inline const char* to_string(DistKind k)
{
	switch (k)
	{
		case DistKind::DiagGaussian: return "DiagGaussian";
		case DistKind::TanhGaussian: return "TanhGaussian";
		case DistKind::Categorical: return "Categorical";
		case DistKind::Bernoulli: return "Bernoulli";
	}
	return "?";
}

/// Tagged parameter record. Rows of a rank-2 parameter tensor are independent distributions.
template <class T>
struct DistParams
{
	DistKind kind = DistKind::DiagGaussian;
	ad::Var<T> mean;
	ad::Var<T> stddev;
	ad::Var<T> logits;
	ad::Var<T> probability;

	static DistParams diag_gaussian(ad::Var<T> mean, ad::Var<T> stddev)
	{
		DistParams p{DistKind::DiagGaussian, std::move(mean), std::move(stddev), {}, {}};
		p.validate();
		return p;
	}

	static DistParams tanh_gaussian(ad::Var<T> mean, ad::Var<T> stddev)
	{
		DistParams p{DistKind::TanhGaussian, std::move(mean), std::move(stddev), {}, {}};
		p.validate();
		return p;
	}

	static DistParams categorical(ad::Var<T> logits)
	{
		DistParams p{DistKind::Categorical, {}, {}, std::move(logits), {}};
		p.validate();
		return p;
	}

	static DistParams bernoulli(ad::Var<T> probability)
	{
		DistParams p{DistKind::Bernoulli, {}, {}, {}, std::move(probability)};
		p.validate();
		return p;
	}

	void validate() const
	{
		switch (kind)
		{
			case DistKind::DiagGaussian:
			case DistKind::TanhGaussian:
			{
				if (!mean.defined() || !stddev.defined() || mean.shape() != stddev.shape())
				{
					throw std::invalid_argument("Gaussian parameters need mean and stddev of equal shape");
				}
				for (T s : stddev.value().values())
				{
					if (!(s > T{0}) || !std::isfinite(s))
					{
						throw std::invalid_argument("Gaussian stddev must be finite and strictly positive");
					}
				}
				if (!mean.value().all_finite())
				{
					throw std::invalid_argument("Gaussian mean must be finite");
				}
				break;
			}
			case DistKind::Categorical:
				if (!logits.defined() || !logits.value().all_finite())
				{
					throw std::invalid_argument("categorical logits must be finite");
				}
				break;
			case DistKind::Bernoulli:
				if (!probability.defined())
				{
					throw std::invalid_argument("Bernoulli probability missing");
				}
				for (T p : probability.value().values())
				{
					if (!(p >= T{0} && p <= T{1}))
					{
						throw std::invalid_argument("Bernoulli probability must lie in [0, 1]");
					}
				}
				break;
		}
	}

	DistParams detach() const
	{
		DistParams d = *this;
		if (mean.defined()) d.mean = mean.detach();
		if (stddev.defined()) d.stddev = stddev.detach();
		if (logits.defined()) d.logits = logits.detach();
		if (probability.defined()) d.probability = probability.detach();
		return d;
	}
};

template <class T>
constexpr T half_log_two_pi = static_cast<T>(0.91893853320467274178032973640562);

/// Closed-form KL(p || q) between diagonal Gaussians, summed over the last extent. Shape [rows].
template <class T>
ad::Var<T> gaussian_kl(const DistParams<T>& p, const DistParams<T>& q)
{
	if (p.kind != DistKind::DiagGaussian || q.kind != DistKind::DiagGaussian)
	{
		throw std::invalid_argument("gaussian_kl expects two DiagGaussian distributions");
	}
	if (p.mean.shape() != q.mean.shape())
	{
		throw std::invalid_argument(
			"gaussian_kl: shape mismatch " + shape_str(p.mean.shape()) + " vs " + shape_str(q.mean.shape()));
	}
	p.validate();
	q.validate();
	const Tensor<T>& mp = p.mean.value();
	const int rows = mp.rows();
	const int cols = mp.cols();
	Shape shape(mp.shape().begin(), mp.shape().end() - 1);
	if (shape.empty())
	{
		shape = {1};
	}
	Tensor<T> kl(shape);
	for (int r = 0; r < rows; ++r)
	{
		T acc{0};
		for (int c = 0; c < cols; ++c)
		{
			const std::size_t i = static_cast<std::size_t>(r) * cols + c;
			const T sp = p.stddev.value()[i];
			const T sq = q.stddev.value()[i];
			const T d = mp[i] - q.mean.value()[i];
			acc += std::log(sq / sp) + (sp * sp + d * d) / (T{2} * sq * sq) - T{0.5};
		}
		kl[r] = acc;
	}
	return ad::detail::make(std::move(kl), {p.mean, p.stddev, q.mean, q.stddev}, [rows, cols](ad::Node<T>& self) {
		auto* gmp = ad::detail::grad_of(self, 0);
		auto* gsp = ad::detail::grad_of(self, 1);
		auto* gmq = ad::detail::grad_of(self, 2);
		auto* gsq = ad::detail::grad_of(self, 3);
		const auto& mpv = ad::detail::input_value(self, 0);
		const auto& spv = ad::detail::input_value(self, 1);
		const auto& mqv = ad::detail::input_value(self, 2);
		const auto& sqv = ad::detail::input_value(self, 3);
		for (int r = 0; r < rows; ++r)
		{
			const T g = self.grad[r];
			for (int c = 0; c < cols; ++c)
			{
				const std::size_t i = static_cast<std::size_t>(r) * cols + c;
				const T sp = spv[i];
				const T sq = sqv[i];
				const T d = mpv[i] - mqv[i];
				const T inv_q2 = T{1} / (sq * sq);
				if (gmp) (*gmp)[i] += g * d * inv_q2;
				if (gmq) (*gmq)[i] -= g * d * inv_q2;
				if (gsp) (*gsp)[i] += g * (-T{1} / sp + sp * inv_q2);
				if (gsq) (*gsq)[i] += g * (T{1} / sq - (sp * sp + d * d) * inv_q2 / sq);
			}
		}
	});
}

/// Diagonal Gaussian log-density of x, summed over the last extent. Shape [rows].
template <class T>
ad::Var<T> gaussian_log_prob(const ad::Var<T>& x, const ad::Var<T>& mean, const ad::Var<T>& stddev)
{
	ad::detail::require(x.size() == mean.size() && x.size() == stddev.size(), "gaussian_log_prob: size mismatch");
	const int rows = mean.value().rows();
	const int cols = mean.value().cols();
	Shape shape(mean.shape().begin(), mean.shape().end() - 1);
	if (shape.empty())
	{
		shape = {1};
	}
	Tensor<T> out(shape);
	for (int r = 0; r < rows; ++r)
	{
		T acc{0};
		for (int c = 0; c < cols; ++c)
		{
			const std::size_t i = static_cast<std::size_t>(r) * cols + c;
			const T z = (x.value()[i] - mean.value()[i]) / stddev.value()[i];
			acc += -T{0.5} * z * z - std::log(stddev.value()[i]) - half_log_two_pi<T>;
		}
		out[r] = acc;
	}
	return ad::detail::make(std::move(out), {x, mean, stddev}, [rows, cols](ad::Node<T>& self) {
		auto* gx = ad::detail::grad_of(self, 0);
		auto* gm = ad::detail::grad_of(self, 1);
		auto* gs = ad::detail::grad_of(self, 2);
		const auto& xv = ad::detail::input_value(self, 0);
		const auto& mv = ad::detail::input_value(self, 1);
		const auto& sv = ad::detail::input_value(self, 2);
		for (int r = 0; r < rows; ++r)
		{
			const T g = self.grad[r];
			for (int c = 0; c < cols; ++c)
			{
				const std::size_t i = static_cast<std::size_t>(r) * cols + c;
				const T s = sv[i];
				const T d = xv[i] - mv[i];
				const T d_s2 = d / (s * s);
				if (gx) (*gx)[i] -= g * d_s2;
				if (gm) (*gm)[i] += g * d_s2;
				if (gs) (*gs)[i] += g * (d * d_s2 / s - T{1} / s);
			}
		}
	});
}

/// Unit-variance Gaussian log-likelihood of a constant target under predicted means, summed over everything but
/// the leading extent. Shape [N].
template <class T>
ad::Var<T> unit_gaussian_log_prob(const ad::Var<T>& mean, const Tensor<T>& target)
{
	ad::detail::require(mean.size() == target.size(), "unit_gaussian_log_prob: size mismatch");
	const int n = mean.shape()[0];
	const int per = static_cast<int>(mean.size() / n);
	Tensor<T> out({n});
	const auto M = ad::as_mat(mean.value(), n, per);
	const auto X = ad::as_mat(target, n, per);
	ad::as_mat(out, n, 1) = (-T{0.5} * (X - M).array().square().rowwise().sum() - per * half_log_two_pi<T>).matrix();
	return ad::detail::make(std::move(out), {mean}, [n, per, target](ad::Node<T>& self) {
		if (auto* gm = ad::detail::grad_of(self, 0))
		{
			const auto M = ad::as_mat(ad::detail::input_value(self, 0), n, per);
			const auto X = ad::as_mat(target, n, per);
			const auto G = ad::as_mat(static_cast<const Tensor<T>&>(self.grad), n, 1);
			ad::as_mat(*gm, n, per) += ((X - M).array().colwise() * G.col(0).array()).matrix();
		}
	});
}

/// out[i, j] = log N(x_i; mean_j, stddev_j), each summed over the last extent. x [N, Z], mean/stddev [M, Z].
template <class T>
ad::Var<T> pairwise_gaussian_log_prob(const ad::Var<T>& x, const ad::Var<T>& mean, const ad::Var<T>& stddev)
{
	const int n = x.value().rows();
	const int z = x.value().cols();
	const int m = mean.value().rows();
	ad::detail::require(mean.value().cols() == z && stddev.size() == mean.size(), "pairwise_gaussian_log_prob: shapes");
	Tensor<T> out({n, m});
	std::vector<T> log_norm(m, T{0});
	for (int j = 0; j < m; ++j)
	{
		for (int d = 0; d < z; ++d)
		{
			log_norm[j] += std::log(stddev.value()(j, d)) + half_log_two_pi<T>;
		}
	}
	for (int i = 0; i < n; ++i)
	{
		for (int j = 0; j < m; ++j)
		{
			T acc{0};
			for (int d = 0; d < z; ++d)
			{
				const T e = (x.value()(i, d) - mean.value()(j, d)) / stddev.value()(j, d);
				acc += e * e;
			}
			out(i, j) = -T{0.5} * acc - log_norm[j];
		}
	}
	return ad::detail::make(std::move(out), {x, mean, stddev}, [n, m, z](ad::Node<T>& self) {
		auto* gx = ad::detail::grad_of(self, 0);
		auto* gm = ad::detail::grad_of(self, 1);
		auto* gs = ad::detail::grad_of(self, 2);
		const auto& xv = ad::detail::input_value(self, 0);
		const auto& mv = ad::detail::input_value(self, 1);
		const auto& sv = ad::detail::input_value(self, 2);
		for (int i = 0; i < n; ++i)
		{
			for (int j = 0; j < m; ++j)
			{
				const T g = self.grad(i, j);
				if (g == T{0})
				{
					continue;
				}
				for (int d = 0; d < z; ++d)
				{
					const T s = sv(j, d);
					const T diff = xv(i, d) - mv(j, d);
					const T d_s2 = diff / (s * s);
					if (gx) (*gx)(i, d) -= g * d_s2;
					if (gm) (*gm)(j, d) += g * d_s2;
					if (gs) (*gs)(j, d) += g * (diff * d_s2 / s - T{1} / s);
				}
			}
		}
	});
}

/// log sum_j exp(x[..., j]) with max shifting. Shape drops the last extent.
template <class T>
ad::Var<T> logsumexp_last(const ad::Var<T>& x)
{
	const int rows = x.value().rows();
	const int cols = x.value().cols();
	Shape shape(x.shape().begin(), x.shape().end() - 1);
	if (shape.empty())
	{
		shape = {1};
	}
	Tensor<T> out(shape);
	for (int r = 0; r < rows; ++r)
	{
		const T* row = x.value().data() + static_cast<std::size_t>(r) * cols;
		const T mx = *std::max_element(row, row + cols);
		T acc{0};
		for (int c = 0; c < cols; ++c)
		{
			acc += std::exp(row[c] - mx);
		}
		out[r] = mx + std::log(acc);
	}
	return ad::detail::make(std::move(out), {x}, [rows, cols](ad::Node<T>& self) {
		if (auto* gx = ad::detail::grad_of(self, 0))
		{
			const auto& xv = ad::detail::input_value(self, 0);
			for (int r = 0; r < rows; ++r)
			{
				for (int c = 0; c < cols; ++c)
				{
					const std::size_t i = static_cast<std::size_t>(r) * cols + c;
					(*gx)[i] += self.grad[r] * std::exp(xv[i] - self.value[r]);
				}
			}
		}
	});
}

/// Main diagonal of a square matrix.
template <class T>
ad::Var<T> diagonal(const ad::Var<T>& x)
{
	const int n = x.value().rows();
	ad::detail::require(x.value().cols() == n, "diagonal: matrix must be square");
	Tensor<T> out({n});
	for (int i = 0; i < n; ++i)
	{
		out[i] = x.value()(i, i);
	}
	return ad::detail::make(std::move(out), {x}, [n](ad::Node<T>& self) {
		if (auto* gx = ad::detail::grad_of(self, 0))
		{
			for (int i = 0; i < n; ++i)
			{
				(*gx)(i, i) += self.grad[i];
			}
		}
	});
}

/// Elementwise binary cross-entropy with soft targets, softplus(x) - t x.
template <class T>
ad::Var<T> bce_with_logits(const ad::Var<T>& logits, const Tensor<T>& targets)
{
	ad::detail::require(logits.size() == targets.size(), "bce_with_logits: size mismatch");
	Tensor<T> out(logits.shape());
	const auto X = ad::as_arr(logits.value());
	ad::as_arr(out) = X.max(T{0}) + (-X.abs()).exp().log1p() - ad::as_arr(targets) * X;
	return ad::detail::make(std::move(out), {logits}, [targets](ad::Node<T>& self) {
		if (auto* gx = ad::detail::grad_of(self, 0))
		{
			const auto X = ad::as_arr(ad::detail::input_value(self, 0));
			ad::as_arr(*gx) +=
				ad::as_arr(static_cast<const Tensor<T>&>(self.grad)) * ((T{1} + (-X).exp()).inverse() - ad::as_arr(targets));
		}
	});
}

/// Largest representable magnitude strictly below one; samples never reach the tanh asymptote.
template <class T>
inline T tanh_sample_bound()
{
	return std::nextafter(T{1}, T{0});
}

/// Magnitude cap applied to stored actions before atanh.
template <class T>
constexpr T atanh_clamp = static_cast<T>(1.0 - 1e-6);

/// tanh(mean + stddev * noise): the reparameterized tanh-Gaussian sample, differentiable in mean and stddev.
template <class T>
ad::Var<T> tanh_gaussian_sample(const DistParams<T>& params, const Tensor<T>& noise)
{
	if (params.kind != DistKind::TanhGaussian)
	{
		throw std::invalid_argument("tanh_gaussian_sample expects TanhGaussian parameters");
	}
	ad::detail::require(noise.size() == params.mean.size(), "tanh_gaussian_sample: noise shape mismatch");
	const T bound = tanh_sample_bound<T>();
	Tensor<T> out(params.mean.shape());
	ad::as_arr(out) =
		(ad::as_arr(params.mean.value()) + ad::as_arr(params.stddev.value()) * ad::as_arr(noise)).tanh().max(-bound).min(bound);
	return ad::detail::make(std::move(out), {params.mean, params.stddev}, [noise](ad::Node<T>& self) {
		const auto G = ad::as_arr(static_cast<const Tensor<T>&>(self.grad));
		const auto Y = ad::as_arr(static_cast<const Tensor<T>&>(self.value));
		const ad::Arr<T> d = G * (T{1} - Y.square());
		if (auto* gm = ad::detail::grad_of(self, 0))
		{
			ad::as_arr(*gm) += d;
		}
		if (auto* gs = ad::detail::grad_of(self, 1))
		{
			ad::as_arr(*gs) += d * ad::as_arr(noise);
		}
	});
}

/// Change-of-variables log-density of actions in (-1, 1). Shape [rows].
template <class T>
ad::Var<T> tanh_gaussian_log_prob(const DistParams<T>& params, const Tensor<T>& action)
{
	if (params.kind != DistKind::TanhGaussian)
	{
		throw std::invalid_argument("tanh_gaussian_log_prob expects TanhGaussian parameters");
	}
	ad::detail::require(action.size() == params.mean.size(), "tanh_gaussian_log_prob: action shape mismatch");
	Tensor<T> pre(action.shape());
	Tensor<T> jacobian(action.shape());
	for (std::size_t i = 0; i < action.size(); ++i)
	{
		const T a = action[i];
		if (!(std::abs(a) < T{1}))
		{
			throw std::invalid_argument("tanh_gaussian_log_prob: action on or outside the (-1, 1) boundary");
		}
		const T c = std::clamp(a, -atanh_clamp<T>, atanh_clamp<T>);
		pre[i] = std::atanh(c);
		jacobian[i] = std::log(T{1} - c * c);
	}
	auto base = gaussian_log_prob(ad::Var<T>::constant(pre), params.mean, params.stddev);
	Tensor<T> correction(base.shape());
	const int cols = action.cols();
	for (int r = 0; r < action.rows(); ++r)
	{
		T acc{0};
		for (int c = 0; c < cols; ++c)
		{
			acc += jacobian(r, c);
		}
		correction[r] = -acc;
	}
	return ad::add_const(base, correction);
}

/// Single-sample entropy estimate -log pi(a) of a reparameterized tanh-Gaussian sample, dropping constants that
/// do not depend on the parameters. Shape [rows].
template <class T>
ad::Var<T> tanh_gaussian_entropy_estimate(const DistParams<T>& params, const ad::Var<T>& sample)
{
	auto one_minus_sq = ad::add_scalar(ad::scale(ad::square(sample), T{-1}), T{1});
	return ad::add(ad::sum_last(ad::log(params.stddev)), ad::sum_last(ad::log(one_minus_sq)));
}

/// One-hot sample of a categorical via the Gumbel-max construction with a straight-through backward pass: the
/// forward value is exactly one-hot, the backward pass differentiates the softmax probabilities instead. With an
/// empty noise tensor the sample is the argmax (evaluation mode).
template <class T>
ad::Var<T> categorical_sample_st(const ad::Var<T>& logits, const Tensor<T>& uniform_noise)
{
	if (!logits.value().all_finite())
	{
		throw std::invalid_argument("categorical_sample_st: logits must be finite");
	}
	const int rows = logits.value().rows();
	const int k = logits.value().cols();
	const bool sample = !uniform_noise.empty();
	ad::detail::require(!sample || uniform_noise.size() == logits.size(), "categorical_sample_st: noise shape mismatch");
	Tensor<T> out(logits.shape());
	Tensor<T> probs(logits.shape());
	constexpr T tiny = std::numeric_limits<T>::min() * T{16};
	for (int r = 0; r < rows; ++r)
	{
		int best = 0;
		T best_score = -std::numeric_limits<T>::infinity();
		T mx = -std::numeric_limits<T>::infinity();
		for (int c = 0; c < k; ++c)
		{
			mx = std::max(mx, logits.value()(r, c));
		}
		T total{0};
		for (int c = 0; c < k; ++c)
		{
			const T l = logits.value()(r, c);
			probs(r, c) = std::exp(l - mx);
			total += probs(r, c);
			T score = l;
			if (sample)
			{
				const T u = std::clamp(uniform_noise(r, c), tiny, T{1} - std::numeric_limits<T>::epsilon());
				score += -std::log(-std::log(u));
			}
			if (score > best_score)
			{
				best_score = score;
				best = c;
			}
		}
		for (int c = 0; c < k; ++c)
		{
			probs(r, c) /= total;
		}
		out(r, best) = T{1};
	}
	return ad::detail::make(std::move(out), {logits}, [probs, rows, k](ad::Node<T>& self) {
		if (auto* gx = ad::detail::grad_of(self, 0))
		{
			for (int r = 0; r < rows; ++r)
			{
				T dot{0};
				for (int c = 0; c < k; ++c)
				{
					dot += self.grad(r, c) * probs(r, c);
				}
				for (int c = 0; c < k; ++c)
				{
					(*gx)(r, c) += probs(r, c) * (self.grad(r, c) - dot);
				}
			}
		}
	});
}

/// Exact entropy of categorical rows, -sum p log p. Shape [rows].
template <class T>
ad::Var<T> categorical_entropy(const ad::Var<T>& logits)
{
	const int rows = logits.value().rows();
	const int k = logits.value().cols();
	Tensor<T> logp(logits.shape());
	Tensor<T> out({rows});
	for (int r = 0; r < rows; ++r)
	{
		T mx = -std::numeric_limits<T>::infinity();
		for (int c = 0; c < k; ++c)
		{
			mx = std::max(mx, logits.value()(r, c));
		}
		T total{0};
		for (int c = 0; c < k; ++c)
		{
			total += std::exp(logits.value()(r, c) - mx);
		}
		const T lse = mx + std::log(total);
		T h{0};
		for (int c = 0; c < k; ++c)
		{
			logp(r, c) = logits.value()(r, c) - lse;
			h -= std::exp(logp(r, c)) * logp(r, c);
		}
		out[r] = h;
	}
	return ad::detail::make(std::move(out), {logits}, [logp, rows, k](ad::Node<T>& self) {
		if (auto* gx = ad::detail::grad_of(self, 0))
		{
			for (int r = 0; r < rows; ++r)
			{
				const T h = self.value[r];
				for (int c = 0; c < k; ++c)
				{
					(*gx)(r, c) -= self.grad[r] * std::exp(logp(r, c)) * (logp(r, c) + h);
				}
			}
		}
	});
}

} // namespace dreamer
