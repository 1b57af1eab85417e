#pragma once

// Strided convolutions over NHWC images with "valid" padding, lowered to GEMM via im2col.

#include "dreamer/autodiff.hpp"

#include <memory>

namespace dreamer::ad {

namespace detail {

struct ConvGeometry
{
	int n, h, w, c; // input
	int k, stride;
	int oh, ow;     // output positions of the patch grid
};

// Gathers k x k x c patches into rows: cols[(n, oy, ox), (ky, kx, c)].
template <class T>
void im2col(const T* src, const ConvGeometry& g, T* cols)
{
	const int run = g.k * g.c;
	const std::size_t row_len = static_cast<std::size_t>(g.k) * run;
	std::size_t row = 0;
	for (int n = 0; n < g.n; ++n)
	{
		for (int oy = 0; oy < g.oh; ++oy)
		{
			for (int ox = 0; ox < g.ow; ++ox, ++row)
			{
				T* dst = cols + row * row_len;
				for (int ky = 0; ky < g.k; ++ky)
				{
					const T* s = src + ((static_cast<std::size_t>(n) * g.h + oy * g.stride + ky) * g.w + ox * g.stride) * g.c;
					std::copy(s, s + run, dst + ky * run);
				}
			}
		}
	}
}

// Adjoint of im2col: scatter-adds patch rows back into the image.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dst)
{
	const int run = g.k * g.c;
	const std::size_t row_len = static_cast<std::size_t>(g.k) * run;
	std::size_t row = 0;
	for (int n = 0; n < g.n; ++n)
	{
		for (int oy = 0; oy < g.oh; ++oy)
		{
			for (int ox = 0; ox < g.ow; ++ox, ++row)
			{
				const T* src = cols + row * row_len;
				for (int ky = 0; ky < g.k; ++ky)
				{
					T* d = dst + ((static_cast<std::size_t>(n) * g.h + oy * g.stride + ky) * g.w + ox * g.stride) * g.c;
					const T* s = src + ky * run;
					for (int i = 0; i < run; ++i)
					{
						d[i] += s[i];
					}
				}
			}
		}
	}
}

} // namespace detail

/// x [N, H, W, C], w [k, k, C, F], b [F] -> [N, (H-k)/s+1, (W-k)/s+1, F].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride)
{
	detail::require(x.value().rank() == 4, "conv2d: input must be NHWC, got " + shape_str(x.shape()));
	detail::require(w.value().rank() == 4, "conv2d: kernel must be [k, k, C, F]");
	const auto& xs = x.shape();
	const auto& ws = w.shape();
	detail::require(ws[0] == ws[1] && ws[2] == xs[3], "conv2d: kernel " + shape_str(ws) + " vs input " + shape_str(xs));
	detail::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], stride, 0, 0};
	detail::require(g.h >= g.k && g.w >= g.k, "conv2d: kernel larger than input");
	g.oh = (g.h - g.k) / stride + 1;
	g.ow = (g.w - g.k) / stride + 1;
	const int filters = ws[3];
	const int patch = g.k * g.k * g.c;
	const int rows = g.n * g.oh * g.ow;

	auto cols = std::make_shared<Tensor<T>>(Tensor<T>::uninit({rows, patch}));
	detail::im2col(x.value().data(), g, cols->data());
	auto y = Tensor<T>::uninit({g.n, g.oh, g.ow, filters});
	auto Y = as_mat(y, rows, filters);
	Y.noalias() = as_mat(*cols, rows, patch) * as_mat(w.value(), patch, filters);
	Y.rowwise() += as_mat(b.value(), 1, filters).row(0);

	return detail::make(std::move(y), {x, w, b}, [g, cols, rows, patch, filters](Node<T>& self) {
		const auto G = as_mat(static_cast<const Tensor<T>&>(self.grad), rows, filters);
		if (auto* gw = detail::grad_of(self, 1))
		{
			as_mat(*gw, patch, filters).noalias() += as_mat(static_cast<const Tensor<T>&>(*cols), rows, patch).transpose() * G;
		}
		if (auto* gb = detail::grad_of(self, 2))
		{
			as_mat(*gb, 1, filters) += G.colwise().sum();
		}
		if (auto* gx = detail::grad_of(self, 0))
		{
			auto dcols = Tensor<T>::uninit({rows, patch});
			as_mat(dcols, rows, patch).noalias() = G * as_mat(detail::input_value(self, 1), patch, filters).transpose();
			detail::col2im(dcols.data(), g, gx->data());
		}
	});
}

/// x [N, H, W, C], w [C, k, k, F], b [F] -> [N, (H-1)s+k, (W-1)s+k, F].
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride)
{
	detail::require(x.value().rank() == 4, "conv_transpose2d: input must be NHWC, got " + shape_str(x.shape()));
	detail::require(w.value().rank() == 4, "conv_transpose2d: kernel must be [C, k, k, F]");
	const auto& xs = x.shape();
	const auto& ws = w.shape();
	detail::require(ws[0] == xs[3] && ws[1] == ws[2],
		"conv_transpose2d: kernel " + shape_str(ws) + " vs input " + shape_str(xs));
	const int k = ws[1];
	const int filters = ws[3];
	const int oh = (xs[1] - 1) * stride + k;
	const int ow = (xs[2] - 1) * stride + k;
	// Geometry of the output image seen as an im2col source whose patch grid is the input grid.
	detail::ConvGeometry g{xs[0], oh, ow, filters, k, stride, xs[1], xs[2]};
	const int rows = xs[0] * xs[1] * xs[2];
	const int in_c = xs[3];
	const int patch = k * k * filters;

	auto cols = Tensor<T>::uninit({rows, patch});
	as_mat(cols, rows, patch).noalias() = as_mat(x.value(), rows, in_c) * as_mat(w.value(), in_c, patch);
	Tensor<T> y({xs[0], oh, ow, filters});
	detail::col2im(cols.data(), g, y.data());
	as_mat(y, xs[0] * oh * ow, filters).rowwise() += as_mat(b.value(), 1, filters).row(0);

	return detail::make(std::move(y), {x, w, b}, [g, rows, in_c, patch, filters](Node<T>& self) {
		if (auto* gb = detail::grad_of(self, 2))
		{
			as_mat(*gb, 1, filters) += as_mat(static_cast<const Tensor<T>&>(self.grad), g.n * g.h * g.w, filters).colwise().sum();
		}
		auto* gx = detail::grad_of(self, 0);
		auto* gw = detail::grad_of(self, 1);
		if (!gx && !gw)
		{
			return;
		}
		auto dcols = Tensor<T>::uninit({rows, patch});
		detail::im2col(self.grad.data(), g, dcols.data());
		const auto D = as_mat(static_cast<const Tensor<T>&>(dcols), rows, patch);
		if (gx)
		{
			as_mat(*gx, rows, in_c).noalias() += D * as_mat(detail::input_value(self, 1), in_c, patch).transpose();
		}
		if (gw)
		{
			as_mat(*gw, in_c, patch).noalias() += as_mat(detail::input_value(self, 0), rows, in_c).transpose() * D;
		}
	});
}

} // namespace dreamer::ad
