#pragma once

// Tape-free reverse-mode differentiation over Tensor values. Every op returns a Var whose node remembers its
// inputs and a closure that pushes the node's gradient back into them. backward() walks the graph in reverse
// topological order. Nodes whose inputs never require gradients carry no closure, so frozen or constant
// subgraphs cost nothing on the backward pass.

#include "dreamer/tensor.hpp"

#include <Eigen/Core>

#include <cassert>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dreamer::ad {

template <class T>
struct Node
{
	Tensor<T> value;
	Tensor<T> grad;
	bool requires_grad = false;
	std::vector<std::shared_ptr<Node>> inputs;
	std::function<void(Node&)> backward;

	Tensor<T>& grad_buffer()
	{
		if (grad.size() != value.size())
		{
			grad = Tensor<T>(value.shape());
		}
		return grad;
	}
};

namespace detail {
inline thread_local int no_grad_depth = 0;
} // namespace detail

inline bool grad_enabled()
{
	return detail::no_grad_depth == 0;
}

/// While alive, ops on this thread build no backward graph.
class NoGradGuard
{
public:
	NoGradGuard() { ++detail::no_grad_depth; }
	~NoGradGuard() { --detail::no_grad_depth; }
	NoGradGuard(const NoGradGuard&) = delete;
	NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
class Var
{
public:
	Var() = default;
	explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

	static Var constant(Tensor<T> value)
	{
		auto n = std::make_shared<Node<T>>();
		n->value = std::move(value);
		return Var(std::move(n));
	}

	static Var parameter(Tensor<T> value)
	{
		auto n = std::make_shared<Node<T>>();
		n->value = std::move(value);
		n->requires_grad = true;
		return Var(std::move(n));
	}

	bool defined() const { return static_cast<bool>(node_); }
	const Tensor<T>& value() const { return node_->value; }
	const Tensor<T>& grad() const { return node_->grad; }
	const Shape& shape() const { return node_->value.shape(); }
	std::size_t size() const { return node_->value.size(); }
	T item() const { return node_->value.item(); }
	bool requires_grad() const { return node_ && node_->requires_grad; }
	bool is_leaf() const { return !node_->backward; }

	// Leaf-only mutation, used by optimizers and checkpoint loading.
	Tensor<T>& mutable_value()
	{
		if (!is_leaf())
		{
			throw std::logic_error("mutable_value() on a non-leaf variable");
		}
		return node_->value;
	}
	Tensor<T>& mutable_grad() { return node_->grad_buffer(); }

	void set_requires_grad(bool on)
	{
		if (!is_leaf())
		{
			throw std::logic_error("set_requires_grad() on a non-leaf variable");
		}
		node_->requires_grad = on;
	}

	void zero_grad() { node_->grad = Tensor<T>(); }
	bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->grad.empty(); }

	Var detach() const { return constant(node_->value); }

	Node<T>* node() const { return node_.get(); }
	const std::shared_ptr<Node<T>>& ptr() const { return node_; }

private:
	std::shared_ptr<Node<T>> node_;
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
template <class T>
using ArrMap = Eigen::Map<Arr<T>>;
template <class T>
using CArrMap = Eigen::Map<const Arr<T>>;

template <class T>
MatMap<T> as_mat(Tensor<T>& t, int rows, int cols)
{
	return MatMap<T>(t.data(), rows, cols);
}
template <class T>
CMatMap<T> as_mat(const Tensor<T>& t, int rows, int cols)
{
	return CMatMap<T>(t.data(), rows, cols);
}
template <class T>
ArrMap<T> as_arr(Tensor<T>& t)
{
	return ArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}
template <class T>
CArrMap<T> as_arr(const Tensor<T>& t)
{
	return CArrMap<T>(t.data(), static_cast<Eigen::Index>(t.size()));
}

namespace detail {

// Builds a result node. The backward closure is attached only when some input needs a gradient.
template <class T, class Backward>
Var<T> make(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward&& backward)
{
	auto n = std::make_shared<Node<T>>();
	n->value = std::move(value);
	if (grad_enabled())
	{
		bool any = false;
		for (const auto& in : inputs)
		{
			any = any || in.requires_grad();
		}
		if (any)
		{
			n->requires_grad = true;
			n->inputs.reserve(inputs.size());
			for (const auto& in : inputs)
			{
				n->inputs.push_back(in.ptr());
			}
			n->backward = std::forward<Backward>(backward);
		}
	}
	return Var<T>(std::move(n));
}

template <class T, class Backward>
Var<T> make(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward&& backward)
{
	auto n = std::make_shared<Node<T>>();
	n->value = std::move(value);
	if (grad_enabled())
	{
		bool any = false;
		for (const auto& in : inputs)
		{
			any = any || in.requires_grad();
		}
		if (any)
		{
			n->requires_grad = true;
			for (const auto& in : inputs)
			{
				n->inputs.push_back(in.ptr());
			}
			n->backward = std::forward<Backward>(backward);
		}
	}
	return Var<T>(std::move(n));
}

// Gradient accumulator of input i, or null when that input is constant.
template <class T>
Tensor<T>* grad_of(Node<T>& self, std::size_t i)
{
	auto& in = *self.inputs[i];
	return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <class T>
const Tensor<T>& input_value(const Node<T>& self, std::size_t i)
{
	return self.inputs[i]->value;
}

inline void require(bool ok, const std::string& what)
{
	if (!ok)
	{
		throw std::invalid_argument(what);
	}
}

} // namespace detail

/// Reverse sweep from root. Leaf gradients accumulate; intermediate gradients are released once consumed.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr)
{
	if (!root.requires_grad())
	{
		return;
	}
	std::vector<Node<T>*> order;
	std::unordered_set<Node<T>*> seen;
	std::vector<std::pair<Node<T>*, std::size_t>> stack;
	stack.emplace_back(root.node(), 0);
	seen.insert(root.node());
	while (!stack.empty())
	{
		Node<T>* n = stack.back().first;
		std::size_t i = stack.back().second;
		if (i < n->inputs.size())
		{
			stack.back().second = i + 1;
			Node<T>* child = n->inputs[i].get();
			if (child->requires_grad && seen.insert(child).second)
			{
				stack.emplace_back(child, 0);
			}
		}
		else
		{
			order.push_back(n);
			stack.pop_back();
		}
	}

	Node<T>* r = root.node();
	if (seed)
	{
		detail::require(seed->size() == r->value.size(), "backward seed does not match root shape");
		auto& g = r->grad_buffer();
		as_arr(g) += as_arr(*seed);
	}
	else
	{
		detail::require(r->value.size() == 1, "backward() without a seed needs a scalar root");
		r->grad_buffer()[0] += T{1};
	}

	for (auto it = order.rbegin(); it != order.rend(); ++it)
	{
		Node<T>* n = *it;
		if (n->backward && n->grad.size() == n->value.size() && !n->grad.empty())
		{
			n->backward(*n);
			n->grad = Tensor<T>();
		}
	}
}

// ---------------------------------------------------------------------------------------------------------------
// Dense algebra

/// y = x W + b, with x viewed as [rows, in].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b)
{
	const int in = x.value().cols();
	const int rows = x.value().rows();
	detail::require(w.value().rank() == 2 && w.value().dim(0) == in,
		"linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
	const int out = w.value().dim(1);
	Shape shape = x.shape();
	shape.back() = out;
	auto y = Tensor<T>::uninit(shape);
	auto Y = as_mat(y, rows, out);
	Y.noalias() = as_mat(x.value(), rows, in) * as_mat(w.value(), in, out);
	if (b.defined())
	{
		detail::require(b.size() == static_cast<std::size_t>(out), "linear: bias size mismatch");
		Y.rowwise() += as_mat(b.value(), 1, out).row(0);
	}
	auto bw = [rows, in, out](Node<T>& self) {
		auto G = as_mat(static_cast<const Tensor<T>&>(self.grad), rows, out);
		const auto X = as_mat(detail::input_value(self, 0), rows, in);
		const auto W = as_mat(detail::input_value(self, 1), in, out);
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_mat(*gx, rows, in).noalias() += G * W.transpose();
		}
		if (auto* gw = detail::grad_of(self, 1))
		{
			as_mat(*gw, in, out).noalias() += X.transpose() * G;
		}
		if (self.inputs.size() > 2)
		{
			if (auto* gb = detail::grad_of(self, 2))
			{
				as_mat(*gb, 1, out) += G.colwise().sum();
			}
		}
	};
	if (b.defined())
	{
		return detail::make(std::move(y), {x, w, b}, bw);
	}
	return detail::make(std::move(y), {x, w}, bw);
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b)
{
	return linear(a, b, Var<T>());
}

// ---------------------------------------------------------------------------------------------------------------
// Elementwise

namespace detail {

template <class T, class Fwd, class Bwd>
Var<T> unary(const Var<T>& x, Fwd fwd, Bwd bwd)
{
	auto y = Tensor<T>::uninit(x.shape());
	fwd(as_arr(x.value()), as_arr(y));
	return make(std::move(y), {x}, [bwd](Node<T>& self) {
		if (auto* gx = grad_of(self, 0))
		{
			bwd(as_arr(static_cast<const Tensor<T>&>(self.grad)), as_arr(input_value(self, 0)),
				as_arr(static_cast<const Tensor<T>&>(self.value)), as_arr(*gx));
		}
	});
}

template <class T>
void same_size(const Var<T>& a, const Var<T>& b, const char* op)
{
	require(a.size() == b.size(),
		std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace detail

template <class T>
Var<T> elu(const Var<T>& x)
{
	return detail::unary(
		x,
		[](auto X, auto Y) { Y = X.max(T{0}) + (X.min(T{0}).exp() - T{1}); },
		[](auto G, auto X, auto, auto GX) { GX += G * X.min(T{0}).exp(); });
}

template <class T>
Var<T> tanh(const Var<T>& x)
{
	return detail::unary(
		x, [](auto X, auto Y) { Y = X.tanh(); }, [](auto G, auto, auto Y, auto GX) { GX += G * (T{1} - Y.square()); });
}

template <class T>
Var<T> sigmoid(const Var<T>& x)
{
	return detail::unary(
		x,
		[](auto X, auto Y) { Y = (T{1} + (-X).exp()).inverse(); },
		[](auto G, auto, auto Y, auto GX) { GX += G * Y * (T{1} - Y); });
}

template <class T>
Var<T> softplus(const Var<T>& x)
{
	return detail::unary(
		x,
		[](auto X, auto Y) { Y = X.max(T{0}) + (-X.abs()).exp().log1p(); },
		[](auto G, auto X, auto, auto GX) { GX += G * (T{1} + (-X).exp()).inverse(); });
}

template <class T>
Var<T> exp(const Var<T>& x)
{
	return detail::unary(
		x, [](auto X, auto Y) { Y = X.exp(); }, [](auto G, auto, auto Y, auto GX) { GX += G * Y; });
}

template <class T>
Var<T> log(const Var<T>& x)
{
	return detail::unary(
		x, [](auto X, auto Y) { Y = X.log(); }, [](auto G, auto X, auto, auto GX) { GX += G / X; });
}

template <class T>
Var<T> square(const Var<T>& x)
{
	return detail::unary(
		x, [](auto X, auto Y) { Y = X.square(); }, [](auto G, auto X, auto, auto GX) { GX += T{2} * G * X; });
}

template <class T>
Var<T> scale(const Var<T>& x, T c)
{
	return detail::unary(
		x, [c](auto X, auto Y) { Y = c * X; }, [c](auto G, auto, auto, auto GX) { GX += c * G; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T c)
{
	return detail::unary(
		x, [c](auto X, auto Y) { Y = X + c; }, [](auto G, auto, auto, auto GX) { GX += G; });
}

/// max(x, c) elementwise; the gradient is exactly zero wherever x < c.
template <class T>
Var<T> max_scalar(const Var<T>& x, T c)
{
	return detail::unary(
		x,
		[c](auto X, auto Y) { Y = X.max(c); },
		[c](auto G, auto X, auto, auto GX) { GX += (X > c).select(G, T{0}); });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
	detail::same_size(a, b, "add");
	auto y = Tensor<T>::uninit(a.shape());
	as_arr(y) = as_arr(a.value()) + as_arr(b.value());
	return detail::make(std::move(y), {a, b}, [](Node<T>& self) {
		const auto G = as_arr(static_cast<const Tensor<T>&>(self.grad));
		if (auto* ga = detail::grad_of(self, 0))
		{
			as_arr(*ga) += G;
		}
		if (auto* gb = detail::grad_of(self, 1))
		{
			as_arr(*gb) += G;
		}
	});
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b)
{
	detail::same_size(a, b, "sub");
	auto y = Tensor<T>::uninit(a.shape());
	as_arr(y) = as_arr(a.value()) - as_arr(b.value());
	return detail::make(std::move(y), {a, b}, [](Node<T>& self) {
		const auto G = as_arr(static_cast<const Tensor<T>&>(self.grad));
		if (auto* ga = detail::grad_of(self, 0))
		{
			as_arr(*ga) += G;
		}
		if (auto* gb = detail::grad_of(self, 1))
		{
			as_arr(*gb) -= G;
		}
	});
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
	detail::same_size(a, b, "mul");
	auto y = Tensor<T>::uninit(a.shape());
	as_arr(y) = as_arr(a.value()) * as_arr(b.value());
	return detail::make(std::move(y), {a, b}, [](Node<T>& self) {
		const auto G = as_arr(static_cast<const Tensor<T>&>(self.grad));
		if (auto* ga = detail::grad_of(self, 0))
		{
			as_arr(*ga) += G * as_arr(detail::input_value(self, 1));
		}
		if (auto* gb = detail::grad_of(self, 1))
		{
			as_arr(*gb) += G * as_arr(detail::input_value(self, 0));
		}
	});
}

/// x * c for a constant tensor c of the same size.
template <class T>
Var<T> mul_const(const Var<T>& x, const Tensor<T>& c)
{
	detail::require(x.size() == c.size(), "mul_const: size mismatch");
	auto y = Tensor<T>::uninit(x.shape());
	as_arr(y) = as_arr(x.value()) * as_arr(c);
	return detail::make(std::move(y), {x}, [c](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_arr(*gx) += as_arr(static_cast<const Tensor<T>&>(self.grad)) * as_arr(c);
		}
	});
}

template <class T>
Var<T> add_const(const Var<T>& x, const Tensor<T>& c)
{
	detail::require(x.size() == c.size(), "add_const: size mismatch");
	auto y = Tensor<T>::uninit(x.shape());
	as_arr(y) = as_arr(x.value()) + as_arr(c);
	return detail::make(std::move(y), {x}, [](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_arr(*gx) += as_arr(static_cast<const Tensor<T>&>(self.grad));
		}
	});
}

// ---------------------------------------------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(const Var<T>& x)
{
	Tensor<T> y = Tensor<T>::scalar(x.value().sum());
	return detail::make(std::move(y), {x}, [](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_arr(*gx) += self.grad[0];
		}
	});
}

template <class T>
Var<T> mean(const Var<T>& x)
{
	const T n = static_cast<T>(x.size());
	Tensor<T> y = Tensor<T>::scalar(x.value().sum() / n);
	return detail::make(std::move(y), {x}, [n](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_arr(*gx) += self.grad[0] / n;
		}
	});
}

/// Sum over the last extent: [..., k] -> [...] (a rank-1 input gives shape [1]).
template <class T>
Var<T> sum_last(const Var<T>& x)
{
	const int rows = x.value().rows();
	const int cols = x.value().cols();
	Shape shape(x.shape().begin(), x.shape().end() - 1);
	if (shape.empty())
	{
		shape = {1};
	}
	Tensor<T> y(shape);
	as_mat(y, rows, 1) = as_mat(x.value(), rows, cols).rowwise().sum();
	return detail::make(std::move(y), {x}, [rows, cols](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			auto G = as_mat(static_cast<const Tensor<T>&>(self.grad), rows, 1);
			as_mat(*gx, rows, cols).colwise() += G.col(0);
		}
	});
}

// ---------------------------------------------------------------------------------------------------------------
// Structural

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape)
{
	Tensor<T> y = x.value().reshape(std::move(shape));
	return detail::make(std::move(y), {x}, [](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_arr(*gx) += as_arr(static_cast<const Tensor<T>&>(self.grad));
		}
	});
}

/// Concatenation along the last extent; all parts share the same row count.
template <class T>
Var<T> concat_last(const std::vector<Var<T>>& parts)
{
	detail::require(!parts.empty(), "concat_last: no inputs");
	const int rows = parts[0].value().rows();
	int total = 0;
	std::vector<int> widths;
	for (const auto& p : parts)
	{
		detail::require(p.value().rows() == rows, "concat_last: row count mismatch");
		widths.push_back(p.value().cols());
		total += widths.back();
	}
	Shape shape = parts[0].shape();
	shape.back() = total;
	Tensor<T> y(shape);
	auto Y = as_mat(y, rows, total);
	int off = 0;
	for (std::size_t i = 0; i < parts.size(); ++i)
	{
		Y.middleCols(off, widths[i]) = as_mat(parts[i].value(), rows, widths[i]);
		off += widths[i];
	}
	return detail::make(std::move(y), parts, [rows, total, widths](Node<T>& self) {
		const auto G = as_mat(static_cast<const Tensor<T>&>(self.grad), rows, total);
		int o = 0;
		for (std::size_t i = 0; i < widths.size(); ++i)
		{
			if (auto* gi = detail::grad_of(self, i))
			{
				as_mat(*gi, rows, widths[i]) += G.middleCols(o, widths[i]);
			}
			o += widths[i];
		}
	});
}

template <class T>
Var<T> slice_last(const Var<T>& x, int start, int width)
{
	const int rows = x.value().rows();
	const int cols = x.value().cols();
	detail::require(start >= 0 && start + width <= cols, "slice_last: out of range");
	Shape shape = x.shape();
	shape.back() = width;
	Tensor<T> y(shape);
	as_mat(y, rows, width) = as_mat(x.value(), rows, cols).middleCols(start, width);
	return detail::make(std::move(y), {x}, [rows, cols, start, width](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			as_mat(*gx, rows, cols).middleCols(start, width) += as_mat(static_cast<const Tensor<T>&>(self.grad), rows, width);
		}
	});
}

/// Concatenation along the leading extent.
template <class T>
Var<T> concat0(const std::vector<Var<T>>& parts)
{
	detail::require(!parts.empty(), "concat0: no inputs");
	Shape shape = parts[0].shape();
	int lead = 0;
	std::vector<std::size_t> sizes;
	for (const auto& p : parts)
	{
		detail::require(p.value().rank() == static_cast<int>(shape.size()), "concat0: rank mismatch");
		for (std::size_t d = 1; d < shape.size(); ++d)
		{
			detail::require(p.shape()[d] == shape[d], "concat0: trailing shape mismatch");
		}
		lead += p.shape()[0];
		sizes.push_back(p.size());
	}
	shape[0] = lead;
	Tensor<T> y(shape);
	std::size_t off = 0;
	for (const auto& p : parts)
	{
		std::copy(p.value().data(), p.value().data() + p.size(), y.data() + off);
		off += p.size();
	}
	return detail::make(std::move(y), parts, [sizes](Node<T>& self) {
		std::size_t o = 0;
		for (std::size_t i = 0; i < sizes.size(); ++i)
		{
			if (auto* gi = detail::grad_of(self, i))
			{
				as_arr(*gi) += CArrMap<T>(self.grad.data() + o, static_cast<Eigen::Index>(sizes[i]));
			}
			o += sizes[i];
		}
	});
}

template <class T>
Var<T> slice0(const Var<T>& x, int start, int count)
{
	Tensor<T> y = x.value().slice0(start, count);
	const std::size_t off = static_cast<std::size_t>(start) * (x.size() / x.shape()[0]);
	return detail::make(std::move(y), {x}, [off](Node<T>& self) {
		if (auto* gx = detail::grad_of(self, 0))
		{
			ArrMap<T>(gx->data() + off, static_cast<Eigen::Index>(self.grad.size())) +=
				as_arr(static_cast<const Tensor<T>&>(self.grad));
		}
	});
}

// Operator sugar for the common binary forms.
template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b)
{
	return add(a, b);
}
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b)
{
	return sub(a, b);
}
template <class T>
Var<T> operator*(const Var<T>& a, const Var<T>& b)
{
	return mul(a, b);
}

} // namespace dreamer::ad
