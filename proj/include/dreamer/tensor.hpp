#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dreamer {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape)
{
	std::size_t n = 1;
	for (int d : shape)
	{
		if (d < 0)
		{
			throw std::invalid_argument("negative extent in shape");
		}
		n *= static_cast<std::size_t>(d);
	}
	return n;
}

inline std::string shape_str(const Shape& shape)
{
	std::ostringstream os;
	os << "[";
	for (std::size_t i = 0; i < shape.size(); ++i)
	{
		os << (i ? ", " : "") << shape[i];
	}
	os << "]";
	return os.str();
}

/// 64-byte aligned storage, so vectorized kernels take the same code path regardless of where a buffer lands.
template <class T>
struct AlignedAllocator
{
	using value_type = T;
	static constexpr std::align_val_t alignment{64};

	AlignedAllocator() = default;
	template <class U>
	AlignedAllocator(const AlignedAllocator<U>&) noexcept
	{
	}

	T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
	void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

	// Value-less construction default-initializes, so uninit() buffers skip the zero fill.
	template <class U>
	void construct(U* p) noexcept
	{
		::new (static_cast<void*>(p)) U;
	}
	template <class U, class... Args>
	void construct(U* p, Args&&... args)
	{
		::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
	}

	template <class U>
	bool operator==(const AlignedAllocator<U>&) const noexcept
	{
		return true;
	}
};

/// Dense row-major array of reals. The shape is fixed at construction; reshaping produces a new value.
template <class T>
class Tensor
{
public:
	using value_type = T;
	using Storage = std::vector<T, AlignedAllocator<T>>;

	Tensor() = default;

	explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

	Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), Storage(values)) {}

	Tensor(Shape shape, const std::vector<T>& values) : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

	Tensor(Shape shape, Storage values) : shape_(std::move(shape)), data_(std::move(values))
	{
		if (data_.size() != shape_size(shape_))
		{
			throw std::invalid_argument(
				"tensor value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
		}
	}

	static Tensor scalar(T v) { return Tensor({1}, Storage{v}); }

	/// Tensor with unspecified contents, for outputs that are fully overwritten.
	static Tensor uninit(Shape shape)
	{
		Tensor t;
		t.data_ = Storage(shape_size(shape));
		t.shape_ = std::move(shape);
		return t;
	}

	const Shape& shape() const { return shape_; }
	int rank() const { return static_cast<int>(shape_.size()); }
	int dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : i); }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	// Matrix view used by the kernels: the last extent is the column count, everything before it folds into rows.
	int cols() const { return shape_.empty() ? 0 : shape_.back(); }
	int rows() const { return cols() == 0 ? 0 : static_cast<int>(data_.size() / cols()); }

	T* data() { return data_.data(); }
	const T* data() const { return data_.data(); }
	std::span<T> values() { return data_; }
	std::span<const T> values() const { return data_; }
	std::vector<T> vec() const { return {data_.begin(), data_.end()}; }

	T& operator[](std::size_t i) { return data_[i]; }
	const T& operator[](std::size_t i) const { return data_[i]; }
	T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
	const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

	T item() const
	{
		if (data_.size() != 1)
		{
			throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
		}
		return data_[0];
	}

	Tensor reshape(Shape shape) const
	{
		if (shape_size(shape) != data_.size())
		{
			throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
		}
		return Tensor(std::move(shape), data_);
	}

	void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

	bool all_finite() const
	{
		return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
	}

	template <class U>
	Tensor<U> cast() const
	{
		return Tensor<U>(shape_, typename Tensor<U>::Storage(data_.begin(), data_.end()));
	}

	T sum() const { return std::accumulate(data_.begin(), data_.end(), T{0}); }
	T mean() const { return data_.empty() ? T{0} : sum() / static_cast<T>(data_.size()); }
	T max_abs() const
	{
		T m{0};
		for (T v : data_)
		{
			m = std::max(m, std::abs(v));
		}
		return m;
	}

	// Entries [start, start + count) along the leading dimension.
	Tensor slice0(int start, int count) const
	{
		if (shape_.empty() || start < 0 || start + count > shape_[0])
		{
			throw std::out_of_range("slice0 out of range for shape " + shape_str(shape_));
		}
		Shape s = shape_;
		s[0] = count;
		const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / shape_[0];
		Storage out(data_.begin() + start * stride, data_.begin() + (start + count) * stride);
		return Tensor(std::move(s), std::move(out));
	}

	friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
	Shape shape_;
	Storage data_;
};

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t)
{
	return Tensor<T>(t.shape());
}

} // namespace dreamer
