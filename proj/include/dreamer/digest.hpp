#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>

namespace dreamer {

/// 64-bit FNV-1a over raw bytes; chainable through `h`.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ull)
{
	const auto* p = static_cast<const unsigned char*>(data);
	for (std::size_t i = 0; i < n; ++i)
	{
		h ^= p[i];
		h *= 1099511628211ull;
	}
	return h;
}

inline std::string hex64(std::uint64_t v)
{
	char buf[17];
	std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
	return buf;
}

} // namespace dreamer
