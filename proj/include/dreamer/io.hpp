#pragma once

#include "dreamer/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamer::io {

/// Tiles a stack of frames [N, H, W, C] (values in [0, 1]) into one [rows * H, cols * W, C] image with 1-pixel gutters.
inline Tensor<float> tile_frames(const Tensor<float>& frames, int cols)
{
	if (frames.rank() != 4 || frames.dim(0) < 1)
	{
		throw std::invalid_argument("tile_frames: expected a non-empty [N, H, W, C] stack, got " + shape_str(frames.shape()));
	}
	const int n = frames.dim(0);
	const int h = frames.dim(1);
	const int w = frames.dim(2);
	const int c = frames.dim(3);
	cols = std::clamp(cols, 1, n);
	const int rows = (n + cols - 1) / cols;
	Tensor<float> out({rows * (h + 1) - 1, cols * (w + 1) - 1, c}, 1.0f);
	for (int i = 0; i < n; ++i)
	{
		const int oy = (i / cols) * (h + 1);
		const int ox = (i % cols) * (w + 1);
		for (int y = 0; y < h; ++y)
		{
			for (int x = 0; x < w; ++x)
			{
				for (int k = 0; k < c; ++k)
				{
					const std::size_t src = ((static_cast<std::size_t>(i) * h + y) * w + x) * c + k;
					const std::size_t dst = ((static_cast<std::size_t>(oy + y)) * out.dim(1) + (ox + x)) * c + k;
					out[dst] = frames[src];
				}
			}
		}
	}
	return out;
}

/// Writes an [H, W, C] image with C in {1, 3} as an 8-bit PNG. Values are clamped to [0, 1].
inline void write_png(const std::filesystem::path& path, const Tensor<float>& image)
{
	if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3))
	{
		throw std::invalid_argument("write_png: expected [H, W, 1|3], got " + shape_str(image.shape()));
	}
	const int h = image.dim(0);
	const int w = image.dim(1);
	const int c = image.dim(2);
	std::vector<png_byte> bytes(image.size());
	for (std::size_t i = 0; i < bytes.size(); ++i)
	{
		bytes[i] = static_cast<png_byte>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
	}
	std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
	if (!file)
	{
		throw std::runtime_error("cannot open " + path.string() + " for writing");
	}
	png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
	png_infop info = png ? png_create_info_struct(png) : nullptr;
	if (!png || !info)
	{
		png_destroy_write_struct(&png, nullptr);
		throw std::runtime_error("libpng initialisation failed");
	}
	if (setjmp(png_jmpbuf(png)))
	{
		png_destroy_write_struct(&png, &info);
		throw std::runtime_error("libpng failed writing " + path.string());
	}
	png_init_io(png, file.get());
	png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
		c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
		PNG_FILTER_TYPE_DEFAULT);
	png_write_info(png, info);
	for (int y = 0; y < h; ++y)
	{
		png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * w * c);
	}
	png_write_end(png, nullptr);
	png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit gray or RGB PNG back as [H, W, C] floats in [0, 1].
inline Tensor<float> read_png(const std::filesystem::path& path)
{
	png_image img{};
	img.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_file(&img, path.c_str()))
	{
		throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
	}
	const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
	img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
	const int c = gray ? 1 : 3;
	std::vector<png_byte> bytes(PNG_IMAGE_SIZE(img));
	if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr))
	{
		png_image_free(&img);
		throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
	}
	Tensor<float> out({static_cast<int>(img.height), static_cast<int>(img.width), c});
	for (std::size_t i = 0; i < bytes.size(); ++i)
	{
		out[i] = static_cast<float>(bytes[i]) / 255.0f;
	}
	return out;
}

/// Minimal CSV writer: the header is fixed up front and each row must match its width.
class CsvWriter
{
public:
	CsvWriter(const std::filesystem::path& path, std::vector<std::string> header) : out_(path), width_(header.size())
	{
		if (!out_)
		{
			throw std::runtime_error("cannot open " + path.string() + " for writing");
		}
		write_cells(header);
	}

	void row(const std::vector<std::string>& cells)
	{
		if (cells.size() != width_)
		{
			throw std::invalid_argument("csv row has " + std::to_string(cells.size()) + " cells, header has " +
				std::to_string(width_));
		}
		write_cells(cells);
	}

	static std::string number(double v)
	{
		char buf[32];
		std::snprintf(buf, sizeof buf, "%.9g", v);
		return buf;
	}

private:
	void write_cells(const std::vector<std::string>& cells)
	{
		for (std::size_t i = 0; i < cells.size(); ++i)
		{
			out_ << (i ? "," : "") << cells[i];
		}
		out_ << '\n';
	}

	std::ofstream out_;
	std::size_t width_;
};

struct Series
{
	std::string label;
	std::vector<double> x;
	std::vector<double> y;
};

/// Static SVG line chart with axes, ticks and a legend. Axis ranges cover every series.
inline std::string line_chart_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
	const std::string& y_label)
{
	const double width = 640;
	const double height = 400;
	const double left = 70;
	const double right = 150;
	const double top = 40;
	const double bottom = 50;
	double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
	for (const auto& s : series)
	{
		if (s.x.size() != s.y.size())
		{
			throw std::invalid_argument("line_chart_svg: series '" + s.label + "' has mismatched x and y");
		}
		for (std::size_t i = 0; i < s.x.size(); ++i)
		{
			x0 = std::min(x0, s.x[i]);
			x1 = std::max(x1, s.x[i]);
			y0 = std::min(y0, s.y[i]);
			y1 = std::max(y1, s.y[i]);
		}
	}
	if (!std::isfinite(x0))
	{
		x0 = 0, x1 = 1, y0 = 0, y1 = 1;
	}
	if (x1 == x0)
	{
		x1 = x0 + 1;
	}
	if (y1 == y0)
	{
		y1 = y0 + 1;
	}
	const double pw = width - left - right;
	const double ph = height - top - bottom;
	auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
	auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };
	static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

	std::ostringstream svg;
	svg.precision(6);
	svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
		<< "\" font-family=\"sans-serif\" font-size=\"12\">\n";
	svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
	svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
	svg << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
		<< "\" stroke=\"black\"/>\n";
	svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
		<< "\" stroke=\"black\"/>\n";
	for (int i = 0; i <= 4; ++i)
	{
		const double xv = x0 + (x1 - x0) * i / 4;
		const double yv = y0 + (y1 - y0) * i / 4;
		svg << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
		svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
		svg << "<line x1=\"" << left << "\" y1=\"" << py(yv) << "\" x2=\"" << left + pw << "\" y2=\"" << py(yv)
			<< "\" stroke=\"#ddd\"/>\n";
	}
	svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">" << x_label
		<< "</text>\n";
	svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
		<< "</text>\n";
	for (std::size_t k = 0; k < series.size(); ++k)
	{
		const auto& s = series[k];
		const char* color = colors[k % 6];
		svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
		for (std::size_t i = 0; i < s.x.size(); ++i)
		{
			svg << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
		}
		svg << "\"/>\n";
		for (std::size_t i = 0; i < s.x.size(); ++i)
		{
			svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
		}
		const double ly = top + 10 + 20 * static_cast<double>(k);
		svg << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
			<< "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
		svg << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
	}
	svg << "</svg>\n";
	return svg.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
	std::ofstream out(path);
	out << text;
	if (!out)
	{
		throw std::runtime_error("cannot write " + path.string());
	}
}

} // namespace dreamer::io
