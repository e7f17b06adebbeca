#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "repdit/error.hpp"
#include "repdit/tensor.hpp"

namespace repdit {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot open '" + path + "' for writing");
    out << content;
    if (!out) fail("io_error", "write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io_error", "cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// shortest exact decimal representation of a double
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --- CSV (RFC 4180: CRLF records, first record is the header) ---------------

class Csv {
public:
    explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<std::string> cells) {
        if (cells.size() != header_.size())
            fail("bad_argument", "CSV row width " + std::to_string(cells.size()) +
                                     " does not match header width " +
                                     std::to_string(header_.size()));
        rows_.push_back(std::move(cells));
    }

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

    std::string serialize() const {
        std::ostringstream os;
        write_record(os, header_);
        for (const auto& r : rows_) write_record(os, r);
        return os.str();
    }

    static Csv parse(const std::string& text) {
        std::vector<std::vector<std::string>> records;
        std::vector<std::string> cur;
        std::string cell;
        size_t i = 0;
        auto end_cell = [&]() { cur.push_back(cell); cell.clear(); };
        auto end_record = [&]() {
            end_cell();
            records.push_back(cur);
            cur.clear();
        };
        while (i < text.size()) {
            const char c = text[i];
            if (c == '"') {
                ++i;  // quoted cell
                while (i < text.size()) {
                    if (text[i] == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                        cell += '"';
                        i += 2;
                    } else if (text[i] == '"') {
                        ++i;
                        break;
                    } else {
                        cell += text[i++];
                    }
                }
            } else if (c == ',') {
                end_cell();
                ++i;
            } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
                end_record();
                i += 2;
            } else if (c == '\n') {
                end_record();
                ++i;
            } else {
                cell += c;
                ++i;
            }
        }
        if (!cell.empty() || !cur.empty()) end_record();
        if (records.empty()) fail("bad_argument", "empty CSV text");
        Csv csv(records[0]);
        for (size_t r = 1; r < records.size(); ++r) csv.add_row(records[r]);
        return csv;
    }

private:
    static void write_record(std::ostringstream& os, const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) os << ',';
            const std::string& c = cells[i];
            if (c.find_first_of(",\"\r\n") != std::string::npos) {
                os << '"';
                for (char ch : c) {
                    if (ch == '"') os << "\"\"";
                    else os << ch;
                }
                os << '"';
            } else {
                os << c;
            }
        }
        os << "\r\n";
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// --- SVG charts -------------------------------------------------------------
// Deterministic, self-contained SVG 1.1. Every plotted point carries data-*
// attributes with its source values, and the plot group carries the axis
// mapping, so tests can invert pixel coordinates back to data exactly.

struct Series {
    std::string name;
    std::vector<double> xs, ys;
};

namespace svg_detail {

inline std::string f6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

inline const char* series_color(size_t i) {
    static const char* palette[] = {"#1f6f8b", "#c0532f", "#5a8f29", "#7a4fa3",
                                    "#b0851f", "#376e6f", "#a33f5c", "#556677"};
    return palette[i % 8];
}

} // namespace svg_detail

inline std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel, const std::vector<Series>& series,
                                  size_t width = 640, size_t height = 480) {
    if (series.empty()) fail("bad_argument", "chart needs at least one series");
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& s : series) {
        if (s.xs.size() != s.ys.size())
            fail("bad_argument", "series '" + s.name + "' has mismatched x/y lengths");
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (first) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                first = false;
            }
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    }
    if (first) fail("bad_argument", "chart series are all empty");
    if (xmax - xmin < 1e-12) { xmin -= 0.5; xmax += 0.5; }
    if (ymax - ymin < 1e-12) { ymin -= 0.5; ymax += 0.5; }

    const double px0 = 70, px1 = double(width) - 20;
    const double py0 = double(height) - 50, py1 = 40;  // py0 = bottom
    auto X = [&](double x) { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); };
    auto Y = [&](double y) { return py0 - (y - ymin) / (ymax - ymin) * (py0 - py1); };
    using svg_detail::f6;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
       << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"15\">" << title << "</text>\n";
    os << "<g class=\"plot\" data-xmin=\"" << format_double(xmin) << "\" data-xmax=\""
       << format_double(xmax) << "\" data-ymin=\"" << format_double(ymin) << "\" data-ymax=\""
       << format_double(ymax) << "\" data-px0=\"" << f6(px0) << "\" data-px1=\"" << f6(px1)
       << "\" data-py0=\"" << f6(py0) << "\" data-py1=\"" << f6(py1) << "\">\n";
    os << "<line x1=\"" << f6(px0) << "\" y1=\"" << f6(py0) << "\" x2=\"" << f6(px1) << "\" y2=\""
       << f6(py0) << "\" stroke=\"#333333\"/>\n";
    os << "<line x1=\"" << f6(px0) << "\" y1=\"" << f6(py0) << "\" x2=\"" << f6(px0) << "\" y2=\""
       << f6(py1) << "\" stroke=\"#333333\"/>\n";
    for (int k = 0; k <= 4; ++k) {  // axis ticks
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        os << "<text x=\"" << f6(X(xv)) << "\" y=\"" << f6(py0 + 18) << "\" text-anchor=\"middle\" "
              "font-family=\"sans-serif\" font-size=\"11\">" << f6(xv) << "</text>\n";
        os << "<text x=\"" << f6(px0 - 8) << "\" y=\"" << f6(Y(yv) + 4) << "\" text-anchor=\"end\" "
              "font-family=\"sans-serif\" font-size=\"11\">" << f6(yv) << "</text>\n";
    }
    os << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << height - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (py0 + py1) / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
          "transform=\"rotate(-90 16 " << (py0 + py1) / 2 << ")\">" << ylabel << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = svg_detail::series_color(si);
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" "
              "data-series=\"" << s.name << "\" points=\"";
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (i) os << ' ';
            os << f6(X(s.xs[i])) << ',' << f6(Y(s.ys[i]));
        }
        os << "\"/>\n";
        for (size_t i = 0; i < s.xs.size(); ++i)
            os << "<circle cx=\"" << f6(X(s.xs[i])) << "\" cy=\"" << f6(Y(s.ys[i]))
               << "\" r=\"2.5\" fill=\"" << color << "\" data-series=\"" << s.name
               << "\" data-x=\"" << format_double(s.xs[i]) << "\" data-y=\""
               << format_double(s.ys[i]) << "\"/>\n";
        os << "<text x=\"" << f6(px1 - 6) << "\" y=\"" << f6(py1 + 14 + 15 * double(si))
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color
           << "\">" << s.name << "</text>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

// rows x cols heatmap; cell values are min-max normalized to a grayscale
// ramp; every cell carries its raw value as data-value
inline std::string svg_heatmap(const std::string& title, const std::vector<double>& values,
                               size_t rows, size_t cols,
                               const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels, size_t cell = 28) {
    if (values.size() != rows * cols)
        fail("bad_argument", "heatmap values do not match rows x cols");
    double mn = values[0], mx = values[0];
    for (double v : values) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const double span = (mx - mn < 1e-300) ? 1.0 : mx - mn;
    const size_t left = 90, top = 50, bottom = 40;
    const size_t width = left + cols * cell + 20;
    const size_t height = top + rows * cell + bottom;
    using svg_detail::f6;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
       << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"15\">" << title << "</text>\n";
    os << "<g class=\"heatmap\" data-min=\"" << format_double(mn) << "\" data-max=\""
       << format_double(mx) << "\">\n";
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
            const double v = values[r * cols + c];
            const int shade = int(std::lround(255.0 * (v - mn) / span));
            os << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell << "\" width=\""
               << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade << ","
               << shade << ")\" stroke=\"#cccccc\" data-row=\"" << r << "\" data-col=\"" << c
               << "\" data-value=\"" << format_double(v) << "\"/>\n";
        }
    }
    for (size_t r = 0; r < row_labels.size() && r < rows; ++r)
        os << "<text x=\"" << left - 8 << "\" y=\"" << top + r * cell + cell / 2 + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << row_labels[r]
           << "</text>\n";
    for (size_t c = 0; c < col_labels.size() && c < cols; ++c)
        os << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top + rows * cell + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << col_labels[c] << "</text>\n";
    os << "</g>\n</svg>\n";
    return os.str();
}

// --- image/clip outputs ------------------------------------------------------

// frames laid side by side as one P5 image, values mapped [-1,1] -> [0,255]
inline void write_pgm_strip(const std::string& path, const Tensor& clip) {
    if (clip.shape().size() != 3) fail("bad_argument", "clip tensor must be [F,G,G]");
    const size_t F = clip.shape()[0], G = clip.shape()[1];
    if (clip.shape()[2] != G) fail("bad_argument", "clip frames must be square");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot open '" + path + "' for writing");
    out << "P5\n" << F * G << " " << G << "\n255\n";
    for (size_t row = 0; row < G; ++row)
        for (size_t f = 0; f < F; ++f)
            for (size_t col = 0; col < G; ++col) {
                const double v = clip.data()[f * G * G + row * G + col];
                const double mapped = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
                out.put(char(uint8_t(std::lround(mapped * 255.0))));
            }
    if (!out) fail("io_error", "write failed for '" + path + "'");
}

// raw clip: "RPVC1 F G\n" then F*G*G little-endian 64-bit floats
inline void write_clip(const std::string& path, const Tensor& clip) {
    if (clip.shape().size() != 3 || clip.shape()[1] != clip.shape()[2])
        fail("bad_argument", "clip tensor must be [F,G,G]");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("io_error", "cannot open '" + path + "' for writing");
    out << "RPVC1 " << clip.shape()[0] << " " << clip.shape()[1] << "\n";
    out.write(reinterpret_cast<const char*>(clip.data()),
              std::streamsize(clip.size() * sizeof(double)));
    if (!out) fail("io_error", "write failed for '" + path + "'");
}

inline Tensor read_clip(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("io_error", "cannot open '" + path + "'");
    std::string magic;
    size_t F = 0, G = 0;
    in >> magic >> F >> G;
    if (magic != "RPVC1" || F == 0 || G == 0)
        fail("capture_malformed", "'" + path + "' is not an RPVC1 clip");
    in.get();  // newline
    std::vector<double> data(F * G * G);
    in.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size() * sizeof(double)));
    if (size_t(in.gcount()) != data.size() * sizeof(double))
        fail("capture_malformed", "clip payload truncated in '" + path + "'");
    return Tensor::from_data({F, G, G}, std::move(data));
}

} // namespace repdit
