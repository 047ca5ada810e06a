#include "swiftpan/tensor.hpp"

#include "swiftpan/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace swiftpan {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::string dims_to_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

std::size_t dims_numel(const Dims& dims) {
    std::size_t n = 1;
    for (int d : dims) {
        if (d <= 0) throw ShapeError("non-positive dimension in " + dims_to_string(dims));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Dims dims, float fill) : dims_(std::move(dims)) {
    if (dims_.empty()) throw ShapeError("tensor rank must be >= 1");
    data_.assign(dims_numel(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (dims_.empty()) throw ShapeError("tensor rank must be >= 1");
    if (dims_numel(dims_) != data_.size()) {
        throw ShapeError("payload of " + std::to_string(data_.size()) + " elements does not match dims " +
                         dims_to_string(dims_));
    }
}

float& Tensor::at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
}
float Tensor::at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
}
float& Tensor::at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
}
float Tensor::at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * dims_[1] + c) * dims_[2] + y) * dims_[3] + x];
}

Tensor Tensor::reshaped(Dims dims) const {
    if (dims_numel(dims) != numel()) {
        throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    }
    return Tensor(std::move(dims), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Tensor::identical(const Tensor& other) const {
    return dims_ == other.dims_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

double pairwise_sum(std::span<const float> v) {
    if (v.size() <= 16) {
        double s = 0.0;
        for (float x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

double mean(const Tensor& t) { return pairwise_sum(t.data()) / static_cast<double>(t.numel()); }

float min_value(const Tensor& t) { return *std::min_element(t.data().begin(), t.data().end()); }
float max_value(const Tensor& t) { return *std::max_element(t.data().begin(), t.data().end()); }

Tensor batch_item(const Tensor& batch, int n) {
    if (batch.rank() != 4 || n < 0 || n >= batch.dim(0)) {
        throw ShapeError("batch_item " + std::to_string(n) + " out of range for " + dims_to_string(batch.dims()));
    }
    const std::size_t stride = batch.numel() / batch.dim(0);
    std::vector<float> out(batch.ptr() + n * stride, batch.ptr() + (n + 1) * stride);
    return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(out));
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw ShapeError("stack of zero tensors");
    const Dims& d = items.front().dims();
    Dims out_dims{static_cast<int>(items.size())};
    out_dims.insert(out_dims.end(), d.begin(), d.end());
    std::vector<float> out;
    out.reserve(dims_numel(out_dims));
    for (const auto& t : items) {
        if (t.dims() != d) {
            throw ShapeError("stack: " + dims_to_string(t.dims()) + " differs from " + dims_to_string(d));
        }
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor(std::move(out_dims), std::move(out));
}

Tensor channel(const Tensor& chw, int c) {
    if (chw.rank() != 3 || c < 0 || c >= chw.dim(0)) {
        throw ShapeError("channel " + std::to_string(c) + " out of range for " + dims_to_string(chw.dims()));
    }
    const std::size_t plane = static_cast<std::size_t>(chw.dim(1)) * chw.dim(2);
    std::vector<float> out(chw.ptr() + c * plane, chw.ptr() + (c + 1) * plane);
    return Tensor({1, chw.dim(1), chw.dim(2)}, std::move(out));
}

namespace {

double cubic_weight(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::array<int, 4> idx;
    std::array<double, 4> w;
};

std::vector<Taps> bicubic_taps(int in, int factor) {
    std::vector<Taps> taps(static_cast<std::size_t>(in) * factor);
    for (int o = 0; o < in * factor; ++o) {
        const double src = (o + 0.5) / factor - 0.5;
        const int base = static_cast<int>(std::floor(src));
        const double frac = src - base;
        for (int k = 0; k < 4; ++k) {
            taps[o].idx[k] = std::clamp(base - 1 + k, 0, in - 1);
            taps[o].w[k] = cubic_weight(frac - (k - 1));
        }
    }
    return taps;
}

}  // namespace

Tensor upsample_bicubic(const Tensor& t, int factor) {
    if (factor < 1) throw ShapeError("upsample factor must be >= 1");
    if (t.rank() != 3 && t.rank() != 4) {
        throw ShapeError("upsample_bicubic expects [C,H,W] or [N,C,H,W], got " + dims_to_string(t.dims()));
    }
    const int h = t.dims()[t.rank() - 2];
    const int w = t.dims()[t.rank() - 1];
    const int planes = static_cast<int>(t.numel() / (static_cast<std::size_t>(h) * w));
    Dims out_dims = t.dims();
    out_dims[t.rank() - 2] = h * factor;
    out_dims[t.rank() - 1] = w * factor;
    Tensor out(out_dims);
    if (factor == 1) return Tensor(out_dims, std::vector<float>(t.data().begin(), t.data().end()));

    const auto ty = bicubic_taps(h, factor);
    const auto tx = bicubic_taps(w, factor);
    const int oh = h * factor;
    const int ow = w * factor;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int p = 0; p < planes; ++p) {
        const float* src = t.ptr() + static_cast<std::size_t>(p) * h * w;
        float* dst = out.ptr() + static_cast<std::size_t>(p) * oh * ow;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k) s += tx[x].w[k] * src[y * w + tx[x].idx[k]];
                rows[static_cast<std::size_t>(y) * ow + x] = s;
            }
        }
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < 4; ++k) s += ty[y].w[k] * rows[static_cast<std::size_t>(ty[y].idx[k]) * ow + x];
                dst[static_cast<std::size_t>(y) * ow + x] = static_cast<float>(s);
            }
        }
    }
    return out;
}

Tensor average_pool(const Tensor& chw, int out_h, int out_w) {
    if (chw.rank() != 3) throw ShapeError("average_pool expects [C,H,W], got " + dims_to_string(chw.dims()));
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (out_h <= 0 || out_w <= 0 || h % out_h != 0 || w % out_w != 0) {
        throw ShapeError("average_pool: " + dims_to_string(chw.dims()) + " not divisible into " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    const int kh = h / out_h, kw = w / out_w;
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double s = 0.0;
                for (int y = 0; y < kh; ++y)
                    for (int x = 0; x < kw; ++x) s += chw.at(ch, oy * kh + y, ox * kw + x);
                out.at(ch, oy, ox) = static_cast<float>(s / (kh * kw));
            }
        }
    }
    return out;
}

namespace {

constexpr std::array<unsigned char, 4> kMagic{'S', 'W', 'T', 'N'};
constexpr unsigned char kVersion = 1;
constexpr unsigned char kDtypeF32 = 0;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<unsigned char> encode_swtn(const Tensor& t) {
    std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
    out.push_back(kVersion);
    out.push_back(kDtypeF32);
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (int d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
    out.reserve(out.size() + t.numel() * 4);
    for (float f : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

Tensor decode_swtn(std::span<const unsigned char> bytes, const std::string& origin) {
    auto fail = [&](const std::string& why) { return IoError(origin + ": " + why); };
    if (bytes.size() < 7 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw fail("bad SWTN magic");
    if (bytes[4] != kVersion) throw fail("unsupported SWTN version " + std::to_string(bytes[4]));
    if (bytes[5] != kDtypeF32) throw fail("unsupported SWTN dtype " + std::to_string(bytes[5]));
    const std::size_t rank = bytes[6];
    if (rank == 0) throw fail("SWTN rank 0");
    const std::size_t header = 7 + 4 * rank;
    if (bytes.size() < header) throw fail("truncated SWTN header");
    Dims dims(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const auto d = get_u32(bytes, 7 + 4 * i);
        if (d == 0 || d > 0x7fffffffu) throw fail("invalid dimension " + std::to_string(d));
        dims[i] = static_cast<int>(d);
    }
    const std::size_t n = dims_numel(dims);
    if (bytes.size() != header + 4 * n) {
        throw fail("payload size " + std::to_string(bytes.size() - header) + " does not match dims " +
                   dims_to_string(dims));
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
    return Tensor(std::move(dims), std::move(data));
}

void write_swtn(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = encode_swtn(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path.string() + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(path.string() + ": write failed");
}

Tensor read_swtn(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(path.string() + ": cannot open for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_swtn(bytes, path.string());
}

}  // namespace swiftpan
