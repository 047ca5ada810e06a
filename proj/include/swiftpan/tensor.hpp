#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

using Dims = std::vector<int>;

std::string dims_to_string(const Dims& dims);
std::size_t dims_numel(const Dims& dims);

// Dense row-major float32 array. Dims are all positive and their product
// always equals the payload length.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims, float fill = 0.0f);
    Tensor(Dims dims, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor({1}, v); }

    const Dims& dims() const { return dims_; }
    int dim(std::size_t i) const { return dims_.at(i); }
    std::size_t rank() const { return dims_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* ptr() { return data_.data(); }
    const float* ptr() const { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // 3-D [C,H,W] and 4-D [N,C,H,W] element access.
    float& at(int c, int y, int x);
    float at(int c, int y, int x) const;
    float& at(int n, int c, int y, int x);
    float at(int n, int c, int y, int x) const;

    Tensor reshaped(Dims dims) const;
    void fill(float v);
    bool all_finite() const;

    // Bitwise equality of dims and payload.
    bool identical(const Tensor& other) const;

private:
    Dims dims_;
    std::vector<float> data_;
};

// Pairwise tree summation in double; fixed order, so results are
// reproducible regardless of how callers chunk work.
double pairwise_sum(std::span<const float> v);

double mean(const Tensor& t);
float min_value(const Tensor& t);
float max_value(const Tensor& t);

// Slice out one [C,H,W] item of a [N,C,H,W] batch, and the inverse.
Tensor batch_item(const Tensor& batch, int n);
Tensor stack(std::span<const Tensor> items);

// Channel slice of a [C,H,W] tensor.
Tensor channel(const Tensor& chw, int c);

// Bicubic (Keys, a = -0.5) upsampling of [C,H,W] or [N,C,H,W] by an integer
// factor, edge-replicated. Sample positions follow the half-pixel convention.
Tensor upsample_bicubic(const Tensor& t, int factor);

// Non-overlapping average pooling of a [C,H,W] tensor to out_h x out_w.
Tensor average_pool(const Tensor& chw, int out_h, int out_w);

// SWTN container: "SWTN", version 1, dtype 0 (f32 LE), rank, rank x u32 LE
// dims, raw row-major payload.
void write_swtn(const std::filesystem::path& path, const Tensor& t);
Tensor read_swtn(const std::filesystem::path& path);
std::vector<unsigned char> encode_swtn(const Tensor& t);
Tensor decode_swtn(std::span<const unsigned char> bytes, const std::string& origin = "<memory>");

}  // namespace swiftpan
