#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "quantact/tensor.hpp"

namespace quantact {

// Two isotropic Gaussians whose centers lie on the unit circle 30 degrees apart.
struct gaussian_pair_task {
    std::array<double, 2> mu1{1, 0};
    std::array<double, 2> mu2{};
    double sigma = 0.1;  // standard deviation per coordinate
    std::uint64_t rng_seed = 0;
};

inline constexpr double toy_rotation_degrees = 30.0;

// mu1 uniform on the circle, mu2 = R(30 deg) mu1. Pass sigma = sqrt(0.1) for the
// variance-0.1 reading of the noise level.
gaussian_pair_task sample_task(std::mt19937_64& rng, double sigma = 0.1);

struct labeled_batch {
    tensor inputs;
    std::vector<std::size_t> labels;
};

// B/2 points around mu1 labelled 0 and B/2 around mu2 labelled 1, shuffled.
labeled_batch sample_toy_batch(const gaussian_pair_task& task, std::size_t batch_size, std::mt19937_64& rng);

// IDX container (MNIST layout), unsigned-byte payload only.
struct idx_array {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

std::vector<std::uint8_t> encode_idx(const idx_array& a);
idx_array decode_idx(std::span<const std::uint8_t> bytes);
idx_array read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const idx_array& a);

// Grayscale images with pixels scaled to [0, 1], row-major [N, rows, cols].
struct image_dataset {
    std::size_t rows = 28, cols = 28;
    std::vector<float> pixels;
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return rows * cols; }
    // [count, 1, rows, cols] tensor of images first..first+count.
    tensor batch(std::size_t first, std::size_t count) const;
    tensor gather(std::span<const std::size_t> indices) const;
    image_dataset subset(std::span<const std::size_t> indices) const;
};

image_dataset images_from_idx(const idx_array& images, const idx_array& labels);

struct mnist_data {
    image_dataset train, test;
};

// Reads train-/t10k- images and labels from `dir`.
mnist_data load_mnist(const std::filesystem::path& dir);

// <root>/mnist if it holds the idx files, else <root> itself; data_error when neither does.
std::filesystem::path find_mnist(const std::filesystem::path& root);

// NPY v1.0 arrays with a C-order payload.
struct npy_array {
    std::string descr;  // e.g. "|u1", "<i8"
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> data;

    std::size_t count() const;
    std::vector<double> as_double() const;
};

npy_array decode_npy(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_npy(const npy_array& a);
npy_array read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const npy_array& a);

// Loads <root>/<corruption>/test_images.npy and test_labels.npy.
image_dataset load_mnistc(const std::filesystem::path& root, const std::string& corruption);
std::vector<std::string> mnistc_corruptions(const std::filesystem::path& root);

enum class distortion_kind { gaussian_noise, impulse_noise, blur, contrast, brightness };

struct distortion_spec {
    distortion_kind kind = distortion_kind::gaussian_noise;
    int severity = 0;  // 0..5, 0 is the identity
};

std::string to_string(distortion_kind k);
distortion_kind parse_distortion(const std::string& name);
const std::vector<distortion_kind>& all_distortions();

// Severity parameter: noise std, impulse fraction, blur sigma, contrast factor or
// brightness shift.
double distortion_level(distortion_kind kind, int severity);

// Corrupts each image with its own random stream keyed by (seed, image index); output
// clipped to [0, 1].
image_dataset apply_distortion(const image_dataset& images, const distortion_spec& spec, std::uint64_t seed);

}  // namespace quantact
