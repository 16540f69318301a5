#include "quantact/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <regex>

#include "quantact/errors.hpp"

namespace quantact {

gaussian_pair_task sample_task(std::mt19937_64& rng, double sigma) {
    gaussian_pair_task t;
    t.rng_seed = rng();
    const double a = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    const double b = a + toy_rotation_degrees * std::numbers::pi / 180.0;
    t.mu1 = {std::cos(a), std::sin(a)};
    t.mu2 = {std::cos(b), std::sin(b)};
    t.sigma = sigma;
    return t;
}

labeled_batch sample_toy_batch(const gaussian_pair_task& task, std::size_t batch_size, std::mt19937_64& rng) {
    if (batch_size % 2 != 0) throw std::invalid_argument("sample_toy_batch: batch size must be even");
    std::vector<std::size_t> labels(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) labels[i] = i < batch_size / 2 ? 0 : 1;
    std::shuffle(labels.begin(), labels.end(), rng);
    std::normal_distribution<double> noise(0.0, task.sigma);
    labeled_batch out{tensor::zeros({batch_size, 2}), labels};
    for (std::size_t i = 0; i < batch_size; ++i) {
        const auto& mu = labels[i] == 0 ? task.mu1 : task.mu2;
        out.inputs[i * 2] = static_cast<float>(mu[0] + noise(rng));
        out.inputs[i * 2 + 1] = static_cast<float>(mu[1] + noise(rng));
    }
    return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("failed writing " + path.string());
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

}  // namespace

std::vector<std::uint8_t> encode_idx(const idx_array& a) {
    std::size_t n = 1;
    for (auto d : a.dims) n *= d;
    if (n != a.data.size()) throw std::invalid_argument("encode_idx: dims do not match payload size");
    std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(a.dims.size())};
    for (auto d : a.dims)
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(d >> s));
    out.insert(out.end(), a.data.begin(), a.data.end());
    return out;
}

idx_array decode_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw format_error("idx: truncated header", bytes.size());
    if (bytes[0] != 0 || bytes[1] != 0) throw format_error("idx: bad magic", 0);
    if (bytes[2] != 0x08) throw format_error("idx: unsupported element type (only unsigned byte)", 2);
    const std::size_t rank = bytes[3];
    if (rank == 0) throw format_error("idx: zero rank", 3);
    if (bytes.size() < 4 + 4 * rank) throw format_error("idx: truncated dimensions", bytes.size());
    idx_array a;
    std::size_t n = 1;
    for (std::size_t k = 0; k < rank; ++k) {
        a.dims.push_back(read_be32(bytes, 4 + 4 * k));
        n *= a.dims.back();
    }
    const std::size_t offset = 4 + 4 * rank;
    if (bytes.size() - offset < n) throw format_error("idx: truncated payload", bytes.size());
    if (bytes.size() - offset > n) throw format_error("idx: trailing bytes after payload", offset + n);
    a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    return a;
}

idx_array read_idx(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_idx(bytes);
    } catch (const format_error& e) {
        throw format_error(path.string() + ": " + e.what(), e.offset());
    }
}

void write_idx(const std::filesystem::path& path, const idx_array& a) { write_file(path, encode_idx(a)); }

tensor image_dataset::batch(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw std::out_of_range("image_dataset::batch: range past end");
    const std::size_t px = image_size();
    std::vector<float> v(pixels.begin() + static_cast<std::ptrdiff_t>(first * px),
                         pixels.begin() + static_cast<std::ptrdiff_t>((first + count) * px));
    return tensor({count, 1, rows, cols}, std::move(v));
}

tensor image_dataset::gather(std::span<const std::size_t> indices) const {
    const std::size_t px = image_size();
    std::vector<float> v(indices.size() * px);
    for (std::size_t k = 0; k < indices.size(); ++k)
        std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[k] * px), px, v.begin() + static_cast<std::ptrdiff_t>(k * px));
    return tensor({indices.size(), 1, rows, cols}, std::move(v));
}

image_dataset image_dataset::subset(std::span<const std::size_t> indices) const {
    image_dataset out;
    out.rows = rows;
    out.cols = cols;
    out.pixels = gather(indices).values();
    for (auto i : indices) out.labels.push_back(labels[i]);
    return out;
}

image_dataset images_from_idx(const idx_array& images, const idx_array& labels) {
    if (images.dims.size() != 3) throw format_error("idx: image file must have rank 3", 3);
    if (labels.dims.size() != 1) throw format_error("idx: label file must have rank 1", 3);
    if (images.dims[0] != labels.dims[0]) throw data_error("idx: image and label counts differ");
    image_dataset d;
    d.rows = images.dims[1];
    d.cols = images.dims[2];
    d.pixels.resize(images.data.size());
    for (std::size_t i = 0; i < images.data.size(); ++i) d.pixels[i] = static_cast<float>(images.data[i]) / 255.0f;
    d.labels.assign(labels.data.begin(), labels.data.end());
    return d;
}

std::filesystem::path find_mnist(const std::filesystem::path& root) {
    for (const auto& p : {root / "mnist", root})
        if (std::filesystem::exists(p / "train-images-idx3-ubyte")) return p;
    throw data_error("MNIST not found under " + root.string());
}

mnist_data load_mnist(const std::filesystem::path& dir) {
    auto load = [&](const char* images, const char* labels, std::uint32_t image_magic_rank) {
        const auto img = read_idx(dir / images);
        const auto lab = read_idx(dir / labels);
        if (img.dims.size() != image_magic_rank) throw format_error((dir / images).string() + ": expected magic 0x00000803", 3);
        if (lab.dims.size() != 1) throw format_error((dir / labels).string() + ": expected magic 0x00000801", 3);
        auto d = images_from_idx(img, lab);
        for (auto y : d.labels)
            if (y > 9) throw data_error((dir / labels).string() + ": label out of range");
        return d;
    };
    return {load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 3),
            load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 3)};
}

namespace {

std::size_t descr_size(const std::string& descr) {
    static const std::vector<std::pair<std::string, std::size_t>> known = {
        {"|u1", 1}, {"|i1", 1}, {"<u2", 2}, {"<i2", 2}, {"<u4", 4}, {"<i4", 4},
        {"<u8", 8}, {"<i8", 8}, {"<f4", 4}, {"<f8", 8}, {"|b1", 1}};
    for (const auto& [d, s] : known)
        if (d == descr) return s;
    throw format_error("npy: unsupported dtype '" + descr + "'", 10);
}

template <class T>
T load_le(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) static_assert(sizeof(T) == 0, "little-endian hosts only");
    return v;
}

}  // namespace

std::size_t npy_array::count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::vector<double> npy_array::as_double() const {
    const std::size_t n = count();
    std::vector<double> out(n);
    const auto* p = data.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (descr == "|u1" || descr == "|b1") out[i] = p[i];
        else if (descr == "|i1") out[i] = static_cast<std::int8_t>(p[i]);
        else if (descr == "<u2") out[i] = load_le<std::uint16_t>(p + 2 * i);
        else if (descr == "<i2") out[i] = load_le<std::int16_t>(p + 2 * i);
        else if (descr == "<u4") out[i] = load_le<std::uint32_t>(p + 4 * i);
        else if (descr == "<i4") out[i] = load_le<std::int32_t>(p + 4 * i);
        else if (descr == "<u8") out[i] = static_cast<double>(load_le<std::uint64_t>(p + 8 * i));
        else if (descr == "<i8") out[i] = static_cast<double>(load_le<std::int64_t>(p + 8 * i));
        else if (descr == "<f4") out[i] = load_le<float>(p + 4 * i);
        else out[i] = load_le<double>(p + 8 * i);
    }
    return out;
}

npy_array decode_npy(std::span<const std::uint8_t> bytes) {
    static const std::uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (bytes.size() < 10) throw format_error("npy: truncated header", bytes.size());
    if (!std::equal(magic, magic + 6, bytes.begin())) throw format_error("npy: bad magic", 0);
    if (bytes[6] != 1 || bytes[7] != 0) throw format_error("npy: only format version 1.0 is supported", 6);
    const std::size_t header_len = bytes[8] | (std::size_t{bytes[9]} << 8);
    if (bytes.size() < 10 + header_len) throw format_error("npy: truncated header", bytes.size());
    const std::string header(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(header_len));

    npy_array a;
    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']*)')"))) throw format_error("npy: missing descr", 10);
    a.descr = m[1];
    if (!std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*(True|False))")))
        throw format_error("npy: missing fortran_order", 10);
    if (m[1] == "True") throw format_error("npy: fortran order is not supported", 10);
    if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) throw format_error("npy: missing shape", 10);
    const std::string dims = m[1];
    const std::regex number(R"(\d+)");
    for (std::sregex_iterator it(dims.begin(), dims.end(), number), end; it != end; ++it)
        a.shape.push_back(std::stoull(it->str()));

    const std::size_t payload = a.count() * descr_size(a.descr);
    const std::size_t offset = 10 + header_len;
    if (bytes.size() - offset < payload) throw format_error("npy: truncated payload", bytes.size());
    a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + payload));
    return a;
}

std::vector<std::uint8_t> encode_npy(const npy_array& a) {
    if (a.data.size() != a.count() * descr_size(a.descr)) throw std::invalid_argument("encode_npy: payload size mismatch");
    std::string shape = "(";
    for (std::size_t k = 0; k < a.shape.size(); ++k) {
        if (k) shape += ", ";
        shape += std::to_string(a.shape[k]);
    }
    if (a.shape.size() == 1) shape += ",";
    shape += ")";
    std::string header = "{'descr': '" + a.descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
    // Pad with spaces so the payload starts on a 64-byte boundary, newline-terminated.
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    std::vector<std::uint8_t> out{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0, static_cast<std::uint8_t>(header.size() & 0xff),
                                  static_cast<std::uint8_t>(header.size() >> 8)};
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), a.data.begin(), a.data.end());
    return out;
}

npy_array read_npy(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    try {
        return decode_npy(bytes);
    } catch (const format_error& e) {
        throw format_error(path.string() + ": " + e.what(), e.offset());
    }
}

void write_npy(const std::filesystem::path& path, const npy_array& a) { write_file(path, encode_npy(a)); }

std::vector<std::string> mnistc_corruptions(const std::filesystem::path& root) {
    std::vector<std::string> names;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root, ec))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "test_images.npy"))
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

image_dataset load_mnistc(const std::filesystem::path& root, const std::string& corruption) {
    const auto dir = root / corruption;
    if (!std::filesystem::exists(dir / "test_images.npy")) {
        std::string available;
        for (const auto& n : mnistc_corruptions(root)) available += (available.empty() ? "" : ", ") + n;
        throw data_error("MNIST-C corruption '" + corruption + "' not found under " + root.string() +
                         "; available: " + (available.empty() ? "(none)" : available));
    }
    const auto images = read_npy(dir / "test_images.npy");
    const auto labels = read_npy(dir / "test_labels.npy");
    if (images.descr != "|u1") throw format_error("MNIST-C images must be uint8", 10);
    auto shape = images.shape;
    if (shape.size() == 4 && shape[3] == 1) shape.pop_back();
    if (shape.size() != 3) throw format_error("MNIST-C images must be N x H x W (x 1)", 10);
    if (labels.count() != shape[0]) throw data_error("MNIST-C image and label counts differ");
    image_dataset d;
    d.rows = shape[1];
    d.cols = shape[2];
    d.pixels.resize(images.data.size());
    for (std::size_t i = 0; i < images.data.size(); ++i) d.pixels[i] = static_cast<float>(images.data[i]) / 255.0f;
    for (double y : labels.as_double()) d.labels.push_back(static_cast<std::size_t>(y));
    return d;
}

std::string to_string(distortion_kind k) {
    switch (k) {
        case distortion_kind::gaussian_noise: return "gaussian_noise";
        case distortion_kind::impulse_noise: return "impulse_noise";
        case distortion_kind::blur: return "blur";
        case distortion_kind::contrast: return "contrast";
        case distortion_kind::brightness: return "brightness";
    }
    return "?";
}

distortion_kind parse_distortion(const std::string& name) {
    for (auto k : all_distortions())
        if (to_string(k) == name) return k;
    throw config_error("unknown distortion '" + name + "'");
}

const std::vector<distortion_kind>& all_distortions() {
    static const std::vector<distortion_kind> kinds = {distortion_kind::gaussian_noise, distortion_kind::impulse_noise,
                                                       distortion_kind::blur, distortion_kind::contrast,
                                                       distortion_kind::brightness};
    return kinds;
}

double distortion_level(distortion_kind kind, int severity) {
    if (severity < 0 || severity > 5) throw config_error("severity must be in 0..5, got " + std::to_string(severity));
    static const double noise[6] = {0, 0.04, 0.08, 0.12, 0.18, 0.26};
    static const double impulse[6] = {0, 0.01, 0.02, 0.05, 0.08, 0.12};
    static const double blur[6] = {0, 0.5, 0.75, 1.0, 1.25, 1.5};
    static const double contrast[6] = {1, 0.75, 0.6, 0.45, 0.3, 0.2};
    static const double brightness[6] = {0, 0.1, 0.2, 0.3, 0.4, 0.5};
    switch (kind) {
        case distortion_kind::gaussian_noise: return noise[severity];
        case distortion_kind::impulse_noise: return impulse[severity];
        case distortion_kind::blur: return blur[severity];
        case distortion_kind::contrast: return contrast[severity];
        case distortion_kind::brightness: return brightness[severity];
    }
    throw config_error("unknown distortion kind");
}

namespace {

void gaussian_blur(std::span<float> img, std::size_t rows, std::size_t cols, double sigma) {
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0;
    for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= total;
    std::vector<double> tmp(img.size());
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    const int r = static_cast<int>(rows), c = static_cast<int>(cols);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < c; ++x) {
            double s = 0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img[y * c + clampi(x + i, c)];
            tmp[y * c + x] = s;
        }
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < c; ++x) {
            double s = 0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp[clampi(y + i, r) * c + x];
            img[y * c + x] = static_cast<float>(s);
        }
}

}  // namespace

image_dataset apply_distortion(const image_dataset& images, const distortion_spec& spec, std::uint64_t seed) {
    const double level = distortion_level(spec.kind, spec.severity);
    image_dataset out = images;
    if (spec.severity == 0) return out;
    const std::size_t px = images.image_size();
    for (std::size_t n = 0; n < images.size(); ++n) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32)};
        std::mt19937_64 rng(seq);
        std::span<float> img(out.pixels.data() + n * px, px);
        switch (spec.kind) {
            case distortion_kind::gaussian_noise: {
                std::normal_distribution<double> noise(0.0, level);
                for (auto& v : img) v = static_cast<float>(v + noise(rng));
                break;
            }
            case distortion_kind::impulse_noise: {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                for (auto& v : img) {
                    const double r = u(rng);
                    if (r < level / 2) v = 0.0f;
                    else if (r < level) v = 1.0f;
                }
                break;
            }
            case distortion_kind::blur: gaussian_blur(img, images.rows, images.cols, level); break;
            case distortion_kind::contrast: {
                double mean = 0;
                for (float v : img) mean += v;
                mean /= static_cast<double>(px);
                for (auto& v : img) v = static_cast<float>((v - mean) * level + mean);
                break;
            }
            case distortion_kind::brightness:
                for (auto& v : img) v = static_cast<float>(v + level);
                break;
        }
        for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

}  // namespace quantact
