#include "quantact/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "quantact/errors.hpp"

namespace quantact {

namespace {

class byte_writer {
public:
    void put_u8(std::uint8_t v) { out_.push_back(v); }
    void put_u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class byte_reader {
public:
    explicit byte_reader(const std::vector<std::uint8_t>& in) : in_(in) {}

    bool done() const { return pos_ == in_.size(); }
    std::size_t pos() const { return pos_; }

    std::uint8_t u8() {
        need(1, "u8");
        return in_[pos_++];
    }
    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    const std::uint8_t* bytes(std::size_t n, const char* what) {
        need(n, what);
        const auto* p = in_.data() + pos_;
        pos_ += n;
        return p;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw format_error(std::string("checkpoint: truncated while reading ") + what, pos_);
    }

    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

template <class U, class F>
void put_values(byte_writer& w, const std::vector<F>& values) {
    for (F v : values) {
        if constexpr (sizeof(F) == 4) w.put_u32(std::bit_cast<std::uint32_t>(v));
        else w.put_u64(std::bit_cast<std::uint64_t>(v));
    }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<checkpoint_entry>& entries) {
    byte_writer w;
    w.put_bytes(checkpoint_magic, sizeof(checkpoint_magic));
    w.put_u32(checkpoint_version);
    for (const auto& e : entries) {
        const auto n = std::visit([](const auto& v) { return v.size(); }, e.values);
        if (n != shape_numel(e.shape)) throw dimension_error("checkpoint: entry '" + e.name + "' shape/value mismatch");
        w.put_u32(static_cast<std::uint32_t>(e.name.size()));
        w.put_bytes(e.name.data(), e.name.size());
        w.put_u8(static_cast<std::uint8_t>(std::holds_alternative<std::vector<float>>(e.values) ? dtype_code::f32 : dtype_code::f64));
        w.put_u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.put_u64(d);
        std::visit([&](const auto& v) { put_values<void>(w, v); }, e.values);
    }
    return w.take();
}

std::vector<checkpoint_entry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    byte_reader r(bytes);
    const auto* magic = r.bytes(sizeof(checkpoint_magic), "magic");
    if (std::memcmp(magic, checkpoint_magic, sizeof(checkpoint_magic)) != 0) throw format_error("checkpoint: bad magic", 0);
    const auto version_at = r.pos();
    if (const auto version = r.u32(); version != checkpoint_version)
        throw format_error("checkpoint: unsupported version " + std::to_string(version), version_at);

    std::vector<checkpoint_entry> entries;
    while (!r.done()) {
        checkpoint_entry e;
        const auto name_len = r.u32();
        const auto* name = r.bytes(name_len, "name");
        e.name.assign(reinterpret_cast<const char*>(name), name_len);
        const auto dtype_at = r.pos();
        const auto dtype = r.u8();
        const auto rank = r.u32();
        for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(static_cast<std::size_t>(r.u64()));
        const auto n = shape_numel(e.shape);
        if (dtype == static_cast<std::uint8_t>(dtype_code::f32)) {
            std::vector<float> v(n);
            for (auto& x : v) x = std::bit_cast<float>(r.u32());
            e.values = std::move(v);
        } else if (dtype == static_cast<std::uint8_t>(dtype_code::f64)) {
            std::vector<double> v(n);
            for (auto& x : v) x = std::bit_cast<double>(r.u64());
            e.values = std::move(v);
        } else {
            throw format_error("checkpoint: unknown dtype code " + std::to_string(dtype), dtype_at);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<checkpoint_entry>& entries) {
    const auto bytes = encode_checkpoint(entries);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint: cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<checkpoint_entry> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace quantact
