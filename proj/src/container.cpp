#include "vmus/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vmus {

namespace {

// Explicit little-endian byte order regardless of host.
template <class T>
void put(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    std::string take(std::uint64_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void need(std::uint64_t n, const char* what) const {
        if (n > bytes_.size() - pos_) {
            throw ContainerError(ContainerError::Kind::truncated,
                                 std::string("container truncated while reading ") + what);
        }
    }

    bool done() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Container::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

const NamedArray& Container::get(const std::string& name) const {
    const NamedArray* a = find(name);
    if (!a) throw ContainerError(ContainerError::Kind::missing_array, "container has no array '" + name + "'", name);
    return *a;
}

std::string encode_container(const Container& c) {
    std::string out = "VMUS";
    put<std::uint32_t>(out, kContainerVersion);
    put<std::uint64_t>(out, c.config_json.size());
    out += c.config_json;
    put<std::uint64_t>(out, c.arrays.size());
    for (const NamedArray& a : c.arrays) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put<std::uint8_t>(out, a.trainable ? 1 : 0);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.rank()));
        for (std::size_t e : a.value.shape()) put<std::uint64_t>(out, e);
        for (double v : a.value.values()) put_f64(out, v);
    }
    return out;
}

Container decode_container(const std::string& bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || bytes.compare(0, 4, "VMUS") != 0) {
        throw ContainerError(ContainerError::Kind::bad_magic, "not a VMUS container (bad magic)");
    }
    r.take(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kContainerVersion) {
        throw ContainerError(ContainerError::Kind::bad_version, "unsupported container version " +
                                                                    std::to_string(version) + " (expected " +
                                                                    std::to_string(kContainerVersion) + ")");
    }
    Container c;
    const auto config_len = r.get<std::uint64_t>("config length");
    c.config_json = r.take(config_len, "config");
    const auto n = r.get<std::uint64_t>("array count");
    for (std::uint64_t i = 0; i < n; ++i) {
        NamedArray a;
        const auto name_len = r.get<std::uint32_t>("array name length");
        a.name = r.take(name_len, "array name");
        const auto flags = r.get<std::uint8_t>("array flags");
        if (flags > 1) throw ContainerError(ContainerError::Kind::corrupt, "bad flags for array '" + a.name + "'", a.name);
        a.trainable = flags & 1;
        const auto rank = r.get<std::uint32_t>("array rank");
        if (rank > 8) throw ContainerError(ContainerError::Kind::corrupt, "implausible rank for array '" + a.name + "'", a.name);
        Shape shape;
        std::uint64_t count = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            shape.push_back(r.get<std::uint64_t>("array extent"));
            count *= shape.back();
        }
        if (count > r.remaining() / 8) {
            throw ContainerError(ContainerError::Kind::truncated, "data of array '" + a.name + "' is truncated", a.name);
        }
        std::vector<double> data(count);
        for (auto& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>("array data"));
        a.value = Tensor(std::move(shape), std::move(data));
        c.arrays.push_back(std::move(a));
    }
    if (!r.done()) throw ContainerError(ContainerError::Kind::corrupt, "trailing bytes after last array");
    return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
    const std::string bytes = encode_container(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContainerError(ContainerError::Kind::io, "cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ContainerError(ContainerError::Kind::io, "write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContainerError(ContainerError::Kind::io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_container(ss.str());
}

}  // namespace vmus
