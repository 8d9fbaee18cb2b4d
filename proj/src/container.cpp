#include "pytf/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");
static_assert(sizeof(float) == 4, "container I/O assumes 32-bit IEEE-754 floats");

namespace pytf {

namespace {

constexpr char kMagic[5] = {'P', 'Y', 'T', 'F', '1'};

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void read(void* dst, size_t n, const std::string& what) {
        is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n)
            throw std::runtime_error("container: truncated at offset " +
                                     std::to_string(offset_ + static_cast<size_t>(is_.gcount())) +
                                     " while reading " + what);
        offset_ += n;
    }

    uint32_t read_u32(const std::string& what) {
        uint32_t v;
        read(&v, sizeof(v), what);
        return v;
    }

    uint64_t read_u64(const std::string& what) {
        uint64_t v;
        read(&v, sizeof(v), what);
        return v;
    }

private:
    std::istream& is_;
    size_t offset_ = 0;
};

void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("container: write failed");
}

}  // namespace

void write_container(std::ostream& os, const std::vector<NamedTensor>& entries) {
    write_bytes(os, kMagic, sizeof(kMagic));
    const uint64_t count = entries.size();
    write_bytes(os, &count, sizeof(count));
    for (const NamedTensor& e : entries) {
        const uint32_t name_len = static_cast<uint32_t>(e.name.size());
        write_bytes(os, &name_len, sizeof(name_len));
        write_bytes(os, e.name.data(), e.name.size());
        const uint32_t rank = static_cast<uint32_t>(e.tensor.rank());
        write_bytes(os, &rank, sizeof(rank));
        for (int64_t ext : e.tensor.shape) {
            const uint64_t v = static_cast<uint64_t>(ext);
            write_bytes(os, &v, sizeof(v));
        }
        write_bytes(os, e.tensor.ptr(), e.tensor.data.size() * sizeof(float));
    }
}

std::vector<NamedTensor> read_container(std::istream& is) {
    Reader r(is);
    char magic[5];
    r.read(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("container: bad magic (expected \"PYTF1\")");
    const uint64_t count = r.read_u64("tensor count");
    if (count > (1ull << 32)) throw std::runtime_error("container: implausible tensor count");
    std::vector<NamedTensor> out;
    out.reserve(static_cast<size_t>(count));
    for (uint64_t i = 0; i < count; ++i) {
        const std::string which = "tensor " + std::to_string(i);
        const uint32_t name_len = r.read_u32(which + " name length");
        if (name_len > (1u << 20)) throw std::runtime_error("container: implausible name length");
        std::string name(name_len, '\0');
        if (name_len > 0) r.read(name.data(), name_len, which + " name");
        const uint32_t rank = r.read_u32("'" + name + "' rank");
        if (rank == 0 || rank > 255) throw std::runtime_error("container: invalid rank for '" + name + "'");
        Shape shape(rank);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint64_t ext = r.read_u64("'" + name + "' extent " + std::to_string(d));
            if (ext == 0 || ext > (1ull << 32))
                throw std::runtime_error("container: invalid extent for '" + name + "'");
            shape[d] = static_cast<int64_t>(ext);
            numel *= shape[d];
            if (numel > (int64_t{1} << 34))
                throw std::runtime_error("container: implausible tensor size for '" + name + "'");
        }
        Tensor t(shape);
        r.read(t.ptr(), t.data.size() * sizeof(float), "'" + name + "' data");
        out.push_back({std::move(name), std::move(t)});
    }
    return out;
}

void write_container_file(const std::string& path, const std::vector<NamedTensor>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("container: cannot open '" + path + "' for writing");
    write_container(os, entries);
}

std::vector<NamedTensor> read_container_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("container: cannot open '" + path + "'");
    return read_container(is);
}

}  // namespace pytf
