#include "scvae/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace scvae {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'V', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size()) {
            throw FormatError(std::string("truncated checkpoint reading ") + what + " at offset " +
                              std::to_string(pos));
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes[pos++];
    }
    const std::uint8_t* raw(std::size_t n, const char* what) {
        need(n, what);
        const std::uint8_t* p = bytes.data() + pos;
        pos += n;
        return p;
    }
};

void put_entry_header(std::vector<std::uint8_t>& out, const std::string& name, std::uint8_t dtype_code,
                      const std::vector<std::int64_t>& dims) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(dtype_code);
    out.push_back(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) put_u64(out, static_cast<std::uint64_t>(d));
}

}  // namespace

double Checkpoint::scalar(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint has no entry \"" + name + "\"");
    return it->second.item();
}

void Checkpoint::set_text(const std::string& name, const std::string& text) {
    blobs[name] = std::vector<std::uint8_t>(text.begin(), text.end());
}

std::string Checkpoint::text(const std::string& name) const {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw FormatError("checkpoint has no entry \"" + name + "\"");
    return std::string(it->second.begin(), it->second.end());
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);

    // Merge the two maps into one name-sorted entry stream.
    std::map<std::string, int> order;
    for (const auto& [name, t] : tensors) order.emplace(name, 0);
    for (const auto& [name, b] : blobs) {
        if (!order.emplace(name, 1).second) throw FormatError("duplicate checkpoint entry \"" + name + "\"");
    }
    put_u32(out, static_cast<std::uint32_t>(order.size()));
    for (const auto& [name, kind] : order) {
        if (kind == 0) {
            const Tensor& t = tensors.at(name);
            put_entry_header(out, name, static_cast<std::uint8_t>(t.dtype()), t.shape());
            const auto& data = t.impl()->data;
            out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(data.data()),
                       reinterpret_cast<const std::uint8_t*>(data.data()) + data.size());
        } else {
            const auto& b = blobs.at(name);
            put_entry_header(out, name, 2, {static_cast<std::int64_t>(b.size())});
            out.insert(out.end(), b.begin(), b.end());
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    const std::uint8_t* magic = r.raw(4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic at offset 0");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version) + " at offset 4");
    const std::uint32_t count = r.u32("entry count");

    Checkpoint ckpt;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32("name length");
        if (name_len > 4096) throw FormatError("implausible name length at offset " + std::to_string(r.pos - 4));
        const std::uint8_t* name_bytes = r.raw(name_len, "name");
        std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        const std::uint8_t code = r.u8("dtype code");
        const std::uint8_t rank = r.u8("rank");
        std::vector<std::int64_t> dims(rank);
        std::int64_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            dims[i] = static_cast<std::int64_t>(r.u64("dims"));
            if (dims[i] < 0 || (numel > 0 && dims[i] > (1LL << 40) / std::max<std::int64_t>(1, numel))) {
                throw FormatError("implausible dims at offset " + std::to_string(r.pos - 8));
            }
            numel *= dims[i];
        }
        if (ckpt.has(name)) throw FormatError("duplicate entry \"" + name + "\"");
        if (code == 2) {
            if (rank != 1) throw FormatError("byte blob \"" + name + "\" must be rank 1");
            const std::uint8_t* data = r.raw(static_cast<std::size_t>(numel), "blob data");
            ckpt.blobs[name] = std::vector<std::uint8_t>(data, data + numel);
        } else if (code == 0 || code == 1) {
            const Dtype dt = code == 0 ? Dtype::F32 : Dtype::F64;
            const std::size_t nbytes = static_cast<std::size_t>(numel) * dtype_size(dt);
            const std::uint8_t* data = r.raw(nbytes, "tensor data");
            Tensor t(dims, dt);
            std::memcpy(t.impl()->data.data(), data, nbytes);
            ckpt.tensors[name] = t;
        } else {
            throw FormatError("unknown dtype code " + std::to_string(code) + " at offset " + std::to_string(r.pos - 2));
        }
    }
    if (r.pos != bytes.size()) {
        throw FormatError("trailing bytes at offset " + std::to_string(r.pos));
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = ckpt.serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open " + path.string());
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("read failed for " + path.string());
    return Checkpoint::deserialize(bytes);
}

}  // namespace scvae
