#include "core/semantic.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

namespace clonefuse::semantic {

const char* pooling_name(Pooling p) {
    switch (p) {
        case Pooling::Cls: return "cls";
        case Pooling::Mean: return "mean";
        case Pooling::Max: return "max";
    }
    return "cls";
}

Pooling parse_pooling(const std::string& name) {
    if (name == "cls") return Pooling::Cls;
    if (name == "mean") return Pooling::Mean;
    if (name == "max") return Pooling::Max;
    fail(ErrorCode::InvalidArgument, "unknown pooling '" + name + "'");
}

bool SemanticEmbedding::finite() const {
    for (float v : vector)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

std::uint32_t load_u32(const char* p) {
    const auto* u = reinterpret_cast<const unsigned char*>(p);
    return std::uint32_t(u[0]) | (std::uint32_t(u[1]) << 8) | (std::uint32_t(u[2]) << 16) | (std::uint32_t(u[3]) << 24);
}

std::uint16_t load_u16(const char* p) {
    const auto* u = reinterpret_cast<const unsigned char*>(p);
    return static_cast<std::uint16_t>(u[0] | (u[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

float load_f32(const char* p) {
    const std::uint32_t bits = load_u32(p);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

}  // namespace

EmbeddingStore EmbeddingStore::open(const std::filesystem::path& path, std::optional<std::uint32_t> expected_dimension) {
    return from_bytes(read_file(path), expected_dimension, path.string());
}

EmbeddingStore EmbeddingStore::from_bytes(std::string bytes, std::optional<std::uint32_t> expected_dimension,
                                          const std::string& origin) {
    EmbeddingStore s;
    s.data_ = std::move(bytes);
    const std::string& d = s.data_;
    if (d.size() < kHeaderSize || std::memcmp(d.data(), kMagic, 4) != 0)
        fail(ErrorCode::Format, origin + ": bad magic (expected \"TFEM\")");
    const std::uint32_t version = load_u32(d.data() + 4);
    if (version != kFormatVersion)
        fail(ErrorCode::Format, origin + ": unsupported version " + std::to_string(version));
    s.dimension_ = load_u32(d.data() + 8);
    if (s.dimension_ == 0) fail(ErrorCode::Format, origin + ": zero dimension");
    if (expected_dimension && *expected_dimension != s.dimension_)
        fail(ErrorCode::Format, origin + ": dimension " + std::to_string(s.dimension_) + " does not match expected " +
                                    std::to_string(*expected_dimension));
    const auto pool = static_cast<unsigned char>(d[12]);
    if (pool > 2) fail(ErrorCode::Format, origin + ": unknown pooling code " + std::to_string(pool));
    s.pooling_ = static_cast<Pooling>(pool);

    const std::size_t vec_bytes = static_cast<std::size_t>(s.dimension_) * 4;
    std::size_t off = kHeaderSize;
    while (off < d.size()) {
        const std::size_t start = off;
        if (d.size() - off < 2) fail(ErrorCode::Format, origin + ": truncated record at offset " + std::to_string(start));
        const std::size_t id_len = load_u16(d.data() + off);
        const std::size_t body = 2 + id_len + vec_bytes;
        if (d.size() - off < body + 4)
            fail(ErrorCode::Format, origin + ": truncated record at offset " + std::to_string(start));
        const auto stored = load_u32(d.data() + off + body);
        const auto actual = crc32({reinterpret_cast<const unsigned char*>(d.data() + off), body});
        if (stored != actual)
            fail(ErrorCode::Format, origin + ": checksum mismatch in record at offset " + std::to_string(start));
        std::string id = d.substr(off + 2, id_len);
        if (utf8_invalid_offset(id) != std::string_view::npos)
            fail(ErrorCode::Format, origin + ": record id is not UTF-8 at offset " + std::to_string(start));
        if (!s.index_.emplace(id, off + 2 + id_len).second)
            fail(ErrorCode::Format, origin + ": duplicate fragment id '" + id + "'");
        s.order_.push_back(std::move(id));
        off += body + 4;
    }
    return s;
}

SemanticEmbedding EmbeddingStore::get(const std::string& fragment_id) const {
    const auto it = index_.find(fragment_id);
    if (it == index_.end()) fail(ErrorCode::NotFound, "no embedding for fragment '" + fragment_id + "'");
    SemanticEmbedding e;
    e.fragment_id = fragment_id;
    e.pooling = pooling_;
    e.vector.resize(dimension_);
    for (std::uint32_t k = 0; k < dimension_; ++k) e.vector[k] = load_f32(data_.data() + it->second + 4 * k);
    return e;
}

std::string encode_store(std::uint32_t dimension, Pooling pooling, const std::vector<SemanticEmbedding>& records) {
    if (dimension == 0) fail(ErrorCode::InvalidArgument, "embedding dimension must be positive");
    std::string out(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, dimension);
    out.push_back(static_cast<char>(pooling));
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        if (r.vector.size() != dimension)
            fail(ErrorCode::InvalidArgument, "embedding '" + r.fragment_id + "' has dimension " +
                                                 std::to_string(r.vector.size()) + ", store expects " +
                                                 std::to_string(dimension));
        if (r.fragment_id.size() > 0xffff) fail(ErrorCode::InvalidArgument, "fragment id too long");
        if (!seen.insert(r.fragment_id).second)
            fail(ErrorCode::InvalidArgument, "duplicate fragment id '" + r.fragment_id + "'");
        const std::size_t start = out.size();
        put_u16(out, static_cast<std::uint16_t>(r.fragment_id.size()));
        out += r.fragment_id;
        for (float v : r.vector) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            put_u32(out, bits);
        }
        const auto c = crc32({reinterpret_cast<const unsigned char*>(out.data() + start), out.size() - start});
        put_u32(out, c);
    }
    return out;
}

void write_store(const std::filesystem::path& path, std::uint32_t dimension, Pooling pooling,
                 const std::vector<SemanticEmbedding>& records) {
    write_file(path, encode_store(dimension, pooling, records));
}

std::vector<double> pair_semantic_input(const SemanticEmbedding& left, const SemanticEmbedding& right) {
    if (left.vector.size() != right.vector.size())
        fail(ErrorCode::InvalidArgument, "pair_semantic_input: dimension mismatch (" +
                                             std::to_string(left.vector.size()) + " vs " +
                                             std::to_string(right.vector.size()) + ")");
    std::vector<double> h;
    h.reserve(2 * left.vector.size());
    for (float v : left.vector) h.push_back(v);
    for (float v : right.vector) h.push_back(v);
    return h;
}

}  // namespace clonefuse::semantic
