#pragma once
// Per-fragment semantic embeddings stored in the "TFEM" binary format.
//
// Layout (all integers little-endian):
//   header: "TFEM" | u32 version (=1) | u32 dimension | u8 pooling
//   record: u16 id_len | id bytes (UTF-8) | dimension x f32 | u32 crc32
// The CRC covers the record body (id_len, id bytes and the vector).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/common.hpp"

namespace clonefuse::semantic {

inline constexpr char kMagic[4] = {'T', 'F', 'E', 'M'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDefaultDimension = 768;
inline constexpr std::size_t kHeaderSize = 13;

enum class Pooling : std::uint8_t { Cls = 0, Mean = 1, Max = 2 };

const char* pooling_name(Pooling p);
Pooling parse_pooling(const std::string& name);

struct SemanticEmbedding {
    std::string fragment_id;
    std::vector<float> vector;
    Pooling pooling = Pooling::Cls;

    bool finite() const;
};

class EmbeddingStore {
public:
    // Validates the header, every record length and checksum. When
    // `expected_dimension` is set the header must match it.
    static EmbeddingStore open(const std::filesystem::path& path,
                               std::optional<std::uint32_t> expected_dimension = std::nullopt);
    static EmbeddingStore from_bytes(std::string bytes, std::optional<std::uint32_t> expected_dimension = std::nullopt,
                                     const std::string& origin = "<memory>");

    std::uint32_t dimension() const { return dimension_; }
    Pooling pooling() const { return pooling_; }
    std::size_t size() const { return order_.size(); }
    bool contains(const std::string& fragment_id) const { return index_.count(fragment_id) > 0; }
    const std::vector<std::string>& ids() const { return order_; }

    // Throws Error(NotFound) for unknown ids.
    SemanticEmbedding get(const std::string& fragment_id) const;

private:
    std::string data_;
    std::uint32_t dimension_ = 0;
    Pooling pooling_ = Pooling::Cls;
    std::unordered_map<std::string, std::size_t> index_;  // id -> offset of the f32 block
    std::vector<std::string> order_;
};

std::string encode_store(std::uint32_t dimension, Pooling pooling, const std::vector<SemanticEmbedding>& records);
void write_store(const std::filesystem::path& path, std::uint32_t dimension, Pooling pooling,
                 const std::vector<SemanticEmbedding>& records);

// h_sem for a pair: [left || right].
std::vector<double> pair_semantic_input(const SemanticEmbedding& left, const SemanticEmbedding& right);

}  // namespace clonefuse::semantic
