#pragma once
// Shared plumbing: error type, deterministic RNG, digests, UTF-8 and
// JSON-lines helpers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace clonefuse {

using json = nlohmann::json;

inline constexpr int kNumClasses = 7;

enum class ErrorCode {
    InvalidArgument,
    Io,
    Parse,
    NotFound,
    Format,
    Numeric,
    Transport,
    Schema,
    Usage,
    Internal,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

// mt19937_64 output is fixed by the standard; the distribution helpers are
// hand-rolled because std:: distributions differ between library vendors.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, n) without modulo bias. n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);
    // Uniform in [0, 1), 53-bit resolution.
    double uniform01();
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);
std::array<unsigned char, 32> sha256_raw(std::string_view bytes);
std::uint32_t crc32(std::span<const unsigned char> bytes);

// Returns the byte offset of the first invalid sequence, or npos if valid.
std::size_t utf8_invalid_offset(std::string_view text);
// Number of code points; the text must be valid UTF-8.
std::size_t utf8_length(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Invokes `fn(object, line_number)` for every non-blank line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

// JSON number formatting that round-trips exactly and is stable run to run.
std::string dump_compact(const json& j);

}  // namespace clonefuse
