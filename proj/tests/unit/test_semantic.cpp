#include <doctest.h>

#include <cstring>
#include <random>

#include <zlib.h>

#include "core/semantic.hpp"

using namespace clonefuse;
using namespace clonefuse::semantic;

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

// Byte layout written out by hand from the format description.
std::string hand_encoded(std::uint32_t dim, std::uint8_t pooling, const std::string& id, const std::vector<float>& v) {
    std::string s = "TFEM";
    put_u32(s, 1);
    put_u32(s, dim);
    s.push_back(char(pooling));
    std::string body;
    body.push_back(char(id.size() & 0xff));
    body.push_back(char(id.size() >> 8));
    body += id;
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(body, bits);
    }
    const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), uInt(body.size()));
    s += body;
    put_u32(s, std::uint32_t(crc));
    return s;
}

std::uint32_t bits(float f) {
    std::uint32_t b;
    std::memcpy(&b, &f, 4);
    return b;
}

}  // namespace

TEST_CASE("encoder matches the hand-built byte layout") {
    const std::vector<float> v = {1.5f, -2.0f, 0.0f};
    CHECK(encode_store(3, Pooling::Mean, {{"frag", v, Pooling::Mean}}) == hand_encoded(3, 1, "frag", v));
    const auto s = EmbeddingStore::from_bytes(hand_encoded(3, 2, "x", v));
    CHECK(s.pooling() == Pooling::Max);
    CHECK(s.get("x").vector == v);
}

TEST_CASE("1000 random vectors round trip bit-exactly, independent of write order") {
    std::mt19937_64 g(31337);
    std::uniform_int_distribution<std::uint32_t> raw;
    const std::uint32_t D = 24;
    std::vector<SemanticEmbedding> recs;
    for (int i = 0; i < 1000; ++i) {
        SemanticEmbedding e;
        e.fragment_id = "frag-" + std::to_string(i) + (i % 7 == 0 ? "-\xc3\xa9" : "");
        for (std::uint32_t k = 0; k < D; ++k) {
            float f;
            do {
                const std::uint32_t b = raw(g);
                std::memcpy(&f, &b, 4);
            } while (!std::isfinite(f));
            e.vector.push_back(f);
        }
        recs.push_back(e);
    }
    recs[3].vector[0] = -0.0f;
    recs[4].vector[0] = std::numeric_limits<float>::denorm_min();

    const auto store = EmbeddingStore::from_bytes(encode_store(D, Pooling::Cls, recs), D);
    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), g);
    const auto store2 = EmbeddingStore::from_bytes(encode_store(D, Pooling::Cls, shuffled));
    CHECK(store.size() == 1000);
    for (const auto& r : recs) {
        const auto a = store.get(r.fragment_id).vector;
        const auto b = store2.get(r.fragment_id).vector;
        REQUIRE(a.size() == D);
        for (std::uint32_t k = 0; k < D; ++k) {
            CHECK(bits(a[k]) == bits(r.vector[k]));
            CHECK(bits(b[k]) == bits(r.vector[k]));
        }
    }
}

TEST_CASE("open errors") {
    const std::vector<float> v(4, 1.0f);
    const auto good = encode_store(4, Pooling::Cls, {{"a", v, Pooling::Cls}, {"b", v, Pooling::Cls}});

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(EmbeddingStore::from_bytes(bad_magic), doctest::Contains("magic"), Error);

    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(EmbeddingStore::from_bytes(bad_version), Error);

    CHECK_THROWS_WITH_AS(EmbeddingStore::from_bytes(good, 768), doctest::Contains("dimension"), Error);

    const auto truncated = good.substr(0, good.size() - 3);
    CHECK_THROWS_WITH_AS(EmbeddingStore::from_bytes(truncated), doctest::Contains("offset"), Error);

    auto flipped = good;
    flipped[kHeaderSize + 5] ^= 0x40;
    CHECK_THROWS_WITH_AS(EmbeddingStore::from_bytes(flipped), doctest::Contains("checksum"), Error);

    CHECK_THROWS_AS(EmbeddingStore::open("/nonexistent/store.tfem"), Error);
    CHECK_THROWS_AS(encode_store(4, Pooling::Cls, {{"a", v, Pooling::Cls}, {"a", v, Pooling::Cls}}), Error);
    CHECK_THROWS_AS(encode_store(5, Pooling::Cls, {{"a", v, Pooling::Cls}}), Error);
}

TEST_CASE("lookup and finiteness") {
    const std::vector<float> zeros(768, 0.0f);
    const auto s = EmbeddingStore::from_bytes(encode_store(768, Pooling::Cls, {{"z", zeros, Pooling::Cls}}));
    CHECK(s.get("z").finite());
    try {
        s.get("missing");
        FAIL("expected not-found");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotFound);
    }
    SemanticEmbedding bad{"n", {1.0f, std::numeric_limits<float>::quiet_NaN()}, Pooling::Cls};
    CHECK_FALSE(bad.finite());
}

TEST_CASE("pair input is concatenation") {
    const SemanticEmbedding a{"a", {1, 2}, Pooling::Cls}, b{"b", {3, 4}, Pooling::Cls};
    CHECK(pair_semantic_input(a, b) == std::vector<double>{1, 2, 3, 4});
    CHECK(pair_semantic_input(b, a) == std::vector<double>{3, 4, 1, 2});
    const SemanticEmbedding c{"c", {1, 2, 3}, Pooling::Cls};
    CHECK_THROWS_AS(pair_semantic_input(a, c), Error);
}

TEST_CASE("bundled fixture store opens with D=16") {
    const auto s = EmbeddingStore::open(std::string(CLONEFUSE_FIXTURE_DIR) + "/embeddings.tfem", 16);
    CHECK(s.dimension() == 16);
    CHECK(s.size() > 100);
    for (const auto& id : s.ids()) CHECK(s.get(id).finite());
}
