#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <optional>

#include "core/pipeline.hpp"

using namespace clonefuse;
namespace fs = std::filesystem;

namespace {

const std::string kFix = CLONEFUSE_FIXTURE_DIR;

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("clonefuse_test_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

json base_config(const fs::path& work) {
    return {{"seed", 17},          {"tau", 0.85},        {"policy", "all"},   {"work_dir", work.string()},
            {"dim", 16},           {"epochs", 20},       {"batch_size", 8},   {"lr", 0.003},
            {"warmup_steps", 10},  {"d_k", 16},          {"hidden", 8}};
}

json with(json cfg, const json& extra) {
    for (const auto& [k, v] : extra.items()) cfg[k] = v;
    return cfg;
}

void run_all(const fs::path& work) {
    const auto cfg = base_config(work);
    using pipeline::run_stage;
    run_stage("curate", with(cfg, {{"fragments", kFix + "/fragments.jsonl"}, {"pairs", kFix + "/pairs.jsonl"}}));
    run_stage("featurize", cfg);
    run_stage("import-embeddings", with(cfg, {{"embeddings", kFix + "/embeddings.tfem"}}));
    run_stage("train-prior", cfg);
    run_stage("train-fusion", cfg);
    run_stage("predict", with(cfg, {{"checkpoint", (work / "fusion.tfck").string()}}));
    run_stage("arbitrate", with(cfg, {{"mock_arbiter", kFix + "/mock_arbiter.json"}}));
    run_stage("evaluate", cfg);
}

std::optional<ErrorCode> code_of(const std::string& stage, const json& cfg) {
    try {
        pipeline::run_stage(stage, cfg);
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

}  // namespace

TEST_CASE("full offline run is reproducible and leaves clean manifests") {
    ::setenv("CLONEFUSE_ARBITER_KEY", "do-not-leak-7731", 1);
    const auto a = scratch("a"), b = scratch("b");
    run_all(a);
    run_all(b);
    CHECK(read_file(a / "report.json") == read_file(b / "report.json"));
    CHECK(read_file(a / "decisions.jsonl").size() > 0);

    const auto report = json::parse(read_file(a / "report.json"));
    CHECK(report.contains("ci_95"));

    for (const auto& stage : pipeline::stage_names()) {
        const auto path = a / ("manifest-" + stage + ".json");
        REQUIRE_MESSAGE(fs::exists(path), path.string());
        const auto text = read_file(path);
        CHECK(text.find("do-not-leak-7731") == std::string::npos);
        const auto m = json::parse(text);
        CHECK(m["stage"] == stage);
        CHECK(m["version"] == pipeline::kVersion);
        for (const auto& [k, v] : m.items()) {
            CHECK(k.find("time") == std::string::npos);
            CHECK(k.find("date") == std::string::npos);
        }
        for (const auto& [input, digest] : m["inputs"].items()) CHECK(digest.get<std::string>().size() == 64);
    }
    // manifests only differ by work dir paths
    auto ma = read_file(a / "manifest-evaluate.json"), mb = read_file(b / "manifest-evaluate.json");
    for (auto* s : {&ma, &mb}) {
        const auto dir = (s == &ma ? a : b).string();
        for (auto pos = s->find(dir); pos != std::string::npos; pos = s->find(dir)) s->replace(pos, dir.size(), "W");
    }
    CHECK(ma == mb);
}

TEST_CASE("usage errors") {
    const auto w = scratch("usage");
    auto cfg = base_config(w);
    CHECK(code_of("frobnicate", cfg) == ErrorCode::Usage);

    auto no_seed = cfg;
    no_seed.erase("seed");
    CHECK(code_of("featurize", no_seed) == ErrorCode::Usage);
    CHECK(code_of("curate", with(no_seed, {{"fragments", kFix + "/fragments.jsonl"}, {"pairs", kFix + "/pairs.jsonl"}})) ==
          ErrorCode::Usage);

    CHECK(code_of("predict", cfg) == ErrorCode::Usage);
    CHECK(code_of("import-embeddings", with(cfg, {{"embeddings", (w / "missing.tfem").string()}})) == ErrorCode::Usage);
    CHECK(code_of("featurize", with(cfg, {{"seed", "abc"}})) == ErrorCode::Usage);
    // the work dir is empty, so evaluate has nothing to read
    CHECK(code_of("evaluate", cfg) == ErrorCode::Usage);
}

TEST_CASE("corrupt checkpoint is a data error, not usage") {
    const auto w = scratch("corrupt");
    const auto code = code_of("predict", with(base_config(w), {{"checkpoint", kFix + "/pairs.jsonl"}}));
    REQUIRE(code.has_value());
    CHECK(*code != ErrorCode::Usage);
}
