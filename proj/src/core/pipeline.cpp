#include "core/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>

#include "core/arbiter.hpp"
#include "core/corpus.hpp"
#include "core/fusion.hpp"
#include "core/lexical.hpp"
#include "core/metrics.hpp"
#include "core/prior.hpp"
#include "core/semantic.hpp"
#include "core/syntax.hpp"

namespace fs = std::filesystem;

namespace clonefuse::pipeline {

namespace {

std::string flag_name(const std::string& key) {
    std::string f = "--" + key;
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

// Typed view over the flat config. Values may arrive as JSON scalars or as
// strings (config files and command lines carry text).
class Options {
public:
    explicit Options(const json& j) : j_(j.is_null() ? json::object() : j) {
        if (!j_.is_object()) fail(ErrorCode::Usage, "stage config must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_[key].is_null(); }

    std::string str(const std::string& key, const std::string& def = {}) const {
        if (!has(key)) return def;
        const auto& v = j_[key];
        return v.is_string() ? v.get<std::string>() : v.dump();
    }

    std::string required(const std::string& key) const {
        if (!has(key) || str(key).empty()) fail(ErrorCode::Usage, "missing required option " + flag_name(key));
        return str(key);
    }

    double num(const std::string& key, double def) const {
        if (!has(key)) return def;
        const auto& v = j_[key];
        if (v.is_number()) return v.get<double>();
        const auto s = str(key);
        try {
            std::size_t used = 0;
            double x = std::stod(s, &used);
            if (used == s.size()) return x;
        } catch (const std::exception&) {
        }
        fail(ErrorCode::Usage, "option " + flag_name(key) + " expects a number, got '" + s + "'");
    }

    std::uint64_t u64(const std::string& key, std::uint64_t def) const {
        if (!has(key)) return def;
        const auto& v = j_[key];
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
        const auto s = str(key);
        std::uint64_t x = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || ptr != s.data() + s.size())
            fail(ErrorCode::Usage, "option " + flag_name(key) + " expects a non-negative integer, got '" + s + "'");
        return x;
    }

    std::size_t count(const std::string& key, std::size_t def) const { return static_cast<std::size_t>(u64(key, def)); }

    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        const auto& v = j_[key];
        if (v.is_boolean()) return v.get<bool>();
        const auto s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        fail(ErrorCode::Usage, "option " + flag_name(key) + " expects true/false, got '" + s + "'");
    }

    std::uint64_t seed() const {
        if (!has("seed")) fail(ErrorCode::Usage, "missing required option --seed");
        return u64("seed", 0);
    }

    fs::path work_dir() const { return fs::path(str("work_dir", ".")); }

    // Input path from `key`, defaulting to work_dir/def_name; must exist.
    fs::path input(const std::string& key, const std::string& def_name = {}) const {
        fs::path p;
        if (has(key)) p = str(key);
        else if (!def_name.empty()) p = work_dir() / def_name;
        else fail(ErrorCode::Usage, "missing required option " + flag_name(key));
        if (!fs::exists(p))
            fail(ErrorCode::Usage, "input for " + flag_name(key) + " not found: " + p.string());
        return p;
    }

    fs::path output(const std::string& key, const std::string& def_name) const {
        return has(key) ? fs::path(str(key)) : work_dir() / def_name;
    }

    const json& raw() const { return j_; }

private:
    json j_;
};

void write_manifest(const Options& opt, const std::string& stage, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    json digests = json::object();
    for (const auto& p : inputs) digests[p.string()] = sha256_hex(read_file(p));
    json outs = json::array();
    for (const auto& p : outputs) outs.push_back(p.string());
    json m = {{"stage", stage},
              {"version", kVersion},
              {"config", opt.raw()},
              {"inputs", digests},
              {"outputs", outs}};
    write_file(opt.work_dir() / ("manifest-" + stage + ".json"), m.dump(2) + "\n");
}

std::unordered_map<std::string, json> index_jsonl(const fs::path& path) {
    std::unordered_map<std::string, json> out;
    for_each_jsonl(path, [&](const json& row, std::size_t line) {
        if (!row.contains("pair_id") || !row["pair_id"].is_string())
            fail(ErrorCode::Format, path.string() + ":" + std::to_string(line) + ": missing pair_id");
        out[row["pair_id"].get<std::string>()] = row;
    });
    return out;
}

template <std::size_t N>
std::array<double, N> read_array(const json& row, const char* key, const std::string& where) {
    std::array<double, N> out{};
    if (!row.contains(key) || !row[key].is_array() || row[key].size() != N)
        fail(ErrorCode::Format, where + ": field '" + key + "' must hold " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) out[i] = row[key][i].get<double>();
    return out;
}

std::vector<corpus::PairRecord> load_split(const Options& opt, const std::string& split, std::vector<fs::path>& inputs) {
    auto p = opt.input(split + "_pairs", split + ".jsonl");
    inputs.push_back(p);
    return corpus::load_pairs(p);
}

// ---------------------------------------------------------------- curate

json stage_curate(const Options& opt) {
    const auto frag_path = opt.input("fragments");
    const auto pair_path = opt.input("pairs");
    corpus::CurationOptions co;
    co.plan.seed = opt.seed();
    co.plan.train_ratio = opt.num("train_ratio", co.plan.train_ratio);
    co.plan.validation_ratio = opt.num("validation_ratio", co.plan.validation_ratio);
    co.plan.test_ratio = opt.num("test_ratio", co.plan.test_ratio);
    co.plan.train_caps[0] = opt.count("cap_label0", 40000);
    co.plan.train_caps[6] = opt.count("cap_label6", 25000);
    co.plan.validation_target = opt.count("validation_target", co.plan.validation_target);
    co.min_chars = opt.count("min_chars", co.min_chars);
    co.diversity = opt.flag("diversity", true);
    co.diversity_bins = opt.count("diversity_bins", co.diversity_bins);
    try {
        co.plan.validate();
    } catch (const Error& e) {
        fail(ErrorCode::Usage, e.what());
    }

    auto result = corpus::curate(corpus::load_fragments(frag_path), corpus::load_pairs(pair_path), co);
    const auto dir = opt.work_dir();
    std::vector<fs::path> outs = {dir / "fragments.jsonl", dir / "train.jsonl", dir / "validation.jsonl",
                                  dir / "test.jsonl", dir / "curation_stats.json", dir / "project_splits.json"};
    corpus::write_fragments(outs[0], result.fragments);
    corpus::write_pairs(outs[1], result.train);
    corpus::write_pairs(outs[2], result.validation);
    corpus::write_pairs(outs[3], result.test);
    json stats = result.stats.to_json();
    write_file(outs[4], stats.dump(2) + "\n");
    json splits = json::object();
    for (const auto& [proj, s] : result.project_splits) splits[proj] = corpus::split_name(s);
    write_file(outs[5], splits.dump(2) + "\n");
    write_manifest(opt, "curate", {frag_path, pair_path}, outs);
    return {{"stage", "curate"},
            {"fragments", result.fragments.size()},
            {"train", result.train.size()},
            {"validation", result.validation.size()},
            {"test", result.test.size()},
            {"stats", stats}};
}

// ---------------------------------------------------------------- featurize

json stage_featurize(const Options& opt) {
    std::vector<fs::path> inputs;
    const auto frag_path = opt.input("curated_fragments", "fragments.jsonl");
    inputs.push_back(frag_path);
    const auto fragments = corpus::load_fragments(frag_path);
    std::unordered_map<std::string, const corpus::CodeFragment*> by_id;
    for (const auto& f : fragments) by_id[f.fragment_id] = &f;

    std::vector<corpus::PairRecord> pairs;
    std::size_t n_train = 0;
    for (const char* split : {"train", "validation", "test"}) {
        auto part = load_split(opt, split, inputs);
        if (std::string(split) == "train") n_train = part.size();
        pairs.insert(pairs.end(), part.begin(), part.end());
    }

    const auto parser = syntax::make_parser(opt.str("language", "java"));
    std::unordered_map<std::string, lexical::TokenSequence> tokens;
    std::unordered_map<std::string, std::optional<syntax::SyntaxTree>> trees;
    std::size_t parse_failures = 0;
    auto fragment = [&](const std::string& id) -> const corpus::CodeFragment& {
        auto it = by_id.find(id);
        if (it == by_id.end()) fail(ErrorCode::NotFound, "pair references unknown fragment " + id);
        return *it->second;
    };
    auto token_seq = [&](const std::string& id) -> const lexical::TokenSequence& {
        auto it = tokens.find(id);
        if (it == tokens.end()) it = tokens.emplace(id, lexical::tokenize(fragment(id).source_text)).first;
        return it->second;
    };
    auto tree = [&](const std::string& id) -> const std::optional<syntax::SyntaxTree>& {
        auto it = trees.find(id);
        if (it == trees.end()) {
            std::optional<syntax::SyntaxTree> t;
            try {
                t = parser->parse(fragment(id).source_text, id);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::Parse) throw;
                ++parse_failures;
            }
            it = trees.emplace(id, std::move(t)).first;
        }
        return it->second;
    };

    // idf over the distinct fragments of the training split only
    std::vector<lexical::TokenSequence> docs;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < n_train; ++i)
        for (const auto* id : {&pairs[i].left, &pairs[i].right})
            if (seen.insert(*id).second) docs.push_back(token_seq(*id));
    if (docs.empty()) fail(ErrorCode::InvalidArgument, "training split is empty; cannot fit idf");
    const auto idf = lexical::IdfTable::fit(docs);

    std::vector<json> lex_rows, struct_rows;
    std::size_t failed_pairs = 0, approx = 0;
    for (const auto& p : pairs) {
        const auto lv = lexical::assemble_features(token_seq(p.left), token_seq(p.right), idf);
        lex_rows.push_back({{"pair_id", p.pair_id}, {"lexical", lv.to_array()}, {"truncated", lv.truncated}});
        const auto& ta = tree(p.left);
        const auto& tb = tree(p.right);
        const auto sv = (ta && tb) ? syntax::structural_vector(*ta, *tb) : syntax::StructuralVector::parse_failure();
        if (sv.parse_failed) ++failed_pairs;
        if (sv.ted_approx) ++approx;
        struct_rows.push_back({{"pair_id", p.pair_id},
                               {"structural", sv.v},
                               {"parse_failed", sv.parse_failed},
                               {"ted_approx", sv.ted_approx}});
    }
    const auto dir = opt.work_dir();
    std::vector<fs::path> outs = {dir / "idf.json", dir / "lexical.jsonl", dir / "structural.jsonl"};
    write_file(outs[0], dump_compact(idf.to_json()) + "\n");
    write_jsonl(outs[1], lex_rows);
    write_jsonl(outs[2], struct_rows);
    write_manifest(opt, "featurize", inputs, outs);
    return {{"stage", "featurize"},
            {"pairs", pairs.size()},
            {"idf_documents", docs.size()},
            {"fragment_parse_failures", parse_failures},
            {"pairs_parse_failed", failed_pairs},
            {"pairs_ted_approx", approx}};
}

// ---------------------------------------------------------------- import-embeddings

json stage_import_embeddings(const Options& opt) {
    const auto src = opt.input("embeddings");
    const auto dim = static_cast<std::uint32_t>(opt.count("dim", semantic::kDefaultDimension));
    const auto store = semantic::EmbeddingStore::open(src, dim);
    std::size_t non_finite = 0;
    for (const auto& id : store.ids())
        if (!store.get(id).finite()) ++non_finite;
    if (non_finite > 0) fail(ErrorCode::Numeric, src.string() + ": " + std::to_string(non_finite) + " non-finite vectors");

    std::size_t missing = 0, fragments = 0;
    std::vector<fs::path> inputs = {src};
    const auto frag_path = opt.work_dir() / "fragments.jsonl";
    if (fs::exists(frag_path)) {
        inputs.push_back(frag_path);
        for (const auto& f : corpus::load_fragments(frag_path)) {
            ++fragments;
            if (!store.contains(f.fragment_id)) ++missing;
        }
    }
    const auto dst = opt.work_dir() / "embeddings.tfem";
    std::error_code ec;
    if (!fs::exists(dst) || !fs::equivalent(src, dst, ec)) write_file(dst, read_file(src));
    write_manifest(opt, "import-embeddings", inputs, {dst});
    return {{"stage", "import-embeddings"},
            {"records", store.size()},
            {"dimension", store.dimension()},
            {"pooling", semantic::pooling_name(store.pooling())},
            {"fragments", fragments},
            {"fragments_without_embedding", missing}};
}

// ---------------------------------------------------------------- train-prior

json stage_train_prior(const Options& opt) {
    std::vector<fs::path> inputs;
    const auto lex_path = opt.input("lexical", "lexical.jsonl");
    inputs.push_back(lex_path);
    const auto lex = index_jsonl(lex_path);
    const auto train = load_split(opt, "train", inputs);

    prior::PriorConfig pc;
    pc.kind = prior::parse_model_kind(opt.str("prior_model", "gbdt"));
    pc.seed = opt.seed();
    pc.rounds = static_cast<int>(opt.count("prior_rounds", static_cast<std::size_t>(pc.rounds)));
    pc.max_depth = static_cast<int>(opt.count("prior_depth", static_cast<std::size_t>(pc.max_depth)));
    pc.shrinkage = opt.num("prior_shrinkage", pc.shrinkage);
    pc.l2 = opt.num("prior_l2", pc.l2);

    std::vector<prior::TrainingRow> rows;
    for (const auto& p : train) {
        auto it = lex.find(p.pair_id);
        if (it == lex.end()) fail(ErrorCode::NotFound, "no lexical features for training pair " + p.pair_id);
        rows.push_back({read_array<lexical::kLexicalDim>(it->second, "lexical", p.pair_id), p.label, p.pair_id});
    }
    const auto model = prior::fit_prior(rows, pc);

    // prior vectors for every featurized pair, in the lexical cache order
    std::vector<json> out_rows;
    for_each_jsonl(lex_path, [&](const json& row, std::size_t) {
        const auto id = row.at("pair_id").get<std::string>();
        out_rows.push_back({{"pair_id", id}, {"prior", prior::predict_prior(model, read_array<lexical::kLexicalDim>(row, "lexical", id))}});
    });
    const auto dir = opt.work_dir();
    std::vector<fs::path> outs = {dir / "prior_model.json", dir / "prior.jsonl"};
    write_file(outs[0], dump_compact(model.to_json()) + "\n");
    write_jsonl(outs[1], out_rows);
    write_manifest(opt, "train-prior", inputs, outs);
    return {{"stage", "train-prior"}, {"kind", prior::model_kind_name(pc.kind)}, {"train_rows", rows.size()},
            {"scored_pairs", out_rows.size()}};
}

// ---------------------------------------------------------------- fusion inputs

struct FeatureSource {
    std::unordered_map<std::string, json> prior, structural, lexical;
    semantic::EmbeddingStore store;

    fusion::FeatureBundle bundle(const corpus::PairRecord& p) const {
        fusion::FeatureBundle b;
        b.pair_id = p.pair_id;
        if (auto it = prior.find(p.pair_id); it != prior.end())
            b.prior = read_array<kNumClasses>(it->second, "prior", p.pair_id);
        if (auto it = structural.find(p.pair_id); it != structural.end()) {
            syntax::StructuralVector sv;
            sv.v = read_array<syntax::kStructuralDim>(it->second, "structural", p.pair_id);
            sv.parse_failed = it->second.value("parse_failed", false);
            sv.ted_approx = it->second.value("ted_approx", false);
            b.structural = sv;
        }
        if (auto it = lexical.find(p.pair_id); it != lexical.end())
            b.lexical = lexical::LexicalFeatureVector::from_array(
                read_array<lexical::kLexicalDim>(it->second, "lexical", p.pair_id));
        if (store.contains(p.left)) b.left = store.get(p.left);
        if (store.contains(p.right)) b.right = store.get(p.right);
        return b;
    }
};

FeatureSource load_features(const Options& opt, std::vector<fs::path>& inputs) {
    const auto prior_path = opt.input("priors", "prior.jsonl");
    const auto struct_path = opt.input("structural", "structural.jsonl");
    const auto lex_path = opt.input("lexical", "lexical.jsonl");
    const auto emb_path = opt.input("store", "embeddings.tfem");
    inputs.insert(inputs.end(), {prior_path, struct_path, lex_path, emb_path});
    return {index_jsonl(prior_path), index_jsonl(struct_path), index_jsonl(lex_path),
            semantic::EmbeddingStore::open(emb_path)};
}

// Pairs lacking an embedding are skipped and counted; other gaps are errors.
std::vector<fusion::Sample> make_samples(const FeatureSource& src, const std::vector<corpus::PairRecord>& pairs,
                                         std::size_t& skipped) {
    std::vector<fusion::Sample> out;
    for (const auto& p : pairs) {
        auto b = src.bundle(p);
        if (!b.left || !b.right) {
            ++skipped;
            continue;
        }
        out.push_back({b.to_input(), p.label, p.pair_id});
    }
    return out;
}

// ---------------------------------------------------------------- train-fusion

json stage_train_fusion(const Options& opt) {
    std::vector<fs::path> inputs;
    const auto src = load_features(opt, inputs);
    const auto train_pairs = load_split(opt, "train", inputs);
    const auto val_pairs = load_split(opt, "validation", inputs);
    std::size_t skipped = 0;
    const auto train = make_samples(src, train_pairs, skipped);
    const auto val = make_samples(src, val_pairs, skipped);

    fusion::TrainConfig tc;
    tc.seed = opt.seed();
    tc.shape.d = 2 * static_cast<std::size_t>(src.store.dimension());
    tc.shape.d_k = opt.count("d_k", tc.shape.d_k);
    tc.shape.hidden = opt.count("hidden", tc.shape.hidden);
    tc.epochs = opt.count("epochs", tc.epochs);
    tc.batch_size = opt.count("batch_size", tc.batch_size);
    tc.smoothing = opt.num("smoothing", tc.smoothing);
    tc.optimizer.lr = opt.num("lr", tc.optimizer.lr);
    tc.optimizer.warmup_steps = opt.count("warmup_steps", tc.optimizer.warmup_steps);
    tc.optimizer.weight_decay = opt.num("weight_decay", tc.optimizer.weight_decay);
    const auto dir = opt.work_dir();
    tc.checkpoint_dir = dir / "checkpoints";

    auto res = fusion::train(train, tc, &val);
    std::vector<json> log;
    for (const auto& s : res.steps) log.push_back(fusion::step_log_json(s));
    json epochs = json::array();
    for (const auto& e : res.epochs)
        epochs.push_back({{"epoch", e.epoch},
                          {"last_step", e.last_step},
                          {"mean_loss", e.mean_loss},
                          {"validation_macro_f1", e.validation_macro_f1 ? json(*e.validation_macro_f1) : json(nullptr)},
                          {"checkpoint", e.checkpoint ? json(*e.checkpoint) : json(nullptr)}});
    std::vector<fs::path> outs = {dir / "fusion.tfck", dir / "train_log.jsonl", dir / "epochs.json"};
    fusion::save_checkpoint(outs[0], res.params, {res.steps.size(), {{"config", tc.to_json()}}});
    write_jsonl(outs[1], log);
    write_file(outs[2], epochs.dump(2) + "\n");
    for (const auto& e : res.epochs)
        if (e.checkpoint) outs.emplace_back(*e.checkpoint);
    write_manifest(opt, "train-fusion", inputs, outs);
    return {{"stage", "train-fusion"},
            {"train_samples", train.size()},
            {"validation_samples", val.size()},
            {"skipped_missing_embedding", skipped},
            {"steps", res.steps.size()},
            {"epochs", epochs}};
}

// ---------------------------------------------------------------- predict

json stage_predict(const Options& opt) {
    const auto ckpt = opt.input("checkpoint");
    std::vector<fs::path> inputs = {ckpt};
    const auto params = fusion::load_checkpoint(ckpt);
    const auto src = load_features(opt, inputs);
    const auto split = opt.str("split", "test");
    if (split != "train" && split != "validation" && split != "test")
        fail(ErrorCode::Usage, "option --split expects train, validation or test");
    const auto pairs = load_split(opt, split, inputs);
    if (2 * static_cast<std::size_t>(src.store.dimension()) != params.shape.d)
        fail(ErrorCode::InvalidArgument, "checkpoint width " + std::to_string(params.shape.d) +
                                             " does not match embedding store dimension " +
                                             std::to_string(src.store.dimension()));

    std::vector<json> rows;
    std::size_t skipped = 0;
    for (const auto& p : pairs) {
        const auto b = src.bundle(p);
        if (!b.left || !b.right) {
            ++skipped;
            continue;
        }
        const auto d = fusion::forward(b, params);
        rows.push_back({{"pair_id", p.pair_id},
                        {"truth", p.label},
                        {"prediction", d.argmax()},
                        {"confidence", d.confidence},
                        {"p", d.p}});
    }
    const auto out = opt.output("predictions", "predictions.jsonl");
    write_jsonl(out, rows);
    write_manifest(opt, "predict", inputs, {out});
    return {{"stage", "predict"}, {"split", split}, {"predicted", rows.size()}, {"skipped_missing_embedding", skipped}};
}

ClassVector read_distribution(const json& row, const std::string& where) {
    auto p = read_array<kNumClasses>(row, "p", where);
    return p;
}

// ---------------------------------------------------------------- arbitrate

json stage_arbitrate(const Options& opt) {
    const auto pred_path = opt.input("predictions", "predictions.jsonl");
    const auto frag_path = opt.input("curated_fragments", "fragments.jsonl");
    std::vector<fs::path> inputs = {pred_path, frag_path};

    arbiter::TriggerPolicy policy;
    try {
        policy.mode = arbiter::parse_trigger_mode(opt.str("policy", "label5"));
    } catch (const Error& e) {
        fail(ErrorCode::Usage, e.what());
    }
    policy.tau = opt.num("tau", policy.tau);
    if (!(policy.tau > 0 && policy.tau < 1)) fail(ErrorCode::Usage, "option --tau must be in (0, 1)");

    std::unique_ptr<arbiter::Transport> transport;
    const bool has_mock = opt.has("mock_arbiter"), has_url = opt.has("arbiter_url");
    if (has_mock && has_url) fail(ErrorCode::Usage, "options --mock-arbiter and --arbiter-url are mutually exclusive");
    std::size_t in_flight = opt.count("max_in_flight", 4);
    if (has_mock) {
        const auto mp = opt.input("mock_arbiter");
        inputs.push_back(mp);
        transport = arbiter::MockTransport::from_file(mp);
    } else if (has_url) {
        arbiter::EndpointConfig ec;
        ec.url = opt.str("arbiter_url");
        ec.model = opt.str("arbiter_model", ec.model);
        ec.credential_env = opt.str("credential_env", ec.credential_env);
        ec.timeout_seconds = static_cast<int>(opt.count("timeout", 60));
        ec.max_in_flight = in_flight;
        ec.requests_per_minute = opt.num("requests_per_minute", ec.requests_per_minute);
        transport = std::make_unique<arbiter::HttpTransport>(ec);
    } else if (policy.mode != arbiter::TriggerMode::Off) {
        fail(ErrorCode::Usage, std::string("policy ") + arbiter::trigger_mode_name(policy.mode) +
                                   " needs --arbiter-url or --mock-arbiter");
    }

    std::unordered_map<std::string, std::string> source;
    for (const auto& f : corpus::load_fragments(frag_path)) source[f.fragment_id] = f.source_text;
    // fragment ids per pair come from the split files
    std::unordered_map<std::string, std::pair<std::string, std::string>> members;
    for (const char* split : {"train", "validation", "test"}) {
        const auto path = opt.work_dir() / (std::string(split) + ".jsonl");
        if (!fs::exists(path)) continue;
        for (const auto& p : corpus::load_pairs(path)) members[p.pair_id] = {p.left, p.right};
    }

    std::vector<arbiter::ArbitrationRequest> reqs;
    for_each_jsonl(pred_path, [&](const json& row, std::size_t line) {
        const auto id = row.at("pair_id").get<std::string>();
        const auto where = pred_path.string() + ":" + std::to_string(line);
        arbiter::ArbitrationRequest r;
        r.pair_id = id;
        r.p = ProbabilityDistribution::from_probs(read_distribution(row, where));
        if (auto it = members.find(id); it != members.end()) {
            r.code_left = source.count(it->second.first) ? source[it->second.first] : std::string();
            r.code_right = source.count(it->second.second) ? source[it->second.second] : std::string();
        }
        reqs.push_back(std::move(r));
    });

    arbiter::DecideOptions dopt;
    dopt.char_budget = opt.count("char_budget", dopt.char_budget);
    dopt.max_retries = static_cast<int>(opt.count("max_retries", 2));
    dopt.guided = opt.flag("guided", true);
    const auto decisions = arbiter::decide_all(reqs, policy, transport.get(), in_flight, dopt);

    std::vector<json> rows;
    std::size_t triggered = 0, fallbacks = 0, changed = 0;
    for (const auto& d : decisions) {
        rows.push_back(d.log_row());
        triggered += d.triggered;
        fallbacks += d.fallback_reason.has_value();
        changed += d.final_prediction != d.primary_prediction;
    }
    const auto out = opt.output("decisions", "decisions.jsonl");
    write_jsonl(out, rows);
    write_manifest(opt, "arbitrate", inputs, {out});
    const double frac = decisions.empty() ? 0.0 : static_cast<double>(triggered) / static_cast<double>(decisions.size());
    return {{"stage", "arbitrate"},
            {"policy", policy.to_json()},
            {"pairs", decisions.size()},
            {"triggered", triggered},
            {"fallbacks", fallbacks},
            {"changed", changed},
            {"arbitration_fraction", frac}};
}

// ---------------------------------------------------------------- evaluate

json stage_evaluate(const Options& opt) {
    const auto dec_path = opt.input("decisions", "decisions.jsonl");
    const auto truth_path = opt.input("truths", "test.jsonl");
    std::vector<fs::path> inputs = {dec_path, truth_path};

    std::map<std::string, int> truths;
    for (const auto& p : corpus::load_pairs(truth_path)) truths[p.pair_id] = p.label;

    std::vector<std::string> ids;
    std::map<std::string, int> base, final_;
    std::size_t triggered = 0;
    for_each_jsonl(dec_path, [&](const json& row, std::size_t line) {
        try {
            const auto id = row.at("pair_id").get<std::string>();
            if (!truths.count(id))
                fail(ErrorCode::NotFound, dec_path.string() + ":" + std::to_string(line) + ": no truth for pair " + id);
            if (final_.count(id)) fail(ErrorCode::Format, dec_path.string() + ": duplicate pair " + id);
            ids.push_back(id);
            base[id] = row.at("primary").get<int>();
            final_[id] = row.at("final").get<int>();
            triggered += row.value("triggered", false);
        } catch (const json::exception& e) {
            fail(ErrorCode::Format, dec_path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    if (ids.empty()) fail(ErrorCode::InvalidArgument, "no decisions to evaluate");

    std::vector<int> t, y;
    for (const auto& id : ids) {
        t.push_back(truths[id]);
        y.push_back(final_[id]);
    }
    metrics::EvalReport report;
    report.prf = metrics::confusion_and_prf(t, y);
    const auto resamples = opt.count("resamples", 1000);
    if (ids.size() >= 2) report.ci_95 = metrics::bootstrap_ci(t, y, resamples, opt.seed());
    report.arbitration_fraction = static_cast<double>(triggered) / static_cast<double>(ids.size());
    report.comparison = metrics::compare_policies(truths, base, final_);

    std::vector<double> edges;
    try {
        edges = metrics::parse_bin_edges(opt.str("bins", "0,0.6,0.8,1.0"));
    } catch (const Error& e) {
        fail(ErrorCode::Usage, e.what());
    }
    if (opt.has("predictions")) {
        const auto pred_path = opt.input("predictions");
        inputs.push_back(pred_path);
        const auto preds = index_jsonl(pred_path);
        std::vector<ClassVector> dists;
        for (const auto& id : ids) {
            auto it = preds.find(id);
            if (it == preds.end()) fail(ErrorCode::NotFound, "no prediction for pair " + id);
            dists.push_back(read_distribution(it->second, pred_path.string()));
        }
        for (int k = 1; k <= kNumClasses; ++k) report.topk[k] = metrics::topk_coverage(t, dists, k);
        try {
            report.confidence_bins = metrics::confidence_bin_report(t, dists, edges);
        } catch (const Error& e) {
            fail(ErrorCode::Usage, std::string("option --bins: ") + e.what());
        }
    }

    const auto out = opt.output("out", "report.json");
    std::vector<fs::path> outs = {out};
    json doc = report.to_json();
    write_file(out, doc.dump(2) + "\n");
    if (opt.has("confusion_csv")) {
        fs::path csv = opt.str("confusion_csv");
        write_file(csv, metrics::confusion_csv(report.prf.confusion));
        outs.push_back(csv);
    }
    write_manifest(opt, "evaluate", inputs, outs);
    return {{"stage", "evaluate"},
            {"n", ids.size()},
            {"macro_f1", report.prf.macro_f1},
            {"accuracy", report.prf.accuracy},
            {"report", out.string()}};
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"curate",       "featurize", "import-embeddings", "train-prior",
                                                   "train-fusion", "predict",   "arbitrate",         "evaluate"};
    return names;
}

json run_stage(const std::string& stage, const json& config) {
    const Options opt(config);
    if (stage == "curate") return stage_curate(opt);
    // every stage needs the seed, even the ones that never draw from it, so
    // that manifests always pin one
    opt.seed();
    if (stage == "featurize") return stage_featurize(opt);
    if (stage == "import-embeddings") return stage_import_embeddings(opt);
    if (stage == "train-prior") return stage_train_prior(opt);
    if (stage == "train-fusion") return stage_train_fusion(opt);
    if (stage == "predict") return stage_predict(opt);
    if (stage == "arbitrate") return stage_arbitrate(opt);
    if (stage == "evaluate") return stage_evaluate(opt);
    fail(ErrorCode::Usage, "unknown stage '" + stage + "'");
}

}  // namespace clonefuse::pipeline
