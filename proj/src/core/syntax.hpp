#pragma once
// Identifier-agnostic syntax trees and the structural pair features built
// on them.

#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "core/common.hpp"

namespace clonefuse::syntax {

struct SyntaxNode {
    std::string kind;
    std::vector<std::size_t> children;
};

// Nodes are stored in preorder; nodes[root] is the root.
struct SyntaxTree {
    std::vector<SyntaxNode> nodes;
    std::size_t root = 0;

    std::size_t size() const { return nodes.size(); }
    const SyntaxNode& node(std::size_t i) const { return nodes[i]; }
    // Exactly one root, acyclic, every node reachable, children in range.
    bool well_formed() const;
};

// Value-semantic builder used by parsers and tests.
struct TreeBuilder {
    std::string kind;
    std::vector<TreeBuilder> children;

    TreeBuilder() = default;
    explicit TreeBuilder(std::string k, std::vector<TreeBuilder> c = {}) : kind(std::move(k)), children(std::move(c)) {}
    SyntaxTree build() const;
};

class Parser {
public:
    virtual ~Parser() = default;
    virtual std::string language() const = 0;
    // Throws Error(ErrorCode::Parse) mentioning `fragment_id` on failure.
    virtual SyntaxTree parse(std::string_view source, std::string_view fragment_id = {}) const = 0;
};

// Recursive-descent Java parser. Names and literal values are erased to
// their node kinds (identifier, type_identifier, number_literal, ...).
class JavaParser final : public Parser {
public:
    std::string language() const override { return "java"; }
    SyntaxTree parse(std::string_view source, std::string_view fragment_id = {}) const override;
};

std::unique_ptr<Parser> make_parser(std::string_view language);

// Zhang-Shasha ordered tree edit distance with unit insert/delete/relabel.
std::size_t tree_edit_distance(const SyntaxTree& a, const SyntaxTree& b);

// Merkle hash of every node; equal subtrees hash equal.
std::vector<std::uint64_t> node_fingerprints(const SyntaxTree& t);
std::set<std::uint64_t> subtree_fingerprints(const SyntaxTree& t);
double fingerprint_jaccard(const std::set<std::uint64_t>& a, const std::set<std::uint64_t>& b);

bool is_control_flow_kind(std::string_view kind);

struct ShapeStatistics {
    std::size_t max_depth = 0;
    std::size_t width = 0;
    std::size_t leaf_count = 0;
    std::size_t node_count = 0;
    double logical_density = 0;
};

ShapeStatistics shape_statistics(const SyntaxTree& t);

inline constexpr std::size_t kStructuralDim = 6;
inline constexpr std::size_t kDefaultTedNodeCap = 1500;

inline constexpr std::array<std::string_view, kStructuralDim> kStructuralFieldOrder = {
    "d_logical_density", "d_max_depth", "d_node_count", "ted_norm", "subtree_jaccard", "leaf_ratio",
};

struct StructuralVector {
    std::array<double, kStructuralDim> v{};  // field order above
    bool parse_failed = false;
    bool ted_approx = false;

    double d_logical_density() const { return v[0]; }
    double d_max_depth() const { return v[1]; }
    double d_node_count() const { return v[2]; }
    double ted_norm() const { return v[3]; }
    double subtree_jaccard() const { return v[4]; }
    double leaf_ratio() const { return v[5]; }

    static StructuralVector parse_failure();
};

StructuralVector structural_vector(const SyntaxTree& a, const SyntaxTree& b,
                                   std::size_t ted_node_cap = kDefaultTedNodeCap);

}  // namespace clonefuse::syntax
