#include "core/syntax.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace clonefuse::syntax {

bool SyntaxTree::well_formed() const {
    if (nodes.empty() || root >= nodes.size()) return false;
    std::vector<int> parents(nodes.size(), 0);
    for (const auto& n : nodes)
        for (auto c : n.children) {
            if (c >= nodes.size()) return false;
            ++parents[c];
        }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (i == root ? parents[i] != 0 : parents[i] != 1) return false;
    }
    // Single parent per node + parentless root: reachability rules out cycles.
    std::vector<bool> seen(nodes.size(), false);
    std::vector<std::size_t> stack = {root};
    std::size_t visited = 0;
    while (!stack.empty()) {
        const auto i = stack.back();
        stack.pop_back();
        if (seen[i]) return false;
        seen[i] = true;
        ++visited;
        for (auto c : nodes[i].children) stack.push_back(c);
    }
    return visited == nodes.size();
}

SyntaxTree TreeBuilder::build() const {
    SyntaxTree t;
    // Explicit stack keeps deep trees off the call stack.
    struct Frame {
        const TreeBuilder* src;
        std::size_t parent;
    };
    std::vector<Frame> stack = {{this, static_cast<std::size_t>(-1)}};
    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        const std::size_t id = t.nodes.size();
        t.nodes.push_back({f.src->kind, {}});
        if (f.parent != static_cast<std::size_t>(-1)) t.nodes[f.parent].children.push_back(id);
        for (auto it = f.src->children.rbegin(); it != f.src->children.rend(); ++it) stack.push_back({&*it, id});
    }
    t.root = 0;
    return t;
}

std::unique_ptr<Parser> make_parser(std::string_view language) {
    if (language == "java" || language.empty()) return std::make_unique<JavaParser>();
    fail(ErrorCode::InvalidArgument, "no parser bound for language '" + std::string(language) + "'");
}

namespace {

struct Postorder {
    std::vector<std::string_view> label;  // 1-based
    std::vector<std::size_t> leftmost;    // 1-based
    std::vector<std::size_t> keyroots;
};

Postorder postorder(const SyntaxTree& t) {
    Postorder p;
    const std::size_t n = t.size();
    p.label.assign(n + 1, {});
    p.leftmost.assign(n + 1, 0);
    std::vector<std::size_t> post_index(n, 0);
    std::size_t counter = 0;
    struct Frame {
        std::size_t node;
        std::size_t next_child;
    };
    std::vector<Frame> stack = {{t.root, 0}};
    while (!stack.empty()) {
        auto& f = stack.back();
        const auto& kids = t.nodes[f.node].children;
        if (f.next_child < kids.size()) {
            const auto c = kids[f.next_child++];
            stack.push_back({c, 0});
            continue;
        }
        const std::size_t idx = ++counter;
        post_index[f.node] = idx;
        p.label[idx] = t.nodes[f.node].kind;
        p.leftmost[idx] = kids.empty() ? idx : p.leftmost[post_index[kids.front()]];
        stack.pop_back();
    }
    std::vector<bool> has_higher(n + 1, false);
    for (std::size_t i = n; i >= 1; --i) {
        if (!has_higher[p.leftmost[i]]) {
            p.keyroots.push_back(i);
            has_higher[p.leftmost[i]] = true;
        }
    }
    std::reverse(p.keyroots.begin(), p.keyroots.end());
    return p;
}

}  // namespace

std::size_t tree_edit_distance(const SyntaxTree& a, const SyntaxTree& b) {
    if (a.nodes.empty() || b.nodes.empty()) return a.size() + b.size();
    const auto pa = postorder(a);
    const auto pb = postorder(b);
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    std::vector<std::size_t> td((n + 1) * (m + 1), 0);
    auto TD = [&](std::size_t i, std::size_t j) -> std::size_t& { return td[i * (m + 1) + j]; };
    std::vector<std::size_t> fd;

    for (auto i : pa.keyroots) {
        for (auto j : pb.keyroots) {
            const std::size_t li = pa.leftmost[i];
            const std::size_t lj = pb.leftmost[j];
            const std::size_t rows = i - li + 2;
            const std::size_t cols = j - lj + 2;
            fd.assign(rows * cols, 0);
            auto FD = [&](std::size_t x, std::size_t y) -> std::size_t& { return fd[x * cols + y]; };
            // Row/col 0 represent the empty forest; index x maps to node li + x - 1.
            for (std::size_t x = 1; x < rows; ++x) FD(x, 0) = FD(x - 1, 0) + 1;
            for (std::size_t y = 1; y < cols; ++y) FD(0, y) = FD(0, y - 1) + 1;
            for (std::size_t x = 1; x < rows; ++x) {
                const std::size_t i1 = li + x - 1;
                for (std::size_t y = 1; y < cols; ++y) {
                    const std::size_t j1 = lj + y - 1;
                    const std::size_t del = FD(x - 1, y) + 1;
                    const std::size_t ins = FD(x, y - 1) + 1;
                    if (pa.leftmost[i1] == li && pb.leftmost[j1] == lj) {
                        const std::size_t rel = FD(x - 1, y - 1) + (pa.label[i1] == pb.label[j1] ? 0 : 1);
                        FD(x, y) = std::min({del, ins, rel});
                        TD(i1, j1) = FD(x, y);
                    } else {
                        const std::size_t px = pa.leftmost[i1] - li;
                        const std::size_t py = pb.leftmost[j1] - lj;
                        FD(x, y) = std::min({del, ins, FD(px, py) + TD(i1, j1)});
                    }
                }
            }
        }
    }
    return TD(n, m);
}

std::vector<std::uint64_t> node_fingerprints(const SyntaxTree& t) {
    std::vector<std::uint64_t> h(t.size(), 0);
    // Preorder storage: children always follow their parent, so a reverse
    // sweep sees every child before its parent.
    std::vector<std::size_t> order;
    order.reserve(t.size());
    std::vector<std::size_t> stack = {t.root};
    while (!stack.empty()) {
        const auto i = stack.back();
        stack.pop_back();
        order.push_back(i);
        for (auto c : t.nodes[i].children) stack.push_back(c);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& node = t.nodes[*it];
        std::uint64_t acc = mix64(fnv1a64(node.kind));
        for (auto c : node.children) acc = mix64(acc ^ (h[c] + 0x9e3779b97f4a7c15ULL + (acc << 6) + (acc >> 2)));
        h[*it] = node.children.empty() ? acc : mix64(acc ^ node.children.size());
    }
    return h;
}

std::set<std::uint64_t> subtree_fingerprints(const SyntaxTree& t) {
    const auto h = node_fingerprints(t);
    return {h.begin(), h.end()};
}

double fingerprint_jaccard(const std::set<std::uint64_t>& a, const std::set<std::uint64_t>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (auto x : a) inter += b.count(x);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

bool is_control_flow_kind(std::string_view kind) {
    static const std::unordered_set<std::string_view> kKinds = {
        "if_statement",     "for_statement",     "enhanced_for_statement", "while_statement",
        "do_statement",     "switch_statement",  "switch_expression",      "switch_label",
        "catch_clause",     "ternary_expression", "return_statement",
    };
    return kKinds.count(kind) > 0;
}

ShapeStatistics shape_statistics(const SyntaxTree& t) {
    ShapeStatistics s;
    s.node_count = t.size();
    if (t.nodes.empty()) return s;
    std::vector<std::size_t> level = {t.root};
    std::size_t control = 0;
    while (!level.empty()) {
        ++s.max_depth;
        s.width = std::max(s.width, level.size());
        std::vector<std::size_t> next;
        for (auto i : level) {
            const auto& node = t.nodes[i];
            if (node.children.empty()) ++s.leaf_count;
            if (is_control_flow_kind(node.kind)) ++control;
            next.insert(next.end(), node.children.begin(), node.children.end());
        }
        level = std::move(next);
    }
    s.logical_density = static_cast<double>(control) / static_cast<double>(s.node_count);
    return s;
}

StructuralVector StructuralVector::parse_failure() {
    StructuralVector v;
    v.parse_failed = true;
    return v;
}

StructuralVector structural_vector(const SyntaxTree& a, const SyntaxTree& b, std::size_t ted_node_cap) {
    StructuralVector out;
    const auto sa = shape_statistics(a);
    const auto sb = shape_statistics(b);
    auto rel_diff = [](double x, double y) {
        const double hi = std::max(x, y);
        return hi == 0 ? 0.0 : std::abs(x - y) / hi;
    };
    out.v[0] = std::abs(sa.logical_density - sb.logical_density);
    out.v[1] = rel_diff(static_cast<double>(sa.max_depth), static_cast<double>(sb.max_depth));
    out.v[2] = rel_diff(static_cast<double>(sa.node_count), static_cast<double>(sb.node_count));
    const double jac = fingerprint_jaccard(subtree_fingerprints(a), subtree_fingerprints(b));
    if (a.size() > ted_node_cap || b.size() > ted_node_cap) {
        out.v[3] = 1.0 - jac;
        out.ted_approx = true;
    } else {
        const auto ted = tree_edit_distance(a, b);
        out.v[3] = static_cast<double>(ted) / static_cast<double>(a.size() + b.size());
    }
    out.v[4] = jac;
    const double lo = static_cast<double>(std::min(sa.leaf_count, sb.leaf_count));
    const double hi = static_cast<double>(std::max(sa.leaf_count, sb.leaf_count));
    out.v[5] = hi == 0 ? 1.0 : lo / hi;
    return out;
}

}  // namespace clonefuse::syntax
