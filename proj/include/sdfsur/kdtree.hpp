#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sdfsur/geometry.hpp"

namespace sdfsur {

// Exact 2D nearest-neighbor search, median-split on alternating axes.
class KdTree2 {
public:
    explicit KdTree2(std::vector<Vec2> points) : pts_(std::move(points)) {
        if (pts_.empty()) throw std::invalid_argument("KdTree2: empty point set");
        idx_.resize(pts_.size());
        std::iota(idx_.begin(), idx_.end(), 0);
        nodes_.reserve(pts_.size());
        root_ = build(0, static_cast<int>(pts_.size()), 0);
        idx_.clear();
        idx_.shrink_to_fit();
    }

    // index into points() of an exact nearest neighbor
    int nearest(Vec2 q) const {
        int best = -1;
        double bd2 = std::numeric_limits<double>::infinity();
        search(root_, q, 0, best, bd2);
        return best;
    }

    double nearest_distance2(Vec2 q) const {
        int best = -1;
        double bd2 = std::numeric_limits<double>::infinity();
        search(root_, q, 0, best, bd2);
        return bd2;
    }

    double nearest_distance(Vec2 q) const { return std::sqrt(nearest_distance2(q)); }

    const std::vector<Vec2>& points() const { return pts_; }

private:
    struct Node {
        int pt;
        int left = -1;
        int right = -1;
    };

    int build(int lo, int hi, int depth) {
        if (lo >= hi) return -1;
        int mid = (lo + hi) / 2;
        if (depth % 2 == 0)
            std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                             [this](int a, int b) { return pts_[a].x < pts_[b].x; });
        else
            std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                             [this](int a, int b) { return pts_[a].y < pts_[b].y; });
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back({idx_[mid]});
        int l = build(lo, mid, depth + 1);
        int r = build(mid + 1, hi, depth + 1);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    void search(int node, Vec2 q, int depth, int& best, double& bd2) const {
        if (node < 0) return;
        const Node& n = nodes_[node];
        Vec2 d = q - pts_[n.pt];
        double d2 = dot(d, d);
        if (d2 < bd2) {
            bd2 = d2;
            best = n.pt;
        }
        double delta = depth % 2 == 0 ? d.x : d.y;
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        search(near, q, depth + 1, best, bd2);
        if (delta * delta < bd2) search(far, q, depth + 1, best, bd2);
    }

    std::vector<Vec2> pts_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace sdfsur
