#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdefit/common.hpp"

namespace sdefit {

// Parameters live in an unconstrained search space; positive quantities
// are handled on a log scale so the inversion never proposes invalid
// values.
enum class Transform { Identity, Log };

inline double to_unconstrained(double natural, Transform t) {
    switch (t) {
        case Transform::Log:
            if (!(natural > 0.0)) {
                throw LayoutMismatch("to_unconstrained: log transform needs a positive value");
            }
            return std::log(natural);
        case Transform::Identity:
        default:
            return natural;
    }
}

inline double to_natural(double unconstrained, Transform t) {
    switch (t) {
        case Transform::Log:
            return std::exp(unconstrained);
        case Transform::Identity:
        default:
            return unconstrained;
    }
}

struct LayoutEntry {
    std::string name;
    Eigen::Index size = 1;
    Transform transform = Transform::Identity;
};

// Named slices of the flat parameter vector. Packing applies the forward
// transform, unpacking inverts it, so everything downstream of unpack
// sees natural units.
class ParameterLayout {
  public:
    void add(std::string name, Eigen::Index size, Transform transform) {
        entries_.push_back({std::move(name), size, transform});
        total_ += size;
    }

    Eigen::Index total_size() const { return total_; }
    const std::vector<LayoutEntry>& entries() const { return entries_; }

    bool has(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return true;
        }
        return false;
    }

    const LayoutEntry& entry(const std::string& name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return e;
        }
        throw LayoutMismatch("unknown parameter block: " + name);
    }

    Eigen::Index offset(const std::string& name) const {
        Eigen::Index off = 0;
        for (const auto& e : entries_) {
            if (e.name == name) return off;
            off += e.size;
        }
        throw LayoutMismatch("unknown parameter block: " + name);
    }

    // Natural-space block -> transformed slice of the flat vector.
    void pack(const std::string& name, const Vector& natural, Vector& flat) const {
        const auto& e = entry(name);
        if (natural.size() != e.size) {
            throw LayoutMismatch("pack: block '" + name + "' expects " +
                                 std::to_string(e.size) + " values, got " +
                                 std::to_string(natural.size()));
        }
        if (flat.size() != total_) {
            throw LayoutMismatch("pack: flat vector has wrong length");
        }
        const Eigen::Index off = offset(name);
        for (Eigen::Index i = 0; i < e.size; ++i) {
            flat[off + i] = to_unconstrained(natural[i], e.transform);
        }
    }

    // Transformed slice of the flat vector -> natural-space block.
    Vector unpack(const std::string& name, const Vector& flat) const {
        const auto& e = entry(name);
        if (flat.size() != total_) {
            throw LayoutMismatch("unpack: flat vector has length " +
                                 std::to_string(flat.size()) + ", layout needs " +
                                 std::to_string(total_));
        }
        const Eigen::Index off = offset(name);
        Vector natural(e.size);
        for (Eigen::Index i = 0; i < e.size; ++i) {
            natural[i] = to_natural(flat[off + i], e.transform);
        }
        return natural;
    }

    double unpack_scalar(const std::string& name, const Vector& flat) const {
        Vector v = unpack(name, flat);
        if (v.size() != 1) {
            throw LayoutMismatch("unpack_scalar: block '" + name + "' is not scalar");
        }
        return v[0];
    }

  private:
    std::vector<LayoutEntry> entries_;
    Eigen::Index total_ = 0;
};

}  // namespace sdefit
