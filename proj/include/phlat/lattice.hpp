#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

// Permutohedral lattice geometry: feature elevation onto the hyperplane
// sum(y) = 0, enclosing-simplex lookup with barycentric weights, canonical
// integer keys for lattice points, and s-hop neighborhood enumeration.
namespace phlat {

using Index = std::int32_t;
inline constexpr Index kMissing = -1;

// Per-point feature vectors f_i (n x d) with a positive diagonal scaling.
// Scaled features D*f define proximity; the scales are the only bandwidth
// control of the whole pipeline.
struct FeatureSet {
  Eigen::MatrixXd points;  // n x d
  Eigen::VectorXd scales;  // d entries, strictly positive

  int n() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  void validate() const;

  static FeatureSet with_unit_scales(Eigen::MatrixXd pts);
};

// A lattice point: (d+1) signed integer coordinates summing to zero. All
// coordinates of a valid key share the same remainder mod (d+1).
class LatticeKey {
 public:
  LatticeKey() = default;
  explicit LatticeKey(std::vector<Index> coords) : coords_(std::move(coords)) {}
  LatticeKey(std::span<const Index> coords)
      : coords_(coords.begin(), coords.end()) {}

  static LatticeKey zero(int d) {
    return LatticeKey(std::vector<Index>(static_cast<std::size_t>(d) + 1, 0));
  }

  int dim() const { return static_cast<int>(coords_.size()) - 1; }
  std::span<const Index> coords() const { return coords_; }
  Index operator[](int i) const { return coords_[static_cast<std::size_t>(i)]; }

  friend bool operator==(const LatticeKey&, const LatticeKey&) = default;
  // Lexicographic over the full coordinate tuple.
  friend bool operator<(const LatticeKey& a, const LatticeKey& b) {
    return a.coords_ < b.coords_;
  }

 private:
  std::vector<Index> coords_;
};

std::int64_t key_sum(std::span<const Index> coords);
// Common remainder class of all coordinates mod (d+1), or -1 if they disagree.
int key_remainder(std::span<const Index> coords);

// Number of lattice points within s hops: (s+1)^{d+1} - s^{d+1}.
// Throws std::overflow_error instead of wrapping.
std::int64_t filter_size(int d, int s);

// Scale per-dimension and apply the triangular sum-zero basis. Linear and
// injective; output always satisfies sum(y) = 0.
Eigen::VectorXd elevate(const Eigen::VectorXd& f, const Eigen::VectorXd& scales);

struct SimplexLookup {
  int d = 0;
  // (d+1) corners x (d+1) coordinates, row-major; corner r has remainder r.
  std::vector<Index> corner_coords;
  Eigen::VectorXd weights;  // barycentric, nonnegative, sums to 1

  std::span<const Index> corner(int r) const {
    return std::span<const Index>(corner_coords)
        .subspan(static_cast<std::size_t>(r) * (d + 1), d + 1);
  }
  LatticeKey corner_key(int r) const { return LatticeKey(corner(r)); }
};

// Locate the simplex enclosing an elevated point y (sum(y) = 0) in O(d^2).
SimplexLookup find_simplex(const Eigen::VectorXd& y);

// The s-neighborhood of `key`: all points key + sum_a n_a u_a with
// coefficients n_a in [0, s] along the axes u_a = (d+1) e_a - (1,...,1),
// i.e. the projection of an (s+1)^{d+1} grid block onto the lattice plane.
// Exactly filter_size(d, s) points, closed under offset negation. `key`
// itself comes first, the rest follow lexicographically by coordinates.
std::vector<LatticeKey> neighbors(const LatticeKey& key, int s);

// Open-addressed map from canonical keys (first d coordinates; the last is
// redundant) to dense indices in insertion order. Immutable once the owning
// index is built; safe for concurrent readers.
class LatticeTable {
 public:
  explicit LatticeTable(int d, int expected_keys = 0);

  Index find_or_insert(std::span<const Index> key);
  Index find(std::span<const Index> key) const;

  int size() const { return static_cast<int>(keys_.size() / stride()); }
  int dim() const { return d_; }
  std::span<const Index> key(Index id) const {
    return std::span<const Index>(keys_).subspan(
        static_cast<std::size_t>(id) * stride(), stride());
  }

 private:
  std::size_t stride() const { return static_cast<std::size_t>(d_) + 1; }
  std::uint64_t hash_key(const Index* k) const;
  void rehash(std::size_t capacity);

  int d_ = 0;
  std::vector<Index> keys_;   // size() * (d+1), full coordinates
  std::vector<Index> slots_;  // open addressing, kMissing = empty
  std::size_t mask_ = 0;
};

// The sparse embedding of a point set: the populated-point table plus
// per-point corner indices J_i and barycentric weights b_{i,j}.
struct LatticeIndex {
  std::shared_ptr<const LatticeTable> table;
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> corners;  // n x (d+1)
  Eigen::MatrixXd weights;                                       // n x (d+1)

  int n() const { return static_cast<int>(corners.rows()); }
  int dim() const { return table->dim(); }
  int m() const { return table->size(); }
};

LatticeIndex build_index(const FeatureSet& fs);

// One table over the union of both corner sets; the two returned indexes
// share it. Input corners are inserted first.
std::pair<LatticeIndex, LatticeIndex> build_joint_index(const FeatureSet& in,
                                                        const FeatureSet& out);

// Index points against an existing table without inserting. Corners absent
// from the table are marked kMissing.
LatticeIndex index_against(const FeatureSet& fs,
                           std::shared_ptr<const LatticeTable> table);

}  // namespace phlat
