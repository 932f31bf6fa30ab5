#include "phlat/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace phlat {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Clamp round-off negatives; anything below the tolerance is a logic error.
double clamp_weight(double w) {
  if (w < 0.0) {
    if (w < -1e-14) throw std::logic_error("barycentric weight below -1e-14");
    return 0.0;
  }
  return w;
}

// Shared core of find_simplex/build_index. Writes (d+1) corner keys of
// (d+1) coordinates each and their barycentric weights.
void simplex_lookup(const double* y, int d, Index* corner_coords,
                    double* weights) {
  const int dp1 = d + 1;
  thread_local std::vector<double> rem0_buf;
  thread_local std::vector<int> rank_buf;
  thread_local std::vector<double> bary_buf;
  rem0_buf.assign(dp1, 0.0);
  rank_buf.assign(dp1, 0);
  bary_buf.assign(dp1 + 1, 0.0);
  double* rem0 = rem0_buf.data();
  int* rank = rank_buf.data();
  double* bary = bary_buf.data();

  // Round each coordinate to the nearest multiple of (d+1).
  std::int64_t sum = 0;
  for (int i = 0; i <= d; ++i) {
    const double v = y[i] / dp1;
    const std::int64_t r = std::llround(v);
    rem0[i] = static_cast<double>(r * dp1);
    sum += r;
  }

  // Rank residuals descending; ties resolved by dimension index.
  for (int i = 0; i < d; ++i) {
    const double di = y[i] - rem0[i];
    for (int j = i + 1; j <= d; ++j) {
      if (di < y[j] - rem0[j])
        ++rank[i];
      else
        ++rank[j];
    }
  }

  // Repair the zero-sum constraint violated by independent rounding.
  for (int i = 0; i <= d; ++i) {
    rank[i] += static_cast<int>(sum);
    if (rank[i] < 0) {
      rank[i] += dp1;
      rem0[i] += dp1;
    } else if (rank[i] > d) {
      rank[i] -= dp1;
      rem0[i] -= dp1;
    }
  }

  // Accumulate raw residuals and divide once at the end; at lattice
  // vertices the residuals are exact integers, so the weights come out
  // bit-exact.
  for (int i = 0; i <= d + 1; ++i) bary[i] = 0.0;
  for (int i = 0; i <= d; ++i) {
    const double v = y[i] - rem0[i];
    bary[d - rank[i]] += v;
    bary[d - rank[i] + 1] -= v;
  }
  for (int i = 1; i <= d; ++i) bary[i] /= dp1;
  bary[0] = (bary[0] + bary[dp1]) / dp1 + 1.0;

  // Corner r: walk the canonical simplex in remainder order.
  for (int r = 0; r <= d; ++r) {
    Index* key = corner_coords + static_cast<std::size_t>(r) * dp1;
    for (int i = 0; i <= d; ++i) {
      Index c = static_cast<Index>(std::llround(rem0[i])) + static_cast<Index>(r);
      if (rank[i] > d - r) c -= static_cast<Index>(dp1);
      key[i] = c;
    }
    weights[r] = clamp_weight(bary[r]);
  }
}

}  // namespace

void FeatureSet::validate() const {
  if (points.rows() < 1 || points.cols() < 1)
    throw std::invalid_argument("FeatureSet: need n >= 1 and d >= 1");
  if (scales.size() != points.cols())
    throw std::invalid_argument("FeatureSet: scales length must equal d");
  if (!points.allFinite() || !scales.allFinite())
    throw std::invalid_argument("FeatureSet: non-finite entries");
  if ((scales.array() <= 0.0).any())
    throw std::invalid_argument("FeatureSet: scales must be strictly positive");
}

FeatureSet FeatureSet::with_unit_scales(Eigen::MatrixXd pts) {
  FeatureSet fs;
  fs.scales = Eigen::VectorXd::Ones(pts.cols());
  fs.points = std::move(pts);
  return fs;
}

std::int64_t key_sum(std::span<const Index> coords) {
  std::int64_t s = 0;
  for (Index c : coords) s += c;
  return s;
}

int key_remainder(std::span<const Index> coords) {
  const int dp1 = static_cast<int>(coords.size());
  auto mod = [dp1](Index c) { return ((c % dp1) + dp1) % dp1; };
  const int r = mod(coords[0]);
  for (Index c : coords)
    if (mod(c) != r) return -1;
  return r;
}

std::int64_t filter_size(int d, int s) {
  if (d < 1 || s < 0) throw std::invalid_argument("filter_size: d >= 1, s >= 0");
  auto ipow = [](std::int64_t base, int exp) {
    std::int64_t r = 1;
    for (int i = 0; i < exp; ++i) {
      if (base != 0 && r > std::numeric_limits<std::int64_t>::max() / base)
        throw std::overflow_error("filter_size: overflow");
      r *= base;
    }
    return r;
  };
  return ipow(s + 1, d + 1) - ipow(s, d + 1);
}

Eigen::VectorXd elevate(const Eigen::VectorXd& f, const Eigen::VectorXd& scales) {
  const int d = static_cast<int>(f.size());
  if (d < 1 || scales.size() != d)
    throw std::invalid_argument("elevate: feature/scale dimension mismatch");
  if (!f.allFinite() || !scales.allFinite() || (scales.array() <= 0.0).any())
    throw std::invalid_argument("elevate: invalid input");

  // Per-dimension factor making the basis columns orthogonal with equal
  // norm (d+1)*sqrt(2/3), so one grid hop spans one simplex edge.
  Eigen::VectorXd y(d + 1);
  const double unit = (d + 1) * std::sqrt(2.0 / 3.0);
  double sm = 0.0;
  for (int j = d; j > 0; --j) {
    const double cf =
        f[j - 1] * scales[j - 1] * unit / std::sqrt(double(j) * (j + 1));
    y[j] = sm - j * cf;
    sm += cf;
  }
  y[0] = sm;
  return y;
}

SimplexLookup find_simplex(const Eigen::VectorXd& y) {
  const int d = static_cast<int>(y.size()) - 1;
  if (d < 1) throw std::invalid_argument("find_simplex: need d >= 1");
  SimplexLookup out;
  out.d = d;
  out.corner_coords.resize(static_cast<std::size_t>(d + 1) * (d + 1));
  out.weights.resize(d + 1);
  simplex_lookup(y.data(), d, out.corner_coords.data(), out.weights.data());
  return out;
}

namespace {

struct KeyHash {
  std::size_t operator()(const LatticeKey& k) const {
    std::uint64_t h = 0x2545f4914f6cdd1dull;
    for (Index c : k.coords())
      h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(c)));
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

std::vector<LatticeKey> neighbors(const LatticeKey& key, int s) {
  const int d = key.dim();
  if (d < 1 || s < 0) throw std::invalid_argument("neighbors: d >= 1, s >= 0");
  filter_size(d, s);  // validates and rejects overflowing sizes

  // The neighborhood is the shadow of an (s+1)^{d+1} grid block: all sums
  // sum_a n_a u_a with 0 <= n_a <= s, u_a = (d+1) e_a - (1,...,1). Walking
  // an odometer over the coefficients enumerates every grid corner; corners
  // differing by (1,...,1) project onto the same lattice point.
  if (std::pow(double(s + 1), d + 1) > double(1 << 26))
    throw std::invalid_argument("neighbors: neighborhood too large");

  std::vector<LatticeKey> rest;
  std::unordered_set<LatticeKey, KeyHash> seen{key};
  std::vector<int> n(static_cast<std::size_t>(d) + 1, 0);
  std::vector<Index> c(static_cast<std::size_t>(d) + 1);
  while (true) {
    int total = 0;
    for (int i = 0; i <= d; ++i) total += n[i];
    for (int i = 0; i <= d; ++i)
      c[i] = key[i] + static_cast<Index>((d + 1) * n[i] - total);
    LatticeKey q(c);
    if (seen.insert(q).second) rest.push_back(std::move(q));

    int pos = 0;
    while (pos <= d && ++n[pos] > s) {
      n[pos] = 0;
      ++pos;
    }
    if (pos > d) break;
  }

  std::sort(rest.begin(), rest.end());
  std::vector<LatticeKey> result;
  result.reserve(rest.size() + 1);
  result.push_back(key);
  result.insert(result.end(), std::make_move_iterator(rest.begin()),
                std::make_move_iterator(rest.end()));
  return result;
}

LatticeTable::LatticeTable(int d, int expected_keys) : d_(d) {
  if (d < 1) throw std::invalid_argument("LatticeTable: d >= 1");
  std::size_t cap = 16;
  while (cap < static_cast<std::size_t>(expected_keys) * 2) cap <<= 1;
  slots_.assign(cap, kMissing);
  mask_ = cap - 1;
  keys_.reserve(static_cast<std::size_t>(expected_keys) * stride());
}

std::uint64_t LatticeTable::hash_key(const Index* k) const {
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (int i = 0; i < d_; ++i)
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(k[i])));
  return h;
}

void LatticeTable::rehash(std::size_t capacity) {
  slots_.assign(capacity, kMissing);
  mask_ = capacity - 1;
  const int n = size();
  for (Index id = 0; id < n; ++id) {
    std::size_t h = hash_key(keys_.data() + static_cast<std::size_t>(id) * stride()) & mask_;
    while (slots_[h] != kMissing) h = (h + 1) & mask_;
    slots_[h] = id;
  }
}

Index LatticeTable::find_or_insert(std::span<const Index> key) {
  if (static_cast<std::size_t>(size() + 1) * 2 > slots_.size())
    rehash(slots_.size() * 2);
  std::size_t h = hash_key(key.data()) & mask_;
  while (true) {
    const Index e = slots_[h];
    if (e == kMissing) {
      const Index id = static_cast<Index>(size());
      keys_.insert(keys_.end(), key.begin(), key.end());
      slots_[h] = id;
      return id;
    }
    if (std::equal(key.begin(), key.begin() + d_,
                   keys_.begin() + static_cast<std::size_t>(e) * stride()))
      return e;
    h = (h + 1) & mask_;
  }
}

Index LatticeTable::find(std::span<const Index> key) const {
  std::size_t h = hash_key(key.data()) & mask_;
  while (true) {
    const Index e = slots_[h];
    if (e == kMissing) return kMissing;
    if (std::equal(key.begin(), key.begin() + d_,
                   keys_.begin() + static_cast<std::size_t>(e) * stride()))
      return e;
    h = (h + 1) & mask_;
  }
}

namespace {

// Elevate every point and record its simplex corners, inserting into the
// table when allowed.
void populate_index(const FeatureSet& fs, LatticeTable& table, bool insert,
                    Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>& corners,
                    Eigen::MatrixXd& weights) {
  fs.validate();
  const int n = fs.n();
  const int d = fs.dim();
  corners.resize(n, d + 1);
  weights.resize(n, d + 1);

  std::vector<Index> corner_coords(static_cast<std::size_t>(d + 1) * (d + 1));
  std::vector<double> w(static_cast<std::size_t>(d) + 1);
  Eigen::VectorXd f(d);
  for (int i = 0; i < n; ++i) {
    f = fs.points.row(i);
    const Eigen::VectorXd y = elevate(f, fs.scales);
    simplex_lookup(y.data(), d, corner_coords.data(), w.data());
    for (int r = 0; r <= d; ++r) {
      std::span<const Index> key(corner_coords.data() + static_cast<std::size_t>(r) * (d + 1),
                                 static_cast<std::size_t>(d) + 1);
      corners(i, r) = insert ? table.find_or_insert(key) : table.find(key);
      weights(i, r) = w[static_cast<std::size_t>(r)];
    }
  }
}

}  // namespace

LatticeIndex build_index(const FeatureSet& fs) {
  fs.validate();
  auto table = std::make_shared<LatticeTable>(fs.dim(), fs.n() * (fs.dim() + 1));
  LatticeIndex idx;
  populate_index(fs, *table, /*insert=*/true, idx.corners, idx.weights);
  idx.table = std::move(table);
  return idx;
}

std::pair<LatticeIndex, LatticeIndex> build_joint_index(const FeatureSet& in,
                                                        const FeatureSet& out) {
  in.validate();
  out.validate();
  if (in.dim() != out.dim())
    throw std::invalid_argument("build_joint_index: feature dimension mismatch");
  auto table = std::make_shared<LatticeTable>(
      in.dim(), (in.n() + out.n()) * (in.dim() + 1));
  LatticeIndex a, b;
  populate_index(in, *table, /*insert=*/true, a.corners, a.weights);
  populate_index(out, *table, /*insert=*/true, b.corners, b.weights);
  a.table = table;
  b.table = std::move(table);
  return {std::move(a), std::move(b)};
}

LatticeIndex index_against(const FeatureSet& fs,
                           std::shared_ptr<const LatticeTable> table) {
  fs.validate();
  if (fs.dim() != table->dim())
    throw std::invalid_argument("index_against: feature dimension mismatch");
  LatticeIndex idx;
  // find() only; const_cast is safe because insert=false never mutates.
  populate_index(fs, const_cast<LatticeTable&>(*table), /*insert=*/false,
                 idx.corners, idx.weights);
  idx.table = std::move(table);
  return idx;
}

}  // namespace phlat
