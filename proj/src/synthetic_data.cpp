#include "facefusion/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "facefusion/binary_io.hpp"
#include "facefusion/error.hpp"

namespace facefusion {
namespace {

constexpr int kMaxRejections = 2000;

// Independent streams derived from one user seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint64_t {
  kBankStream = 1,
  kShiftStream = 2,
  kBaseSampleStream = 3,
  kOverlapSampleStream = 4,
  kOverlapChoiceStream = 5,
  kHeldoutStream = 6,
};

Vector gaussian_vector(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

Vector noisy_feature(const Vector& direction, double sigma, const Vector& shift, std::mt19937_64& rng) {
  if (sigma == 0.0) return direction + shift;
  std::normal_distribution<double> normal(0.0, sigma);
  Vector v = direction;
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += normal(rng);
  const double n = v.norm();
  if (!(n > 0.0)) fail(ErrorKind::NonFinite, "noisy feature collapsed to zero");
  return v / n + shift;
}

}  // namespace

IdentityBank gen_identity_bank(int n, int dim, std::uint64_t seed) {
  require(n >= 2, "identity bank needs at least 2 identities");
  require(dim >= 4, "identity bank needs dim >= 4");
  auto rng = stream(seed, kBankStream);
  IdentityBank bank{dim, Matrix(n, dim), seed};
  for (int i = 0; i < n; ++i) {
    int attempts = 0;
    while (true) {
      Vector v = gaussian_vector(dim, rng);
      v /= v.norm();
      bool ok = true;
      for (int j = 0; j < i && ok; ++j) ok = bank.directions.row(j).dot(v) < kMaxIdentityCosine;
      if (ok) {
        bank.directions.row(i) = v.transpose();
        break;
      }
      if (++attempts >= kMaxRejections) {
        std::ostringstream msg;
        msg << "could not place identity " << i << " of " << n << " in dim " << dim
            << " with pairwise cosine < " << kMaxIdentityCosine << " after " << kMaxRejections
            << " draws";
        fail(ErrorKind::Capacity, msg.str());
      }
    }
  }
  return bank;
}

DatasetShard sample_shard(const IdentityBank& bank, std::span<const IdentityId> members,
                          int images_per_identity, double noise_sigma, DatasetId dataset_id,
                          const Vector& domain_shift, std::int64_t first_uid, std::mt19937_64& rng) {
  require(!members.empty(), "sample_shard: members must be nonempty");
  require(noise_sigma >= 0.0, "sample_shard: noise_sigma must be >= 0");
  require(images_per_identity >= 1, "sample_shard: images_per_identity must be >= 1");
  require(domain_shift.size() == bank.dim, "sample_shard: domain shift has wrong dimension");

  DatasetShard shard;
  shard.dataset_id = dataset_id;
  shard.domain_shift = domain_shift;
  shard.classes.reserve(members.size());
  shard.samples.reserve(members.size() * images_per_identity);
  std::int64_t uid = first_uid;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const IdentityId id = members[c];
    require(id >= 0 && id < bank.size(), "sample_shard: member outside the identity bank");
    shard.classes.push_back({static_cast<ClassId>(c), id});
    const Vector dir = bank.directions.row(id).transpose();
    for (int j = 0; j < images_per_identity; ++j) {
      shard.samples.push_back({static_cast<std::int64_t>(shard.samples.size()), id,
                               static_cast<ClassId>(c), uid++,
                               noisy_feature(dir, noise_sigma, domain_shift, rng)});
    }
  }
  return shard;
}

namespace {

struct RingLayout {
  std::vector<std::vector<IdentityId>> base;      // per shard
  std::vector<std::vector<IdentityId>> incoming;  // identities shard i receives from shard i-1
};

std::vector<int> even_sizes(int total, int parts) {
  std::vector<int> sizes(parts, total / parts);
  for (int i = 0; i < total % parts; ++i) ++sizes[i];
  return sizes;
}

RingLayout ring_layout(const SplitSpec& spec) {
  const int k = spec.k;
  const int n = spec.n_identities;
  RingLayout layout;
  layout.base.resize(k);
  layout.incoming.resize(k);

  const auto base_sizes = even_sizes(n, k);
  IdentityId next = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < base_sizes[i]; ++j) layout.base[i].push_back(next++);

  const int overlap_total = static_cast<int>(std::lround(n * spec.r));
  if (overlap_total == 0) return layout;
  const auto pair_sizes = even_sizes(overlap_total, k);
  for (int i = 0; i < k; ++i) {
    auto pool = layout.base[i];
    auto rng = stream(spec.seed, kOverlapChoiceStream, i);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(pair_sizes[i]);
    std::sort(pool.begin(), pool.end());
    layout.incoming[(i + 1) % k] = std::move(pool);
  }
  return layout;
}

}  // namespace

void validate_split(const SplitSpec& spec, int bank_size) {
  auto bad = [](const std::string& what) { fail(ErrorKind::Split, what); };
  if (spec.k < 1) bad("k must be >= 1 (got " + std::to_string(spec.k) + ")");
  if (!(spec.r >= 0.0 && spec.r < 1.0)) bad("r must lie in [0, 1) (got " + std::to_string(spec.r) + ")");
  if (spec.n_identities < spec.k)
    bad("n_identities (" + std::to_string(spec.n_identities) + ") < k (" + std::to_string(spec.k) +
        "): some subset would be empty");
  if (spec.n_identities > bank_size)
    bad("n_identities (" + std::to_string(spec.n_identities) + ") exceeds identity bank size (" +
        std::to_string(bank_size) + ")");
  if (spec.images_per_identity < 1) bad("images_per_identity must be >= 1");
  if (!(spec.noise_sigma >= 0.0)) bad("noise_sigma must be >= 0");
  if (!(spec.domain_shift >= 0.0)) bad("domain_shift must be >= 0");
  const int overlap_total = static_cast<int>(std::lround(spec.n_identities * spec.r));
  if (overlap_total > 0 && spec.k < 2) bad("overlap r > 0 needs k >= 2");
  const auto base_sizes = even_sizes(spec.n_identities, spec.k);
  const auto pair_sizes = even_sizes(overlap_total, spec.k);
  for (int i = 0; i < spec.k; ++i) {
    if (pair_sizes[i] > base_sizes[i])
      bad("overlap of pair (" + std::to_string(i) + ", " + std::to_string((i + 1) % spec.k) + ") needs " +
          std::to_string(pair_sizes[i]) + " identities but subset " + std::to_string(i) + " has only " +
          std::to_string(base_sizes[i]));
  }
}

std::vector<DatasetShard> split_with_overlap(const IdentityBank& bank, const SplitSpec& spec) {
  validate_split(spec, bank.size());
  const RingLayout layout = ring_layout(spec);
  const int k = spec.k;

  std::vector<Vector> shifts;
  for (int i = 0; i < k; ++i) {
    auto rng = stream(spec.seed, kShiftStream, i);
    Vector v = gaussian_vector(bank.dim, rng);
    shifts.push_back(spec.domain_shift == 0.0 ? Vector::Zero(bank.dim) : Vector(v / v.norm() * spec.domain_shift));
  }

  std::int64_t uid = 0;
  std::vector<DatasetShard> shards;
  for (int i = 0; i < k; ++i) {
    auto rng = stream(spec.seed, kBaseSampleStream, i);
    shards.push_back(sample_shard(bank, layout.base[i], spec.images_per_identity, spec.noise_sigma, i,
                                  shifts[i], uid, rng));
    uid += static_cast<std::int64_t>(shards.back().samples.size());
  }

  // Overlap identities are appended after the base classes of the receiving shard.
  for (int i = 0; i < k; ++i) {
    const auto& incoming = layout.incoming[i];
    if (incoming.empty()) continue;
    DatasetShard& dst = shards[i];
    const DatasetShard& src = shards[(i + k - 1) % k];
    auto rng = stream(spec.seed, kOverlapSampleStream, i);
    for (IdentityId id : incoming) {
      const ClassId local = static_cast<ClassId>(dst.classes.size());
      dst.classes.push_back({local, id});
      if (spec.duplicate_images) {
        for (const SampleRecord& s : src.samples) {
          if (s.gt_identity != id) continue;
          SampleRecord copy = s;
          copy.sample_id = static_cast<std::int64_t>(dst.samples.size());
          copy.local_class = local;
          dst.samples.push_back(std::move(copy));
        }
      } else {
        const Vector dir = bank.directions.row(id).transpose();
        for (int j = 0; j < spec.images_per_identity; ++j) {
          dst.samples.push_back({static_cast<std::int64_t>(dst.samples.size()), id, local, uid++,
                                 noisy_feature(dir, spec.noise_sigma, dst.domain_shift, rng)});
        }
      }
    }
  }
  return shards;
}

ShardSet make_shard_set(const SplitSpec& spec, int bank_size, int dim) {
  ShardSet set;
  set.bank = gen_identity_bank(bank_size, dim, spec.seed);
  set.spec = spec;
  set.shards = split_with_overlap(set.bank, spec);
  return set;
}

std::vector<ConflictPair> conflict_pairs(std::span<const DatasetShard> shards) {
  std::map<IdentityId, std::vector<ClassRef>> owners;
  for (const auto& shard : shards)
    for (const auto& c : shard.classes) owners[c.gt_identity].push_back({shard.dataset_id, c.local_class});
  std::vector<ConflictPair> out;
  for (const auto& [id, refs] : owners)
    for (std::size_t a = 0; a < refs.size(); ++a)
      for (std::size_t b = a + 1; b < refs.size(); ++b) out.push_back({refs[a], refs[b], id});
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ClassId> class_offsets(std::span<const DatasetShard> shards) {
  std::vector<ClassId> offsets;
  ClassId acc = 0;
  for (const auto& s : shards) {
    offsets.push_back(acc);
    acc += s.num_classes();
  }
  return offsets;
}

int total_classes(std::span<const DatasetShard> shards) {
  int n = 0;
  for (const auto& s : shards) n += s.num_classes();
  return n;
}

std::vector<HeldoutSample> sample_heldout(const ShardSet& set, std::span<const IdentityId> identities,
                                          int per_identity, std::uint64_t seed) {
  require(per_identity >= 1, "sample_heldout: per_identity must be >= 1");
  require(!set.shards.empty(), "sample_heldout: shard set is empty");
  std::int64_t uid = 0;
  std::map<IdentityId, std::vector<int>> homes;
  for (std::size_t i = 0; i < set.shards.size(); ++i) {
    for (const auto& s : set.shards[i].samples) uid = std::max(uid, s.image_uid + 1);
    for (const auto& c : set.shards[i].classes) homes[c.gt_identity].push_back(static_cast<int>(i));
  }
  auto rng = stream(seed, kHeldoutStream);
  std::vector<HeldoutSample> out;
  out.reserve(identities.size() * per_identity);
  for (IdentityId id : identities) {
    require(id >= 0 && id < set.bank.size(), "sample_heldout: identity outside the bank");
    const Vector dir = set.bank.directions.row(id).transpose();
    const auto it = homes.find(id);
    for (int j = 0; j < per_identity; ++j) {
      int shard;
      if (it != homes.end()) {
        shard = it->second[std::uniform_int_distribution<std::size_t>(0, it->second.size() - 1)(rng)];
      } else {
        shard = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, set.shards.size() - 1)(rng));
      }
      out.push_back({id, uid++, noisy_feature(dir, set.spec.noise_sigma, set.shards[shard].domain_shift, rng)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shard file

namespace {

constexpr const char* kShardMagic = "FFSHARDS";

void put_spec(io::ByteWriter& w, const SplitSpec& s) {
  w.put<std::int32_t>(s.k);
  w.put<double>(s.r);
  w.put<std::uint8_t>(s.duplicate_images ? 1 : 0);
  w.put<std::int32_t>(s.n_identities);
  w.put<std::int32_t>(s.images_per_identity);
  w.put<double>(s.noise_sigma);
  w.put<double>(s.domain_shift);
  w.put<std::uint64_t>(s.seed);
}

SplitSpec get_spec(io::ByteReader& r) {
  SplitSpec s;
  s.k = r.get<std::int32_t>();
  s.r = r.get<double>();
  s.duplicate_images = r.get<std::uint8_t>() != 0;
  s.n_identities = r.get<std::int32_t>();
  s.images_per_identity = r.get<std::int32_t>();
  s.noise_sigma = r.get<double>();
  s.domain_shift = r.get<double>();
  s.seed = r.get<std::uint64_t>();
  return s;
}

}  // namespace

void write_shards(const ShardSet& set, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put<std::int32_t>(set.bank.dim);
  w.put<std::uint64_t>(set.bank.seed);
  w.put_matrix(set.bank.directions);
  put_spec(w, set.spec);
  w.put<std::uint64_t>(set.shards.size());
  for (const auto& shard : set.shards) {
    w.put<std::int32_t>(shard.dataset_id);
    w.put_vector(shard.domain_shift);
    w.put<std::uint64_t>(shard.classes.size());
    for (const auto& c : shard.classes) {
      w.put<std::int32_t>(c.local_class);
      w.put<std::int32_t>(c.gt_identity);
    }
    w.put<std::uint64_t>(shard.samples.size());
    for (const auto& s : shard.samples) {
      w.put<std::int64_t>(s.sample_id);
      w.put<std::int32_t>(s.gt_identity);
      w.put<std::int32_t>(s.local_class);
      w.put<std::int64_t>(s.image_uid);
      w.put_vector(s.feature);
    }
  }

  io::Header h{kShardMagic, kShardFormatVersion, {}};
  const auto& s = set.spec;
  h.echo = {{"dim", std::to_string(set.bank.dim)},
            {"bank_identities", std::to_string(set.bank.size())},
            {"n_shards", std::to_string(set.shards.size())},
            {"spec.k", std::to_string(s.k)},
            {"spec.r", std::to_string(s.r)},
            {"spec.duplicate_images", s.duplicate_images ? "true" : "false"},
            {"spec.n_identities", std::to_string(s.n_identities)},
            {"spec.images_per_identity", std::to_string(s.images_per_identity)},
            {"spec.noise_sigma", std::to_string(s.noise_sigma)},
            {"spec.domain_shift", std::to_string(s.domain_shift)},
            {"spec.seed", std::to_string(s.seed)}};
  for (const auto& shard : set.shards) {
    h.echo.emplace_back("shard." + std::to_string(shard.dataset_id),
                        "classes=" + std::to_string(shard.classes.size()) +
                            " samples=" + std::to_string(shard.samples.size()));
  }
  io::write_container(path, h, w.bytes());
}

ShardSet read_shards(const std::filesystem::path& path) {
  auto [header, r] = io::read_container(path, kShardMagic, kShardFormatVersion);
  ShardSet set;
  set.bank.dim = r.get<std::int32_t>();
  set.bank.seed = r.get<std::uint64_t>();
  set.bank.directions = r.get_matrix();
  if (set.bank.directions.cols() != set.bank.dim) fail(ErrorKind::Format, "bank dimension mismatch");
  set.spec = get_spec(r);
  const auto n_shards = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_shards; ++i) {
    DatasetShard shard;
    shard.dataset_id = r.get<std::int32_t>();
    shard.domain_shift = r.get_vector();
    const auto n_classes = r.get<std::uint64_t>();
    for (std::uint64_t c = 0; c < n_classes; ++c) {
      ShardClass sc;
      sc.local_class = r.get<std::int32_t>();
      sc.gt_identity = r.get<std::int32_t>();
      shard.classes.push_back(sc);
    }
    const auto n_samples = r.get<std::uint64_t>();
    for (std::uint64_t j = 0; j < n_samples; ++j) {
      SampleRecord s;
      s.sample_id = r.get<std::int64_t>();
      s.gt_identity = r.get<std::int32_t>();
      s.local_class = r.get<std::int32_t>();
      s.image_uid = r.get<std::int64_t>();
      s.feature = r.get_vector();
      shard.samples.push_back(std::move(s));
    }
    set.shards.push_back(std::move(shard));
  }
  r.expect_end();
  return set;
}

}  // namespace facefusion
