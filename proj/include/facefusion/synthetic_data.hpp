#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "facefusion/types.hpp"

namespace facefusion {

// Ground-truth identity directions on the unit hypersphere. Every experiment is
// scored against these.
struct IdentityBank {
  int dim = 0;
  Matrix directions;  // one unit row per identity
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(directions.rows()); }
  bool operator==(const IdentityBank&) const = default;
};

// Pairs closer than this are rejected by the generator.
inline constexpr double kMaxIdentityCosine = 0.9;

struct SampleRecord {
  std::int64_t sample_id = 0;
  IdentityId gt_identity = 0;
  ClassId local_class = 0;
  std::int64_t image_uid = 0;  // equal uids mean the same underlying image
  Vector feature;

  bool operator==(const SampleRecord&) const = default;
};

struct ShardClass {
  ClassId local_class = 0;
  IdentityId gt_identity = 0;

  bool operator==(const ShardClass&) const = default;
};

struct DatasetShard {
  DatasetId dataset_id = 0;
  std::vector<ShardClass> classes;  // dense local ids 0..C_k-1, in order
  std::vector<SampleRecord> samples;
  Vector domain_shift;

  int num_classes() const { return static_cast<int>(classes.size()); }
  bool operator==(const DatasetShard&) const = default;
};

struct SplitSpec {
  int k = 8;                       // number of subsets
  double r = 0.0;                  // overlap ratio in [0, 1)
  bool duplicate_images = false;   // overlapping identities reuse the same images
  int n_identities = 1000;
  int images_per_identity = 16;
  double noise_sigma = 0.1;
  double domain_shift = 0.5;       // magnitude of the per-shard additive bias
  std::uint64_t seed = 0;

  bool operator==(const SplitSpec&) const = default;
};

// Everything a shard file holds: the bank (needed for held-out evaluation),
// the split that produced the shards, and the shards themselves.
struct ShardSet {
  IdentityBank bank;
  SplitSpec spec;
  std::vector<DatasetShard> shards;

  bool operator==(const ShardSet&) const = default;
};

// Identifies one class by (shard, local id).
struct ClassRef {
  DatasetId dataset = 0;
  ClassId local_class = 0;
  auto operator<=>(const ClassRef&) const = default;
};

// Two classes that share a ground-truth identity: the inter-class noise the
// fusion step is supposed to remove.
struct ConflictPair {
  ClassRef a;
  ClassRef b;
  IdentityId gt_identity = 0;
  auto operator<=>(const ConflictPair&) const = default;
};

IdentityBank gen_identity_bank(int n, int dim, std::uint64_t seed);

// Generates `images_per_identity` samples for each member, with image uids
// starting at `first_uid`. `rng` is advanced.
DatasetShard sample_shard(const IdentityBank& bank, std::span<const IdentityId> members,
                          int images_per_identity, double noise_sigma, DatasetId dataset_id,
                          const Vector& domain_shift, std::int64_t first_uid, std::mt19937_64& rng);

// Validates realizability; throws ErrorKind::Split naming the violated constraint.
void validate_split(const SplitSpec& spec, int bank_size);

// Ring-overlap split: shard i shares its overlap identities with shard i+1 (mod k).
std::vector<DatasetShard> split_with_overlap(const IdentityBank& bank, const SplitSpec& spec);

ShardSet make_shard_set(const SplitSpec& spec, int bank_size, int dim);

// Identities each shard pair has in common, enumerated from the shards themselves.
std::vector<ConflictPair> conflict_pairs(std::span<const DatasetShard> shards);

// Offsets that map (dataset, local class) into one concatenated class space.
std::vector<ClassId> class_offsets(std::span<const DatasetShard> shards);
int total_classes(std::span<const DatasetShard> shards);

// Fresh noisy draws used for verification pairs, one entry per requested identity.
// Each sample picks up the domain shift of a shard containing its identity (or of
// a random shard for identities no shard contains).
struct HeldoutSample {
  IdentityId gt_identity = 0;
  std::int64_t image_uid = 0;
  Vector feature;
};
std::vector<HeldoutSample> sample_heldout(const ShardSet& set, std::span<const IdentityId> identities,
                                          int per_identity, std::uint64_t seed);

void write_shards(const ShardSet& set, const std::filesystem::path& path);
ShardSet read_shards(const std::filesystem::path& path);

inline constexpr std::uint32_t kShardFormatVersion = 1;

}  // namespace facefusion
