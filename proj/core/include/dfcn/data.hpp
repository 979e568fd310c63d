#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dfcn/rng.hpp"
#include "dfcn/tensor.hpp"

namespace dfcn {

/// One image crop with its sparse labels and region of interest.
struct SampleRecord {
  std::string case_id;
  Tensor image;    // 1 x H x W raw intensities
  LabelMap labels; // H x W
  Mask roi;        // H x W, 1 inside the region of interest
  /// Top-left corner of the crop in the source image.
  std::int64_t origin_y = 0;
  std::int64_t origin_x = 0;
  /// False when the crop holds no labeled pixel.
  bool annotated = true;

  std::int64_t height() const { return image.dim(1); }
  std::int64_t width() const { return image.dim(2); }
};

/// Throws DataError unless shapes agree and every labeled pixel lies inside the roi.
void validate_record(const SampleRecord& r, int num_classes);

/// Labeled-pixel tally per class (inside `roi` when given).
std::vector<std::int64_t> count_labels(const LabelMap& labels, int num_classes, const Mask* roi = nullptr);

struct CropOptions {
  std::int64_t margin = 32;
  /// Keep crops without labeled pixels (flagged annotated = false).
  bool keep_unannotated = false;
};

/**
 * One record per 8-connected component of `lung_mask`: the component's
 * bounding box grown by `margin` on each side and clipped to the image. The
 * roi is the component dilated by a (2 margin + 1) square box; labels outside
 * the component are cleared.
 */
std::vector<SampleRecord> crop_lungs(const Tensor& image, const LabelMap& labels, const Mask& lung_mask,
                                     const std::string& case_id, const CropOptions& options = {});

/// Applies dihedral op 0..7 identically to image, labels and roi.
SampleRecord augment(const SampleRecord& sample, int op_index);

struct ManifestRecord {
  std::string case_id;
  std::filesystem::path image;
  std::filesystem::path labels;
  std::filesystem::path roi;
  std::vector<std::int64_t> counts;  // labeled roi pixels per class
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  int num_classes() const { return static_cast<int>(classes.size()); }
};

/// The six tissue classes of the original task.
std::vector<std::string> default_class_names();

/// Reads the manifest, resolves paths against its directory, tallies label files, and
/// checks stored counts against them.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
SampleRecord load_record(const DatasetManifest& manifest, std::size_t index);
std::vector<SampleRecord> load_records(const DatasetManifest& manifest, std::span<const std::size_t> indices);

/// Sum of per-record class counts over `subset` (record indices).
std::vector<std::int64_t> class_counts(const DatasetManifest& manifest, std::span<const std::size_t> subset);

/// Fold sizes for n cases: F - 1 folds of floor(n / F), the first fold takes the rest.
std::vector<std::size_t> fold_sizes(std::size_t cases, std::size_t folds);

/// Shannon entropy (nats) of a count vector's normalized distribution; 0 for empty.
double distribution_entropy(std::span<const std::int64_t> counts);

struct SplitAssignment {
  int folds = 0;
  std::map<std::string, int> fold_of_case;
  std::vector<std::vector<std::int64_t>> fold_counts;  // folds x classes
  std::vector<double> fold_entropy;
  double average_entropy = 0.0;
  /// Average entropy after the initial split and after every accepted swap.
  std::vector<double> accepted_history;
  std::int64_t proposals = 0;

  /// Record indices of fold `f` (in manifest order).
  std::vector<std::size_t> members(const DatasetManifest& manifest, int f) const;
  std::vector<std::size_t> complement(const DatasetManifest& manifest, int f) const;
};

/**
 * Hill climbing over case-to-fold assignments. Starts from a seeded shuffle
 * filled in fold_sizes() order, then repeatedly exchanges two cases of two
 * random folds and keeps the exchange iff the average per-fold class
 * entropy strictly increases. Stops after `max_stale_iters` consecutive
 * rejections.
 */
SplitAssignment hill_climb_split(std::span<const std::string> case_ids,
                                 std::span<const std::vector<std::int64_t>> case_counts, int folds,
                                 std::int64_t max_stale_iters, Rng& rng);
SplitAssignment hill_climb_split(const DatasetManifest& manifest, int folds, std::int64_t max_stale_iters, Rng& rng);

void to_json(nlohmann::json& j, const SplitAssignment& s);
void from_json(const nlohmann::json& j, SplitAssignment& s);

struct SynthOptions {
  std::uint64_t seed = 0;
  int num_classes = 6;
  std::int64_t height = 96;
  std::int64_t width = 96;
  /// Number of Voronoi regions.
  int regions = 12;
  double unlabeled_fraction = 0.3;
  /// Width of the border band excluded from the roi.
  std::int64_t border = 4;
};

/// Number of distinct procedural texture families available to synth_mosaic.
int texture_family_count();
std::vector<std::string> texture_family_names();

/**
 * Voronoi mosaic of procedural textures, one family per class, under a random
 * global gain and offset. A smooth random field picks exactly
 * round(unlabeled_fraction * |roi|) roi pixels to leave unlabeled.
 */
SampleRecord synth_mosaic(const SynthOptions& options);

/// Writes `count` mosaics (seeds derived from options.seed) and their manifest into `dir`.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, int count, const SynthOptions& options);
/// The same mosaics as write_synthetic_dataset, in memory.
std::vector<SampleRecord> synthetic_records(int count, const SynthOptions& options);

/// Reads binary (P5) or ASCII (P2) PGM with 8- or 16-bit samples as a 1 x H x W tensor.
Tensor read_pgm_image(const std::filesystem::path& path);
/// Reads an 8-bit PGM as an H x W byte map.
LabelMap read_pgm_labels(const std::filesystem::path& path);

}  // namespace dfcn
