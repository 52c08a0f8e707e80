#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evssl::events {

/// One brightness-change record. Polarity is -1 (OFF) or +1 (ON).
struct Event {
  std::int64_t t = 0;  // microseconds
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int8_t p = 1;

  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::vector<Event> events;  // non-decreasing t
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::int64_t duration_us = 0;

  bool operator==(const EventStream&) const = default;
};

/// Throws BoundsError / Error when the stream breaks its invariants.
void validate(const EventStream& stream);

/// Parses `t_us,x,y,p` lines. An optional `# width height duration_us` header
/// overrides the given sensor size; without it the duration is the largest
/// timestamp. Polarity 0 is read as -1. Unsorted input is stably sorted.
EventStream parse_events(std::string_view text, std::int32_t sensor_width, std::int32_t sensor_height);
std::string serialize_events(const EventStream& stream);

EventStream read_event_file(const std::filesystem::path& path, std::int32_t sensor_width = 0,
                            std::int32_t sensor_height = 0);
void write_event_file(const std::filesystem::path& path, const EventStream& stream);

enum class ShapeClass { moving_bar, moving_disk, moving_corner };

std::string_view to_string(ShapeClass c);
ShapeClass shape_class_from_string(std::string_view name);
inline constexpr ShapeClass kShapeClasses[] = {ShapeClass::moving_bar, ShapeClass::moving_disk,
                                               ShapeClass::moving_corner};

/// A bright primitive translating at constant velocity over a dark
/// background, plus uniform background noise.
///
/// Geometry (pixel units, at t = 0, centered on (center_x, center_y)):
///   moving_bar    axis-aligned rectangle, thickness x size
///   moving_disk   disk of diameter size
///   moving_corner L-shape of two size x thickness arms sharing the top-left
///                 corner
/// with thickness = max(2, size / 4). A pixel is inside when its center
/// (x + 0.5, y + 0.5) lies in the region.
struct SyntheticSpec {
  ShapeClass shape = ShapeClass::moving_bar;
  double velocity_x = 0.0;  // px per ms
  double velocity_y = 0.0;
  std::int32_t width = 64;
  std::int32_t height = 64;
  std::int64_t duration_us = 100000;
  std::int32_t events_per_edge_crossing = 1;
  double noise_rate = 0.0;  // events per pixel per second
  double center_x = 32.0;
  double center_y = 32.0;
  double size = 16.0;

  double thickness() const;
  bool operator==(const SyntheticSpec&) const = default;
};

void validate(const SyntheticSpec& spec);

/// Deterministic in (spec, seed). Each time a pixel center enters the region
/// emits events_per_edge_crossing ON events, each exit the same number of OFF
/// events, at the crossing time.
EventStream generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Randomized instance of a class for dataset generation: size, speed,
/// direction and start position drawn from `seed`, keeping the primitive's
/// path centered on the sensor.
SyntheticSpec random_spec(ShapeClass shape, std::uint64_t seed, std::int32_t width = 64, std::int32_t height = 64,
                          std::int64_t duration_us = 100000, double noise_rate = 1.0);

enum class Split { train, test };
std::string_view to_string(Split s);

struct ManifestEntry {
  std::string path;                        // relative to the manifest directory
  std::optional<SyntheticSpec> synthetic;  // generated on load when set
  std::uint64_t seed = 0;
  int label = 0;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  bool operator==(const DatasetManifest&) const = default;
};

/// Labels must cover 0..L-1 without gaps; class_names, when present, must
/// have L names.
void validate(const DatasetManifest& manifest);

/// Per-class stratified split: floor(train_fraction * n) (clamped to
/// [1, n-1]) entries of each class go to train. Entry order is preserved.
DatasetManifest split_dataset(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

EventStream load_entry(const ManifestEntry& entry, const std::filesystem::path& base_dir);

struct GenerateOptions {
  std::size_t classes = 3;
  std::size_t per_class = 80;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::int32_t width = 64;
  std::int32_t height = 64;
  std::int64_t duration_us = 100000;
  double noise_rate = 1.0;
};

/// Writes classes * per_class event files plus manifest.json into `out_dir`
/// and returns the manifest.
DatasetManifest generate_dataset(const std::filesystem::path& out_dir, const GenerateOptions& options);

}  // namespace evssl::events
