#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gazefusion/geometry.hpp"
#include "gazefusion/image.hpp"

// Procedural face renderer and synthetic multi-dataset generator.
namespace gazefusion::synth {

// Per-dataset rendering shift.
struct Appearance {
  double brightness = 0.0;  // added after contrast
  double contrast = 1.0;    // scales around mid-grey
  double iris_scale = 1.0;  // iris radius multiplier

  friend bool operator==(const Appearance&, const Appearance&) = default;
};

// Per-subject geometry, drawn once per subject.
struct SubjectParams {
  double face_width = 1.0;   // head ellipse width multiplier
  double eye_spacing = 1.0;  // inter-ocular multiplier
  double iris_size = 1.0;
  double skin = 0.6;         // face intensity

  friend bool operator==(const SubjectParams&, const SubjectParams&) = default;
};

// Axis-aligned square box in face pixel coordinates (centre, side).
struct EyeBox {
  double cx = 0.0, cy = 0.0, size = 0.0;

  friend bool operator==(const EyeBox&, const EyeBox&) = default;
};

// Angle ranges accepted by the renderer, degrees.
inline constexpr double kMaxGazeDeg = 80.0;
inline constexpr double kMaxHeadDeg = 60.0;

struct RenderedFace {
  Image face;
  Image iris_mask;  // iris coverage in [0,1], same grid as face, single channel
  EyeBox left_box, right_box;
  double left_eye_x = 0, left_eye_y = 0, right_eye_x = 0, right_eye_y = 0;  // eye-region centres
};

// Renders a face image. `gaze` and `head` in radians; throws std::invalid_argument
// when a pose is outside the supported range.
RenderedFace render_face(GazeAngles gaze, GazeAngles head, const SubjectParams& subject,
                         const Appearance& appearance, std::size_t size, std::size_t channels = 1);

// Bilinear resample of the square `box` of `face` to out_size×out_size.
Image crop_eye(const Image& face, const EyeBox& box, std::size_t out_size);

struct DatasetSpec {
  std::string name;
  std::size_t dataset_id = 0;
  std::size_t num_subjects = 8;
  std::size_t samples_per_subject = 50;
  double gaze_yaw_range_deg = 30.0, gaze_pitch_range_deg = 20.0;
  double head_yaw_range_deg = 20.0, head_pitch_range_deg = 20.0;
  Appearance appearance;
  // Label corruption, degrees. The anchor dataset must leave all of these at zero.
  std::array<double, 3> rotation_axis{0.0, 1.0, 0.0};
  double rotation_deg = 0.0;
  double bias_yaw_deg = 0.0, bias_pitch_deg = 0.0;
  double noise_deg = 0.0;
  std::uint64_t seed = 0;
  std::size_t face_size = 32;
  std::size_t eye_size = 16;
  std::size_t channels = 1;

  void validate() const;  // throws ConfigError
  AnnotationPerturbation perturbation() const;
  std::size_t num_samples() const { return num_subjects * samples_per_subject; }
  // Samples with index-in-subject >= this are held out.
  std::size_t train_per_subject() const;

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct Sample {
  Image face, left_eye, right_eye;
  GazeAngles label;      // possibly perturbed annotation
  GazeAngles true_gaze;  // rendered gaze
  GazeAngles head_pose;
  EyeBox left_box, right_box;
  std::size_t subject = 0;
  bool held_out = false;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> samples;
  std::string manifest_sha256;  // set by save_dataset / load_dataset

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

SubjectParams subject_params(const DatasetSpec& spec, std::size_t subject);
// Deterministic in (spec, index): regenerating one sample needs nothing else.
Sample generate_sample(const DatasetSpec& spec, std::size_t index);
Dataset generate(const DatasetSpec& spec);

// Directory layout: <dir>/manifest.txt (key=value plus a per-sample index)
// and <dir>/data.bin (little-endian f64 records). Returns the manifest hash.
std::string save_dataset(Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
std::string manifest_hash(const std::filesystem::path& dir);

// Spec files: one [dataset] section per dataset. Errors name source:line.
std::vector<DatasetSpec> parse_specs(std::string_view text, const std::string& source = "<specs>");
std::vector<DatasetSpec> load_specs(const std::filesystem::path& path);
std::string specs_to_text(const std::vector<DatasetSpec>& specs);
// Anchor plus three perturbed datasets.
std::vector<DatasetSpec> default_specs(std::uint64_t seed = 7);

// Validates a multi-dataset collection: ids are 0..M-1, unique, and the anchor
// (id 0) has the identity perturbation.
void validate_collection(const std::vector<DatasetSpec>& specs);

struct BatchEntry {
  std::size_t dataset = 0;  // position in the sampler's pool list
  std::size_t sample = 0;   // sample index within that dataset

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

// Batches hold exactly B/M samples per dataset. An epoch is
// floor(min_pool / (B/M)) batches; each pool is reshuffled per epoch, so
// larger datasets contribute a random subset each epoch.
class MixedBatchSampler {
 public:
  MixedBatchSampler(std::vector<std::vector<std::size_t>> pools, std::size_t batch_size, std::uint64_t seed);

  std::size_t batch_size() const { return batch_size_; }
  std::size_t per_dataset() const { return batch_size_ / pools_.size(); }
  std::size_t batches_per_epoch() const;
  std::vector<std::vector<BatchEntry>> next_epoch();

 private:
  std::vector<std::vector<std::size_t>> pools_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

}  // namespace gazefusion::synth
