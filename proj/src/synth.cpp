#include "gazefusion/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "gazefusion/hash.hpp"
#include "gazefusion/keyvalue.hpp"
#include "gazefusion/tensor.hpp"

namespace gazefusion::synth {

namespace {

constexpr int kSuper = 4;  // supersampling per pixel axis
constexpr double kBackground = 0.15;
constexpr double kSclera = 0.95;
constexpr double kIris = 0.12;
constexpr std::array<double, 3> kTint{1.0, 0.92, 0.85};

// Head-frame geometry in units of the head radius.
constexpr double kHeadRadius = 0.38;  // × face size
constexpr double kHeadHeight = 1.16;  // ellipse height / width
constexpr double kEyeX = 0.36, kEyeY = 0.12;
constexpr double kScleraA = 0.24, kScleraB = 0.15;
constexpr double kIrisR = 0.11;
constexpr double kIrisShiftX = 0.16, kIrisShiftY = 0.09;
constexpr double kEyeBox = 0.6;
constexpr double kNoseY = -0.15, kNoseR = 0.08;
constexpr double kMouthY = -0.5, kMouthA = 0.25, kMouthB = 0.06;

struct Point2 {
  double u, v;
};

// Orthographic projection of a head-frame point (camera y up) after yaw then pitch.
Point2 project(double x, double y, double z, GazeAngles head, double cu, double cv) {
  const double xr = x * std::cos(head.yaw) + z * std::sin(head.yaw);
  const double zr = -x * std::sin(head.yaw) + z * std::cos(head.yaw);
  const double yr = y * std::cos(head.pitch) + zr * std::sin(head.pitch);
  return {cu + xr, cv - yr};
}

Point2 surface_point(double x, double y, double radius, GazeAngles head, double cu, double cv) {
  const double z = std::sqrt(std::max(0.0, radius * radius - x * x - y * y));
  return project(x, y, z, head, cu, cv);
}

bool in_ellipse(double u, double v, Point2 c, double a, double b) {
  const double du = (u - c.u) / a, dv = (v - c.v) / b;
  return du * du + dv * dv <= 1.0;
}

void check_angle(double value_rad, double limit_deg, const char* what) {
  if (!std::isfinite(value_rad) || std::abs(rad_to_deg(value_rad)) > limit_deg) {
    throw std::invalid_argument(std::string(what) + " of " + std::to_string(rad_to_deg(value_rad)) +
                                " deg is outside ±" + std::to_string(limit_deg) + " deg");
  }
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double symmetric(std::mt19937_64& rng, double range_deg) {
  return range_deg == 0.0 ? 0.0 : deg_to_rad(uniform(rng, -range_deg, range_deg));
}

// Little-endian f64 stream helpers.
void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw std::runtime_error("data.bin truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return std::bit_cast<double>(bits);
}

std::size_t record_doubles(const DatasetSpec& s) {
  return 14 + s.channels * (s.face_size * s.face_size + 2 * s.eye_size * s.eye_size);
}

std::string join(std::initializer_list<double> values) {
  std::string out;
  for (double v : values) {
    if (!out.empty()) out += ',';
    out += kv::format_double(v);
  }
  return out;
}

void write_spec_lines(std::ostream& out, const DatasetSpec& s) {
  out << "name=" << s.name << "\n"
      << "id=" << s.dataset_id << "\n"
      << "subjects=" << s.num_subjects << "\n"
      << "samples_per_subject=" << s.samples_per_subject << "\n"
      << "gaze_range_deg=" << join({s.gaze_yaw_range_deg, s.gaze_pitch_range_deg}) << "\n"
      << "head_range_deg=" << join({s.head_yaw_range_deg, s.head_pitch_range_deg}) << "\n"
      << "brightness=" << kv::format_double(s.appearance.brightness) << "\n"
      << "contrast=" << kv::format_double(s.appearance.contrast) << "\n"
      << "iris_scale=" << kv::format_double(s.appearance.iris_scale) << "\n"
      << "rotation_axis=" << join({s.rotation_axis[0], s.rotation_axis[1], s.rotation_axis[2]}) << "\n"
      << "rotation_deg=" << kv::format_double(s.rotation_deg) << "\n"
      << "bias_deg=" << join({s.bias_yaw_deg, s.bias_pitch_deg}) << "\n"
      << "noise_deg=" << kv::format_double(s.noise_deg) << "\n"
      << "seed=" << s.seed << "\n"
      << "face_size=" << s.face_size << "\n"
      << "eye_size=" << s.eye_size << "\n"
      << "channels=" << s.channels << "\n";
}

std::vector<double> fixed_doubles(const kv::Entry& e, const std::string& source, std::size_t n) {
  auto v = kv::to_doubles(e, source);
  if (v.size() != n) kv::fail(e, source, "expected " + std::to_string(n) + " comma-separated numbers");
  return v;
}

// Returns false for keys that are not dataset keys.
bool apply_spec_key(DatasetSpec& s, const kv::Entry& e, const std::string& source) {
  const std::string& k = e.key;
  if (k == "name") {
    if (e.value.empty()) kv::fail(e, source, "empty dataset name");
    s.name = e.value;
  } else if (k == "id") {
    s.dataset_id = kv::to_size(e, source);
  } else if (k == "subjects") {
    s.num_subjects = kv::to_size(e, source);
  } else if (k == "samples_per_subject") {
    s.samples_per_subject = kv::to_size(e, source);
  } else if (k == "gaze_range_deg") {
    auto v = fixed_doubles(e, source, 2);
    s.gaze_yaw_range_deg = v[0];
    s.gaze_pitch_range_deg = v[1];
  } else if (k == "head_range_deg") {
    auto v = fixed_doubles(e, source, 2);
    s.head_yaw_range_deg = v[0];
    s.head_pitch_range_deg = v[1];
  } else if (k == "brightness") {
    s.appearance.brightness = kv::to_double(e, source);
  } else if (k == "contrast") {
    s.appearance.contrast = kv::to_double(e, source);
  } else if (k == "iris_scale") {
    s.appearance.iris_scale = kv::to_double(e, source);
  } else if (k == "rotation_axis") {
    auto v = fixed_doubles(e, source, 3);
    s.rotation_axis = {v[0], v[1], v[2]};
  } else if (k == "rotation_deg") {
    s.rotation_deg = kv::to_double(e, source);
  } else if (k == "bias_deg") {
    auto v = fixed_doubles(e, source, 2);
    s.bias_yaw_deg = v[0];
    s.bias_pitch_deg = v[1];
  } else if (k == "noise_deg") {
    s.noise_deg = kv::to_double(e, source);
  } else if (k == "seed") {
    s.seed = kv::to_u64(e, source);
  } else if (k == "face_size") {
    s.face_size = kv::to_size(e, source);
  } else if (k == "eye_size") {
    s.eye_size = kv::to_size(e, source);
  } else if (k == "channels") {
    s.channels = kv::to_size(e, source);
  } else {
    return false;
  }
  return true;
}

}  // namespace

RenderedFace render_face(GazeAngles gaze, GazeAngles head, const SubjectParams& subject,
                         const Appearance& appearance, std::size_t size, std::size_t channels) {
  check_angle(gaze.yaw, kMaxGazeDeg, "gaze yaw");
  check_angle(gaze.pitch, kMaxGazeDeg, "gaze pitch");
  check_angle(head.yaw, kMaxHeadDeg, "head yaw");
  check_angle(head.pitch, kMaxHeadDeg, "head pitch");
  const GazeAngles rel{gaze.yaw - head.yaw, gaze.pitch - head.pitch};
  check_angle(rel.yaw, 90.0, "eye-in-head yaw");
  check_angle(rel.pitch, 90.0, "eye-in-head pitch");
  if (size < 8) throw std::invalid_argument("face size must be at least 8 pixels");
  if (channels == 0) throw std::invalid_argument("channels must be positive");

  const double s = static_cast<double>(size);
  const double r = kHeadRadius * s;
  const double cu = s / 2.0, cv = s / 2.0;
  const Point2 head_c{cu, cv};
  const double head_a = r * subject.face_width, head_b = r * kHeadHeight;

  const double ex = kEyeX * r * subject.eye_spacing, ey = kEyeY * r;
  const Point2 eye_l = surface_point(-ex, ey, r, head, cu, cv);
  const Point2 eye_r = surface_point(ex, ey, r, head, cu, cv);
  const Point2 nose = surface_point(0.0, kNoseY * r, r, head, cu, cv);
  const Point2 mouth = surface_point(0.0, kMouthY * r, r, head, cu, cv);

  const double sa = kScleraA * r, sb = kScleraB * r;
  const double iris_r = kIrisR * r * subject.iris_size * appearance.iris_scale;
  const Point2 shift{kIrisShiftX * r * std::sin(rel.yaw), -kIrisShiftY * r * std::sin(rel.pitch)};
  const Point2 iris_l{eye_l.u + shift.u, eye_l.v + shift.v};
  const Point2 iris_r_c{eye_r.u + shift.u, eye_r.v + shift.v};

  RenderedFace out;
  out.face = Image(size, size, channels);
  out.iris_mask = Image(size, size, 1);
  const double inv = 1.0 / (kSuper * kSuper);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double value = 0.0, iris_cover = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double v = static_cast<double>(y) + (sy + 0.5) / kSuper;
          double p = kBackground;
          if (in_ellipse(u, v, head_c, head_a, head_b)) {
            p = subject.skin;
            if (in_ellipse(u, v, mouth, kMouthA * r, kMouthB * r)) p = subject.skin * 0.6;
            if (in_ellipse(u, v, nose, kNoseR * r, kNoseR * r)) p = subject.skin * 0.75;
            for (int side = 0; side < 2; ++side) {
              const Point2 ec = side == 0 ? eye_l : eye_r;
              const Point2 ic = side == 0 ? iris_l : iris_r_c;
              if (!in_ellipse(u, v, ec, sa, sb)) continue;
              p = kSclera;
              if (in_ellipse(u, v, ic, iris_r, iris_r)) {
                p = kIris;
                iris_cover += inv;
              }
            }
          }
          value += p * inv;
        }
      }
      out.iris_mask.at(y, x) = iris_cover;
      for (std::size_t c = 0; c < channels; ++c) {
        const double shaded = (value * kTint[c % 3] - 0.5) * appearance.contrast + 0.5 + appearance.brightness;
        out.face.at(y, x, c) = std::clamp(shaded, 0.0, 1.0);
      }
    }
  }
  out.left_eye_x = eye_l.u;
  out.left_eye_y = eye_l.v;
  out.right_eye_x = eye_r.u;
  out.right_eye_y = eye_r.v;
  out.left_box = {eye_l.u, eye_l.v, kEyeBox * r};
  out.right_box = {eye_r.u, eye_r.v, kEyeBox * r};
  return out;
}

Image crop_eye(const Image& face, const EyeBox& box, std::size_t out_size) {
  if (out_size == 0 || box.size <= 0.0 || face.pixels.empty()) throw std::invalid_argument("empty eye crop");
  Image out(out_size, out_size, face.channels);
  const double step = box.size / static_cast<double>(out_size);
  const double x0 = box.cx - box.size / 2.0, y0 = box.cy - box.size / 2.0;
  const auto clamp_index = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  for (std::size_t i = 0; i < out_size; ++i) {
    const double fy = y0 + (static_cast<double>(i) + 0.5) * step - 0.5;
    const double fy0 = std::floor(fy), wy = fy - fy0;
    const std::size_t ya = clamp_index(fy0, face.height), yb = clamp_index(fy0 + 1, face.height);
    for (std::size_t j = 0; j < out_size; ++j) {
      const double fx = x0 + (static_cast<double>(j) + 0.5) * step - 0.5;
      const double fx0 = std::floor(fx), wx = fx - fx0;
      const std::size_t xa = clamp_index(fx0, face.width), xb = clamp_index(fx0 + 1, face.width);
      for (std::size_t c = 0; c < face.channels; ++c) {
        const double top = face.at(ya, xa, c) * (1 - wx) + face.at(ya, xb, c) * wx;
        const double bottom = face.at(yb, xa, c) * (1 - wx) + face.at(yb, xb, c) * wx;
        out.at(i, j, c) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

void DatasetSpec::validate() const {
  const std::string where = "dataset '" + name + "': ";
  if (name.empty()) throw ConfigError("dataset without a name");
  if (num_subjects == 0 || samples_per_subject == 0) throw ConfigError(where + "needs subjects and samples");
  const auto check_range = [&](double v, double limit, const char* what) {
    if (!std::isfinite(v) || v < 0.0 || v > limit) {
      throw ConfigError(where + what + " must lie in [0, " + kv::format_double(limit) + "]");
    }
  };
  check_range(gaze_yaw_range_deg, kMaxGazeDeg, "gaze yaw range");
  check_range(gaze_pitch_range_deg, kMaxGazeDeg, "gaze pitch range");
  check_range(head_yaw_range_deg, kMaxHeadDeg, "head yaw range");
  check_range(head_pitch_range_deg, kMaxHeadDeg, "head pitch range");
  if (gaze_yaw_range_deg + head_yaw_range_deg > 90.0 || gaze_pitch_range_deg + head_pitch_range_deg > 90.0) {
    throw ConfigError(where + "gaze and head ranges together exceed 90 deg of eye rotation");
  }
  if (!(appearance.contrast > 0.0) || !(appearance.iris_scale > 0.0)) {
    throw ConfigError(where + "contrast and iris_scale must be positive");
  }
  if (rotation_deg != 0.0 && rotation_axis == std::array<double, 3>{0.0, 0.0, 0.0}) {
    throw ConfigError(where + "rotation axis is zero");
  }
  if (noise_deg < 0.0) throw ConfigError(where + "noise_deg must be non-negative");
  if (face_size < 8 || eye_size == 0) throw ConfigError(where + "face_size must be >= 8 and eye_size > 0");
  if (channels == 0) throw ConfigError(where + "channels must be positive");
}

AnnotationPerturbation DatasetSpec::perturbation() const {
  AnnotationPerturbation p;
  p.axis = rotation_axis;
  p.angle = deg_to_rad(rotation_deg);
  p.bias = {deg_to_rad(bias_yaw_deg), deg_to_rad(bias_pitch_deg)};
  p.noise_std = deg_to_rad(noise_deg);
  return p;
}

std::size_t DatasetSpec::train_per_subject() const { return samples_per_subject - (samples_per_subject + 2) / 5; }

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].held_out) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::test_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].held_out) out.push_back(i);
  }
  return out;
}

SubjectParams subject_params(const DatasetSpec& spec, std::size_t subject) {
  auto rng = make_rng(spec.seed, 0x5b, subject);
  SubjectParams p;
  p.face_width = uniform(rng, 0.9, 1.1);
  p.eye_spacing = uniform(rng, 0.9, 1.1);
  p.iris_size = uniform(rng, 0.85, 1.15);
  p.skin = uniform(rng, 0.5, 0.7);
  return p;
}

Sample generate_sample(const DatasetSpec& spec, std::size_t index) {
  if (index >= spec.num_samples()) throw std::out_of_range("sample index out of range");
  Sample s;
  s.subject = index / spec.samples_per_subject;
  s.held_out = index % spec.samples_per_subject >= spec.train_per_subject();
  auto rng = make_rng(spec.seed, 0xa7, index);
  s.true_gaze = {symmetric(rng, spec.gaze_yaw_range_deg), symmetric(rng, spec.gaze_pitch_range_deg)};
  s.head_pose = {symmetric(rng, spec.head_yaw_range_deg), symmetric(rng, spec.head_pitch_range_deg)};
  s.label = perturb_annotation(s.true_gaze, spec.perturbation(), rng);
  RenderedFace r = render_face(s.true_gaze, s.head_pose, subject_params(spec, s.subject), spec.appearance,
                               spec.face_size, spec.channels);
  s.left_box = r.left_box;
  s.right_box = r.right_box;
  s.left_eye = crop_eye(r.face, r.left_box, spec.eye_size);
  s.right_eye = crop_eye(r.face, r.right_box, spec.eye_size);
  s.face = std::move(r.face);
  return s;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.samples.reserve(spec.num_samples());
  for (std::size_t i = 0; i < spec.num_samples(); ++i) ds.samples.push_back(generate_sample(spec, i));
  return ds;
}

std::string save_dataset(Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DatasetSpec& spec = ds.spec;
  std::string bytes;
  bytes.reserve(ds.samples.size() * record_doubles(spec) * 8);
  for (const Sample& s : ds.samples) {
    for (double v : {static_cast<double>(s.subject), s.held_out ? 1.0 : 0.0, s.label.yaw, s.label.pitch,
                     s.true_gaze.yaw, s.true_gaze.pitch, s.head_pose.yaw, s.head_pose.pitch, s.left_box.cx,
                     s.left_box.cy, s.left_box.size, s.right_box.cx, s.right_box.cy, s.right_box.size}) {
      put_f64(bytes, v);
    }
    for (const Image* img : {&s.face, &s.left_eye, &s.right_eye}) {
      for (double v : img->pixels) put_f64(bytes, v);
    }
  }
  {
    std::ofstream out(dir / "data.bin", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + (dir / "data.bin").string());
  }
  std::ostringstream m;
  m << "# synthetic gaze dataset\nformat=gazefusion-synthetic-1\n";
  write_spec_lines(m, spec);
  m << "num_samples=" << ds.samples.size() << "\n"
    << "record_doubles=" << record_doubles(spec) << "\n"
    << "data_sha256=" << sha256_hex(bytes) << "\n"
    << "[samples]\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    m << "sample=" << i << "," << ds.samples[i].subject << "," << (ds.samples[i].held_out ? "test" : "train") << "\n";
  }
  {
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    out << m.str();
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  }
  ds.manifest_sha256 = sha256_hex(m.str());
  return ds.manifest_sha256;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string source = (dir / "manifest.txt").string();
  if (!std::filesystem::exists(source)) throw std::runtime_error("no dataset manifest at " + source);
  const kv::Document doc = kv::parse_file(source);
  Dataset ds;
  std::size_t num_samples = 0, rec = 0;
  std::string data_hash;
  bool format_ok = false;
  for (const auto& e : doc.section(0)) {
    if (e.key == "format") {
      if (e.value != "gazefusion-synthetic-1") kv::fail(e, source, "unsupported dataset format");
      format_ok = true;
    } else if (e.key == "num_samples") {
      num_samples = kv::to_size(e, source);
    } else if (e.key == "record_doubles") {
      rec = kv::to_size(e, source);
    } else if (e.key == "data_sha256") {
      data_hash = e.value;
    } else if (!apply_spec_key(ds.spec, e, source)) {
      kv::fail(e, source, "unknown manifest key");
    }
  }
  if (!format_ok) throw ConfigError(source + ": missing format line");
  ds.spec.validate();
  if (num_samples != ds.spec.num_samples() || rec != record_doubles(ds.spec)) {
    throw std::runtime_error(source + ": sample count or record size disagrees with the dataset spec");
  }

  std::ifstream in(dir / "data.bin", std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + (dir / "data.bin").string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (sha256_hex(bytes) != data_hash) throw std::runtime_error((dir / "data.bin").string() + ": content hash mismatch");
  if (bytes.size() != num_samples * rec * 8) throw std::runtime_error("data.bin has the wrong size");

  const DatasetSpec& spec = ds.spec;
  std::size_t pos = 0;
  ds.samples.resize(num_samples);
  for (Sample& s : ds.samples) {
    s.subject = static_cast<std::size_t>(get_f64(bytes, pos));
    s.held_out = get_f64(bytes, pos) != 0.0;
    s.label.yaw = get_f64(bytes, pos);
    s.label.pitch = get_f64(bytes, pos);
    s.true_gaze.yaw = get_f64(bytes, pos);
    s.true_gaze.pitch = get_f64(bytes, pos);
    s.head_pose.yaw = get_f64(bytes, pos);
    s.head_pose.pitch = get_f64(bytes, pos);
    for (EyeBox* b : {&s.left_box, &s.right_box}) {
      b->cx = get_f64(bytes, pos);
      b->cy = get_f64(bytes, pos);
      b->size = get_f64(bytes, pos);
    }
    s.face = Image(spec.face_size, spec.face_size, spec.channels);
    s.left_eye = Image(spec.eye_size, spec.eye_size, spec.channels);
    s.right_eye = Image(spec.eye_size, spec.eye_size, spec.channels);
    for (Image* img : {&s.face, &s.left_eye, &s.right_eye}) {
      for (double& v : img->pixels) v = get_f64(bytes, pos);
    }
  }

  const auto index = doc.section(1);
  if (index.size() != num_samples) throw std::runtime_error(source + ": per-sample index is incomplete");
  for (std::size_t i = 0; i < index.size(); ++i) {
    const Sample& s = ds.samples[i];
    const std::string expected =
        std::to_string(i) + "," + std::to_string(s.subject) + "," + (s.held_out ? "test" : "train");
    if (index[i].key != "sample" || index[i].value != expected) {
      kv::fail(index[i], source, "index entry does not match data.bin (expected sample=" + expected + ")");
    }
  }
  ds.manifest_sha256 = manifest_hash(dir);
  return ds;
}

std::string manifest_hash(const std::filesystem::path& dir) { return sha256_file(dir / "manifest.txt"); }

std::vector<DatasetSpec> parse_specs(std::string_view text, const std::string& source) {
  const kv::Document doc = kv::parse(text, source);
  std::vector<DatasetSpec> specs(doc.section_names.size());
  std::vector<std::size_t> header_lines(specs.size(), 0);
  std::vector<std::set<std::string>> seen(specs.size());
  for (const auto& e : doc.entries) {
    if (e.section == 0) kv::fail(e, source, "key outside a [dataset] section");
    if (doc.section_names[e.section - 1] != "dataset") {
      kv::fail(e, source, "unknown section [" + doc.section_names[e.section - 1] + "]");
    }
    DatasetSpec& s = specs[e.section - 1];
    if (header_lines[e.section - 1] == 0) header_lines[e.section - 1] = e.line;
    if (!seen[e.section - 1].insert(e.key).second) kv::fail(e, source, "duplicate key '" + e.key + "'");
    if (!apply_spec_key(s, e, source)) kv::fail(e, source, "unknown dataset key '" + e.key + "'");
  }
  if (specs.empty()) throw ConfigError(source + ": no [dataset] sections");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      specs[i].validate();
    } catch (const ConfigError& err) {
      throw ConfigError(source + ":" + std::to_string(header_lines[i]) + ": " + err.what());
    }
  }
  return specs;
}

std::vector<DatasetSpec> load_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset spec file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_specs(buf.str(), path.string());
}

std::string specs_to_text(const std::vector<DatasetSpec>& specs) {
  std::ostringstream out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) out << "\n";
    out << "[dataset]\n";
    write_spec_lines(out, specs[i]);
  }
  return out.str();
}

std::vector<DatasetSpec> default_specs(std::uint64_t seed) {
  std::vector<DatasetSpec> specs(4);
  DatasetSpec& d0 = specs[0];
  d0.name = "anchor";
  d0.dataset_id = 0;
  d0.num_subjects = 16;
  d0.samples_per_subject = 60;
  d0.gaze_yaw_range_deg = 45;
  d0.gaze_pitch_range_deg = 30;
  d0.head_yaw_range_deg = 30;
  d0.head_pitch_range_deg = 30;

  DatasetSpec& d1 = specs[1];
  d1.name = "narrow";
  d1.dataset_id = 1;
  d1.num_subjects = 10;
  d1.samples_per_subject = 60;
  d1.gaze_yaw_range_deg = 15;
  d1.gaze_pitch_range_deg = 15;
  d1.head_yaw_range_deg = 10;
  d1.head_pitch_range_deg = 15;
  d1.appearance = {0.005, 0.99, 1.01};
  d1.rotation_axis = {0.0, 1.0, 0.0};
  d1.rotation_deg = 5.0;

  DatasetSpec& d2 = specs[2];
  d2.name = "wide";
  d2.dataset_id = 2;
  d2.num_subjects = 20;
  d2.samples_per_subject = 60;
  d2.gaze_yaw_range_deg = 30;
  d2.gaze_pitch_range_deg = 20;
  d2.head_yaw_range_deg = 25;
  d2.head_pitch_range_deg = 25;
  d2.appearance = {-0.005, 1.01, 0.99};
  d2.rotation_axis = {1.0, 0.0, 0.0};
  d2.rotation_deg = 5.0;
  d2.bias_yaw_deg = 2.0;

  DatasetSpec& d3 = specs[3];
  d3.name = "frontal";
  d3.dataset_id = 3;
  d3.num_subjects = 10;
  d3.samples_per_subject = 60;
  d3.gaze_yaw_range_deg = 20;
  d3.gaze_pitch_range_deg = 15;
  d3.head_yaw_range_deg = 10;
  d3.head_pitch_range_deg = 15;
  d3.appearance = {0.003, 0.98, 1.0};
  d3.rotation_axis = {1.0, 1.0, 0.0};
  d3.rotation_deg = 6.0;
  d3.bias_pitch_deg = -1.0;
  d3.noise_deg = 0.5;

  for (auto& s : specs) s.seed = seed * 1000 + s.dataset_id;
  return specs;
}

void validate_collection(const std::vector<DatasetSpec>& specs) {
  if (specs.empty()) throw ConfigError("no datasets");
  std::set<std::size_t> ids;
  std::set<std::string> names;
  for (const auto& s : specs) {
    s.validate();
    if (!ids.insert(s.dataset_id).second) throw ConfigError("duplicate dataset id " + std::to_string(s.dataset_id));
    if (!names.insert(s.name).second) throw ConfigError("duplicate dataset name '" + s.name + "'");
    if (s.dataset_id >= specs.size()) {
      throw ConfigError("dataset ids must be 0.." + std::to_string(specs.size() - 1) + ", got " +
                        std::to_string(s.dataset_id));
    }
    if (s.dataset_id == 0 && !s.perturbation().is_identity()) {
      throw ConfigError("anchor dataset '" + s.name + "' must have an identity perturbation");
    }
  }
  const auto& ref = specs.front();
  for (const auto& s : specs) {
    if (s.face_size != ref.face_size || s.eye_size != ref.eye_size || s.channels != ref.channels) {
      throw ConfigError("all datasets must share face_size, eye_size and channels");
    }
  }
}

MixedBatchSampler::MixedBatchSampler(std::vector<std::vector<std::size_t>> pools, std::size_t batch_size,
                                     std::uint64_t seed)
    : pools_(std::move(pools)), batch_size_(batch_size), rng_(seed) {
  if (pools_.empty()) throw ConfigError("sampler needs at least one dataset");
  if (batch_size_ == 0 || batch_size_ % pools_.size() != 0) {
    throw ConfigError("batch size " + std::to_string(batch_size_) + " is not divisible by " +
                      std::to_string(pools_.size()) + " datasets");
  }
  for (const auto& p : pools_) {
    if (p.size() < per_dataset()) {
      throw ConfigError("a dataset has " + std::to_string(p.size()) + " training samples, fewer than the " +
                        std::to_string(per_dataset()) + " needed per batch");
    }
  }
}

std::size_t MixedBatchSampler::batches_per_epoch() const {
  std::size_t smallest = pools_.front().size();
  for (const auto& p : pools_) smallest = std::min(smallest, p.size());
  return smallest / per_dataset();
}

std::vector<std::vector<BatchEntry>> MixedBatchSampler::next_epoch() {
  const std::size_t n = batches_per_epoch(), k = per_dataset();
  std::vector<std::vector<BatchEntry>> batches(n);
  for (std::size_t d = 0; d < pools_.size(); ++d) {
    std::vector<std::size_t> order = pools_[d];
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t j = 0; j < k; ++j) batches[b].push_back({d, order[b * k + j]});
    }
  }
  return batches;
}

}  // namespace gazefusion::synth
