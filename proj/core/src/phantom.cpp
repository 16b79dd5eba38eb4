#include "psic/phantom.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>

#include "json_config.hpp"
#include "psic/dti_metrics.hpp"
#include "psic/error.hpp"
#include "psic/parallel.hpp"

namespace psic::phantom {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Seed streams.
constexpr std::uint64_t kStreamSubject = 1;
constexpr std::uint64_t kStreamNoise = 2;
constexpr std::uint64_t kStreamLabels = 3;

double coulomb_energy(const std::vector<sh::Vec3>& u) {
  double e = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = i + 1; j < u.size(); ++j) e += 1.0 / (u[i] - u[j]).norm() + 1.0 / (u[i] + u[j]).norm();
  }
  return e;
}

sh::Vec3 rotate_z(const sh::Vec3& v, double angle) {
  return Eigen::AngleAxisd(angle, sh::Vec3::UnitZ()) * v;
}

Eigen::Matrix3d clamp_psd(const Eigen::Matrix3d& d) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(d);
  if (eig.eigenvalues().minCoeff() >= 0.0) return d;
  const Eigen::Vector3d l = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * l.asDiagonal() * eig.eigenvectors().transpose();
}

std::string subject_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "sub-%03d", i);
  return buf;
}

}  // namespace

void TensorMixture::validate() const {
  if (compartments.empty()) throw DomainError("a mixture needs at least one compartment");
  double total = 0.0;
  for (const auto& c : compartments) {
    if (!(c.fraction >= 0.0 && c.fraction <= 1.0)) throw DomainError("volume fraction outside [0, 1]");
    total += c.fraction;
    if (!c.tensor.isApprox(c.tensor.transpose(), 1e-12)) throw DomainError("compartment tensor is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(c.tensor);
    if (eig.eigenvalues().minCoeff() < -1e-15) throw DomainError("compartment tensor is not positive semi-definite");
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("volume fractions do not sum to one");
}

Eigen::Matrix3d prolate_tensor(const sh::Vec3& axis, double axial, double radial) {
  const sh::Vec3 e = axis.normalized();
  return radial * Eigen::Matrix3d::Identity() + (axial - radial) * e * e.transpose();
}

sh::GradientScheme make_scheme(int k, std::uint64_t seed, double b_value) {
  if (k < 6) throw DomainError("a gradient scheme needs at least six directions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<sh::Vec3> u(static_cast<std::size_t>(k));
  for (auto& v : u) {
    do {
      v = sh::Vec3(normal(rng), normal(rng), normal(rng));
    } while (v.norm() < 1e-6);
    v.normalize();
  }

  double energy = coulomb_energy(u);
  double step = 0.1 / k;
  std::vector<sh::Vec3> force(u.size());
  std::vector<sh::Vec3> trial(u.size());
  for (int iter = 0; iter < 2000 && step > 1e-12; ++iter) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      sh::Vec3 f = sh::Vec3::Zero();
      for (std::size_t j = 0; j < u.size(); ++j) {
        if (j == i) continue;
        const sh::Vec3 dm = u[i] - u[j];
        const sh::Vec3 dp = u[i] + u[j];
        f += dm / std::pow(dm.norm(), 3) + dp / std::pow(dp.norm(), 3);
      }
      force[i] = f - f.dot(u[i]) * u[i];
    }
    for (std::size_t i = 0; i < u.size(); ++i) trial[i] = (u[i] + step * force[i]).normalized();
    const double e = coulomb_energy(trial);
    if (e < energy) {
      u.swap(trial);
      energy = e;
      step *= 1.2;
    } else {
      step *= 0.5;
    }
  }
  // Canonical hemisphere: the directions are antipodally equivalent.
  for (auto& v : u) {
    if (v.z() < 0.0 || (v.z() == 0.0 && v.y() < 0.0)) v = -v;
  }
  return sh::GradientScheme(std::move(u), b_value);
}

std::vector<double> multi_tensor_signal(const TensorMixture& mix, const sh::GradientScheme& scheme) {
  mix.validate();
  std::vector<double> s(scheme.size(), 0.0);
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    const sh::Vec3& u = scheme.direction(k);
    for (const auto& c : mix.compartments) s[k] += c.fraction * std::exp(-scheme.b_value() * u.dot(c.tensor * u));
  }
  return s;
}

std::vector<double> rician_noise(std::span<const double> signal, double snr, std::mt19937_64& rng) {
  if (!(snr > 0.0)) throw DomainError("SNR must be positive");
  std::vector<double> out(signal.begin(), signal.end());
  if (std::isinf(snr)) return out;
  std::normal_distribution<double> normal(0.0, 1.0 / snr);
  for (double& s : out) {
    const double re = s + normal(rng);
    const double im = normal(rng);
    s = std::hypot(re, im);
  }
  return out;
}

const char* to_string(Scenario s) { return s == Scenario::MdShift ? "md-shift" : "crossing-shift"; }

Scenario scenario_from_string(const std::string& name) {
  if (name == "md-shift") return Scenario::MdShift;
  if (name == "crossing-shift") return Scenario::CrossingShift;
  throw DomainError("unknown phantom scenario '" + name + "'");
}

void PhantomSpec::validate() const {
  for (auto d : dims) {
    if (d == 0) throw DomainError("phantom dimensions must be positive");
  }
  if (!(roi_radius > 0.0)) throw DomainError("ROI radius must be positive");
  if (roi_name.empty()) throw DomainError("ROI name must not be empty");
  if (subjects_per_class < 1) throw DomainError("need at least one subject per class");
  if (!(snr > 0.0)) throw DomainError("SNR must be positive or infinite");
  if (directions < 7) throw DomainError("need at least seven gradient directions");
  if (!(b_value > 0.0)) throw DomainError("b-value must be positive");
  if (!(axial > 0.0 && radial_cn > 0.0 && radial_ad > 0.0)) throw DomainError("diffusivities must be positive");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("fiber fraction must lie in (0, 1)");
  if (!(smoothing_sigma > 0.0)) throw DomainError("smoothing sigma must be positive");
  for (double v : {crossing_angle_sd_deg, fraction_sd, subject_axial_sd, subject_radial_sd, voxel_axial_jitter,
                   voxel_radial_jitter, voxel_fraction_jitter, orientation_jitter_deg}) {
    if (!(v >= 0.0)) throw DomainError("spread parameters must be nonnegative");
  }
}

PhantomSpec default_spec(Scenario scenario) {
  PhantomSpec s;
  s.scenario = scenario;
  if (scenario == Scenario::CrossingShift) {
    s.subject_radial_sd = 0.2;
    s.radial_ad = s.radial_cn;
  }
  return s;
}

PhantomSpec parse_phantom_spec(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("phantom spec: ") + e.what());
  }
  detail::reject_unknown_keys(
      j,
      {"dims", "roi", "scenario", "subjects_per_class", "snr", "directions", "b_value", "seed", "axial", "radial_cn",
       "radial_ad", "crossing_angle_deg", "crossing_angle_sd_deg", "fraction", "fraction_sd", "ad_tensor_equivalent",
       "subject_axial_sd", "subject_radial_sd", "voxel_axial_jitter", "voxel_radial_jitter", "voxel_fraction_jitter",
       "orientation_jitter_deg", "smoothing_sigma", "permute_labels"},
      "phantom spec");
  try {
    PhantomSpec s = default_spec(scenario_from_string(j.value("scenario", std::string("md-shift"))));
    if (j.contains("dims")) {
      s.dims = j.at("dims").get<io::Dims>();
      for (int a = 0; a < 3; ++a) s.roi_center[a] = (s.dims[a] - 1) / 2.0;
    }
    if (j.contains("roi")) {
      const auto& r = j.at("roi");
      detail::reject_unknown_keys(r, {"name", "center", "radius"}, "phantom spec roi");
      s.roi_name = r.value("name", s.roi_name);
      if (r.contains("center")) s.roi_center = r.at("center").get<std::array<double, 3>>();
      s.roi_radius = r.value("radius", s.roi_radius);
    }
    if (j.contains("snr")) {
      const auto& v = j.at("snr");
      if (v.is_string()) {
        if (v.get<std::string>() != "inf") throw IoError("phantom spec: snr must be a number or \"inf\"");
        s.snr = std::numeric_limits<double>::infinity();
      } else {
        s.snr = v.get<double>();
      }
    }
    s.subjects_per_class = j.value("subjects_per_class", s.subjects_per_class);
    s.directions = j.value("directions", s.directions);
    s.b_value = j.value("b_value", s.b_value);
    s.seed = j.value("seed", s.seed);
    s.axial = j.value("axial", s.axial);
    s.radial_cn = j.value("radial_cn", s.radial_cn);
    s.radial_ad = j.value("radial_ad", s.radial_ad);
    s.crossing_angle_deg = j.value("crossing_angle_deg", s.crossing_angle_deg);
    s.crossing_angle_sd_deg = j.value("crossing_angle_sd_deg", s.crossing_angle_sd_deg);
    s.fraction = j.value("fraction", s.fraction);
    s.fraction_sd = j.value("fraction_sd", s.fraction_sd);
    s.ad_tensor_equivalent = j.value("ad_tensor_equivalent", s.ad_tensor_equivalent);
    s.subject_axial_sd = j.value("subject_axial_sd", s.subject_axial_sd);
    s.subject_radial_sd = j.value("subject_radial_sd", s.subject_radial_sd);
    s.voxel_axial_jitter = j.value("voxel_axial_jitter", s.voxel_axial_jitter);
    s.voxel_radial_jitter = j.value("voxel_radial_jitter", s.voxel_radial_jitter);
    s.voxel_fraction_jitter = j.value("voxel_fraction_jitter", s.voxel_fraction_jitter);
    s.orientation_jitter_deg = j.value("orientation_jitter_deg", s.orientation_jitter_deg);
    s.smoothing_sigma = j.value("smoothing_sigma", s.smoothing_sigma);
    s.permute_labels = j.value("permute_labels", s.permute_labels);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("phantom spec: ") + e.what());
  }
}

PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_phantom_spec(std::string(bytes.begin(), bytes.end()));
}

std::string phantom_spec_json(const PhantomSpec& s) {
  nlohmann::json j = {
      {"dims", s.dims},
      {"roi", {{"name", s.roi_name}, {"center", s.roi_center}, {"radius", s.roi_radius}}},
      {"scenario", to_string(s.scenario)},
      {"subjects_per_class", s.subjects_per_class},
      {"directions", s.directions},
      {"b_value", s.b_value},
      {"seed", s.seed},
      {"axial", s.axial},
      {"radial_cn", s.radial_cn},
      {"radial_ad", s.radial_ad},
      {"crossing_angle_deg", s.crossing_angle_deg},
      {"crossing_angle_sd_deg", s.crossing_angle_sd_deg},
      {"fraction", s.fraction},
      {"fraction_sd", s.fraction_sd},
      {"ad_tensor_equivalent", s.ad_tensor_equivalent},
      {"subject_axial_sd", s.subject_axial_sd},
      {"subject_radial_sd", s.subject_radial_sd},
      {"voxel_axial_jitter", s.voxel_axial_jitter},
      {"voxel_radial_jitter", s.voxel_radial_jitter},
      {"voxel_fraction_jitter", s.voxel_fraction_jitter},
      {"orientation_jitter_deg", s.orientation_jitter_deg},
      {"smoothing_sigma", s.smoothing_sigma},
      {"permute_labels", s.permute_labels}};
  if (std::isinf(s.snr)) {
    j["snr"] = "inf";
  } else {
    j["snr"] = s.snr;
  }
  return j.dump();
}

std::vector<double> smooth_field(const io::Dims& dims, double sigma, std::mt19937_64& rng) {
  if (!(sigma > 0.0)) throw DomainError("smoothing sigma must be positive");
  const int pad = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * pad + 1));
  for (int i = -pad; i <= pad; ++i) kernel[static_cast<std::size_t>(i + pad)] = std::exp(-0.5 * i * i / (sigma * sigma));
  double ksum = 0.0;
  for (double w : kernel) ksum += w;
  double ksq = 0.0;
  for (double& w : kernel) {
    w /= ksum;
    ksq += w * w;
  }

  // Work array of extents e[0..2]; filtering axis a shrinks e[a] by 2 pad.
  std::array<std::size_t, 3> e{};
  for (int a = 0; a < 3; ++a) e[a] = dims[a] + 2 * static_cast<std::size_t>(pad);
  std::vector<double> field(e[0] * e[1] * e[2]);
  std::normal_distribution<double> normal;
  for (double& v : field) v = normal(rng);

  for (int axis = 0; axis < 3; ++axis) {
    std::array<std::size_t, 3> o = e;
    o[axis] -= 2 * static_cast<std::size_t>(pad);
    std::vector<double> next(o[0] * o[1] * o[2], 0.0);
    std::array<std::size_t, 3> stride{e[1] * e[2], e[2], 1};
    for (std::size_t x = 0; x < o[0]; ++x) {
      for (std::size_t y = 0; y < o[1]; ++y) {
        for (std::size_t z = 0; z < o[2]; ++z) {
          const std::size_t src = x * stride[0] + y * stride[1] + z * stride[2];
          double acc = 0.0;
          for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * field[src + t * stride[axis]];
          next[(x * o[1] + y) * o[2] + z] = acc;
        }
      }
    }
    field.swap(next);
    e = o;
  }
  const double norm = 1.0 / std::sqrt(ksq * ksq * ksq);
  for (double& v : field) v *= norm;
  return field;
}

io::Mask roi_mask(const PhantomSpec& spec) {
  io::Mask mask(spec.dims);
  const double r2 = spec.roi_radius * spec.roi_radius;
  for (std::uint32_t x = 0; x < spec.dims[0]; ++x) {
    for (std::uint32_t y = 0; y < spec.dims[1]; ++y) {
      for (std::uint32_t z = 0; z < spec.dims[2]; ++z) {
        const double dx = x - spec.roi_center[0];
        const double dy = y - spec.roi_center[1];
        const double dz = z - spec.roi_center[2];
        if (dx * dx + dy * dy + dz * dz <= r2) mask.data[mask.voxel_index(x, y, z)] = 1;
      }
    }
  }
  return mask;
}

sh::GradientScheme cohort_scheme(const PhantomSpec& spec) {
  return make_scheme(spec.directions, derive_seed(spec.seed, 0), spec.b_value);
}

int nominal_label(const PhantomSpec& spec, int subject) { return subject >= spec.subjects_per_class ? 1 : 0; }

std::vector<int> cohort_labels(const PhantomSpec& spec) {
  std::vector<int> labels(static_cast<std::size_t>(spec.subject_count()));
  for (int i = 0; i < spec.subject_count(); ++i) labels[static_cast<std::size_t>(i)] = nominal_label(spec, i);
  if (spec.permute_labels) {
    std::mt19937_64 rng(derive_seed(spec.seed, kStreamLabels));
    std::shuffle(labels.begin(), labels.end(), rng);
  }
  return labels;
}

SubjectVolume generate_subject(const PhantomSpec& spec, int subject) {
  spec.validate();
  return generate_subject(spec, subject, cohort_scheme(spec));
}

SubjectVolume generate_subject(const PhantomSpec& spec, int subject, const sh::GradientScheme& scheme) {
  if (subject < 0 || subject >= spec.subject_count()) throw DomainError("subject index out of range");
  if (scheme.size() != static_cast<std::size_t>(spec.directions)) throw ShapeError("scheme does not match the phantom direction count");
  const int label = nominal_label(spec, subject);

  std::mt19937_64 rng(derive_seed(spec.seed, kStreamSubject, static_cast<std::uint64_t>(subject)));
  std::normal_distribution<double> normal;
  const double axial_scale = 1.0 + spec.subject_axial_sd * normal(rng);
  const double radial_scale = 1.0 + spec.subject_radial_sd * normal(rng);
  const double angle = (spec.crossing_angle_deg + spec.crossing_angle_sd_deg * normal(rng)) * kDeg;
  const double fraction = spec.fraction + spec.fraction_sd * normal(rng);
  const double radial_class = spec.scenario == Scenario::MdShift && label == 1 ? spec.radial_ad : spec.radial_cn;

  const auto f_axial = smooth_field(spec.dims, spec.smoothing_sigma, rng);
  const auto f_radial = smooth_field(spec.dims, spec.smoothing_sigma, rng);
  const auto f_rot = smooth_field(spec.dims, spec.smoothing_sigma, rng);
  const auto f_tilt = smooth_field(spec.dims, spec.smoothing_sigma, rng);
  const auto f_frac = smooth_field(spec.dims, spec.smoothing_sigma, rng);

  std::optional<dti::TensorFitter> fitter;
  const bool equivalent = spec.scenario == Scenario::CrossingShift && label == 1 && spec.ad_tensor_equivalent;
  if (equivalent) fitter.emplace(scheme);

  SubjectVolume out;
  out.id = subject_id(subject);
  out.label = cohort_labels(spec)[static_cast<std::size_t>(subject)];
  out.volume = io::Volume(spec.dims, static_cast<std::uint32_t>(scheme.size()));
  out.volume.b_value = scheme.b_value();
  out.volume.gradients = scheme.directions();

  std::mt19937_64 noise_rng(derive_seed(spec.seed, kStreamNoise, static_cast<std::uint64_t>(subject)));
  const double jitter = spec.orientation_jitter_deg * kDeg;
  const sh::Vec3 x_axis = sh::Vec3::UnitX();
  for (std::size_t i = 0; i < out.volume.voxels(); ++i) {
    const double ax = std::max(1e-5, spec.axial * axial_scale * (1.0 + spec.voxel_axial_jitter * f_axial[i]));
    const double rad = std::max(1e-5, radial_class * radial_scale * (1.0 + spec.voxel_radial_jitter * f_radial[i]));
    const double rot = jitter * f_rot[i];

    TensorMixture mix;
    if (spec.scenario == Scenario::MdShift) {
      const sh::Vec3 axis = Eigen::AngleAxisd(jitter * f_tilt[i], sh::Vec3::UnitY()) * rotate_z(x_axis, rot);
      mix.compartments.push_back({1.0, prolate_tensor(axis, ax, rad)});
    } else {
      const double f = std::clamp(fraction + spec.voxel_fraction_jitter * f_frac[i], 0.05, 0.95);
      const double a = angle + jitter * f_tilt[i];
      mix.compartments.push_back({f, prolate_tensor(rotate_z(x_axis, rot), ax, rad)});
      mix.compartments.push_back({1.0 - f, prolate_tensor(rotate_z(x_axis, rot + a), ax, rad)});
      if (equivalent) {
        const dti::TensorFit fit = fitter->fit(multi_tensor_signal(mix, scheme));
        mix.compartments = {{1.0, clamp_psd(fit.tensor)}};
      }
    }
    const auto noisy = rician_noise(multi_tensor_signal(mix, scheme), spec.snr, noise_rng);
    auto dst = out.volume.voxel(i);
    for (std::size_t k = 0; k < noisy.size(); ++k) dst[k] = static_cast<float>(noisy[k]);
  }
  return out;
}

io::CohortManifest gen_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir, unsigned threads) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  const io::Mask mask = roi_mask(spec);
  const sh::GradientScheme scheme = cohort_scheme(spec);
  const int n = spec.subject_count();
  io::CohortManifest manifest;
  manifest.subjects.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    SubjectVolume s = generate_subject(spec, static_cast<int>(i), scheme);
    const auto volume_path = out_dir / (s.id + ".dcb");
    const auto mask_path = out_dir / (s.id + "_" + spec.roi_name + ".dcb");
    io::write_volume(volume_path, s.volume);
    io::write_mask(mask_path, mask);
    io::SubjectEntry& e = manifest.subjects[i];
    e.id = s.id;
    e.label = s.label;
    e.volume = volume_path;
    e.masks[spec.roi_name] = mask_path;
  });
  manifest.provenance = {{"generator", "psic phantom"},
                         {"scenario", to_string(spec.scenario)},
                         {"seed", std::to_string(spec.seed)},
                         {"spec", phantom_spec_json(spec)}};
  io::write_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace psic::phantom
