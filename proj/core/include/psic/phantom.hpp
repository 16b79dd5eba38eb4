#pragma once

// Synthetic two-class diffusion cohorts.
//
// Every voxel holds a mixture of Gaussian compartments. Microstructure
// parameters vary smoothly in space (Gaussian-filtered white noise) and
// per subject; the class label shifts them according to the scenario:
//
//   md-shift        one fiber; the pathological class has a larger radial
//                   diffusivity, which any mean-diffusivity metric detects.
//   crossing-shift  the control class has two fibers crossing in the x-y
//                   plane; the pathological class replaces each crossing by
//                   its single-tensor equivalent (the log-linear tensor fit of
//                   the noiseless crossing signal), so every single-tensor
//                   metric is identically distributed while the angular
//                   profile, hence the SH band-4 and band-6 content, differs.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psic/io.hpp"
#include "psic/manifest.hpp"
#include "psic/sh_core.hpp"

namespace psic::phantom {

struct Compartment {
  double fraction = 1.0;
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();
};

struct TensorMixture {
  std::vector<Compartment> compartments;

  /// Throws DomainError unless fractions lie in [0, 1] and sum to 1 (1e-9)
  /// and every tensor is symmetric positive semi-definite.
  void validate() const;
};

/// Cylindrically symmetric tensor with the given axis (normalized here).
Eigen::Matrix3d prolate_tensor(const sh::Vec3& axis, double axial, double radial);

/// K unit directions spread by minimizing the antipodally symmetric Coulomb
/// energy from a seeded random start. Throws DomainError for K < 6.
sh::GradientScheme make_scheme(int k, std::uint64_t seed, double b_value = 1000.0);

/// s(u_k) = sum_i f_i exp(-b u_k^T D_i u_k).
std::vector<double> multi_tensor_signal(const TensorMixture& mix, const sh::GradientScheme& scheme);

/// Magnitude of the signal plus complex Gaussian noise of standard deviation
/// 1/snr per component. An infinite snr returns the signal unchanged.
/// Throws DomainError for snr <= 0.
std::vector<double> rician_noise(std::span<const double> signal, double snr, std::mt19937_64& rng);

enum class Scenario { MdShift, CrossingShift };

const char* to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

struct PhantomSpec {
  io::Dims dims{16, 16, 16};
  std::string roi_name = "roi";
  /// Spherical ROI; the default centers it in the grid.
  std::array<double, 3> roi_center{7.5, 7.5, 7.5};
  double roi_radius = 5.0;

  Scenario scenario = Scenario::MdShift;
  int subjects_per_class = 20;
  double snr = 30.0;  ///< infinity disables noise
  int directions = 41;
  double b_value = 1000.0;
  std::uint64_t seed = 1;

  double axial = 1.7e-3;
  double radial_cn = 0.30e-3;
  double radial_ad = 0.45e-3;  ///< md-shift only

  double crossing_angle_deg = 75.0;
  double crossing_angle_sd_deg = 10.0;  ///< across subjects
  double fraction = 0.5;                ///< of the first fiber
  double fraction_sd = 0.05;            ///< across subjects
  /// crossing-shift: pathological voxels hold the tensor equivalent of the
  /// crossing. false removes the class shift.
  bool ad_tensor_equivalent = true;

  /// Relative subject-level sd of axial and radial diffusivity.
  double subject_axial_sd = 0.03;
  double subject_radial_sd = 0.03;
  /// Relative voxel-level amplitudes of the smooth fields.
  double voxel_axial_jitter = 0.03;
  double voxel_radial_jitter = 0.05;
  double voxel_fraction_jitter = 0.03;  ///< absolute
  double orientation_jitter_deg = 3.0;
  double smoothing_sigma = 2.0;  ///< voxels

  /// Randomly reassigns the class labels among subjects after generation
  /// (a null cohort that keeps the data distribution).
  bool permute_labels = false;

  /// Throws DomainError on invalid values.
  void validate() const;
  int subject_count() const { return 2 * subjects_per_class; }
};

/// Scenario defaults (crossing-shift uses a larger subject-level radial
/// spread so the model-free metrics carry no usable signal either).
PhantomSpec default_spec(Scenario scenario);

/// Reads a JSON spec; absent keys take the defaults of its scenario.
PhantomSpec parse_phantom_spec(const std::string& json_text);
PhantomSpec read_phantom_spec(const std::filesystem::path& path);
std::string phantom_spec_json(const PhantomSpec& spec);

/// Zero-mean, unit-variance field: white noise filtered with a separable
/// Gaussian of width sigma (truncated at 3 sigma) on a padded grid.
std::vector<double> smooth_field(const io::Dims& dims, double sigma, std::mt19937_64& rng);

io::Mask roi_mask(const PhantomSpec& spec);

/// The gradient scheme shared by every subject of the cohort.
sh::GradientScheme cohort_scheme(const PhantomSpec& spec);

/// Class label of subject i before any permutation: the first
/// subjects_per_class subjects are controls.
int nominal_label(const PhantomSpec& spec, int subject);

/// Labels actually written to the manifest.
std::vector<int> cohort_labels(const PhantomSpec& spec);

struct SubjectVolume {
  std::string id;
  int label = 0;
  io::Volume volume;
};

/// Renders one subject; depends only on (spec, subject index). The data are
/// generated for the nominal label; `label` is the (possibly permuted) one.
SubjectVolume generate_subject(const PhantomSpec& spec, int subject);
/// Same, with the cohort scheme already computed.
SubjectVolume generate_subject(const PhantomSpec& spec, int subject, const sh::GradientScheme& scheme);

/// Writes every subject volume, the shared ROI mask per subject and
/// manifest.json into `out_dir` (created if needed). Subjects are rendered
/// concurrently; output does not depend on `threads`.
io::CohortManifest gen_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir, unsigned threads = 1);

}  // namespace psic::phantom
